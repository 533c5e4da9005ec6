//! The U-shaped architecture: `K` ascents with channel mixing, then descents
//! with skip concatenation back down to order `r = K mod 2`, followed by sum
//! pooling and an MLP head for invariant tasks.
//!
//! ```text
//! U0 = 1                                    (n x C, order 0)
//! Uk = L(A(U{k-1}, X))                      k = 1..K
//! VK = UK
//! V{k-2} = L(concat(D(Vk), U{k-2}))         k = K, K-2, .., r+2
//! ```
//!
//! The activation and the order-2 self-map, when enabled, follow every
//! channel-mixing layer (self-map first).

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dense_forward, NodeId, Tape};
use crate::error::{Error, Result};
use crate::field::{PointCloud, TensorField};
use crate::layers::{self, pair_count, AscendParams, DescendParams, KnnGraph, LinearParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Highest tensor order reached.
    pub k_max: usize,
    pub channels: usize,
    /// Neighbours in the ascending layers' feature-space term; 0 disables it.
    pub k_nn: usize,
    pub use_relu: bool,
    pub use_t2mix: bool,
    /// Sizes of the head's fully connected layers after pooling; the last
    /// entry is the output size. Empty means no head.
    pub head_widths: Vec<usize>,
    pub seed: u64,
}

impl NetworkConfig {
    /// The plain polynomial network: no neighbour term, activation or self-map.
    pub fn basic(k_max: usize, channels: usize) -> Self {
        Self { k_max, channels, k_nn: 0, use_relu: false, use_t2mix: false, head_widths: vec![], seed: 0 }
    }

    pub fn with_extras(mut self, k_nn: usize, use_relu: bool, use_t2mix: bool) -> Self {
        self.k_nn = k_nn;
        self.use_relu = use_relu;
        self.use_t2mix = use_t2mix;
        self
    }

    pub fn with_head(mut self, widths: Vec<usize>) -> Self {
        self.head_widths = widths;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Output order `K mod 2`.
    pub fn output_order(&self) -> usize {
        self.k_max % 2
    }

    /// Orders `k` whose field is descended: `K, K-2, .., r+2`.
    pub fn descent_orders(&self) -> Vec<usize> {
        let r = self.output_order();
        (r + 2..=self.k_max).rev().step_by(2).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("C must be at least 1".into()));
        }
        if self.head_widths.contains(&0) {
            return Err(Error::Config("head layer widths must be positive".into()));
        }
        if !self.head_widths.is_empty() && self.output_order() != 0 {
            return Err(Error::Config(format!(
                "an invariant head needs an even K (scalar output), got K = {}",
                self.k_max
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count:
    ///
    /// ```text
    /// sum_{k=1..K}   (a C + C^2 + rho C^2 + tau [k = 2] 3C)
    /// + sum_{k in D} (C k(k-1)/2 + 2C^2 + rho C^2 + tau [k = 4] 3C)
    /// + sum_l        (w_{l-1} w_l + w_l)
    /// ```
    ///
    /// with `a = 2 + [k_nn > 0]`, `rho = [relu]`, `tau = [t2mix]`,
    /// `D = {K, K-2, .., r+2}` and head widths `w_0 = C, w_1, ..`.
    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let a = if self.k_nn > 0 { 3 } else { 2 };
        let rho = usize::from(self.use_relu);
        let tau = usize::from(self.use_t2mix);
        let ascents: usize = (1..=self.k_max)
            .map(|k| a * c + c * c + rho * c * c + tau * usize::from(k == 2) * 3 * c)
            .sum();
        let descents: usize = self
            .descent_orders()
            .into_iter()
            .map(|k| c * k * (k - 1) / 2 + 2 * c * c + rho * c * c + tau * usize::from(k == 4) * 3 * c)
            .sum();
        let mut head = 0;
        let mut prev = c;
        for &w in &self.head_widths {
            head += prev * w + w;
            prev = w;
        }
        ascents + descents + head
    }
}

/// Where one level's parameter blocks live in the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelLayout {
    /// Order of the level's output field.
    pub order: usize,
    /// Ascend coefficients for ascent levels, contraction weights for descents.
    pub main: Range<usize>,
    pub linear: Range<usize>,
    pub t2mix: Option<Range<usize>>,
    pub relu: Option<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadLayout {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// Deterministic ordering of every parameter block: ascents `1..=K`, then
/// descents from `K` down, then the head. Within a level: main block, linear,
/// self-map, activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub ascents: Vec<LevelLayout>,
    pub descents: Vec<LevelLayout>,
    pub head: Vec<HeadLayout>,
    len: usize,
}

impl ParamLayout {
    pub fn new(cfg: &NetworkConfig) -> Self {
        let c = cfg.channels;
        let mut cursor = 0;
        let mut take = |len: usize| {
            let r = cursor..cursor + len;
            cursor += len;
            r
        };
        let mut ascents = Vec::new();
        for k in 1..=cfg.k_max {
            let main = take(AscendParams::flat_len(c, cfg.k_nn > 0));
            let linear = take(c * c);
            let t2mix = (cfg.use_t2mix && k == 2).then(|| take(3 * c));
            let relu = cfg.use_relu.then(|| take(c * c));
            ascents.push(LevelLayout { order: k, main, linear, t2mix, relu });
        }
        let mut descents = Vec::new();
        for k in cfg.descent_orders() {
            let main = take(c * pair_count(k));
            let linear = take(2 * c * c);
            let t2mix = (cfg.use_t2mix && k - 2 == 2).then(|| take(3 * c));
            let relu = cfg.use_relu.then(|| take(c * c));
            descents.push(LevelLayout { order: k - 2, main, linear, t2mix, relu });
        }
        let mut head = Vec::new();
        let mut prev = c;
        for &w in &cfg.head_widths {
            let weights = take(prev * w);
            let bias = take(w);
            head.push(HeadLayout { n_in: prev, n_out: w, weights, bias });
            prev = w;
        }
        Self { ascents, descents, head, len: cursor }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Descent level whose output has order `k_out`.
    pub fn descent_to(&self, k_out: usize) -> Option<&LevelLayout> {
        self.descents.iter().find(|d| d.order == k_out)
    }

    /// Range of the whole head (empty when there is none).
    pub fn head_range(&self) -> Range<usize> {
        match (self.head.first(), self.head.last()) {
            (Some(first), Some(last)) => first.weights.start..last.bias.end,
            _ => self.len..self.len,
        }
    }
}

/// All learnable coefficients as one flat vector plus the layout that names them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ParamSet {
    /// Uniform draws in `[-s, s]`, `s = 1/sqrt(fan_in)`, from the config's seed.
    /// Head biases start at zero.
    pub fn init(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        let mut values = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut fill = |range: &Range<usize>, fan_in: usize, rng: &mut ChaCha8Rng| {
            let s = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in &mut values[range.clone()] {
                *v = rng.random_range(-s..=s);
            }
        };
        let c = cfg.channels;
        let alpha_terms = if cfg.k_nn > 0 { 3 } else { 2 };
        for lvl in &layout.ascents {
            fill(&lvl.main, alpha_terms, &mut rng);
            fill(&lvl.linear, c, &mut rng);
            if let Some(r) = &lvl.t2mix {
                fill(r, 3, &mut rng);
            }
            if let Some(r) = &lvl.relu {
                fill(r, c, &mut rng);
            }
        }
        for lvl in &layout.descents {
            fill(&lvl.main, pair_count(lvl.order + 2), &mut rng);
            fill(&lvl.linear, 2 * c, &mut rng);
            if let Some(r) = &lvl.t2mix {
                fill(r, 3, &mut rng);
            }
            if let Some(r) = &lvl.relu {
                fill(r, c, &mut rng);
            }
        }
        for h in &layout.head {
            fill(&h.weights, h.n_in, &mut rng);
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        let values = vec![0.0; layout.len()];
        Ok(Self { layout, values })
    }

    pub fn from_flat(cfg: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = ParamLayout::new(cfg);
        if values.len() != layout.len() {
            return Err(Error::Shape(format!("config needs {} parameters, got {}", layout.len(), values.len())));
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn write(&mut self, range: &Range<usize>, data: &[f64]) -> Result<()> {
        if range.len() != data.len() {
            return Err(Error::Shape(format!("block of {} values, got {}", range.len(), data.len())));
        }
        self.values[range.clone()].copy_from_slice(data);
        Ok(())
    }

    fn ascent(&self, k: usize) -> Result<LevelLayout> {
        k.checked_sub(1)
            .and_then(|i| self.layout.ascents.get(i))
            .cloned()
            .ok_or_else(|| Error::Config(format!("no ascent level {k}")))
    }

    fn descent(&self, k_out: usize) -> Result<LevelLayout> {
        self.layout
            .descent_to(k_out)
            .cloned()
            .ok_or_else(|| Error::Config(format!("no descent producing order {k_out}")))
    }

    /// Ascent level `k` (1-based, producing order `k`).
    pub fn set_ascend(&mut self, k: usize, p: &AscendParams) -> Result<()> {
        let lvl = self.ascent(k)?;
        self.write(&lvl.main, &p.to_flat())
    }

    pub fn set_ascent_linear(&mut self, k: usize, p: &LinearParams) -> Result<()> {
        let lvl = self.ascent(k)?;
        self.write(&lvl.linear, p.gamma())
    }

    /// Descent producing order `k_out`.
    pub fn set_descend(&mut self, k_out: usize, p: &DescendParams) -> Result<()> {
        let lvl = self.descent(k_out)?;
        self.write(&lvl.main, p.beta())
    }

    pub fn set_descent_linear(&mut self, k_out: usize, p: &LinearParams) -> Result<()> {
        let lvl = self.descent(k_out)?;
        self.write(&lvl.linear, p.gamma())
    }

    /// Head layer `i` (0-based): row-major `out x in` weights and the bias.
    pub fn set_head_layer(&mut self, i: usize, weights: &[f64], bias: &[f64]) -> Result<()> {
        let h = self.layout.head.get(i).cloned().ok_or_else(|| Error::Config(format!("no head layer {i}")))?;
        self.write(&h.weights, weights)?;
        self.write(&h.bias, bias)
    }
}

/// Handles into a recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recording {
    pub tape: Tape,
    pub cloud: NodeId,
    /// The order-`r` field `V^(r)`.
    pub features: NodeId,
    /// Sum-pooled features, when the head was recorded.
    pub pooled: Option<NodeId>,
    /// Head output, when the head was recorded.
    pub output: Option<NodeId>,
    /// Neighbour graphs of the ascents, in order; empty without the
    /// neighbour term.
    pub graphs: Vec<KnnGraph>,
}

fn check_params(cfg: &NetworkConfig, theta: &ParamSet) -> Result<()> {
    cfg.validate()?;
    if theta.layout != ParamLayout::new(cfg) {
        return Err(Error::Config("parameter set does not match the network config".into()));
    }
    Ok(())
}

/// Records the network on a fresh tape. `x` must be centred.
pub fn record(x: &PointCloud, cfg: &NetworkConfig, theta: &ParamSet, with_head: bool) -> Result<Recording> {
    record_impl(x, cfg, theta, with_head, None)
}

/// As [`record`], reusing the neighbour graphs of an earlier recording
/// instead of recomputing them. The network is then a smooth function of the
/// parameters and the cloud, which is what the backward pass differentiates.
pub fn record_with_graphs(
    x: &PointCloud,
    cfg: &NetworkConfig,
    theta: &ParamSet,
    with_head: bool,
    graphs: &[KnnGraph],
) -> Result<Recording> {
    let expected = if cfg.k_nn > 0 { cfg.k_max } else { 0 };
    if graphs.len() != expected {
        return Err(Error::Config(format!("{} neighbour graphs given, the network uses {expected}", graphs.len())));
    }
    if graphs.iter().any(|g| g.len() != x.len()) {
        return Err(Error::Shape("neighbour graph size differs from the cloud".into()));
    }
    record_impl(x, cfg, theta, with_head, Some(graphs))
}

fn record_impl(
    x: &PointCloud,
    cfg: &NetworkConfig,
    theta: &ParamSet,
    with_head: bool,
    fixed: Option<&[KnnGraph]>,
) -> Result<Recording> {
    check_params(cfg, theta)?;
    debug_assert!(
        x.centering_error() <= 1e-9 * (1.0 + x.points().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))),
        "forward expects a centred cloud"
    );
    let n = x.len();
    if cfg.k_nn > 0 && cfg.k_nn + 1 > n {
        return Err(Error::Config(format!("k_nn = {} needs at least {} points, got {n}", cfg.k_nn, cfg.k_nn + 1)));
    }
    let c = cfg.channels;
    let theta_v = theta.values();
    let mut tape = Tape::new(theta.len());
    let cloud = tape.cloud(x);
    let mut skips = vec![tape.constant_field(TensorField::ones(n, c))];

    let extras = |tape: &mut Tape, h: NodeId, lvl: &LevelLayout| -> Result<NodeId> {
        let mut h = h;
        if let Some(r) = &lvl.t2mix {
            let p = tape.param(theta_v, r.clone());
            h = tape.t2_mix(h, p)?;
        }
        if let Some(r) = &lvl.relu {
            let p = tape.param(theta_v, r.clone());
            h = tape.vn_relu(h, p)?;
        }
        Ok(h)
    };

    let mut graphs = Vec::new();
    for (i, lvl) in theta.layout.ascents.iter().enumerate() {
        let prev = *skips.last().expect("U0 is present");
        let graph = match fixed {
            _ if cfg.k_nn == 0 => None,
            Some(g) => Some(g[i].clone()),
            None => {
                // the constant starting field has no geometry, so the first
                // ascent looks for neighbours among the input coordinates
                let feature = if lvl.order == 1 { cloud } else { prev };
                Some(layers::knn_graph(tape.field(feature)?, cfg.k_nn)?)
            }
        };
        graphs.extend(graph.clone());
        let alpha = tape.param(theta_v, lvl.main.clone());
        let h = tape.ascend(prev, cloud, alpha, graph)?;
        let gamma = tape.param(theta_v, lvl.linear.clone());
        let h = tape.linear(h, gamma, c)?;
        skips.push(extras(&mut tape, h, lvl)?);
    }

    let mut v = skips[cfg.k_max];
    for lvl in &theta.layout.descents {
        let beta = tape.param(theta_v, lvl.main.clone());
        let d = tape.descend(v, beta)?;
        let cat = tape.concat(d, skips[lvl.order])?;
        let gamma = tape.param(theta_v, lvl.linear.clone());
        let h = tape.linear(cat, gamma, c)?;
        v = extras(&mut tape, h, lvl)?;
    }

    let (mut pooled, mut output) = (None, None);
    if with_head && !theta.layout.head.is_empty() {
        let p = tape.sum_pool(v)?;
        let mut h = p;
        let last = theta.layout.head.len() - 1;
        for (i, layer) in theta.layout.head.iter().enumerate() {
            let w = tape.param(theta_v, layer.weights.clone());
            let b = tape.param(theta_v, layer.bias.clone());
            h = tape.dense(h, w, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        pooled = Some(p);
        output = Some(h);
    }
    Ok(Recording { tape, cloud, features: v, pooled, output, graphs })
}

/// `V^(r)` for a centred cloud: permutation equivariant, and O(3)-equivariant
/// (odd `K`) or invariant (even `K`).
pub fn forward(x: &PointCloud, cfg: &NetworkConfig, theta: &ParamSet) -> Result<TensorField> {
    let rec = record(x, cfg, theta, false)?;
    Ok(rec.tape.field(rec.features)?.clone())
}

/// Head output (logits or regression values) for a centred cloud.
pub fn predict(x: &PointCloud, cfg: &NetworkConfig, theta: &ParamSet) -> Result<Vec<f64>> {
    if cfg.head_widths.is_empty() {
        return Err(Error::Config("the network has no head".into()));
    }
    let rec = record(x, cfg, theta, true)?;
    Ok(rec.tape.vector(rec.output.expect("head recorded"))?.to_vec())
}

/// `out_c = sum_j V_jc` of an order-0 field.
pub fn sum_pool(v: &TensorField) -> Result<Vec<f64>> {
    if v.order() != 0 {
        return Err(Error::OrderMismatch { expected: 0, got: v.order() });
    }
    let c = v.channels();
    let mut out = vec![0.0; c];
    for j in 0..v.n() {
        for (o, x) in out.iter_mut().zip(v.point(j)) {
            *o += x;
        }
    }
    Ok(out)
}

/// Fully connected layers with ReLU in between; the last layer is linear.
pub fn invariant_head(pooled: &[f64], cfg: &NetworkConfig, theta: &ParamSet) -> Result<Vec<f64>> {
    check_params(cfg, theta)?;
    if pooled.len() != cfg.channels {
        return Err(Error::Shape(format!("head expects {} inputs, got {}", cfg.channels, pooled.len())));
    }
    let mut h = pooled.to_vec();
    let last = theta.layout.head.len().saturating_sub(1);
    for (i, layer) in theta.layout.head.iter().enumerate() {
        h = dense_forward(&h, &theta.values[layer.weights.clone()], &theta.values[layer.bias.clone()]);
        if i < last {
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    Ok(h)
}

/// Channel mixer for the descent producing order `k_c` that drops the
/// descended block and keeps the skip input `U^(k_c)` unchanged.
pub fn short_circuit_mask(cfg: &NetworkConfig, k_c: usize) -> Result<LinearParams> {
    check_descent_level(cfg, k_c)?;
    let c = cfg.channels;
    let mut gamma = vec![0.0; 2 * c * c];
    for i in 0..c {
        gamma[(c + i) * c + i] = 1.0;
    }
    LinearParams::new(2 * c, c, gamma)
}

/// Complement of [`short_circuit_mask`]: keeps the descended block only.
pub fn descended_block_mask(cfg: &NetworkConfig, k_c: usize) -> Result<LinearParams> {
    check_descent_level(cfg, k_c)?;
    let c = cfg.channels;
    let mut gamma = vec![0.0; 2 * c * c];
    for i in 0..c {
        gamma[i * c + i] = 1.0;
    }
    LinearParams::new(2 * c, c, gamma)
}

fn check_descent_level(cfg: &NetworkConfig, k_c: usize) -> Result<()> {
    if k_c % 2 != cfg.k_max % 2 {
        return Err(Error::Config(format!("level {k_c} has the wrong parity for K = {}", cfg.k_max)));
    }
    if k_c + 2 > cfg.k_max {
        return Err(Error::Config(format!("level {k_c} exceeds K - 2 = {}", cfg.k_max as i64 - 2)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupElement;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_matches_closed_form() {
        for k in 1..=6 {
            for c in 1..=4 {
                for knn in [0, 2] {
                    for relu in [false, true] {
                        for t2 in [false, true] {
                            let mut cfg = NetworkConfig::basic(k, c).with_extras(knn, relu, t2);
                            if k % 2 == 0 {
                                cfg = cfg.with_head(vec![5, 3]);
                            }
                            assert_eq!(ParamLayout::new(&cfg).len(), cfg.param_count(), "{cfg:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hand_counted_layout() {
        // K=2, C=1: ascents 2*(2+1), descent from order 2: 1 + 2, head 1->1: 2
        let cfg = NetworkConfig::basic(2, 1).with_head(vec![1]);
        assert_eq!(cfg.param_count(), 6 + 3 + 2);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = NetworkConfig::basic(4, 3).with_extras(2, true, true).with_head(vec![8, 4]).with_seed(42);
        let a = ParamSet::init(&cfg).unwrap();
        let b = ParamSet::init(&cfg).unwrap();
        assert_eq!(a.values(), b.values());
        let c = ParamSet::init(&cfg.clone().with_seed(43)).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn single_ascent_reproduces_the_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PointCloud::random(6, 1.0, &mut rng).centralize();
        let cfg = NetworkConfig::basic(1, 1);
        let mut theta = ParamSet::zeros(&cfg).unwrap();
        theta.set_ascend(1, &AscendParams { alpha1: vec![1.0], alpha2: vec![0.0], alpha3: None }).unwrap();
        theta.set_ascent_linear(1, &LinearParams::identity(1)).unwrap();
        let out = forward(&x, &cfg, &theta).unwrap();
        assert_eq!(out.order(), 1);
        for j in 0..6 {
            assert_eq!(out.entry(j, 0), &x.point(j));
        }
    }

    #[test]
    fn short_circuit_everywhere_returns_u_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = PointCloud::random(5, 1.0, &mut rng).centralize();
        let cfg = NetworkConfig::basic(4, 2);
        let mut theta = ParamSet::init(&cfg).unwrap();
        for k_c in [2, 0] {
            theta.set_descent_linear(k_c, &short_circuit_mask(&cfg, k_c).unwrap()).unwrap();
        }
        let out = forward(&x, &cfg, &theta).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
        // changing deeper parameters has no effect
        let lvl = theta.layout().ascents[3].main.clone();
        theta.values_mut()[lvl].iter_mut().for_each(|v| *v *= -3.0);
        assert_eq!(forward(&x, &cfg, &theta).unwrap(), out);
    }

    #[test]
    fn descended_block_keeps_only_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = PointCloud::random(4, 1.0, &mut rng).centralize();
        let cfg = NetworkConfig::basic(2, 1);
        let mut theta = ParamSet::init(&cfg).unwrap();
        theta.set_descent_linear(0, &descended_block_mask(&cfg, 0).unwrap()).unwrap();
        let rec = record(&x, &cfg, &theta, false).unwrap();
        let out = rec.tape.field(rec.features).unwrap();
        let u2 = forward(&x, &NetworkConfig::basic(2, 1), &theta).unwrap();
        assert_eq!(out, &u2);
        // same as descending U2 directly
        let beta = DescendParams::new(2, 1, theta.values()[theta.layout().descents[0].main.clone()].to_vec()).unwrap();
        let mut ascended = TensorField::ones(4, 1);
        for lvl in &theta.layout().ascents {
            let a = AscendParams::from_flat(1, false, &theta.values()[lvl.main.clone()]).unwrap();
            let l = LinearParams::new(1, 1, theta.values()[lvl.linear.clone()].to_vec()).unwrap();
            ascended = layers::channel_linear(&layers::ascend(&ascended, &x, &a, None).unwrap(), &l).unwrap();
        }
        let direct = layers::descend(&ascended, &beta).unwrap();
        assert!(direct.max_abs_diff(out) < 1e-12);
    }

    #[test]
    fn mask_parity_checked() {
        let cfg = NetworkConfig::basic(4, 2);
        assert!(short_circuit_mask(&cfg, 1).is_err());
        assert!(short_circuit_mask(&cfg, 4).is_err());
        assert!(short_circuit_mask(&cfg, 2).is_ok());
        assert!(descended_block_mask(&NetworkConfig::basic(3, 1), 1).is_ok());
    }

    #[test]
    fn invariant_network_ignores_rotation_and_permutes_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = NetworkConfig::basic(4, 3).with_extras(2, true, true).with_seed(9);
        let theta = ParamSet::init(&cfg).unwrap();
        let x = PointCloud::random(7, 1.0, &mut rng).centralize();
        let g = GroupElement::random(7, &mut rng);
        let moved = forward(&x.act(&g).unwrap(), &cfg, &theta).unwrap();
        let expected = forward(&x, &cfg, &theta).unwrap().act(&g).unwrap();
        assert!(moved.max_abs_diff(&expected) <= 1e-7 * (1.0 + expected.max_abs()));
    }

    #[test]
    fn sum_pool_examples() {
        assert_eq!(sum_pool(&TensorField::ones(5, 2)).unwrap(), vec![5.0, 5.0]);
        assert!(sum_pool(&TensorField::zeros(2, 1, 1)).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = TensorField::random(6, 3, 0, &mut rng);
        let pooled = sum_pool(&v).unwrap();
        for c in 0..3 {
            let mut s = 0.0;
            for j in 0..6 {
                s += v.entry(j, c)[0];
            }
            assert!((pooled[c] - s).abs() < 1e-14);
        }
        let g = GroupElement::new(crate::group::Rotation::identity(), crate::group::Permutation::random(6, &mut rng));
        let permuted = sum_pool(&v.act(&g).unwrap()).unwrap();
        for c in 0..3 {
            assert!((permuted[c] - pooled[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn head_examples() {
        let cfg = NetworkConfig::basic(2, 3).with_head(vec![4, 2]);
        let theta = ParamSet::zeros(&cfg).unwrap();
        assert_eq!(invariant_head(&[1.0, 2.0, 3.0], &cfg, &theta).unwrap(), vec![0.0, 0.0]);

        let cfg = NetworkConfig::basic(2, 3).with_head(vec![3]);
        let mut theta = ParamSet::zeros(&cfg).unwrap();
        theta.set_head_layer(0, &LinearParams::identity(3).gamma(), &[0.0; 3]).unwrap();
        assert_eq!(invariant_head(&[1.0, -2.0, 3.0], &cfg, &theta).unwrap(), vec![1.0, -2.0, 3.0]);
        assert!(invariant_head(&[1.0], &cfg, &theta).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::basic(0, 1).validate().is_err());
        assert!(NetworkConfig::basic(1, 0).validate().is_err());
        assert!(NetworkConfig::basic(3, 1).with_head(vec![2]).validate().is_err());
        let x = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let cfg = NetworkConfig::basic(2, 1).with_extras(1, false, false);
        assert!(forward(&x, &cfg, &ParamSet::init(&cfg).unwrap()).is_err());
    }
}
