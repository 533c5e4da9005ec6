//! Parametric maps `T_k^{n x C} -> T_k'^{n x C'}` that commute with the joint
//! O(3) x S_n action for every choice of parameters.
//!
//! Each layer comes with a vector-Jacobian product (`*_vjp`) used by the tape
//! in [`crate::autodiff`]. Given the adjoint `g` of the layer output it returns
//! the adjoints of every input, parameters included, in the same flat layout as
//! the parameter struct's `to_flat`.

use crate::error::{Error, Result};
use crate::field::{PointCloud, TensorField};
use crate::tensor::{dim, kernels};

/// Feature-space directions below this norm leave the activation inactive.
pub const VN_RELU_EPS: f64 = 1e-12;

/// Coefficients of the ascending layer, per channel.
///
/// Flat layout: `alpha1 ++ alpha2 ++ alpha3?`.
#[derive(Debug, Clone, PartialEq)]
pub struct AscendParams {
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    /// Weight of the nearest-neighbour term; present iff that term is enabled.
    pub alpha3: Option<Vec<f64>>,
}

impl AscendParams {
    pub fn flat_len(channels: usize, knn: bool) -> usize {
        channels * if knn { 3 } else { 2 }
    }

    pub fn from_flat(channels: usize, knn: bool, flat: &[f64]) -> Result<Self> {
        check_len("ascend parameters", Self::flat_len(channels, knn), flat.len())?;
        let (a1, rest) = flat.split_at(channels);
        let (a2, a3) = rest.split_at(channels);
        Ok(Self { alpha1: a1.to_vec(), alpha2: a2.to_vec(), alpha3: knn.then(|| a3.to_vec()) })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = [self.alpha1.as_slice(), self.alpha2.as_slice()].concat();
        if let Some(a3) = &self.alpha3 {
            out.extend_from_slice(a3);
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.alpha1.len()
    }
}

/// One weight per channel and per contraction pair `a < b` of the input order.
///
/// Flat layout: `beta[c * pairs + p]` with pairs in lexicographic order
/// `(1,2), (1,3), ..., (k-1,k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescendParams {
    order: usize,
    channels: usize,
    beta: Vec<f64>,
}

impl DescendParams {
    pub fn new(order: usize, channels: usize, beta: Vec<f64>) -> Result<Self> {
        if order < 2 {
            return Err(Error::Config(format!("descending layers need order >= 2, got {order}")));
        }
        check_len("descend parameters", channels * pair_count(order), beta.len())?;
        Ok(Self { order, channels, beta })
    }

    /// All weights zero except `(a, b)` on every channel.
    pub fn one_hot(order: usize, channels: usize, a: usize, b: usize) -> Result<Self> {
        let pairs = contraction_pairs(order);
        let p = pairs
            .iter()
            .position(|&q| q == (a, b))
            .ok_or(Error::InvalidContraction { order, a, b })?;
        let mut beta = vec![0.0; channels * pairs.len()];
        for c in 0..channels {
            beta[c * pairs.len() + p] = 1.0;
        }
        Self::new(order, channels, beta)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn weight(&self, c: usize, a: usize, b: usize) -> f64 {
        let pairs = contraction_pairs(self.order);
        let p = pairs.iter().position(|&q| q == (a, b)).expect("valid pair");
        self.beta[c * pairs.len() + p]
    }
}

/// `k (k - 1) / 2`.
pub fn pair_count(order: usize) -> usize {
    order * order.saturating_sub(1) / 2
}

/// `(a, b)` with `1 <= a < b <= order`, lexicographic.
pub fn contraction_pairs(order: usize) -> Vec<(usize, usize)> {
    (1..=order).flat_map(|a| (a + 1..=order).map(move |b| (a, b))).collect()
}

/// Channel mixing matrix `gamma[c * c_out + c']`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    c_in: usize,
    c_out: usize,
    gamma: Vec<f64>,
}

impl LinearParams {
    pub fn new(c_in: usize, c_out: usize, gamma: Vec<f64>) -> Result<Self> {
        check_len("linear parameters", c_in * c_out, gamma.len())?;
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("linear layer weights".into()));
        }
        Ok(Self { c_in, c_out, gamma })
    }

    pub fn identity(c: usize) -> Self {
        let mut gamma = vec![0.0; c * c];
        for i in 0..c {
            gamma[i * c + i] = 1.0;
        }
        Self { c_in: c, c_out: c, gamma }
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn get(&self, c: usize, c_out: usize) -> f64 {
        self.gamma[c * self.c_out + c_out]
    }
}

/// Per-channel weights `(a, b, d)` of `V -> a V + b V^T + d tr(V) I`.
#[derive(Debug, Clone, PartialEq)]
pub struct T2MixParams {
    pub coeffs: Vec<[f64; 3]>,
}

impl T2MixParams {
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(3) {
            return Err(Error::Shape(format!("t2 mix parameters must come in triples, got {}", flat.len())));
        }
        Ok(Self { coeffs: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn identity(channels: usize) -> Self {
        Self { coeffs: vec![[1.0, 0.0, 0.0]; channels] }
    }
}

/// Square channel-mixing matrix `w[c * C + c']` producing the activation's
/// direction `D_c = sum_c' w[c, c'] V_c'`.
#[derive(Debug, Clone, PartialEq)]
pub struct VnReluParams {
    channels: usize,
    w: Vec<f64>,
}

impl VnReluParams {
    pub fn new(channels: usize, w: Vec<f64>) -> Result<Self> {
        check_len("activation parameters", channels * channels, w.len())?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("activation weights".into()));
        }
        Ok(Self { channels, w })
    }

    pub fn identity(channels: usize) -> Self {
        let lin = LinearParams::identity(channels);
        Self { channels, w: lin.gamma }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }
}

/// For each point, the indices of its nearest neighbours in feature space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnGraph {
    lists: Vec<Vec<usize>>,
}

impl KnnGraph {
    pub fn new(lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        for (j, l) in lists.iter().enumerate() {
            if let Some(&bad) = l.iter().find(|&&i| i >= n) {
                return Err(Error::Shape(format!("neighbour {bad} of point {j} is out of range for n = {n}")));
            }
        }
        Ok(Self { lists })
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.lists[j]
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!("{what}: expected {expected} values, got {got}")));
    }
    Ok(())
}

/// `k_nn` nearest neighbours of every point, excluding itself, by Frobenius
/// distance over all channels. Ties go to the smaller index.
pub fn knn_graph(v: &TensorField, k_nn: usize) -> Result<KnnGraph> {
    let n = v.n();
    if k_nn == 0 || k_nn + 1 > n {
        return Err(Error::Config(format!("k_nn = {k_nn} needs 1 <= k_nn <= n - 1 with n = {n}")));
    }
    let mut lists = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for j in 0..n {
        let pj = v.point(j);
        cand.clear();
        for i in (0..n).filter(|&i| i != j) {
            let d2: f64 = v.point(i).iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
            cand.push((d2, i));
        }
        cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        lists.push(cand[..k_nn].iter().map(|&(_, i)| i).collect());
    }
    Ok(KnnGraph { lists })
}

fn check_ascend_inputs(v: &TensorField, x: &PointCloud, p: &AscendParams, neighbors: Option<&KnnGraph>) -> Result<()> {
    if x.len() != v.n() {
        return Err(Error::Shape(format!("cloud has {} points, field has {}", x.len(), v.n())));
    }
    let c = v.channels();
    if p.alpha1.len() != c || p.alpha2.len() != c || p.alpha3.as_ref().is_some_and(|a| a.len() != c) {
        return Err(Error::Shape(format!("ascend parameters do not match {c} channels")));
    }
    match (neighbors, &p.alpha3) {
        (Some(g), Some(_)) => {
            if g.len() != v.n() {
                return Err(Error::Shape(format!("graph has {} points, field has {}", g.len(), v.n())));
            }
            if let Some((j, &i)) =
                g.lists.iter().enumerate().find_map(|(j, l)| l.iter().find(|&&i| i >= v.n()).map(|i| (j, i)))
            {
                return Err(Error::Shape(format!("neighbour {i} of point {j} is out of range")));
            }
            Ok(())
        }
        (None, None) => Ok(()),
        _ => Err(Error::Config("neighbour graph must be given exactly when alpha3 is present".into())),
    }
}

/// Raises the order by one:
/// `out_jc = a1_c X_j (x) V_jc + a2_c sum_{i != j} X_i (x) V_ic [+ a3_c sum_{i ~ j} X_i (x) V_ic]`.
pub fn ascend(v: &TensorField, x: &PointCloud, p: &AscendParams, neighbors: Option<&KnnGraph>) -> Result<TensorField> {
    check_ascend_inputs(v, x, p, neighbors)?;
    let (n, c_count, k) = (v.n(), v.channels(), v.order());
    let len = dim(k + 1);
    let mut out = TensorField::zeros(n, c_count, k + 1);
    let mut total = vec![0.0; len];
    let mut own = vec![0.0; len];
    for c in 0..c_count {
        total.iter_mut().for_each(|t| *t = 0.0);
        for i in 0..n {
            kernels::outer_acc(1.0, &x.point(i), v.entry(i, c), &mut total);
        }
        let (a1, a2) = (p.alpha1[c], p.alpha2[c]);
        for j in 0..n {
            kernels::outer_into(&x.point(j), v.entry(j, c), &mut own);
            let dst = out.entry_mut(j, c);
            // (total - own) is exactly zero when n == 1
            for ((d, &t), &o) in dst.iter_mut().zip(&total).zip(&own) {
                *d = a2 * (t - o) + a1 * o;
            }
            if let (Some(g), Some(a3)) = (neighbors, &p.alpha3) {
                for &i in g.neighbors(j) {
                    kernels::outer_acc(a3[c], &x.point(i), v.entry(i, c), dst);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`ascend`]: `(dV, dX, d_params)`, `dX` flattened point-major.
pub fn ascend_vjp(
    v: &TensorField,
    x: &PointCloud,
    p: &AscendParams,
    neighbors: Option<&KnnGraph>,
    g: &TensorField,
) -> Result<(TensorField, Vec<f64>, Vec<f64>)> {
    check_ascend_inputs(v, x, p, neighbors)?;
    let (n, c_count, k) = (v.n(), v.channels(), v.order());
    if g.n() != n || g.channels() != c_count || g.order() != k + 1 {
        return Err(Error::Shape("ascend adjoint has the wrong shape".into()));
    }
    let len_in = dim(k);
    let len_out = dim(k + 1);
    let knn = p.alpha3.is_some();
    let mut dv = TensorField::zeros(n, c_count, k);
    let mut dx = vec![0.0; 3 * n];
    let mut dp = vec![0.0; AscendParams::flat_len(c_count, knn)];

    let mut g_total = vec![0.0; len_out];
    let mut total = vec![0.0; len_out];
    let mut h = vec![0.0; len_out];
    // adjoint received by each point through other points' neighbour sums
    let mut g_nbr = vec![0.0; n * len_out];

    for c in 0..c_count {
        g_total.iter_mut().for_each(|t| *t = 0.0);
        total.iter_mut().for_each(|t| *t = 0.0);
        for j in 0..n {
            kernels::axpy(1.0, g.entry(j, c), &mut g_total);
            kernels::outer_acc(1.0, &x.point(j), v.entry(j, c), &mut total);
        }
        if let Some(graph) = neighbors {
            g_nbr.iter_mut().for_each(|t| *t = 0.0);
            for j in 0..n {
                for &i in graph.neighbors(j) {
                    kernels::axpy(1.0, g.entry(j, c), &mut g_nbr[i * len_out..(i + 1) * len_out]);
                }
            }
        }
        let (a1, a2) = (p.alpha1[c], p.alpha2[c]);
        let a3 = p.alpha3.as_ref().map_or(0.0, |a| a[c]);
        let mut d_a1 = 0.0;
        let mut d_a3 = 0.0;
        for i in 0..n {
            let gi = g.entry(i, c);
            let xi = x.point(i);
            let vi = v.entry(i, c);
            // <g_i, x_i (x) v_i>
            d_a1 += outer_inner(gi, &xi, vi);
            for (hh, (&gt, &gg)) in h.iter_mut().zip(g_total.iter().zip(gi)) {
                *hh = a1 * gg + a2 * (gt - gg);
            }
            if knn {
                let gn = &g_nbr[i * len_out..(i + 1) * len_out];
                d_a3 += outer_inner(gn, &xi, vi);
                kernels::axpy(a3, gn, &mut h);
            }
            // h is the adjoint of x_i (x) v_i
            let dvi = dv.entry_mut(i, c);
            for a in 0..3 {
                let block = &h[a * len_in..(a + 1) * len_in];
                kernels::axpy(xi[a], block, dvi);
                dx[3 * i + a] += kernels::dot(block, vi);
            }
        }
        dp[c] = d_a1;
        dp[c_count + c] = kernels::dot(&g_total, &total) - d_a1;
        if knn {
            dp[2 * c_count + c] = d_a3;
        }
    }
    Ok((dv, dx, dp))
}

/// `<g, x (x) v>` without materialising the outer product.
#[inline]
fn outer_inner(g: &[f64], x: &[f64; 3], v: &[f64]) -> f64 {
    let len = v.len();
    (0..3).map(|a| x[a] * kernels::dot(&g[a * len..(a + 1) * len], v)).sum()
}

/// Lowers the order by two: `out_jc = sum_{a<b} beta_{a,b,c} C_{a,b}(V_jc)`.
pub fn descend(v: &TensorField, p: &DescendParams) -> Result<TensorField> {
    let k = v.order();
    if k < 2 {
        return Err(Error::Config(format!("cannot descend from order {k}")));
    }
    if p.order != k || p.channels != v.channels() {
        return Err(Error::Shape(format!(
            "descend parameters are for order {} with {} channels, field is order {k} with {}",
            p.order,
            p.channels,
            v.channels()
        )));
    }
    let pairs = contraction_pairs(k);
    let mut out = TensorField::zeros(v.n(), v.channels(), k - 2);
    for j in 0..v.n() {
        for c in 0..v.channels() {
            let src = v.entry(j, c);
            let betas = &p.beta[c * pairs.len()..(c + 1) * pairs.len()];
            let dst = out.entry_mut(j, c);
            for (&(a, b), &beta) in pairs.iter().zip(betas) {
                if beta != 0.0 {
                    kernels::contract_acc(k, a, b, beta, src, dst);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`descend`]: `(dV, d_beta)`.
pub fn descend_vjp(v: &TensorField, p: &DescendParams, g: &TensorField) -> Result<(TensorField, Vec<f64>)> {
    let k = v.order();
    if k < 2 || p.order != k || g.order() + 2 != k || !(g.n() == v.n() && g.channels() == v.channels()) {
        return Err(Error::Shape("descend adjoint has the wrong shape".into()));
    }
    let pairs = contraction_pairs(k);
    let mut dv = TensorField::zeros(v.n(), v.channels(), k);
    let mut dbeta = vec![0.0; p.beta.len()];
    let mut scratch = vec![0.0; dim(k - 2)];
    for j in 0..v.n() {
        for c in 0..v.channels() {
            let src = v.entry(j, c);
            let gjc = g.entry(j, c);
            for (pi, &(a, b)) in pairs.iter().enumerate() {
                let idx = c * pairs.len() + pi;
                scratch.iter_mut().for_each(|s| *s = 0.0);
                kernels::contract_acc(k, a, b, 1.0, src, &mut scratch);
                dbeta[idx] += kernels::dot(gjc, &scratch);
                kernels::contract_adjoint_acc(k, a, b, p.beta[idx], gjc, dv.entry_mut(j, c));
            }
        }
    }
    Ok((dv, dbeta))
}

/// `out_jc' = sum_c gamma_{c c'} V_jc`.
pub fn channel_linear(v: &TensorField, p: &LinearParams) -> Result<TensorField> {
    if p.c_in != v.channels() {
        return Err(Error::Shape(format!("linear layer expects {} channels, got {}", p.c_in, v.channels())));
    }
    let mut out = TensorField::zeros(v.n(), p.c_out, v.order());
    for j in 0..v.n() {
        for c in 0..p.c_in {
            let src = v.entry(j, c);
            for co in 0..p.c_out {
                let w = p.gamma[c * p.c_out + co];
                if w != 0.0 {
                    kernels::axpy(w, src, out.entry_mut(j, co));
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`channel_linear`]: `(dV, d_gamma)`.
pub fn channel_linear_vjp(v: &TensorField, p: &LinearParams, g: &TensorField) -> Result<(TensorField, Vec<f64>)> {
    if p.c_in != v.channels() || g.channels() != p.c_out || g.n() != v.n() || g.order() != v.order() {
        return Err(Error::Shape("linear adjoint has the wrong shape".into()));
    }
    let mut dv = TensorField::zeros(v.n(), p.c_in, v.order());
    let mut dgamma = vec![0.0; p.gamma.len()];
    for j in 0..v.n() {
        for c in 0..p.c_in {
            let src = v.entry(j, c);
            for co in 0..p.c_out {
                let gj = g.entry(j, co);
                dgamma[c * p.c_out + co] += kernels::dot(gj, src);
                kernels::axpy(p.gamma[c * p.c_out + co], gj, dv.entry_mut(j, c));
            }
        }
    }
    Ok((dv, dgamma))
}

/// `V -> a_c V + b_c V^T + d_c tr(V) I` on order-2 fields.
pub fn t2_mix(v: &TensorField, p: &T2MixParams) -> Result<TensorField> {
    if v.order() != 2 {
        return Err(Error::OrderMismatch { expected: 2, got: v.order() });
    }
    if p.coeffs.len() != v.channels() {
        return Err(Error::Shape(format!("t2 mix has {} channels, field has {}", p.coeffs.len(), v.channels())));
    }
    let mut out = TensorField::zeros(v.n(), v.channels(), 2);
    for j in 0..v.n() {
        for (c, &[a, b, d]) in p.coeffs.iter().enumerate() {
            let m = v.entry(j, c);
            let tr = m[0] + m[4] + m[8];
            let dst = out.entry_mut(j, c);
            for r in 0..3 {
                for s in 0..3 {
                    dst[3 * r + s] = a * m[3 * r + s] + b * m[3 * s + r] + if r == s { d * tr } else { 0.0 };
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`t2_mix`]: `(dV, d_coeffs)`.
pub fn t2_mix_vjp(v: &TensorField, p: &T2MixParams, g: &TensorField) -> Result<(TensorField, Vec<f64>)> {
    if v.order() != 2 || !g.same_shape(v) || p.coeffs.len() != v.channels() {
        return Err(Error::Shape("t2 mix adjoint has the wrong shape".into()));
    }
    let mut dv = TensorField::zeros(v.n(), v.channels(), 2);
    let mut dp = vec![0.0; 3 * p.coeffs.len()];
    for j in 0..v.n() {
        for (c, &[a, b, d]) in p.coeffs.iter().enumerate() {
            let m = v.entry(j, c);
            let gm = g.entry(j, c);
            let tr_m = m[0] + m[4] + m[8];
            let tr_g = gm[0] + gm[4] + gm[8];
            let mut g_dot_mt = 0.0;
            for r in 0..3 {
                for s in 0..3 {
                    g_dot_mt += gm[3 * r + s] * m[3 * s + r];
                }
            }
            dp[3 * c] += kernels::dot(gm, m);
            dp[3 * c + 1] += g_dot_mt;
            dp[3 * c + 2] += tr_m * tr_g;
            let dst = dv.entry_mut(j, c);
            for r in 0..3 {
                for s in 0..3 {
                    dst[3 * r + s] = a * gm[3 * r + s] + b * gm[3 * s + r] + if r == s { d * tr_g } else { 0.0 };
                }
            }
        }
    }
    Ok((dv, dp))
}

/// True when every direction is a multiple of its own entry.
fn projection_is_total(v: &TensorField, p: &VnReluParams) -> bool {
    v.entry_len() == 1 || p.channels == 1
}

fn vn_relu_direction(v: &TensorField, p: &VnReluParams, j: usize, c: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let cc = p.channels;
    for c2 in 0..cc {
        let w = p.w[c * cc + c2];
        if w != 0.0 {
            kernels::axpy(w, v.entry(j, c2), out);
        }
    }
}

/// Half-space projection with a learned, channel-mixed direction.
///
/// With `D_jc = sum_c' W_{c c'} V_jc'`, entries with `<V_jc, D_jc> >= 0` pass
/// through and the others lose their component along `D_jc`. Directions with
/// norm below [`VN_RELU_EPS`] leave the entry unchanged.
///
/// For scalar entries, and for a single channel, `D_jc` is parallel to
/// `V_jc`, so a removed entry is set to exactly zero instead of the rounding
/// residue of `V - V`.
pub fn vn_relu(v: &TensorField, p: &VnReluParams) -> Result<TensorField> {
    if p.channels != v.channels() {
        return Err(Error::Shape(format!("activation has {} channels, field has {}", p.channels, v.channels())));
    }
    let mut out = v.clone();
    let parallel = projection_is_total(v, p);
    let mut d = vec![0.0; v.entry_len()];
    for j in 0..v.n() {
        for c in 0..v.channels() {
            vn_relu_direction(v, p, j, c, &mut d);
            let dd = kernels::dot(&d, &d);
            if dd.sqrt() < VN_RELU_EPS {
                continue;
            }
            let vd = kernels::dot(v.entry(j, c), &d);
            if vd < 0.0 {
                if parallel {
                    out.entry_mut(j, c).iter_mut().for_each(|o| *o = 0.0);
                } else {
                    kernels::axpy(-vd / dd, &d, out.entry_mut(j, c));
                }
            }
        }
    }
    Ok(out)
}

/// Adjoints of [`vn_relu`]: `(dV, dW)`. On the boundary `<V, D> = 0` the
/// identity branch is used.
pub fn vn_relu_vjp(v: &TensorField, p: &VnReluParams, g: &TensorField) -> Result<(TensorField, Vec<f64>)> {
    if p.channels != v.channels() || !g.same_shape(v) {
        return Err(Error::Shape("activation adjoint has the wrong shape".into()));
    }
    let cc = p.channels;
    let len = v.entry_len();
    let mut dv = g.clone();
    let mut dw = vec![0.0; cc * cc];
    let mut d = vec![0.0; len];
    let mut dd_adj = vec![0.0; len];
    let parallel = projection_is_total(v, p);
    for j in 0..v.n() {
        for c in 0..cc {
            vn_relu_direction(v, p, j, c, &mut d);
            let dd = kernels::dot(&d, &d);
            if dd.sqrt() < VN_RELU_EPS {
                continue;
            }
            let vjc = v.entry(j, c);
            let vd = kernels::dot(vjc, &d);
            if vd >= 0.0 {
                continue;
            }
            if parallel {
                // the output is identically zero near this point
                dv.entry_mut(j, c).iter_mut().for_each(|o| *o = 0.0);
                continue;
            }
            // out = V - (<V,D>/<D,D>) D
            let gjc = g.entry(j, c);
            let gd = kernels::dot(gjc, &d);
            kernels::axpy(-gd / dd, &d, dv.entry_mut(j, c));
            for t in 0..len {
                dd_adj[t] = -(gd / dd) * vjc[t] - (vd / dd) * gjc[t] + 2.0 * vd * gd / (dd * dd) * d[t];
            }
            for c2 in 0..cc {
                dw[c * cc + c2] += kernels::dot(&dd_adj, v.entry(j, c2));
                let w = p.w[c * cc + c2];
                if w != 0.0 {
                    kernels::axpy(w, &dd_adj, dv.entry_mut(j, c2));
                }
            }
        }
    }
    Ok((dv, dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupElement;
    use crate::tensor::DenseTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(rng: &mut impl Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn basis_cloud() -> PointCloud {
        PointCloud::new(vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap()
    }

    #[test]
    fn single_point_ascend_ignores_the_global_sum() {
        let x = PointCloud::new(vec![[0.5, -2.0, 1.0]]).unwrap();
        let v = TensorField::from_data(1, 1, 1, vec![3.0, 1.0, -1.0]).unwrap();
        let p = AscendParams { alpha1: vec![2.0], alpha2: vec![123.0], alpha3: None };
        let out = ascend(&v, &x, &p, None).unwrap();
        let expected = DenseTensor::vector([0.5, -2.0, 1.0]).tensor_product(&DenseTensor::vector([3.0, 1.0, -1.0]));
        for (a, b) in out.entry(0, 0).iter().zip(expected.values()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn first_ascent_reproduces_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PointCloud::random(5, 1.0, &mut rng);
        let p = AscendParams { alpha1: vec![1.0], alpha2: vec![0.0], alpha3: None };
        let out = ascend(&TensorField::ones(5, 1), &x, &p, None).unwrap();
        for j in 0..5 {
            assert_eq!(out.entry(j, 0), &x.point(j));
        }
    }

    #[test]
    fn ascend_hand_example() {
        let p = AscendParams { alpha1: vec![2.0], alpha2: vec![1.0], alpha3: None };
        let out = ascend(&TensorField::ones(3, 1), &basis_cloud(), &p, None).unwrap();
        assert_eq!(out.entry(0, 0), &[2.0, 1.0, 1.0]);
        assert_eq!(out.entry(1, 0), &[1.0, 2.0, 1.0]);
        assert_eq!(out.entry(2, 0), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn ascend_neighbour_term() {
        let p = AscendParams { alpha1: vec![0.0], alpha2: vec![0.0], alpha3: Some(vec![1.0]) };
        let g = KnnGraph::new(vec![vec![1], vec![2], vec![0, 1]]).unwrap();
        let out = ascend(&TensorField::ones(3, 1), &basis_cloud(), &p, Some(&g)).unwrap();
        assert_eq!(out.entry(0, 0), &[0.0, 1.0, 0.0]);
        assert_eq!(out.entry(2, 0), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn ascend_errors() {
        let x = basis_cloud();
        let p = AscendParams { alpha1: vec![1.0], alpha2: vec![1.0], alpha3: None };
        assert!(ascend(&TensorField::ones(4, 1), &x, &p, None).is_err());
        let with_knn = AscendParams { alpha3: Some(vec![1.0]), ..p.clone() };
        assert!(ascend(&TensorField::ones(3, 1), &x, &with_knn, None).is_err());
        assert!(KnnGraph::new(vec![vec![5], vec![0], vec![0]]).is_err());
        let g = KnnGraph::new(vec![vec![1], vec![0], vec![0]]).unwrap();
        assert!(ascend(&TensorField::ones(3, 1), &x, &p, Some(&g)).is_err());
    }

    #[test]
    fn descend_trace_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = TensorField::random(4, 2, 2, &mut rng);
        let out = descend(&v, &DescendParams::one_hot(2, 2, 1, 2).unwrap()).unwrap();
        for j in 0..4 {
            for c in 0..2 {
                let m = v.entry(j, c);
                assert_eq!(out.entry(j, c)[0], m[0] + m[4] + m[8]);
            }
        }
        let zero = descend(&v, &DescendParams::new(2, 2, vec![0.0; 2]).unwrap()).unwrap();
        assert!(zero.data().iter().all(|&x| x == 0.0));
        assert!(descend(&TensorField::zeros(2, 1, 1), &DescendParams::new(2, 1, vec![1.0]).unwrap()).is_err());
        assert!(DescendParams::new(1, 1, vec![]).is_err());
    }

    #[test]
    fn descend_rank_one() {
        let x = [0.3, -1.0, 2.0];
        let y = [1.5, 0.5, -0.5];
        let t = DenseTensor::rank_one(&[x, x, y, y]);
        let v = TensorField::from_data(1, 1, 4, t.values().to_vec()).unwrap();
        let out = descend(&v, &DescendParams::one_hot(4, 1, 1, 3).unwrap()).unwrap();
        // C_{1,3}(x (x) x (x) y (x) y) = <x, y> x (x) y
        let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let expected = DenseTensor::rank_one(&[x, y]);
        for (a, b) in out.entry(0, 0).iter().zip(expected.values()) {
            assert!((a - xy * b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = TensorField::random(3, 2, 1, &mut rng);
        assert_eq!(channel_linear(&v, &LinearParams::identity(2)).unwrap(), v);
        let sum = channel_linear(&v, &LinearParams::new(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
        for j in 0..3 {
            for t in 0..3 {
                assert_eq!(sum.entry(j, 0)[t], v.entry(j, 0)[t] + v.entry(j, 1)[t]);
            }
        }
        assert!(channel_linear(&v, &LinearParams::identity(3)).is_err());
    }

    #[test]
    fn linear_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = TensorField::random(4, 3, 2, &mut rng);
        let p = LinearParams::new(3, 2, uniform(&mut rng, 6)).unwrap();
        let out = channel_linear(&v, &p).unwrap();
        for j in 0..4 {
            for co in 0..2 {
                for t in 0..9 {
                    let mut s = 0.0;
                    for c in 0..3 {
                        s += p.get(c, co) * v.entry(j, c)[t];
                    }
                    assert!((out.entry(j, co)[t] - s).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn t2_mix_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = TensorField::random(3, 2, 2, &mut rng);
        assert_eq!(t2_mix(&v, &T2MixParams::identity(2)).unwrap(), v);
        let anti = TensorField::from_data(1, 1, 2, vec![0.0, 1.0, -2.0, -1.0, 0.0, 3.0, 2.0, -3.0, 0.0]).unwrap();
        let out = t2_mix(&anti, &T2MixParams { coeffs: vec![[0.0, 1.0, 0.0]] }).unwrap();
        for (a, b) in out.data().iter().zip(anti.data()) {
            assert_eq!(*a, -b);
        }
        assert!(t2_mix(&TensorField::zeros(1, 1, 1), &T2MixParams::identity(1)).is_err());
    }

    #[test]
    fn t2_mix_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let v = TensorField::random(5, 3, 2, &mut rng);
            let p = T2MixParams::from_flat(&uniform(&mut rng, 9)).unwrap();
            let g = GroupElement::random(5, &mut rng);
            let lhs = t2_mix(&v.act(&g).unwrap(), &p).unwrap();
            let rhs = t2_mix(&v, &p).unwrap().act(&g).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }

    #[test]
    fn vn_relu_self_direction_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for order in 0..=3 {
            let v = TensorField::random(4, 1, order, &mut rng);
            assert_eq!(vn_relu(&v, &VnReluParams::identity(1)).unwrap(), v);
        }
    }

    #[test]
    fn vn_relu_antiparallel_projection() {
        let v = TensorField::from_data(1, 2, 1, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let p = VnReluParams::new(2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = vn_relu(&v, &p).unwrap();
        assert_eq!(out.entry(0, 0), &[0.0, 0.0, 0.0]);
        assert_eq!(out.entry(0, 1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn vn_relu_zero_direction_passes_through() {
        let v = TensorField::from_data(1, 2, 1, vec![-1.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let p = VnReluParams::new(2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(vn_relu(&v, &p).unwrap(), v);
    }

    #[test]
    fn vn_relu_projected_branch_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = TensorField::random(6, 3, 2, &mut rng);
        let p = VnReluParams::new(3, uniform(&mut rng, 9)).unwrap();
        let out = vn_relu(&v, &p).unwrap();
        let mut d = vec![0.0; 9];
        for j in 0..6 {
            for c in 0..3 {
                vn_relu_direction(&v, &p, j, c, &mut d);
                assert!(kernels::dot(out.entry(j, c), &d) >= -1e-12);
            }
        }
    }

    #[test]
    fn knn_examples() {
        let two = TensorField::from_data(2, 1, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(knn_graph(&two, 1).unwrap().lists(), &[vec![1], vec![0]]);
        let line = TensorField::from_data(3, 1, 1, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(knn_graph(&line, 1).unwrap().lists(), &[vec![1], vec![0], vec![1]]);
        // ties go to the smaller index
        let flat = TensorField::ones(4, 2);
        assert_eq!(knn_graph(&flat, 2).unwrap().lists(), &[vec![1, 2], vec![0, 2], vec![0, 1], vec![0, 1]]);
        assert!(knn_graph(&two, 2).is_err());
        assert!(knn_graph(&two, 0).is_err());
    }

    #[test]
    fn knn_graph_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for order in 1..=3 {
            let v = TensorField::random(8, 2, order, &mut rng);
            let g = knn_graph(&v, 3).unwrap();
            let h = GroupElement::random(8, &mut rng);
            let moved = knn_graph(&v.act(&h).unwrap(), 3).unwrap();
            let sigma = &h.permutation;
            for i in 0..8 {
                let expected: Vec<usize> = g.neighbors(i).iter().map(|&m| sigma.apply(m)).collect();
                assert_eq!(moved.neighbors(sigma.apply(i)), expected.as_slice());
            }
        }
    }
}
