//! Seeded randomised checks of the library's guarantees: equivariance of the
//! primitives, layers and whole networks, the pairing functionals, the
//! constructed `p2` network, the eigenvalue map and the analytic gradients.
//!
//! Trial `t` of a suite draws everything from `ChaCha8Rng::seed_from_u64(seed
//! + t)`, so a reported failure can be replayed from its seed alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_diff_check, NodeId, Tape};
use crate::error::Result;
use crate::field::{PointCloud, TensorField};
use crate::group::{random_orthogonal, random_rotation, GroupElement};
use crate::layers::{self, pair_count, AscendParams, DescendParams, LinearParams, T2MixParams, VnReluParams};
use crate::network::{forward, record, record_with_graphs, sum_pool, NetworkConfig, ParamSet};
use crate::oracles::{cloud_with_spectrum, construct_p2_params, lambda_cov, power_sums, q_from_power_sums};
use crate::tensor::{DenseTensor, Pairing};

/// Finite-difference step used by the gradient checks.
pub const FD_EPS: f64 = 1e-5;

/// Error of one trial and a short description of what was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub error: f64,
    pub detail: String,
}

impl Measurement {
    pub fn new(error: f64, detail: impl Into<String>) -> Self {
        Self { error, detail: detail.into() }
    }

    fn worst(items: impl IntoIterator<Item = Measurement>) -> Measurement {
        items
            .into_iter()
            .fold(Measurement::new(0.0, "no checks"), |a, b| if b.error > a.error || b.error.is_nan() { b } else { a })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub seed: u64,
    pub error: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub trials_run: usize,
    pub tolerance: f64,
    pub worst: f64,
    pub failure: Option<TrialFailure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }

    pub fn summary(&self) -> String {
        match &self.failure {
            None => format!(
                "{}: {} trials, worst error {:.3e} (tolerance {:.0e})",
                self.name, self.trials_run, self.worst, self.tolerance
            ),
            Some(f) => format!(
                "{}: FAILED at seed {}: error {:.3e} > {:.0e} ({})",
                self.name, f.seed, f.error, self.tolerance, f.detail
            ),
        }
    }
}

/// Runs `trials` seeded trials, stopping at the first whose error exceeds
/// `tolerance` or which returns an error.
pub fn run_suite(
    name: &str,
    trials: usize,
    seed: u64,
    tolerance: f64,
    mut trial: impl FnMut(&mut ChaCha8Rng) -> Result<Measurement>,
) -> SuiteReport {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let trial_seed = seed.wrapping_add(t as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let failure = match trial(&mut rng) {
            Ok(m) if m.error <= tolerance => {
                worst = worst.max(m.error);
                None
            }
            Ok(m) => Some(TrialFailure { seed: trial_seed, error: m.error, detail: m.detail }),
            Err(e) => Some(TrialFailure { seed: trial_seed, error: f64::NAN, detail: e.to_string() }),
        };
        if let Some(f) = failure {
            return SuiteReport { name: name.into(), trials_run: t + 1, tolerance, worst: f.error, failure: Some(f) };
        }
    }
    SuiteReport { name: name.into(), trials_run: trials, tolerance, worst, failure: None }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `max |a - b| / max(|a|_inf, |b|_inf)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    relative_error_floor(a, b, 0.0)
}

/// As [`relative_error`], with the scale at least `floor`. Used when an
/// output can cancel to rounding noise, e.g. an activation that removes
/// the whole input.
pub fn relative_error_floor(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()));
    let scale = max_abs(a).max(max_abs(b)).max(floor);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// `max |a - b| / (1 + |b|_inf)`.
pub fn scaled_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()));
    diff / (1.0 + max_abs(b))
}

fn random_tensor(order: usize, rng: &mut impl Rng) -> DenseTensor {
    let values = (0..crate::tensor::dim(order)).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseTensor::new(order, values).expect("length matches order")
}

fn random_vec(len: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Tensor products and contractions commute with `R^{⊗k}` (orders up to 4).
pub fn primitive_trial(rng: &mut impl Rng) -> Result<Measurement> {
    let (k, l) = (rng.random_range(0..=4), rng.random_range(0..=4));
    let r = random_orthogonal(rng);
    let (t, s) = (random_tensor(k, rng), random_tensor(l, rng));
    let lhs = t.rotate(&r).tensor_product(&s.rotate(&r));
    let rhs = t.tensor_product(&s).rotate(&r);
    let mut checks = vec![Measurement::new(relative_error(lhs.values(), rhs.values()), format!("product of orders {k}, {l}"))];
    let u = t.tensor_product(&s);
    if u.order() >= 2 {
        let a = rng.random_range(1..u.order());
        let b = rng.random_range(a + 1..=u.order());
        let lhs = u.rotate(&r).contract(a, b)?;
        let rhs = u.contract(a, b)?.rotate(&r);
        checks.push(Measurement::new(
            relative_error(lhs.values(), rhs.values()),
            format!("contraction ({a}, {b}) of order {}", u.order()),
        ));
    }
    Ok(Measurement::worst(checks))
}

fn random_group(n: usize, rng: &mut impl Rng) -> GroupElement {
    GroupElement::random(n, rng)
}

/// Each layer commutes with the joint action (orders up to 4, `C <= 4`, `n <= 8`).
pub fn layer_trial(rng: &mut impl Rng) -> Result<Measurement> {
    let n = rng.random_range(2..=8);
    let c = rng.random_range(1..=4);
    let g = random_group(n, rng);
    let x = PointCloud::random(n, 1.0, rng).centralize();
    let gx = x.act(&g)?;
    let mut checks = Vec::new();

    // ascend, with the neighbour term
    let k = rng.random_range(0..=3);
    let v = TensorField::random(n, c, k, rng);
    let gv = v.act(&g)?;
    let k_nn = rng.random_range(1..n.min(4));
    let p = AscendParams { alpha1: random_vec(c, 1.0, rng), alpha2: random_vec(c, 1.0, rng), alpha3: Some(random_vec(c, 1.0, rng)) };
    let graph_of = |f: &TensorField, cloud: &PointCloud| {
        if f.order() == 0 {
            layers::knn_graph(&cloud.to_field(), k_nn)
        } else {
            layers::knn_graph(f, k_nn)
        }
    };
    let lhs = layers::ascend(&gv, &gx, &p, Some(&graph_of(&gv, &gx)?))?;
    let rhs = layers::ascend(&v, &x, &p, Some(&graph_of(&v, &x)?))?.act(&g)?;
    checks.push(Measurement::new(relative_error(lhs.data(), rhs.data()), format!("ascend from order {k}, k_nn {k_nn}")));

    // descend
    let k = rng.random_range(2..=4);
    let v = TensorField::random(n, c, k, rng);
    let p = DescendParams::new(k, c, random_vec(c * pair_count(k), 1.0, rng))?;
    let lhs = layers::descend(&v.act(&g)?, &p)?;
    let rhs = layers::descend(&v, &p)?.act(&g)?;
    checks.push(Measurement::new(relative_error(lhs.data(), rhs.data()), format!("descend from order {k}")));

    // channel mixing, the order-2 self-map and the activation
    let k = rng.random_range(0..=4);
    let v = TensorField::random(n, c, k, rng);
    let c_out = rng.random_range(1..=4);
    let p = LinearParams::new(c, c_out, random_vec(c * c_out, 1.0, rng))?;
    let lhs = layers::channel_linear(&v.act(&g)?, &p)?;
    let rhs = layers::channel_linear(&v, &p)?.act(&g)?;
    checks.push(Measurement::new(relative_error(lhs.data(), rhs.data()), format!("linear on order {k}")));

    let w = VnReluParams::new(c, random_vec(c * c, 1.0, rng))?;
    let lhs = layers::vn_relu(&v.act(&g)?, &w)?;
    let rhs = layers::vn_relu(&v, &w)?.act(&g)?;
    checks.push(Measurement::new(
        relative_error_floor(lhs.data(), rhs.data(), v.max_abs()),
        format!("activation on order {k}"),
    ));

    let v2 = TensorField::random(n, c, 2, rng);
    let p = T2MixParams::from_flat(&random_vec(3 * c, 1.0, rng))?;
    let lhs = layers::t2_mix(&v2.act(&g)?, &p)?;
    let rhs = layers::t2_mix(&v2, &p)?.act(&g)?;
    checks.push(Measurement::new(relative_error(lhs.data(), rhs.data()), "order-2 self-map"));

    Ok(Measurement::worst(checks))
}

/// A random configuration with `K <= max_k`, `C <= max_c` and, when `extras`,
/// the neighbour term, activation and order-2 self-map switched on.
pub fn random_config(rng: &mut impl Rng, max_k: usize, max_c: usize, n: usize, extras: bool) -> NetworkConfig {
    let k = rng.random_range(1..=max_k);
    let c = rng.random_range(1..=max_c);
    let cfg = NetworkConfig::basic(k, c).with_seed(rng.random());
    if extras {
        cfg.with_extras(rng.random_range(1..n.clamp(2, 4)), true, true)
    } else {
        cfg
    }
}

/// `forward(g X) = g forward(X)` for a random network, error scaled by
/// `1 + |output|`.
pub fn network_trial(rng: &mut impl Rng, max_k: usize, max_c: usize, max_n: usize, extras: bool) -> Result<Measurement> {
    let n = rng.random_range(2..=max_n);
    let cfg = random_config(rng, max_k, max_c, n, extras);
    network_trial_with(&cfg, n, rng)
}

pub fn network_trial_with(cfg: &NetworkConfig, n: usize, rng: &mut impl Rng) -> Result<Measurement> {
    let theta = ParamSet::init(cfg)?;
    let x = PointCloud::random(n, 1.0, rng).centralize();
    let g = random_group(n, rng);
    let moved = forward(&x.act(&g)?, cfg, &theta)?;
    let expected = forward(&x, cfg, &theta)?.act(&g)?;
    Ok(Measurement::new(
        scaled_error(moved.data(), expected.data()),
        format!("K={} C={} n={n} k_nn={} relu={} t2mix={}", cfg.k_max, cfg.channels, cfg.k_nn, cfg.use_relu, cfg.use_t2mix),
    ))
}

/// Every pairing functional on a random rank-one tensor equals the product of
/// the paired inner products; absolute error.
pub fn pairing_trial(order: usize, rng: &mut impl Rng) -> Result<Measurement> {
    let factors: Vec<[f64; 3]> = (0..order).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let t = DenseTensor::rank_one(&factors);
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mut worst = Measurement::new(0.0, format!("order {order}"));
    for pairing in Pairing::all(order) {
        let expected: f64 = pairing.pairs().iter().map(|&(a, b)| dot(factors[a - 1], factors[b - 1])).product();
        let err = (t.lambda_sigma(&pairing)? - expected).abs();
        if err > worst.error {
            worst = Measurement::new(err, format!("order {order}, pairing {:?}", pairing.pairs()));
        }
    }
    Ok(worst)
}

/// The constructed `K = 2` network's pooled output against `p2`, relative.
pub fn constructive_p2_trial(rng: &mut impl Rng) -> Result<Measurement> {
    let n = rng.random_range(1..=16);
    let c = rng.random_range(1..=3);
    let cfg = NetworkConfig::basic(2, c);
    let theta = construct_p2_params(&cfg)?;
    let x = PointCloud::random(n, rng.random_range(0.1..10.0), rng).centralize();
    let pooled = sum_pool(&forward(&x, &cfg, &theta)?)?;
    let p2 = power_sums(&x).s1;
    let err = if p2 == 0.0 { pooled[0].abs() } else { (pooled[0] - p2).abs() / p2.abs() };
    Ok(Measurement::new(err, format!("n={n} C={c} p2={p2:.6e}")))
}

/// Eigenvalues through the power sums against the direct solve. With
/// `near_degenerate`, two eigenvalues differ by at most `1e-6`.
pub fn eigen_trial(rng: &mut impl Rng, near_degenerate: bool) -> Result<Measurement> {
    let x = if near_degenerate {
        let l = rng.random_range(0.1..3.0);
        let spreads = [l, l + rng.random_range(0.0..=1e-6), rng.random_range(0.0..3.0)];
        cloud_with_spectrum(random_rotation(rng).matrix(), spreads)
    } else {
        let n = rng.random_range(1..=32);
        PointCloud::random(n, rng.random_range(0.1..10.0), rng)
    };
    let via_q = q_from_power_sums(power_sums(&x))?;
    let direct = lambda_cov(&x);
    Ok(Measurement::new(via_q.relative_diff(&direct), format!("{:?} vs {:?}", via_q.as_array(), direct.as_array())))
}

type LayerFn<'a> = dyn Fn(&mut Tape, NodeId, NodeId, &[f64]) -> Result<NodeId> + 'a;

/// Finite-difference check of one layer with respect to its field input, the
/// cloud and its parameters jointly. The output is reduced to a scalar with
/// fixed random weights.
fn layer_grad(v: &TensorField, x: &PointCloud, params: &[f64], layer: &LayerFn<'_>, rng: &mut impl Rng) -> Result<f64> {
    let (nv, nx) = (v.data().len(), 3 * x.len());
    let (n, c, k) = (v.n(), v.channels(), v.order());
    let build = |z: &[f64]| -> Result<(Tape, NodeId, NodeId, NodeId)> {
        let mut tape = Tape::new(params.len());
        let vn = tape.constant_field(TensorField::from_data(n, c, k, z[..nv].to_vec())?);
        let xn = tape.constant_field(TensorField::from_data(x.len(), 1, 1, z[nv..nv + nx].to_vec())?);
        let out = layer(&mut tape, vn, xn, &z[nv + nx..])?;
        Ok((tape, vn, xn, out))
    };
    let mut z = v.data().to_vec();
    z.extend(x.points().iter().flatten());
    z.extend_from_slice(params);

    let (mut tape, vn, xn, out) = build(&z)?;
    let w = random_vec(tape.value(out).len(), 1.0, rng);
    let s = tape.inner(out, w.clone())?;
    let grads = tape.backward(s)?;
    let mut analytic = grads.field(vn).map(|f| f.data().to_vec()).unwrap_or_else(|| vec![0.0; nv]);
    analytic.extend(grads.field(xn).map(|f| f.data().to_vec()).unwrap_or_else(|| vec![0.0; nx]));
    analytic.extend_from_slice(grads.params());

    let objective = |z: &[f64]| -> Result<f64> {
        let (mut tape, _, _, out) = build(z)?;
        let s = tape.inner(out, w.clone())?;
        Ok(tape.vector(s)?[0])
    };
    finite_diff_check(objective, &z, &analytic, FD_EPS)
}

fn all_params(tape: &mut Tape, p: &[f64]) -> NodeId {
    tape.param(p, 0..p.len())
}

/// Finite-difference checks of every layer in isolation, with random shapes.
pub fn layer_grad_trial(rng: &mut impl Rng) -> Result<Measurement> {
    let n = rng.random_range(2..=6);
    let c = rng.random_range(1..=3);
    let x = PointCloud::random(n, 1.0, rng).centralize();
    let mut checks = Vec::new();

    let k = rng.random_range(0..=3);
    let v = TensorField::random(n, c, k, rng);
    let k_nn = rng.random_range(1..n.min(4));
    let graph = if k == 0 { layers::knn_graph(&x.to_field(), k_nn)? } else { layers::knn_graph(&v, k_nn)? };
    let p = random_vec(3 * c, 1.0, rng);
    let err = layer_grad(
        &v,
        &x,
        &p,
        &|t, v, x, p| {
            let p = all_params(t, p);
            t.ascend(v, x, p, Some(graph.clone()))
        },
        rng,
    )?;
    checks.push(Measurement::new(err, format!("ascend from order {k} with neighbours")));
    let p = random_vec(2 * c, 1.0, rng);
    let err = layer_grad(
        &v,
        &x,
        &p,
        &|t, v, x, p| {
            let p = all_params(t, p);
            t.ascend(v, x, p, None)
        },
        rng,
    )?;
    checks.push(Measurement::new(err, format!("ascend from order {k}")));

    let k = rng.random_range(2..=4);
    let v = TensorField::random(n, c, k, rng);
    let p = random_vec(c * pair_count(k), 1.0, rng);
    let err = layer_grad(
        &v,
        &x,
        &p,
        &|t, v, _, p| {
            let p = all_params(t, p);
            t.descend(v, p)
        },
        rng,
    )?;
    checks.push(Measurement::new(err, format!("descend from order {k}")));

    let k = rng.random_range(0..=3);
    let v = TensorField::random(n, c, k, rng);
    let c_out = rng.random_range(1..=3);
    let p = random_vec(c * c_out, 1.0, rng);
    let err = layer_grad(
        &v,
        &x,
        &p,
        &|t, v, _, p| {
            let p = all_params(t, p);
            t.linear(v, p, c_out)
        },
        rng,
    )?;
    checks.push(Measurement::new(err, format!("linear on order {k}")));

    let p = random_vec(c * c, 1.0, rng);
    let err = layer_grad(
        &v,
        &x,
        &p,
        &|t, v, _, p| {
            let p = all_params(t, p);
            t.vn_relu(v, p)
        },
        rng,
    )?;
    checks.push(Measurement::new(err, format!("activation on order {k}")));

    let v2 = TensorField::random(n, c, 2, rng);
    let p = random_vec(3 * c, 1.0, rng);
    let err = layer_grad(
        &v2,
        &x,
        &p,
        &|t, v, _, p| {
            let p = all_params(t, p);
            t.t2_mix(v, p)
        },
        rng,
    )?;
    checks.push(Measurement::new(err, "order-2 self-map"));

    let v1 = TensorField::random(n, c, 1, rng);
    let err = layer_grad(&v1, &x, &[], &|t, v, x, _| t.concat(v, x), rng)?;
    checks.push(Measurement::new(err, "concat"));

    let v0 = TensorField::random(n, c, 0, rng);
    let width = rng.random_range(1..=4);
    let p = random_vec(width * c + width, 1.0, rng);
    let err = layer_grad(
        &v0,
        &x,
        &p,
        &|t, v, _, p| {
            let pooled = t.sum_pool(v)?;
            let w = t.param(p, 0..width * c);
            let b = t.param(p, width * c..p.len());
            let h = t.dense(pooled, w, b)?;
            t.relu(h)
        },
        rng,
    )?;
    checks.push(Measurement::new(err, "pool, dense, relu"));

    Ok(Measurement::worst(checks))
}

/// Finite-difference check of the full network's cross-entropy loss with
/// respect to every parameter.
///
/// Parameters are drawn uniformly from `[-1, 1]` rather than from the
/// training initialisation, whose zero head biases put every head unit on its
/// kink when the pooled features vanish. The neighbour graphs are held at
/// their values at `theta`, as in the backward pass.
pub fn network_grad_trial(rng: &mut impl Rng) -> Result<Measurement> {
    let n = rng.random_range(2..=6);
    let k = 2 * rng.random_range(1..=2);
    let c = rng.random_range(1..=3);
    let mut cfg = NetworkConfig::basic(k, c).with_head(vec![4, 3]).with_seed(rng.random());
    if rng.random_bool(0.5) {
        cfg = cfg.with_extras(rng.random_range(1..n.min(4)), true, true);
    }
    let len = ParamSet::zeros(&cfg)?.len();
    let theta = ParamSet::from_flat(&cfg, random_vec(len, 1.0, rng))?;
    let x = PointCloud::random(n, 1.0, rng).centralize();
    let label = rng.random_range(0..3);
    let graphs = record(&x, &cfg, &theta, false)?.graphs;
    let loss = |values: &[f64]| -> Result<(f64, Vec<f64>)> {
        let theta = ParamSet::from_flat(&cfg, values.to_vec())?;
        let mut rec = record_with_graphs(&x, &cfg, &theta, true, &graphs)?;
        let out = rec.output.expect("head recorded");
        let l = rec.tape.cross_entropy(out, label)?;
        let value = rec.tape.vector(l)?[0];
        Ok((value, rec.tape.backward(l)?.into_params()))
    };
    let (value, analytic) = loss(theta.values())?;
    let err = finite_diff_check(|z| loss(z).map(|r| r.0), theta.values(), &analytic, FD_EPS)?;
    Ok(Measurement::new(
        err,
        format!(
            "K={k} C={c} n={n} k_nn={} relu={} t2mix={} loss={value:.4}",
            cfg.k_nn, cfg.use_relu, cfg.use_t2mix
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_a_few_seeds() {
        let mut reports = vec![
            run_suite("primitives", 50, 0, 1e-10, primitive_trial),
            run_suite("layers", 20, 0, 1e-8, layer_trial),
            run_suite("network", 10, 0, 1e-7, |r| network_trial(r, 4, 4, 8, true)),
            run_suite("p2", 20, 0, 1e-10, constructive_p2_trial),
            run_suite("eigen", 50, 0, 1e-8, |r| eigen_trial(r, true)),
        ];
        for order in [2, 4, 6] {
            reports.push(run_suite("pairings", 5, 0, 1e-12, |r| pairing_trial(order, r)));
        }
        for r in reports {
            assert!(r.passed(), "{}", r.summary());
        }
    }

    #[test]
    fn gradient_suites_pass() {
        let r = run_suite("layer gradients", 5, 0, 1e-4, layer_grad_trial);
        assert!(r.passed(), "{}", r.summary());
        let r = run_suite("network gradients", 3, 0, 1e-4, network_grad_trial);
        assert!(r.passed(), "{}", r.summary());
    }

    #[test]
    fn failures_report_the_seed() {
        let r = run_suite("always fails", 10, 40, 1.0, |_| Ok(Measurement::new(2.0, "too big")));
        assert!(!r.passed());
        assert_eq!(r.trials_run, 1);
        assert_eq!(r.failure.as_ref().unwrap().seed, 40);
        assert!(r.summary().contains("seed 40"));
    }

    #[test]
    fn error_measures() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.5]), 0.5 / 2.5);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert_eq!(scaled_error(&[3.0], &[1.0]), 1.0);
    }
}
