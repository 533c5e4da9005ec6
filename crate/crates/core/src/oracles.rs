//! Reference values for the covariance invariants and a hand-built network
//! that computes the first of them.
//!
//! With `M = X̄ X̄ᵀ` (unnormalised, `X̄` the centred cloud), the power sums
//! `p2, p4, p6 = tr M, tr M², tr M³` determine the sorted eigenvalues of `M`
//! through Newton's identities and the trigonometric solution of the cubic.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::field::PointCloud;
use crate::layers::{AscendParams, DescendParams, LinearParams};
use crate::network::{descended_block_mask, NetworkConfig, ParamSet};

/// Relative slack below zero tolerated before an eigenvalue is a domain error.
pub const NEGATIVE_SLACK: f64 = 1e-10;
/// Relative tolerance of the attainability check on power sums.
pub const ATTAINABLE_TOL: f64 = 1e-8;

/// `p2, p4, p6` of a cloud. Near repeated eigenvalues the inverse map needs
/// more digits than a double carries, so the rounding residual of each sum is
/// kept alongside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSums {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    residual: [f64; 3],
}

impl PowerSums {
    pub fn new(s1: f64, s2: f64, s3: f64) -> Self {
        Self { s1, s2, s3, residual: [0.0; 3] }
    }

    fn extended(&self) -> [TwoFloat; 3] {
        [
            TwoFloat::new_add(self.s1, self.residual[0]),
            TwoFloat::new_add(self.s2, self.residual[1]),
            TwoFloat::new_add(self.s3, self.residual[2]),
        ]
    }
}

/// Eigenvalues sorted descending, all nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenTriple {
    pub lam1: f64,
    pub lam2: f64,
    pub lam3: f64,
}

impl EigenTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.lam1, self.lam2, self.lam3]
    }

    /// `max_i |a_i - b_i| / max(|b|_inf, tiny)`.
    pub fn relative_diff(&self, other: &Self) -> f64 {
        let a = self.as_array();
        let b = other.as_array();
        let scale = b.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
    }
}

/// `X̄ X̄ᵀ`, symmetrised.
pub fn covariance(x: &PointCloud) -> Matrix3<f64> {
    let mean = x.mean();
    let mut m = Matrix3::zeros();
    for p in x.points() {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for a in 0..3 {
            for b in 0..3 {
                m[(a, b)] += d[a] * d[b];
            }
        }
    }
    (m + m.transpose()) * 0.5
}

/// Traces of the first three powers of the covariance, in double-double.
pub fn power_sums(x: &PointCloud) -> PowerSums {
    let m = covariance(x);
    let e = |a: usize, b: usize| TwoFloat::from(m[(a, b)]);
    let (mut t1, mut t2, mut t3) = (TwoFloat::from(0.0), TwoFloat::from(0.0), TwoFloat::from(0.0));
    for a in 0..3 {
        t1 += e(a, a);
        for b in 0..3 {
            let ab = e(a, b);
            t2 += ab * e(b, a);
            for c in 0..3 {
                t3 += ab * e(b, c) * e(c, a);
            }
        }
    }
    let split = |t: TwoFloat| (t.hi(), t.lo());
    let ((s1, r1), (s2, r2), (s3, r3)) = (split(t1), split(t2), split(t3));
    PowerSums { s1, s2, s3, residual: [r1, r2, r3] }
}

/// Sorted eigenvalues from the power sums.
pub fn q_from_power_sums(s: PowerSums) -> Result<EigenTriple> {
    let PowerSums { s1, s2, s3, .. } = s;
    if !(s1.is_finite() && s2.is_finite() && s3.is_finite()) {
        return Err(Error::Domain(format!("non-finite power sums ({s1}, {s2}, {s3})")));
    }
    let scale = s1.abs().max(1.0);
    if s1 < -NEGATIVE_SLACK * scale || s2 < -NEGATIVE_SLACK * scale * scale {
        return Err(Error::Domain(format!("power sums ({s1}, {s2}, {s3}) have a negative trace")));
    }
    // Newton's identities, then the shift λ = μ + e1/3 turning
    // λ³ - e1 λ² + e2 λ - e3 into μ³ + P μ + Q. Both steps cancel heavily
    // when two roots nearly coincide, so they run in double-double.
    let [t1, t2, t3] = s.extended();
    let e1 = t1;
    let e2 = (t1 * t1 - t2) / 2.0;
    let e3 = (t1 * t1 * t1 - t1 * t2 * 3.0 + t3 * 2.0) / 6.0;
    let m = e1 / 3.0;
    let p = e2 - e1 * e1 / 3.0;
    let q = e1 * e2 / 3.0 - e1 * e1 * e1 * 2.0 / 27.0 - e3;
    // for real roots summing to zero: Σμ² = -2P, Σμ³ = -3Q
    let mut roots = shifted_cubic_roots(f64::from(m), f64::from(p * -2.0), f64::from(q * -3.0), scale)?;
    roots.sort_by(|a, b| b.total_cmp(a));
    split_close_pair([e1, e2, e3], &mut roots, scale)?;
    finish(roots, scale)
}

/// Sorted eigenvalues of `X̄ X̄ᵀ` from the matrix's own shifted invariants.
pub fn lambda_cov(x: &PointCloud) -> EigenTriple {
    let m = covariance(x);
    let scale = m.trace().abs().max(1.0);
    symmetric_eigenvalues(&m, scale).expect("covariance is symmetric positive semi-definite")
}

/// Closed-form eigenvalues of a symmetric PSD 3x3 matrix, sorted descending.
pub fn symmetric_eigenvalues(a: &Matrix3<f64>, scale: f64) -> Result<EigenTriple> {
    let mean = a.trace() / 3.0;
    let b = a - Matrix3::identity() * mean;
    let b2 = b * b;
    let mut roots = shifted_cubic_roots(mean, b2.trace(), (b2 * b).trace(), scale)?;
    roots.sort_by(|a, b| b.total_cmp(a));
    deflate_close_pair(a, &mut roots, scale);
    finish(roots, scale)
}

/// The cubic only pins a nearly repeated pair to about half precision.
/// Recompute that pair from the 2x2 block on the complement of the isolated
/// eigenvector, whose eigenvalues come without cancellation.
fn deflate_close_pair(a: &Matrix3<f64>, roots: &mut [f64; 3], scale: f64) {
    let (g12, g23) = (roots[0] - roots[1], roots[1] - roots[2]);
    let (iso, pair) = if g12 >= g23 { (0, [1, 2]) } else { (2, [0, 1]) };
    if g12.max(g23) <= 1e-6 * scale {
        return;
    }
    let shifted = a - Matrix3::identity() * roots[iso];
    let rows = [shifted.row(0).transpose(), shifted.row(1).transpose(), shifted.row(2).transpose()];
    let v = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])]
        .into_iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
        .expect("three candidates");
    if v.norm() == 0.0 {
        return;
    }
    let v = v.normalize();
    let k = v.iamin();
    let mut e = Vector3::zeros();
    e[k] = 1.0;
    let u = v.cross(&e).normalize();
    let w = v.cross(&u);
    let (p, q, r) = (u.dot(&(a * u)), u.dot(&(a * w)), w.dot(&(a * w)));
    let mid = (p + r) / 2.0;
    let half = ((p - r) / 2.0).hypot(q);
    roots[pair[0]] = mid + half;
    roots[pair[1]] = mid - half;
}

/// Power-sum counterpart of [`deflate_close_pair`]: polish the isolated root
/// with Newton steps in double-double, then solve the quadratic it leaves.
fn split_close_pair(e: [TwoFloat; 3], roots: &mut [f64; 3], scale: f64) -> Result<()> {
    let (g12, g23) = (roots[0] - roots[1], roots[1] - roots[2]);
    let (iso, pair) = if g12 >= g23 { (0, [1, 2]) } else { (2, [0, 1]) };
    if g12.max(g23) <= 1e-6 * scale {
        return Ok(());
    }
    let [e1, e2, e3] = e;
    let mut x = TwoFloat::from(roots[iso]);
    for _ in 0..3 {
        let f = ((x - e1) * x + e2) * x - e3;
        let df = (x * 3.0 - e1 * 2.0) * x + e2;
        if f64::from(df) == 0.0 {
            break;
        }
        x -= f / df;
    }
    // the other two roots have sum e1 - x and product e2 - x (e1 - x)
    let sum = e1 - x;
    let prod = e2 - x * sum;
    let half = sum / 2.0;
    let disc = f64::from(half * half - prod);
    if disc < -ATTAINABLE_TOL * scale * scale {
        return Err(Error::Domain(format!("remaining quadratic has complex roots (discriminant {disc})")));
    }
    let w = disc.max(0.0).sqrt();
    roots[iso] = f64::from(x);
    roots[pair[0]] = f64::from(half) + w;
    roots[pair[1]] = f64::from(half) - w;
    Ok(())
}

/// Roots `mean + μ_i` where the `μ_i` sum to zero and have the given second
/// and third power sums.
fn shifted_cubic_roots(mean: f64, mu2: f64, mu3: f64, scale: f64) -> Result<[f64; 3]> {
    if mu2 < -ATTAINABLE_TOL * scale * scale {
        return Err(Error::Domain(format!("spread {mu2} is negative; roots are complex")));
    }
    let p = (mu2.max(0.0) / 6.0).sqrt();
    if p <= f64::EPSILON * scale {
        return Ok([mean; 3]);
    }
    // det((A - mean I)/p) / 2 = (Σμ³/3) / (2p³)
    let r = mu3 / (6.0 * p * p * p);
    if r.abs() > 1.0 + ATTAINABLE_TOL {
        return Err(Error::Domain(format!("cubic discriminant is negative (r = {r}); roots are complex")));
    }
    let phi = r.clamp(-1.0, 1.0).acos() / 3.0;
    let l1 = mean + 2.0 * p * phi.cos();
    let l3 = mean + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * mean - l1 - l3;
    Ok([l1, l2, l3])
}

fn finish(mut roots: [f64; 3], scale: f64) -> Result<EigenTriple> {
    roots.sort_by(|a, b| b.total_cmp(a));
    for r in &mut roots {
        if *r < 0.0 {
            if *r < -NEGATIVE_SLACK * scale {
                return Err(Error::Domain(format!("eigenvalue {r} is negative")));
            }
            *r = 0.0;
        }
    }
    Ok(EigenTriple { lam1: roots[0], lam2: roots[1], lam3: roots[2] })
}

/// Six points `±sqrt(l_i / 2) e_i` along the columns `e_i` of `axes`; their
/// covariance has eigenvalues `spreads` with eigenvectors `e_i`.
pub fn cloud_with_spectrum(axes: &Matrix3<f64>, spreads: [f64; 3]) -> PointCloud {
    let mut pts = Vec::new();
    for i in 0..3 {
        let a = (spreads[i] / 2.0).sqrt();
        let e = axes.column(i);
        pts.push([a * e[0], a * e[1], a * e[2]]);
        pts.push([-a * e[0], -a * e[1], -a * e[2]]);
    }
    PointCloud::new(pts).expect("six points")
}

/// Parameters for `K = 2` under which every channel of the network output is
/// `|X̄_j|²`, so the sum-pooled output is `p2`. A head, if present, must be a
/// single unit and is set to read the first channel.
pub fn construct_p2_params(cfg: &NetworkConfig) -> Result<ParamSet> {
    if cfg.k_max != 2 {
        return Err(Error::Config(format!("the p2 construction needs K = 2, got {}", cfg.k_max)));
    }
    if cfg.k_nn > 0 || cfg.use_relu || cfg.use_t2mix {
        return Err(Error::Config("the p2 construction needs the extras disabled".into()));
    }
    if !(cfg.head_widths.is_empty() || cfg.head_widths == [1]) {
        return Err(Error::Config("the p2 construction supports no head or a single output".into()));
    }
    let c = cfg.channels;
    let mut theta = ParamSet::zeros(cfg)?;
    let ascend = AscendParams { alpha1: vec![1.0; c], alpha2: vec![0.0; c], alpha3: None };
    for k in 1..=2 {
        theta.set_ascend(k, &ascend)?;
        theta.set_ascent_linear(k, &LinearParams::identity(c))?;
    }
    theta.set_descend(0, &DescendParams::one_hot(2, c, 1, 2)?)?;
    theta.set_descent_linear(0, &descended_block_mask(cfg, 0)?)?;
    if !cfg.head_widths.is_empty() {
        let mut w = vec![0.0; c];
        w[0] = 1.0;
        theta.set_head_layer(0, &w, &[0.0])?;
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{random_orthogonal, GroupElement};
    use crate::network::{forward, predict, sum_pool};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec()).unwrap()
    }

    /// Points `±sqrt(l/2) e` for each axis, so the covariance is `Σ l e eᵀ`.
    fn eig_oracle(m: &Matrix3<f64>) -> [f64; 3] {
        let mut e: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        [e[0], e[1], e[2]]
    }

    #[test]
    fn covariance_examples() {
        let c = covariance(&cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]));
        assert_eq!(c, Matrix3::from_diagonal(&[2.0, 0.0, 0.0].into()));
        assert_eq!(covariance(&cloud(&[[3.0, -1.0, 2.0]])), Matrix3::zeros());
    }

    #[test]
    fn covariance_conjugates_under_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = PointCloud::random(9, 1.0, &mut rng);
        let r = random_orthogonal(&mut rng);
        let lhs = covariance(&x.rotate(&r));
        let rhs = r.matrix() * covariance(&x) * r.matrix().transpose();
        assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn power_sum_examples() {
        let x = cloud_with_spectrum(&Matrix3::identity(), [3.0, 1.0, 0.0]);
        let s = power_sums(&x);
        assert_relative_eq!(s.s1, 4.0, epsilon = 1e-12);
        assert_relative_eq!(s.s2, 10.0, epsilon = 1e-12);
        assert_relative_eq!(s.s3, 28.0, epsilon = 1e-12);
        assert_eq!(power_sums(&cloud(&[[0.0; 3]; 4])), PowerSums::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn power_sums_are_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.random_range(2..12);
            let x = PointCloud::random(n, 1.0, &mut rng);
            let g = GroupElement::random(n, &mut rng);
            let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let a = power_sums(&x);
            let b = power_sums(&x.act(&g).unwrap().translate(t));
            for (u, v) in [(a.s1, b.s1), (a.s2, b.s2), (a.s3, b.s3)] {
                assert!((u - v).abs() <= 1e-10 * u.abs().max(1e-300), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn q_examples() {
        let t = q_from_power_sums(PowerSums::new(4.0, 10.0, 28.0)).unwrap();
        assert!(t.relative_diff(&EigenTriple { lam1: 3.0, lam2: 1.0, lam3: 0.0 }) < 1e-12, "{t:?}");
        let t = q_from_power_sums(PowerSums::new(3.0, 3.0, 3.0)).unwrap();
        assert_eq!(t.as_array(), [1.0; 3]);
        assert_eq!(q_from_power_sums(PowerSums::new(0.0, 0.0, 0.0)).unwrap().as_array(), [0.0; 3]);
    }

    #[test]
    fn q_rejects_unattainable_sums() {
        // s2 > s1² cannot come from nonnegative roots
        assert!(matches!(q_from_power_sums(PowerSums::new(1.0, 5.0, 1.0)), Err(Error::Domain(_))));
        // s2 < s1²/3 gives complex roots
        assert!(matches!(q_from_power_sums(PowerSums::new(3.0, 1.0, 1.0)), Err(Error::Domain(_))));
        assert!(q_from_power_sums(PowerSums::new(-1.0, 1.0, -1.0)).is_err());
        assert!(q_from_power_sums(PowerSums::new(f64::NAN, 1.0, 1.0)).is_err());
    }

    #[test]
    fn lambda_cov_examples() {
        let t = lambda_cov(&cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]));
        assert_eq!(t.as_array(), [2.0, 0.0, 0.0]);
        let iso = cloud_with_spectrum(&Matrix3::identity(), [0.7; 3]);
        assert!(lambda_cov(&iso).relative_diff(&EigenTriple { lam1: 0.7, lam2: 0.7, lam3: 0.7 }) < 1e-12);
    }

    #[test]
    fn lambda_cov_recovers_prescribed_spreads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = random_orthogonal(&mut rng);
            let mut spreads = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
            let x = cloud_with_spectrum(r.matrix(), spreads);
            spreads.sort_by(|a, b| b.total_cmp(a));
            let got = lambda_cov(&x).as_array();
            for i in 0..3 {
                assert!((got[i] - spreads[i]).abs() <= 1e-8 * spreads[0].max(1.0), "{got:?} {spreads:?}");
            }
        }
    }

    #[test]
    fn lambda_cov_matches_trace_det_and_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x = PointCloud::random(rng.random_range(3..20), 1.0, &mut rng);
            let m = covariance(&x);
            let t = lambda_cov(&x);
            let [a, b, c] = t.as_array();
            assert!(a >= b && b >= c && c >= 0.0);
            assert!((a + b + c - m.trace()).abs() <= 1e-10 * m.trace().max(1.0));
            assert!((a * b * c - m.determinant()).abs() <= 1e-8 * m.determinant().abs() + 1e-14 * a * a * a);
            let o = eig_oracle(&m);
            for i in 0..3 {
                assert!((o[i] - t.as_array()[i]).abs() <= 1e-10 * o[0]);
            }
        }
    }

    #[test]
    fn q_inverts_power_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let x = PointCloud::random(rng.random_range(1..30), rng.random_range(0.1..10.0), &mut rng);
            let q = q_from_power_sums(power_sums(&x)).unwrap();
            let direct = lambda_cov(&x);
            assert!(q.relative_diff(&direct) <= 1e-8, "{q:?} vs {direct:?}");
        }
    }

    #[test]
    fn q_near_double_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let r = random_orthogonal(&mut rng);
            let l = rng.random_range(0.5..2.0);
            let x = cloud_with_spectrum(r.matrix(), [l, l + rng.random_range(0.0..1e-6), rng.random_range(0.0..3.0)]);
            let q = q_from_power_sums(power_sums(&x)).unwrap();
            let direct = lambda_cov(&x);
            assert!(q.relative_diff(&direct) <= 1e-8, "{q:?} vs {direct:?}");
            let o = eig_oracle(&covariance(&x));
            for i in 0..3 {
                assert!((o[i] - direct.as_array()[i]).abs() <= 1e-8 * o[0]);
            }
        }
    }

    #[test]
    fn conditioning_near_triple_root() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random_orthogonal(&mut rng);
        let base = lambda_cov(&cloud_with_spectrum(r.matrix(), [1.0; 3]));
        let delta = 1e-6;
        let moved = lambda_cov(&cloud_with_spectrum(r.matrix(), [1.0 + delta, 1.0, 1.0 - delta]));
        assert!(moved.relative_diff(&base) <= 1e-2);
    }

    #[test]
    fn constructed_network_computes_p2() {
        let x = cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]);
        let cfg = NetworkConfig::basic(2, 1);
        let theta = construct_p2_params(&cfg).unwrap();
        let out = forward(&x, &cfg, &theta).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0]);
        assert_eq!(sum_pool(&out).unwrap(), vec![2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for c in 1..=3 {
            let cfg = NetworkConfig::basic(2, c).with_head(vec![1]);
            let theta = construct_p2_params(&cfg).unwrap();
            for _ in 0..20 {
                let x = PointCloud::random(rng.random_range(1..16), 1.0, &mut rng).centralize();
                let out = forward(&x, &cfg, &theta).unwrap();
                let mean = [0.0; 3];
                for j in 0..x.len() {
                    let p = x.point(j);
                    let sq: f64 = (0..3).map(|a| (p[a] - mean[a]).powi(2)).sum();
                    assert!((out.entry(j, 0)[0] - sq).abs() <= 1e-12 * sq.max(1.0));
                }
                let s1 = power_sums(&x).s1;
                let pred = predict(&x, &cfg, &theta).unwrap()[0];
                assert!((pred - s1).abs() <= 1e-10 * s1.max(1e-300));
            }
        }
    }

    #[test]
    fn construction_rejects_other_configs() {
        assert!(construct_p2_params(&NetworkConfig::basic(4, 1)).is_err());
        assert!(construct_p2_params(&NetworkConfig::basic(2, 1).with_extras(0, true, false)).is_err());
        assert!(construct_p2_params(&NetworkConfig::basic(2, 1).with_head(vec![3])).is_err());
    }
}
