//! Dense tensors over R^3 and the primitive O(3)-equivariant maps between them.
//!
//! An order-k tensor holds `3^k` reals. The multi-index `(i_1, ..., i_k)` with
//! every `i_j` in `{0, 1, 2}` lives at flat offset `sum_j i_j * 3^(k-1-j)`:
//! base 3, leftmost index most significant. Order 2 is therefore a row-major
//! 3x3 matrix. Every kernel and every brute-force check in the test suite uses
//! this convention.
//!
//! Contraction positions are 1-based (`1 <= a < b <= k`) to match the usual
//! `C_{a,b}` notation.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::group::Rotation;

/// `3^k`.
#[inline]
pub const fn dim(order: usize) -> usize {
    3usize.pow(order as u32)
}

/// Slice kernels shared by [`DenseTensor`] and the tensor-field layers.
pub(crate) mod kernels {
    use nalgebra::Matrix3;

    use super::dim;

    /// `out[i * |b| + j] = a[i] * b[j]`
    #[inline]
    pub fn outer_into(a: &[f64], b: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), a.len() * b.len());
        for (chunk, &x) in out.chunks_exact_mut(b.len()).zip(a) {
            for (o, &y) in chunk.iter_mut().zip(b) {
                *o = x * y;
            }
        }
    }

    /// `out[i * |b| + j] += s * a[i] * b[j]`
    #[inline]
    pub fn outer_acc(s: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), a.len() * b.len());
        for (chunk, &x) in out.chunks_exact_mut(b.len()).zip(a) {
            let sx = s * x;
            for (o, &y) in chunk.iter_mut().zip(b) {
                *o += sx * y;
            }
        }
    }

    /// Block sizes `(outer, mid, inner)` for a contraction of positions `a < b`
    /// (1-based) of an order-`order` tensor.
    #[inline]
    fn contraction_blocks(order: usize, a: usize, b: usize) -> (usize, usize, usize) {
        (dim(a - 1), dim(b - a - 1), dim(order - b))
    }

    /// `out += s * C_{a,b}(src)`. `out` has `3^(order-2)` entries.
    pub fn contract_acc(order: usize, a: usize, b: usize, s: f64, src: &[f64], out: &mut [f64]) {
        let (outer, mid, inner) = contraction_blocks(order, a, b);
        debug_assert_eq!(src.len(), dim(order));
        debug_assert_eq!(out.len(), outer * mid * inner);
        for o in 0..outer {
            for m in 0..mid {
                let dst = (o * mid + m) * inner;
                for j in 0..3 {
                    let base = (((o * 3 + j) * mid + m) * 3 + j) * inner;
                    for t in 0..inner {
                        out[dst + t] += s * src[base + t];
                    }
                }
            }
        }
    }

    /// Adjoint of [`contract_acc`]: `out += s * C_{a,b}^T(g)`, scattering `g`
    /// onto the diagonal `i_a == i_b`.
    pub fn contract_adjoint_acc(order: usize, a: usize, b: usize, s: f64, g: &[f64], out: &mut [f64]) {
        let (outer, mid, inner) = contraction_blocks(order, a, b);
        debug_assert_eq!(out.len(), dim(order));
        debug_assert_eq!(g.len(), outer * mid * inner);
        for o in 0..outer {
            for m in 0..mid {
                let src = (o * mid + m) * inner;
                for j in 0..3 {
                    let base = (((o * 3 + j) * mid + m) * 3 + j) * inner;
                    for t in 0..inner {
                        out[base + t] += s * g[src + t];
                    }
                }
            }
        }
    }

    /// Applies `M` along every mode of an order-`order` tensor in place, i.e.
    /// `values <- M^{(x)k} values`, as `order` successive mode products.
    pub fn kron_power_apply(order: usize, m: &Matrix3<f64>, values: &mut [f64], scratch: &mut Vec<f64>) {
        debug_assert_eq!(values.len(), dim(order));
        scratch.resize(values.len(), 0.0);
        for p in 1..=order {
            let outer = dim(p - 1);
            let inner = dim(order - p);
            scratch.copy_from_slice(values);
            for o in 0..outer {
                for i in 0..3 {
                    let dst = (o * 3 + i) * inner;
                    let (r0, r1, r2) = (m[(i, 0)], m[(i, 1)], m[(i, 2)]);
                    let s0 = (o * 3) * inner;
                    let s1 = s0 + inner;
                    let s2 = s1 + inner;
                    for t in 0..inner {
                        values[dst + t] = r0 * scratch[s0 + t] + r1 * scratch[s1 + t] + r2 * scratch[s2 + t];
                    }
                }
            }
        }
    }

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[inline]
    pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi += s * xi;
        }
    }
}

/// An element of `T_k = R^(3^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    order: usize,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(order: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim(order) {
            return Err(Error::Shape(format!(
                "order {order} tensor needs {} values, got {}",
                dim(order),
                values.len()
            )));
        }
        Ok(Self { order, values })
    }

    pub fn zeros(order: usize) -> Self {
        Self { order, values: vec![0.0; dim(order)] }
    }

    pub fn scalar(x: f64) -> Self {
        Self { order: 0, values: vec![x] }
    }

    pub fn vector(v: [f64; 3]) -> Self {
        Self { order: 1, values: v.to_vec() }
    }

    /// Row-major 3x3 matrix as an order-2 tensor.
    pub fn matrix(m: [[f64; 3]; 3]) -> Self {
        Self { order: 2, values: m.iter().flatten().copied().collect() }
    }

    pub fn identity_matrix() -> Self {
        Self::matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    /// `x_1 (x) x_2 (x) ... (x) x_k`.
    pub fn rank_one(factors: &[[f64; 3]]) -> Self {
        factors
            .iter()
            .fold(Self::scalar(1.0), |acc, f| acc.tensor_product(&Self::vector(*f)))
    }

    pub fn order(&self) -> usize {
        self.order
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

    /// Flat offset of a multi-index (0-based entries).
    pub fn offset(index: &[usize]) -> usize {
        index.iter().fold(0, |acc, &i| {
            debug_assert!(i < 3);
            acc * 3 + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.order, "multi-index length must equal the order");
        self.values[Self::offset(index)]
    }

    /// `(T (x) S)_{i, j} = T_i * S_j`, an order `k + l` tensor.
    pub fn tensor_product(&self, other: &Self) -> Self {
        let mut values = vec![0.0; self.values.len() * other.values.len()];
        kernels::outer_into(&self.values, &other.values, &mut values);
        Self { order: self.order + other.order, values }
    }

    /// `C_{a,b}`: sums over the diagonal of positions `a` and `b` (1-based, `a < b`).
    pub fn contract(&self, a: usize, b: usize) -> Result<Self> {
        if a == 0 || a >= b || b > self.order {
            return Err(Error::InvalidContraction { order: self.order, a, b });
        }
        let mut out = Self::zeros(self.order - 2);
        kernels::contract_acc(self.order, a, b, 1.0, &self.values, &mut out.values);
        Ok(out)
    }

    /// `M^{(x)k} T` for an arbitrary 3x3 matrix. Only orthogonal `M` commute
    /// with contractions; use [`DenseTensor::rotate`] for the group action.
    pub fn transform(&self, m: &Matrix3<f64>) -> Self {
        let mut out = self.clone();
        let mut scratch = Vec::new();
        kernels::kron_power_apply(self.order, m, &mut out.values, &mut scratch);
        out
    }

    /// The group action `R^{(x)k} T`.
    pub fn rotate(&self, r: &Rotation) -> Self {
        self.transform(r.matrix())
    }

    pub fn frobenius_inner(&self, other: &Self) -> Result<f64> {
        if self.order != other.order {
            return Err(Error::OrderMismatch { expected: self.order, got: other.order });
        }
        Ok(kernels::dot(&self.values, &other.values))
    }

    pub fn frobenius_norm(&self) -> f64 {
        kernels::dot(&self.values, &self.values).sqrt()
    }

    /// The invariant functional `Lambda_sigma`: contracts every pair of the
    /// pairing in turn, renumbering the surviving positions after each step.
    pub fn lambda_sigma(&self, pairing: &Pairing) -> Result<f64> {
        if self.order % 2 == 1 {
            return Err(Error::InvalidPairing(format!("odd order {}", self.order)));
        }
        if pairing.order() != self.order {
            return Err(Error::InvalidPairing(format!(
                "pairing covers {} positions, tensor has order {}",
                pairing.order(),
                self.order
            )));
        }
        // original labels of the positions still present
        let mut alive: Vec<usize> = (1..=self.order).collect();
        let mut current = self.clone();
        for &(a, b) in pairing.pairs() {
            let pa = alive.iter().position(|&x| x == a).expect("pairing is validated") + 1;
            let pb = alive.iter().position(|&x| x == b).expect("pairing is validated") + 1;
            current = current.contract(pa.min(pb), pa.max(pb))?;
            alive.retain(|&x| x != a && x != b);
        }
        Ok(current.values[0])
    }
}

/// A perfect matching of the positions `1..=k` into `k/2` pairs `(a, b)`, `a < b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pairing {
    pairs: Vec<(usize, usize)>,
}

impl Pairing {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let k = pairs.len() * 2;
        let mut seen = vec![false; k + 1];
        for &(a, b) in &pairs {
            if a == 0 || a >= b || b > k {
                return Err(Error::InvalidPairing(format!("pair ({a}, {b}) invalid for order {k}")));
            }
            for x in [a, b] {
                if std::mem::replace(&mut seen[x], true) {
                    return Err(Error::InvalidPairing(format!("position {x} appears twice")));
                }
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn order(&self) -> usize {
        self.pairs.len() * 2
    }

    /// Every pairing of `1..=k` (there are `(k-1)!!` of them). Empty for odd `k`.
    pub fn all(k: usize) -> Vec<Self> {
        fn rec(rest: &[usize], acc: &mut Vec<(usize, usize)>, out: &mut Vec<Pairing>) {
            if rest.is_empty() {
                out.push(Pairing { pairs: acc.clone() });
                return;
            }
            let first = rest[0];
            for idx in 1..rest.len() {
                acc.push((first, rest[idx]));
                let remaining: Vec<usize> =
                    rest[1..].iter().copied().filter(|&x| x != rest[idx]).collect();
                rec(&remaining, acc, out);
                acc.pop();
            }
        }
        if k % 2 == 1 {
            return Vec::new();
        }
        let positions: Vec<usize> = (1..=k).collect();
        let mut out = Vec::new();
        rec(&positions, &mut Vec::new(), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::random_orthogonal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut impl Rng, order: usize) -> DenseTensor {
        DenseTensor::new(order, (0..dim(order)).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Decodes a flat offset into a base-3 multi-index of the given length.
    fn unravel(mut flat: usize, order: usize) -> Vec<usize> {
        let mut idx = vec![0; order];
        for p in (0..order).rev() {
            idx[p] = flat % 3;
            flat /= 3;
        }
        idx
    }

    #[test]
    fn product_of_basis_vectors() {
        let t = DenseTensor::vector([1.0, 0.0, 0.0]);
        let s = DenseTensor::vector([0.0, 1.0, 0.0]);
        let p = t.tensor_product(&s);
        assert_eq!(p.order(), 2);
        let mut expected = [0.0; 9];
        expected[1] = 1.0;
        assert_eq!(p.values(), &expected);
    }

    #[test]
    fn product_with_scalar() {
        let p = DenseTensor::scalar(2.0).tensor_product(&DenseTensor::vector([1.0, 2.0, 3.0]));
        assert_eq!(p.order(), 1);
        assert_eq!(p.values(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn product_matches_index_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_tensor(&mut rng, 2);
        let s = random_tensor(&mut rng, 1);
        let p = t.tensor_product(&s);
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    assert_eq!(p.get(&[i, j, l]), t.get(&[i, j]) * s.get(&[l]));
                }
            }
        }
    }

    #[test]
    fn trace_is_contraction_of_identity() {
        let c = DenseTensor::identity_matrix().contract(1, 2).unwrap();
        assert_eq!(c.order(), 0);
        assert_eq!(c.values(), &[3.0]);
    }

    #[test]
    fn rank_one_contraction_gives_inner_products() {
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 2.0, 0.0];
        let t = DenseTensor::rank_one(&[x, y, x, y]);
        let c = t.contract(1, 3).unwrap().contract(1, 2).unwrap();
        assert_eq!(c.values(), &[4.0]);
        let p = Pairing::new(vec![(1, 3), (2, 4)]).unwrap();
        assert_eq!(t.lambda_sigma(&p).unwrap(), 4.0);
    }

    #[test]
    fn contraction_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for order in 2..=4 {
            let t = random_tensor(&mut rng, order);
            for a in 1..order {
                for b in a + 1..=order {
                    let c = t.contract(a, b).unwrap();
                    for flat in 0..dim(order - 2) {
                        let rest = unravel(flat, order - 2);
                        let mut sum = 0.0;
                        for j in 0..3 {
                            let mut full = Vec::with_capacity(order);
                            let mut it = rest.iter();
                            for p in 1..=order {
                                if p == a || p == b {
                                    full.push(j);
                                } else {
                                    full.push(*it.next().unwrap());
                                }
                            }
                            sum += t.get(&full);
                        }
                        assert!((c.values()[flat] - sum).abs() < 1e-14, "order {order} ({a},{b})");
                    }
                }
            }
        }
    }

    #[test]
    fn contraction_rejects_bad_indices() {
        let t = DenseTensor::zeros(3);
        assert!(matches!(t.contract(2, 2), Err(Error::InvalidContraction { .. })));
        assert!(matches!(t.contract(2, 1), Err(Error::InvalidContraction { .. })));
        assert!(matches!(t.contract(1, 4), Err(Error::InvalidContraction { .. })));
        assert!(matches!(t.contract(0, 2), Err(Error::InvalidContraction { .. })));
        assert!(DenseTensor::vector([1.0, 2.0, 3.0]).contract(1, 2).is_err());
    }

    #[test]
    fn contraction_adjoint_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_tensor(&mut rng, 4);
        let g = random_tensor(&mut rng, 2);
        for (a, b) in [(1, 2), (1, 4), (2, 3), (3, 4)] {
            let lhs = t.contract(a, b).unwrap().frobenius_inner(&g).unwrap();
            let mut adj = vec![0.0; 81];
            kernels::contract_adjoint_acc(4, a, b, 1.0, g.values(), &mut adj);
            let rhs = kernels::dot(t.values(), &adj);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_rotation_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for order in 0..=5 {
            let t = random_tensor(&mut rng, order);
            assert_eq!(t.rotate(&Rotation::identity()), t);
        }
    }

    #[test]
    fn quarter_turn_moves_projector() {
        // columns e2, -e1, e3
        let r = Rotation::new(Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        let v = DenseTensor::matrix([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]);
        let out = v.rotate(&r);
        let expected = DenseTensor::matrix([[0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        for (a, b) in out.values().iter().zip(expected.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_matches_defining_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_orthogonal(&mut rng);
        let m = r.matrix();
        let t = random_tensor(&mut rng, 3);
        let out = t.rotate(&r);
        for i1 in 0..3 {
            for i2 in 0..3 {
                for i3 in 0..3 {
                    let mut sum = 0.0;
                    for j1 in 0..3 {
                        for j2 in 0..3 {
                            for j3 in 0..3 {
                                sum += m[(i1, j1)] * m[(i2, j2)] * m[(i3, j3)] * t.get(&[j1, j2, j3]);
                            }
                        }
                    }
                    assert!((out.get(&[i1, i2, i3]) - sum).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn order_two_rotation_is_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = random_orthogonal(&mut rng);
        let t = random_tensor(&mut rng, 2);
        let m = Matrix3::from_row_slice(t.values());
        let conj = r.matrix() * m * r.matrix().transpose();
        let out = t.rotate(&r);
        for i in 0..3 {
            for j in 0..3 {
                assert!((out.get(&[i, j]) - conj[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn frobenius_examples() {
        let v = DenseTensor::vector([1.0, 2.0, 3.0]);
        assert_eq!(v.frobenius_inner(&v).unwrap(), 14.0);
        let i = DenseTensor::identity_matrix();
        assert_eq!(i.frobenius_inner(&i).unwrap(), 3.0);
        assert!(matches!(v.frobenius_inner(&i), Err(Error::OrderMismatch { .. })));
    }

    #[test]
    fn frobenius_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for order in 0..=4 {
            let r = random_orthogonal(&mut rng);
            let t = random_tensor(&mut rng, order);
            let s = random_tensor(&mut rng, order);
            let before = t.frobenius_inner(&s).unwrap();
            let after = t.rotate(&r).frobenius_inner(&s.rotate(&r)).unwrap();
            assert!((before - after).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_sigma_examples() {
        let t = DenseTensor::rank_one(&[[1.0, 2.0, 0.0], [3.0, 0.0, 1.0]]);
        let p = Pairing::new(vec![(1, 2)]).unwrap();
        assert_eq!(t.lambda_sigma(&p).unwrap(), 3.0);

        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let t = DenseTensor::rank_one(&[x, x, y, y]);
        let adjacent = Pairing::new(vec![(1, 2), (3, 4)]).unwrap();
        let crossed = Pairing::new(vec![(1, 3), (2, 4)]).unwrap();
        assert_eq!(t.lambda_sigma(&adjacent).unwrap(), 1.0);
        assert_eq!(t.lambda_sigma(&crossed).unwrap(), 0.0);
    }

    #[test]
    fn lambda_sigma_rejects_odd_order() {
        let t = DenseTensor::zeros(3);
        let p = Pairing::new(vec![(1, 2)]).unwrap();
        assert!(matches!(t.lambda_sigma(&p), Err(Error::InvalidPairing(_))));
    }

    #[test]
    fn pairing_validation_and_enumeration() {
        assert!(Pairing::new(vec![(1, 2), (2, 3)]).is_err());
        assert!(Pairing::new(vec![(2, 1)]).is_err());
        assert!(Pairing::new(vec![(1, 5), (2, 3)]).is_err());
        assert_eq!(Pairing::all(2).len(), 1);
        assert_eq!(Pairing::all(4).len(), 3);
        assert_eq!(Pairing::all(6).len(), 15);
        assert!(Pairing::all(3).is_empty());
    }

    #[test]
    fn shape_is_checked() {
        assert!(DenseTensor::new(2, vec![0.0; 8]).is_err());
        assert!(DenseTensor::new(0, vec![1.0]).is_ok());
    }
}
