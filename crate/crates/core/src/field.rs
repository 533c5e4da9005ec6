//! Point clouds and tensor fields: `n` points by `C` channels of order-k tensors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::group::{GroupElement, Permutation, Rotation};
use crate::tensor::{dim, kernels, DenseTensor};

/// A `3 x n` point cloud, stored point-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Shape("a point cloud needs at least one point".into()));
        }
        Ok(Self { points })
    }

    /// Uniform coordinates in `[-scale, scale]`.
    pub fn random(n: usize, scale: f64, rng: &mut impl Rng) -> Self {
        Self {
            points: (0..n)
                .map(|_| std::array::from_fn(|_| rng.random_range(-scale..scale)))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn point(&self, j: usize) -> [f64; 3] {
        self.points[j]
    }

    pub fn mean(&self) -> [f64; 3] {
        let n = self.points.len() as f64;
        let mut m = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                m[a] += p[a];
            }
        }
        m.map(|x| x / n)
    }

    /// `X - (1/n) X 1 1^T`: subtracts the centroid from every point.
    pub fn centralize(&self) -> Self {
        let m = self.mean();
        Self { points: self.points.iter().map(|p| [p[0] - m[0], p[1] - m[1], p[2] - m[2]]).collect() }
    }

    /// Largest absolute coordinate of the column sum.
    pub fn centering_error(&self) -> f64 {
        let n = self.points.len() as f64;
        self.mean().iter().fold(0.0f64, |acc, x| acc.max((x * n).abs()))
    }

    pub fn translate(&self, t: [f64; 3]) -> Self {
        Self { points: self.points.iter().map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]]).collect() }
    }

    pub fn rotate(&self, r: &Rotation) -> Self {
        Self { points: self.points.iter().map(|&p| r.apply(p)).collect() }
    }

    /// `R X P`: point `i` is rotated and moved to slot `sigma(i)`.
    pub fn act(&self, g: &GroupElement) -> Result<Self> {
        if g.permutation.len() != self.len() {
            return Err(Error::Shape(format!(
                "permutation of {} points applied to a cloud of {}",
                g.permutation.len(),
                self.len()
            )));
        }
        Ok(self.rotate(&g.rotation).permuted(&g.permutation))
    }

    pub fn permuted(&self, sigma: &Permutation) -> Self {
        Self { points: sigma.permute(&self.points) }
    }

    /// The cloud as an order-1, single-channel field.
    pub fn to_field(&self) -> TensorField {
        TensorField {
            n: self.len(),
            channels: 1,
            order: 1,
            data: self.points.iter().flatten().copied().collect(),
        }
    }

    pub fn from_field(field: &TensorField) -> Result<Self> {
        if field.order != 1 || field.channels != 1 {
            return Err(Error::Shape(format!(
                "expected an order-1 single-channel field, got order {} with {} channels",
                field.order, field.channels
            )));
        }
        Ok(Self { points: field.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() })
    }
}

/// An element of `T_k^{n x C}`: entry `(j, c)` is an order-k tensor.
///
/// Entries are stored contiguously, point-major then channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    n: usize,
    channels: usize,
    order: usize,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(n: usize, channels: usize, order: usize) -> Self {
        Self { n, channels, order, data: vec![0.0; n * channels * dim(order)] }
    }

    /// The constant order-0 field used as the network's starting representation.
    pub fn ones(n: usize, channels: usize) -> Self {
        Self { n, channels, order: 0, data: vec![1.0; n * channels] }
    }

    pub fn from_data(n: usize, channels: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || channels == 0 {
            return Err(Error::Shape("a field needs n >= 1 and C >= 1".into()));
        }
        if data.len() != n * channels * dim(order) {
            return Err(Error::Shape(format!(
                "field {n}x{channels} of order {order} needs {} values, got {}",
                n * channels * dim(order),
                data.len()
            )));
        }
        Ok(Self { n, channels, order, data })
    }

    pub fn from_fn(
        n: usize,
        channels: usize,
        order: usize,
        mut f: impl FnMut(usize, usize) -> DenseTensor,
    ) -> Result<Self> {
        let mut out = Self::zeros(n, channels, order);
        for j in 0..n {
            for c in 0..channels {
                let t = f(j, c);
                if t.order() != order {
                    return Err(Error::OrderMismatch { expected: order, got: t.order() });
                }
                out.entry_mut(j, c).copy_from_slice(t.values());
            }
        }
        Ok(out)
    }

    pub fn random(n: usize, channels: usize, order: usize, rng: &mut impl Rng) -> Self {
        let len = n * channels * dim(order);
        Self { n, channels, order, data: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn entry_len(&self) -> usize {
        dim(self.order)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n == other.n && self.channels == other.channels && self.order == other.order
    }

    pub fn entry(&self, j: usize, c: usize) -> &[f64] {
        let len = self.entry_len();
        let start = (j * self.channels + c) * len;
        &self.data[start..start + len]
    }

    pub fn entry_mut(&mut self, j: usize, c: usize) -> &mut [f64] {
        let len = self.entry_len();
        let start = (j * self.channels + c) * len;
        &mut self.data[start..start + len]
    }

    /// All channels of point `j`, back to back.
    pub fn point(&self, j: usize) -> &[f64] {
        let len = self.entry_len() * self.channels;
        &self.data[j * len..(j + 1) * len]
    }

    pub fn tensor(&self, j: usize, c: usize) -> DenseTensor {
        DenseTensor::new(self.order, self.entry(j, c).to_vec()).expect("entry length matches order")
    }

    /// The joint action: `[(R, sigma) V]_{j,c} = R^{(x)k} V_{sigma^-1(j), c}`.
    pub fn act(&self, g: &GroupElement) -> Result<Self> {
        if g.permutation.len() != self.n {
            return Err(Error::Shape(format!(
                "permutation of {} points applied to a field of {}",
                g.permutation.len(),
                self.n
            )));
        }
        let mut out = Self::zeros(self.n, self.channels, self.order);
        let inv = g.permutation.inverse();
        let mut scratch = Vec::new();
        for j in 0..self.n {
            let src = inv.apply(j);
            for c in 0..self.channels {
                let dst = out.entry_mut(j, c);
                dst.copy_from_slice(self.entry(src, c));
                kernels::kron_power_apply(self.order, g.rotation.matrix(), dst, &mut scratch);
            }
        }
        Ok(out)
    }

    /// Channel-wise concatenation `[self; other]`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.n != other.n || self.order != other.order {
            return Err(Error::Shape(format!(
                "cannot concatenate n={} order {} with n={} order {}",
                self.n, self.order, other.n, other.order
            )));
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for j in 0..self.n {
            data.extend_from_slice(self.point(j));
            data.extend_from_slice(other.point(j));
        }
        Ok(Self { n: self.n, channels, order: self.order, data })
    }

    /// Inverse of [`TensorField::concat`]: the first `left` channels and the rest.
    pub fn split_channels(&self, left: usize) -> (Self, Self) {
        assert!(left <= self.channels);
        let right = self.channels - left;
        let len = self.entry_len();
        let mut a = Vec::with_capacity(self.n * left * len);
        let mut b = Vec::with_capacity(self.n * right * len);
        for j in 0..self.n {
            let p = self.point(j);
            a.extend_from_slice(&p[..left * len]);
            b.extend_from_slice(&p[left * len..]);
        }
        (
            Self { n: self.n, channels: left, order: self.order, data: a },
            Self { n: self.n, channels: right, order: self.order, data: b },
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// `max |a - b|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_action_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = TensorField::random(5, 2, 3, &mut rng);
        assert_eq!(v.act(&GroupElement::identity(5)).unwrap(), v);
    }

    #[test]
    fn scalars_only_permute() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = TensorField::random(4, 2, 0, &mut rng);
        let g = GroupElement::random(4, &mut rng);
        let out = v.act(&g).unwrap();
        for i in 0..4 {
            assert_eq!(out.point(g.permutation.apply(i)), v.point(i));
        }
    }

    #[test]
    fn action_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for order in 0..=3 {
            let v = TensorField::random(6, 2, order, &mut rng);
            let g1 = GroupElement::random(6, &mut rng);
            let g2 = GroupElement::random(6, &mut rng);
            let lhs = v.act(&g1).unwrap().act(&g2).unwrap();
            let rhs = v.act(&g2.compose(&g1)).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        }
    }

    #[test]
    fn action_checks_size() {
        let v = TensorField::zeros(3, 1, 1);
        assert!(v.act(&GroupElement::identity(4)).is_err());
    }

    #[test]
    fn cloud_and_field_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = PointCloud::random(7, 1.0, &mut rng);
        let g = GroupElement::random(7, &mut rng);
        let via_field = PointCloud::from_field(&x.to_field().act(&g).unwrap()).unwrap();
        let direct = x.act(&g).unwrap();
        for (a, b) in via_field.points().iter().zip(direct.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn centralize_examples() {
        let x = PointCloud::new(vec![[1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]).unwrap();
        assert_eq!(x.centralize().points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = PointCloud::random(10, 2.0, &mut rng).centralize();
        assert!(y.centering_error() < 1e-12);
        let again = y.centralize();
        for (a, b) in again.points().iter().zip(y.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centralize_removes_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = PointCloud::random(9, 1.0, &mut rng);
        let t = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        let a = x.centralize();
        let b = x.translate(t).centralize();
        for (p, q) in a.points().iter().zip(b.points()) {
            for k in 0..3 {
                assert!((p[k] - q[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn concat_and_split_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = TensorField::random(3, 2, 2, &mut rng);
        let b = TensorField::random(3, 1, 2, &mut rng);
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.channels(), 3);
        assert_eq!(ab.entry(1, 2), b.entry(1, 0));
        let (a2, b2) = ab.split_channels(2);
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(PointCloud::new(vec![]).is_err());
    }
}
