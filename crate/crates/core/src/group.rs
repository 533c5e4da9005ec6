//! Elements of O(3) x S_n and samplers for them.

use nalgebra::Matrix3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const ORTHOGONALITY_TOL: f64 = 1e-12;

/// An orthogonal 3x3 matrix (either determinant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let err = orthogonality_error(&m);
        if !(err <= ORTHOGONALITY_TOL) {
            return Err(Error::NotOrthogonal(err));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Rotation by `angle` radians about the third (vertical) axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[(0, 0)] * v[0] + m[(0, 1)] * v[1] + m[(0, 2)] * v[2],
            m[(1, 0)] * v[0] + m[(1, 1)] * v[1] + m[(1, 2)] * v[2],
            m[(2, 0)] * v[0] + m[(2, 1)] * v[1] + m[(2, 2)] * v[2],
        ]
    }
}

/// `max |R^T R - I|`.
pub fn orthogonality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// A bijection `i -> mapping[i]` of `{0, ..., n-1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &m in &mapping {
            if m >= n {
                return Err(Error::InvalidPermutation(format!("image {m} out of range for n = {n}")));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidPermutation(format!("{m} appears twice")));
            }
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self { mapping: (0..n).collect() }
    }

    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut mapping: Vec<usize> = (0..n).collect();
        mapping.shuffle(rng);
        Self { mapping }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// `sigma(i)`.
    pub fn apply(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (i, &m) in self.mapping.iter().enumerate() {
            inv[m] = i;
        }
        Self { mapping: inv }
    }

    /// `self o other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self { mapping: other.mapping.iter().map(|&i| self.mapping[i]).collect() }
    }

    /// Moves item `i` to slot `sigma(i)`.
    pub fn permute<T: Clone>(&self, items: &[T]) -> Vec<T> {
        assert_eq!(items.len(), self.mapping.len());
        let inv = self.inverse();
        inv.mapping.iter().map(|&i| items[i].clone()).collect()
    }
}

/// `(R, sigma)` acting jointly on rotations of every tensor and the point axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub rotation: Rotation,
    pub permutation: Permutation,
}

impl GroupElement {
    pub fn new(rotation: Rotation, permutation: Permutation) -> Self {
        Self { rotation, permutation }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Rotation::identity(), Permutation::identity(n))
    }

    /// Haar-random orthogonal matrix paired with a uniform permutation.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        Self::new(random_orthogonal(rng), Permutation::random(n, rng))
    }

    /// `self o other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.rotation.compose(&other.rotation), self.permutation.compose(&other.permutation))
    }
}

/// Haar-distributed sample from O(3).
///
/// QR of a standard Gaussian matrix with the sign of `diag(R)` folded into
/// `Q`, then one column negated with probability 1/2.
pub fn random_orthogonal(rng: &mut impl Rng) -> Rotation {
    loop {
        let g = Matrix3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        if g.determinant().abs() < 1e-12 {
            continue;
        }
        let qr = g.qr();
        let (mut q, r) = (qr.q(), qr.r());
        for j in 0..3 {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        if rng.random_bool(0.5) {
            q.column_mut(0).neg_mut();
        }
        // Householder QR leaves roundoff around 1e-16; re-check anyway.
        if orthogonality_error(&q) <= ORTHOGONALITY_TOL {
            return Rotation(q);
        }
    }
}

/// Haar-distributed sample from SO(3).
pub fn random_rotation(rng: &mut impl Rng) -> Rotation {
    let mut q = random_orthogonal(rng).0;
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    Rotation(q)
}
