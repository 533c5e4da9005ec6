//! Rotation- and permutation-equivariant networks on 3D point clouds.
//!
//! Features are fields of Cartesian tensors, one per point and channel. Layers
//! raise the tensor order with outer products against the point coordinates,
//! lower it with index contractions, and mix channels linearly, so every map
//! commutes with simultaneous rotation (any orthogonal `R`) and reordering of
//! the points.
//!
//! Tensors of order `k` are stored flat with `3^k` entries; the multi-index
//! `(i_1, .., i_k)` with `i_j ∈ {0, 1, 2}` sits at `Σ_j i_j 3^(k-j)`
//! (base 3, most significant index first), so order 2 is a row-major matrix.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiments;
pub mod field;
pub mod group;
pub mod layers;
pub mod network;
pub mod oracles;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use field::{PointCloud, TensorField};
pub use group::{GroupElement, Permutation, Rotation};
pub use network::{forward, NetworkConfig, ParamSet};
pub use tensor::{DenseTensor, Pairing};
