//! Skin-weight prediction for rigged meshes: voxel distance fields, a
//! heterogeneous graph network, and skinning evaluation.
//!
//! Every numeric module is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used by the command-line tool.

pub mod autodiff;
pub mod error;
pub mod geom;
pub mod hgraph;
pub mod hollowdist;
pub mod hskinnet;
pub mod rigcore;
mod scalar;
pub mod skinlab;
pub mod synthgen;
pub mod voxelize;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;
pub type Mesh = rigcore::Mesh<Real>;
pub type Skeleton = rigcore::Skeleton<Real>;
pub type Rig = rigcore::Rig<Real>;
pub type WeightRows = rigcore::WeightRows<Real>;
pub type VoxelGrid = voxelize::VoxelGrid<Real>;
pub type HeterGraph = hgraph::HeterGraph<Real>;
pub type Tensor = autodiff::Tensor<Real>;

/// SplitMix64 finalizer over a pair, for deriving independent RNG streams.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
