//! Two-level sparse voxelization of triangle meshes and a multi-resolution
//! 3D CNN that learns from it.
//!
//! The pipeline is: parse a mesh ([`mesh`]), classify coarse boundary voxels
//! ([`voxel`]), refine each boundary voxel into a packed fine block
//! addressed by an exclusive prefix sum ([`multires`]), then train a coarse
//! network whose boundary-cell inputs are produced by a shared fine network
//! ([`mrcnn`], built on the small tensor engine in [`nn`]). [`pipeline`]
//! ties these together over a ModelNet-style dataset.

pub use nalgebra;

pub mod format;
pub mod mesh;
pub mod mrcnn;
pub mod multires;
pub mod nn;
pub mod pipeline;
pub mod voxel;

#[cfg(test)]
pub(crate) mod testutil;

pub use format::FormatError;
pub use mesh::{compute_aabb, parse_off, parse_stl, Aabb, MeshError, TriangleMesh};
pub use multires::{
    build_prefix_index, flatten_to_dense, voxelize_fine, voxelize_multires, MultiResGrid, PrefixSumIndex,
};
pub use voxel::{
    classify_boundary, fill_inside, flatten_index, point_to_cell, tri_box_intersect, CellState, GridSpec,
    TriangleBuffer, VoxelError, VoxelGrid, VoxelizeOptions,
};

/// Crate-level error wrapping each subsystem's error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Mrcnn(#[from] mrcnn::MrcnnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
