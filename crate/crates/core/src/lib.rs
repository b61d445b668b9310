//! Virtual multi-view semantic fusion for labeled triangle meshes.
//!
//! The crate covers the full loop: choose virtual cameras around a mesh,
//! rasterize color / normal / coordinate / depth / label channels for each,
//! obtain per-pixel class probabilities from a pluggable source, and fuse
//! them back onto mesh vertices with a depth-matched projection test.
//!
//! Coordinates are right-handed, meters, +Z up. Cameras look down their
//! local +Z axis with +Y pointing down the image.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bundle;
pub mod camera;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod mesh;
pub mod ply;
pub mod raycast;
pub mod render;
pub mod segment;
pub mod segmenter;
pub mod synthetic;
pub mod view;
pub mod views;

pub use error::{Error, Result};

/// Class identifier. Real classes occupy `0..class_count`; the top of the
/// range is reserved for sentinels.
pub type ClassId = u16;

/// Vertex carries no ground-truth label.
pub const UNLABELED: ClassId = 0xFFFE;
/// Pixel not covered by any surface.
pub const BACKGROUND: ClassId = 0xFFFF;
/// Vertex received no fused contribution.
pub const UNOBSERVED: ClassId = 0xFFFD;
/// Largest usable class count.
pub const MAX_CLASSES: usize = 0xFFFD;

/// True for real class ids (not a sentinel).
pub fn is_class(label: ClassId) -> bool {
    (label as usize) < MAX_CLASSES
}
