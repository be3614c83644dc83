//! Core math and data for structure-aware masked pretraining on hand–object
//! images: rotations and projection, a rigid-skinned kinematic hand, exact
//! mesh signed distances, region/skeleton-aware patch masking, a procedural
//! scene generator with an on-disk format, and the pose/mesh metric suite.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod hand;
pub mod image;
pub mod masking;
pub mod mesh;
pub mod scene;
pub mod sdf;

pub use error::{Error, Result};
