//! Differentiable model, supervision and optimization for masked hand–object
//! pretraining.

pub mod checkpoint;
pub mod gradcheck;
pub mod losses;
pub mod network;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
