//! Geometry layer: point-cloud IO and synthesis, rotation and sampling
//! utilities, local reference axes, and the handcrafted rotation-invariant
//! features computed from them.
//!
//! Everything here works in 64-bit coordinates. Downstream model code casts
//! to 32-bit at the tensor boundary.

pub mod geom;
pub mod lra;
pub mod pcio;
pub mod rihf;
pub mod rng;
pub mod vec3;
