//! Dense-tensor engine with reverse-mode automatic differentiation and the
//! neural building blocks used by the model crates.
//!
//! The whole engine is generic over the scalar type: `f32` is the training
//! arithmetic, while the same graphs instantiated at `f64` give the tight
//! tolerances needed for gradient verification. Reductions accumulate in
//! 64-bit regardless of the element type.

pub mod check;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use check::{gradcheck_inputs, gradcheck_module, GradReport};
pub use graph::{Graph, NodeId};
pub use nn::{Mode, Param, ParamModule, Session, TensorRole};
pub use optim::{cosine_warmup_lr, AdamW};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::Tensor;
