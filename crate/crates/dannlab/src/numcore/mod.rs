//! Minimal deterministic differentiable core: tensors, layers, softmax
//! cross-entropy, momentum SGD, seeded random streams, and the gradient
//! reversal layer. Training arithmetic is `f32`; the `f64` reference pass
//! exists only as a gradient-check oracle.

mod gradcheck;
mod layers;
mod loss;
mod reference;
mod rng;
mod stack;
mod tensor;

pub use gradcheck::{
    central_difference, gradcheck, relative_error, GRADCHECK_FLOOR, GRADCHECK_STEP,
    GRADCHECK_TOLERANCE,
};
pub use layers::{grl_backward, grl_forward, Layer, LayerSpec, Param};
pub use loss::{cross_entropy, cross_entropy_batch};
pub use reference::{reference_cross_entropy, to_f64, ReferenceStack};
pub use rng::Rng;
pub use stack::LayerStack;
pub use tensor::Tensor;
