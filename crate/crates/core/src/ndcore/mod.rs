//! Dense tensors, the layer types the models are built from, and gradient checking.

pub mod gradcheck;
pub mod layers;
pub mod tensor;

pub use gradcheck::{check_stack, gradient_check, GradCheckReport, Parameterized, StackLoss};
pub use layers::{activation_forward, trace_relu_pattern, Activation, BatchNorm, Dense, Dropout, Layer, Mode, Sequential};
pub use tensor::Tensor;
