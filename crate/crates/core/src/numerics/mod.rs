//! Dense arrays, reverse-mode differentiation and the layers built on them.

pub mod checkpoint;
pub mod conv;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod norm;
pub mod ops;
pub mod optim;
pub mod sample;
pub mod tensor;

pub use conv::conv2d;
pub use gradcheck::{finite_difference_grad, relative_error};
pub use loss::cross_entropy;
pub use norm::{batch_norm, BatchNormState, Mode};
pub use optim::{adamw_step, step_lr, AdamWConfig, OptimizerState};
pub use sample::bilinear_sample;
pub use tensor::Tensor;
