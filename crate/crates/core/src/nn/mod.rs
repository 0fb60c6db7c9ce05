//! Hand-written forward/backward kernels, the AdamW optimizer and the
//! cosine learning-rate schedule.

mod kernels;
pub mod ops;
pub mod optim;
mod tensor;

pub use ops::*;
pub use optim::{cosine_lr, AdamW, AdamWConfig, ParamTensor};
pub use tensor::Tensor2;
