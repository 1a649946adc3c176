//! Minimal differentiable numerics: tensors, convolution, dense layers,
//! MSE, reverse-mode gradients, Adam, and finite-difference checks.

mod adam;
pub mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use ops::{conv1d, dense, mse_loss, sigmoid};
pub(crate) use ops::mse_slices;
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tape::{GradientTape, Var};
pub use tensor::{ConvKernel1D, Tensor2, Tensor3};
