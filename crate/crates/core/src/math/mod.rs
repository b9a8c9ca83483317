//! Dense linear algebra and optimizer kernels shared by every model.

mod activation;
mod gradcheck;
mod mat;
mod rmsprop;

pub use activation::{activation_grads, sigmoid_scalar, softplus, softplus_scalar, Activation};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use mat::Mat;
pub use rmsprop::{clip_inplace, Direction, Rmsprop, RmspropConfig, RmspropState};
