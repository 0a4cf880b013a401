//! The atmospheric-component estimator and the machinery to train it.

pub mod checkpoint;
mod conv;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use model::{plane_to_tensor, tensor_to_plane, ForwardPass, Network};
pub use params::{count_params, init_params, Activation, LayerSpec, NetConfig, ParamStore, PARAM_BUDGET};
pub use tape::{Gradients, Tape, Var, SOFTPLUS_SHIFT};
pub use tensor::{Real, Tensor};
pub use gradcheck::{check_gradients, grad_check, CheckOptions, GradCheckReport, Precision, TensorCheck};
