//! Dense tensors, the layers of the entropy model, a reverse-mode tape, and Adam.

mod adam;
mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, Coverage, GradCheckReport};
pub use layers::{
    activation, conv3d, convtranspose3d, layer_backward, linear, sigmoid, softplus, Activation,
    ConvGeometry, LayerGrads, LayerKind, LayerParams, LayerView,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
