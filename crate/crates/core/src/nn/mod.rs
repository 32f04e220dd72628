//! Minimal differentiable numeric core: NHWC tensors, the layer vocabulary
//! used by the autoencoder and the U-Net, binary cross-entropy and Adam.

pub mod adam;
pub mod io;
pub mod layers;
pub mod loss;
pub mod network;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use io::{load_params, params_from_bytes, params_to_bytes, save_params};
pub use layers::{
    activation_backward, activation_forward, concat_backward, concat_forward, conv_backward,
    conv_forward, maxpool2_backward, maxpool2_forward, upconv2_backward, upconv2_forward,
    upsample2_backward, upsample2_forward, Activation,
};
pub use loss::{bce_grad, bce_loss, BCE_EPS};
pub use network::{Backward, Gradients, LayerKind, LayerParams, LayerSpec, ModelParams, Network, Trace};
pub use scalar::Scalar;
pub use tensor::Tensor4;
pub use trainer::{epoch_batches, stack_images, Trainer};
