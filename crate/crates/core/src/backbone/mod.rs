//! Miniature fully-convolutional network with an exact backward pass.

mod checkpoint;
mod network;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_meta, save_checkpoint,
    sidecar_path, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use network::{init_params, ConvParams, LayerSpec, NetParams, NetSpec, Network, Tape};
pub use tensor::ActivationTensor;

/// Three-map image tensor with values in `[0, 1]`.
pub type Image = ActivationTensor<f32>;
