//! Kernel-prediction networks: a small convolutional predictor per layer,
//! dual-layer composition, training and checkpoints.

mod checkpoint;
mod model;
mod network;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC,
};
pub use model::{
    ConvStage, DlkpnModel, Gradients, KpnArch, KpnModel, HEAD_KERNEL, HIDDEN_KERNEL, IDENTITY_LOGIT,
};
pub use network::{
    backward, dlkpn_infer, kpn_forward, loss_and_gradients, loss_l1, DlkpnOutput, KpnOutput,
};
pub use train::{
    layer2_pairs, train_dlkpn, train_layer, train_layer_observed, ImagePair, Loss, StepReport,
    TrainConfig,
};
