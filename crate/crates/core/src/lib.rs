//! Rainy road image synthesis, dual-layer kernel-prediction restoration,
//! and evaluation.
//!
//! The pipeline:
//!
//! 1. [`rcflane::synthesize`] turns a clear image into a rainy one (streaks,
//!    darkening, center-weighted fog).
//! 2. [`kpn`] predicts a per-pixel, multi-dilation kernel field with a small
//!    convolutional network and filters the image with it
//!    ([`kernel_filter::apply_kernel_field`]). Two such layers in sequence
//!    form a [`DlkpnModel`].
//! 3. [`metrics`] scores reconstructions (PSNR, SSIM) and depth maps produced
//!    by an external depth estimator.
//!
//! [`dataset`] ties synthesis to paired train/test manifests; [`scene`]
//! generates procedural road images for fixtures.

pub mod dataset;
pub mod error;
pub mod kernel_filter;
pub mod kpn;
pub mod metrics;
pub mod raster;
pub mod rcflane;
pub mod scene;

pub use dataset::{build_dataset, load_pairs, DatasetManifest, ManifestEntry, Split};
pub use error::{CheckpointError, Error, Result};
pub use kernel_filter::{
    apply_kernel_field, apply_kernel_field_naive, identity_field, DilationScheme, KernelField,
};
pub use kpn::{
    dlkpn_infer, kpn_forward, load_checkpoint, save_checkpoint, train_dlkpn, train_layer,
    DlkpnModel, KpnArch, KpnModel, TrainConfig,
};
pub use metrics::{depth_metrics, psnr, ssim, DepthMap, DepthMetrics, ReconMetrics};
pub use raster::{load_image, save_image, to_gray, ImageBuffer, PixelCoord};
pub use rcflane::{synthesize, RcflaneConfig, Synthesis};
pub use scene::road_scene;
