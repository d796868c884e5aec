//! Seeded inputs shared by the criterion benches.

use rainlane_core::kernel_filter::KernelField;
use rainlane_core::kpn::{DlkpnModel, KpnArch, KpnModel};
use rainlane_core::{road_scene, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform noise image.
pub fn noise_image(seed: u64, width: usize, height: usize, channels: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(width, height, channels, |_, _, _| rng.gen()).unwrap()
}

/// Positive weights normalized per pixel.
pub fn random_field(
    seed: u64,
    width: usize,
    height: usize,
    levels: usize,
    ksize: usize,
) -> KernelField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = levels * ksize * ksize;
    let mut weights = Vec::with_capacity(width * height * taps);
    for _ in 0..width * height {
        let raw: Vec<f64> = (0..taps).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        weights.extend(raw.iter().map(|v| v / sum));
    }
    KernelField::new(width, height, levels, ksize, weights, true).unwrap()
}

pub fn scene(seed: u64, side: usize) -> ImageBuffer {
    road_scene(seed, side, side).unwrap()
}

/// Freshly initialized default-architecture model.
pub fn default_model(seed: u64) -> DlkpnModel {
    let arch = KpnArch::default();
    DlkpnModel::new(
        KpnModel::init(&arch, seed).unwrap(),
        KpnModel::init(&arch, seed + 1).unwrap(),
    )
    .unwrap()
}
