//! Seeded crop-sampling SGD with momentum, and the two-stage protocol that
//! trains the second layer on the frozen first layer's reconstructions.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{DlkpnModel, Gradients, KpnArch, KpnModel};
use super::network::{kpn_forward, loss_and_gradients};
use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

/// An `(input, target)` training pair.
pub type ImagePair = (ImageBuffer, ImageBuffer);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    /// Crops per step.
    pub batch: usize,
    pub seed: u64,
    /// Side of the square training crops.
    pub crop: usize,
    pub loss: Loss,
    pub arch: KpnArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            momentum: 0.9,
            steps: 500,
            batch: 4,
            seed: 0,
            crop: 32,
            loss: Loss::L1,
            arch: KpnArch::default(),
        }
    }
}

impl TrainConfig {
    /// The reference large-scale schedule: batch 16 for 1000 epochs. Not a
    /// desk-scale default; `steps` here counts optimizer steps, so callers
    /// convert epochs with their dataset size.
    pub fn reference_schedule(train_images: usize) -> Self {
        Self {
            batch: 16,
            steps: 1000 * train_images.div_ceil(16).max(1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} not in [0,1)",
                self.momentum
            )));
        }
        if self.steps == 0 || self.batch == 0 || self.crop == 0 {
            return Err(Error::Config("steps, batch and crop must be >= 1".into()));
        }
        self.arch.validate()
    }
}

/// Progress of one optimizer step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Zero-based step index.
    pub step: usize,
    /// Mean batch loss before the update.
    pub loss: f64,
}

fn check_pairs(pairs: &[ImagePair], cfg: &TrainConfig) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    for (i, (input, target)) in pairs.iter().enumerate() {
        if !input.same_shape(target) {
            return Err(Error::Dataset {
                index: i,
                reason: "input and target shapes differ".into(),
            });
        }
        if input.channels() != cfg.arch.in_channels {
            return Err(Error::Dataset {
                index: i,
                reason: format!(
                    "{} channels, architecture expects {}",
                    input.channels(),
                    cfg.arch.in_channels
                ),
            });
        }
        if cfg.crop > input.width() || cfg.crop > input.height() {
            return Err(Error::Dataset {
                index: i,
                reason: format!(
                    "crop {} larger than {}x{} image",
                    cfg.crop,
                    input.width(),
                    input.height()
                ),
            });
        }
    }
    Ok(())
}

/// Trains one kernel predictor, calling `observer` after every step.
pub fn train_layer_observed(
    pairs: &[ImagePair],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&StepReport, &KpnModel),
) -> Result<KpnModel> {
    cfg.validate()?;
    check_pairs(pairs, cfg)?;

    let mut model = KpnModel::init(&cfg.arch, cfg.seed)?;
    let mut velocity = Gradients::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let crop = cfg.crop;

    for step in 0..cfg.steps {
        let mut batch_grad = Gradients::zeros_like(&model);
        let mut batch_loss = 0.0;
        for _ in 0..cfg.batch {
            let (input, target) = &pairs[rng.gen_range(0..pairs.len())];
            let row = rng.gen_range(0..=input.height() - crop);
            let col = rng.gen_range(0..=input.width() - crop);
            let x = input.crop(row, col, crop, crop)?;
            let y = target.crop(row, col, crop, crop)?;
            let (loss, grads) = loss_and_gradients(&model, &x, &y)?;
            batch_loss += loss;
            batch_grad.add_scaled(&grads, 1.0 / cfg.batch as f64);
        }
        batch_loss /= cfg.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became {batch_loss} at step {step}"
            )));
        }

        for (s, stage) in model.stages.iter_mut().enumerate() {
            let params = stage.weight.iter_mut().chain(stage.bias.iter_mut());
            let vel = velocity.weight[s]
                .iter_mut()
                .chain(velocity.bias[s].iter_mut());
            let grad = batch_grad.weight[s].iter().chain(&batch_grad.bias[s]);
            for ((p, v), g) in params.zip(vel).zip(grad) {
                *v = cfg.momentum * *v + g;
                *p = (*p - cfg.learning_rate * *v) as f32 as f64;
            }
        }
        if !model.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite parameter after step {step}"
            )));
        }

        let report = StepReport {
            step,
            loss: batch_loss,
        };
        if step % 50 == 0 || step + 1 == cfg.steps {
            info!("step {step:>5}  loss {batch_loss:.6}");
        } else {
            debug!("step {step:>5}  loss {batch_loss:.6}");
        }
        observer(&report, &model);
    }
    Ok(model)
}

pub fn train_layer(pairs: &[ImagePair], cfg: &TrainConfig) -> Result<KpnModel> {
    train_layer_observed(pairs, cfg, |_, _| {})
}

/// Replaces every input with `layer1`'s reconstruction of it.
pub fn layer2_pairs(layer1: &KpnModel, pairs: &[ImagePair]) -> Result<Vec<ImagePair>> {
    pairs
        .iter()
        .map(|(input, target)| Ok((kpn_forward(layer1, input)?.restored, target.clone())))
        .collect()
}

/// Trains layer 1 on `(rainy, clean)`, freezes it, then trains layer 2 on
/// `(layer1(rainy), clean)`.
pub fn train_dlkpn(
    pairs: &[ImagePair],
    cfg1: &TrainConfig,
    cfg2: &TrainConfig,
) -> Result<DlkpnModel> {
    info!("training layer 1");
    let layer1 = train_layer(pairs, cfg1)?;
    let stage2 = layer2_pairs(&layer1, pairs)?;
    info!("training layer 2");
    let layer2 = train_layer(&stage2, cfg2)?;
    DlkpnModel::new(layer1, layer2)
}
