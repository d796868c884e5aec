use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_filter::DilationScheme;

/// Spatial size of every hidden convolution.
pub const HIDDEN_KERNEL: usize = 3;
/// Spatial size of the logit head.
pub const HEAD_KERNEL: usize = 1;
/// Head bias used by [`KpnModel::identity`]; `exp(-IDENTITY_LOGIT)` underflows to zero.
pub const IDENTITY_LOGIT: f64 = 1000.0;
const HEAD_INIT_SCALE: f64 = 0.1;

/// Shape of one kernel-prediction network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpnArch {
    pub in_channels: usize,
    /// Widths of the hidden 3x3 stages.
    pub hidden: Vec<usize>,
    /// Predicted kernel size `K` (odd).
    pub ksize: usize,
    /// Dilation levels `R`.
    pub levels: usize,
}

impl Default for KpnArch {
    fn default() -> Self {
        Self {
            in_channels: 3,
            hidden: vec![32, 32, 32],
            ksize: 5,
            levels: 4,
        }
    }
}

impl KpnArch {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::Config(format!(
                "in_channels {} must be 1 or 3",
                self.in_channels
            )));
        }
        if self.ksize == 0 || self.ksize.is_multiple_of(2) {
            return Err(Error::Config(format!("ksize {} must be odd", self.ksize)));
        }
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::Config(format!(
                "levels {} must be in 1..=16",
                self.levels
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    /// Logits per pixel: `R * K * K`.
    pub fn taps(&self) -> usize {
        self.levels * self.ksize * self.ksize
    }

    pub fn scheme(&self) -> DilationScheme {
        DilationScheme::hierarchical(self.levels)
    }

    /// `(in, out, kernel)` for every stage, head last.
    pub fn stage_shapes(&self) -> Vec<(usize, usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let mut cin = self.in_channels;
        for &w in &self.hidden {
            shapes.push((cin, w, HIDDEN_KERNEL));
            cin = w;
        }
        shapes.push((cin, self.taps(), HEAD_KERNEL));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.stage_shapes()
            .iter()
            .map(|&(i, o, k)| k * k * i * o + o)
            .sum()
    }
}

/// One convolution: weights laid out `[tap][in][out]`, bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvStage {
    fn zeros(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            weight: vec![0.0; kernel * kernel * in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KpnModel {
    pub arch: KpnArch,
    /// Hidden stages followed by the head.
    pub stages: Vec<ConvStage>,
}

fn round_to_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl KpnModel {
    pub fn zeros(arch: &KpnArch) -> Result<Self> {
        arch.validate()?;
        let stages = arch
            .stage_shapes()
            .into_iter()
            .map(|(i, o, k)| ConvStage::zeros(i, o, k))
            .collect();
        Ok(Self {
            arch: arch.clone(),
            stages,
        })
    }

    /// Seeded Glorot-uniform hidden stages and a small random head with zero
    /// bias, so a fresh model predicts nearly uniform kernels. All values are
    /// exactly representable as `f32`.
    pub fn init(arch: &KpnArch, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b70_6e5f_696e_6974);
        let n_stages = model.stages.len();
        for (s, stage) in model.stages.iter_mut().enumerate() {
            let area = (stage.kernel * stage.kernel) as f64;
            let mut bound = (6.0 / (area * (stage.in_ch + stage.out_ch) as f64)).sqrt();
            if s + 1 == n_stages {
                bound *= HEAD_INIT_SCALE;
            }
            for w in &mut stage.weight {
                *w = round_to_f32(rng.gen_range(-bound..bound));
            }
        }
        Ok(model)
    }

    /// Parameters whose every predicted kernel is the delta filter.
    pub fn identity(arch: &KpnArch) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let center = model.center_tap();
        model.head_mut().bias[center] = IDENTITY_LOGIT;
        Ok(model)
    }

    /// Index of the level-0 center tap among the per-pixel logits.
    pub fn center_tap(&self) -> usize {
        let k = self.arch.ksize;
        (k / 2) * k + k / 2
    }

    pub fn head(&self) -> &ConvStage {
        self.stages.last().expect("model always has a head")
    }

    pub fn head_mut(&mut self) -> &mut ConvStage {
        self.stages.last_mut().expect("model always has a head")
    }

    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| s.weight.len() + s.bias.len())
            .sum()
    }

    /// Parameters in storage order: per stage, weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in &self.stages {
            out.extend_from_slice(&s.weight);
            out.extend_from_slice(&s.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameter values for a model with {}",
                values.len(),
                self.param_count()
            )));
        }
        let mut it = values.iter().copied();
        for s in &mut self.stages {
            for w in s.weight.iter_mut().chain(s.bias.iter_mut()) {
                *w = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Mutable access to the `index`-th parameter in [`flat_params`](Self::flat_params) order.
    pub fn param_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for s in &mut self.stages {
            if index < s.weight.len() {
                return s.weight.get_mut(index);
            }
            index -= s.weight.len();
            if index < s.bias.len() {
                return s.bias.get_mut(index);
            }
            index -= s.bias.len();
        }
        None
    }

    pub fn is_finite(&self) -> bool {
        self.stages
            .iter()
            .all(|s| s.weight.iter().chain(&s.bias).all(|v| v.is_finite()))
    }
}

/// Two independent kernel predictors applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DlkpnModel {
    pub layer1: KpnModel,
    pub layer2: KpnModel,
}

impl DlkpnModel {
    pub fn new(layer1: KpnModel, layer2: KpnModel) -> Result<Self> {
        if layer1.arch.in_channels != layer2.arch.in_channels {
            return Err(Error::Config(format!(
                "layer channel counts differ: {} vs {}",
                layer1.arch.in_channels, layer2.arch.in_channels
            )));
        }
        Ok(Self { layer1, layer2 })
    }
}

/// Parameter gradients with the same layout as [`KpnModel::stages`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &KpnModel) -> Self {
        Self {
            weight: model
                .stages
                .iter()
                .map(|s| vec![0.0; s.weight.len()])
                .collect(),
            bias: model
                .stages
                .iter()
                .map(|s| vec![0.0; s.bias.len()])
                .collect(),
        }
    }

    /// Same order as [`KpnModel::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub(crate) fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self
            .weight
            .iter_mut()
            .chain(self.bias.iter_mut())
            .zip(other.weight.iter().chain(&other.bias))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }
}
