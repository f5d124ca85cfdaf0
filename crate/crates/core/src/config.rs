//! Model, loss and training settings. Defaults are the published values
//! where one exists; the rest are documented choices.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// `(kernel, stride, padding)` of the four backbone convolutions.
pub const BACKBONE_GEOMETRY: [(usize, usize, usize); 4] = [(4, 2, 0), (3, 2, 0), (2, 2, 1), (1, 1, 0)];

/// How frame features are arranged into the sequence fed to the MER head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// `concat(F_k, F_{k+1})` per pair: `t - 1` steps of `2C` channels.
    Concat,
    /// `F_k + F_{k+1}` per pair.
    Add,
    /// `F_{k+1} - F_k` per pair.
    Subtract,
    /// `F_0 .. F_{t-2}`.
    FirstFrames,
    /// `F_1 .. F_{t-1}`.
    LastFrames,
    /// `F_0 .. F_{t-1}`.
    AllFrames,
}

impl Fusion {
    pub const ALL: [Fusion; 6] = [
        Fusion::Concat,
        Fusion::Add,
        Fusion::Subtract,
        Fusion::FirstFrames,
        Fusion::LastFrames,
        Fusion::AllFrames,
    ];

    /// `(channels, steps)` of the fused sequence.
    pub fn layout(self, c: usize, t: usize) -> (usize, usize) {
        match self {
            Fusion::Concat => (2 * c, t - 1),
            Fusion::Add | Fusion::Subtract | Fusion::FirstFrames | Fusion::LastFrames => (c, t - 1),
            Fusion::AllFrames => (c, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frame_size: usize,
    pub in_channels: usize,
    pub backbone_channels: [usize; 4],
    pub t: usize,
    pub m: usize,
    pub n_classes: usize,
    /// Neighbours per channel in the correspondence graph.
    pub k: usize,
    /// Number of stacked F5C blocks; 0 removes F5C entirely.
    pub f5c_blocks: usize,
    pub use_fcc: bool,
    pub use_ccc: bool,
    pub fusion: Fusion,
    pub mer_head: bool,
    pub flow_head: bool,
    pub landmark_head: bool,
    pub mer_channels: usize,
    pub mer_kernel: usize,
    pub mer_pool: usize,
    pub mer_hidden: usize,
    /// Encoder widths at 1/2, 1/4 and 1/8 resolution.
    pub flow_channels: [usize; 3],
    pub landmark_channels: usize,
    pub landmark_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_size: 128,
            in_channels: 1,
            backbone_channels: [8, 32, 64, 128],
            t: 8,
            m: 68,
            n_classes: 5,
            k: 4,
            f5c_blocks: 1,
            use_fcc: true,
            use_ccc: true,
            fusion: Fusion::Concat,
            mer_head: true,
            flow_head: true,
            landmark_head: true,
            mer_channels: 64,
            mer_kernel: 3,
            mer_pool: 2,
            mer_hidden: 256,
            flow_channels: [16, 32, 64],
            landmark_channels: 32,
            landmark_hidden: 256,
        }
    }
}

impl ModelConfig {
    /// Full-size frames with narrow layers; trains in minutes on one core.
    pub fn compact() -> Self {
        Self {
            backbone_channels: [4, 8, 16, 16],
            mer_channels: 16,
            mer_hidden: 64,
            flow_channels: [4, 8, 16],
            landmark_channels: 8,
            landmark_hidden: 64,
            ..Self::default()
        }
    }

    /// 16 x 16 frames and a handful of channels, for finite differences.
    pub fn reduced() -> Self {
        Self {
            frame_size: 16,
            backbone_channels: [2, 3, 4, 4],
            t: 3,
            n_classes: 3,
            k: 2,
            mer_channels: 3,
            mer_hidden: 5,
            flow_channels: [2, 3, 3],
            landmark_channels: 2,
            landmark_hidden: 6,
            ..Self::default()
        }
    }

    /// Channels, height and width of the backbone output.
    pub fn backbone_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shapes = Vec::with_capacity(4);
        let (mut c, mut n) = (self.in_channels, self.frame_size);
        shapes.push([c, n, n]);
        for (&(k, s, p), &out) in BACKBONE_GEOMETRY.iter().zip(&self.backbone_channels) {
            if n + 2 * p < k {
                return config_err(format!("frame size {} collapses in the backbone", self.frame_size));
            }
            n = (n + 2 * p - k) / s + 1;
            c = out;
            shapes.push([c, n, n]);
        }
        Ok(shapes)
    }

    pub fn feature_shape(&self) -> Result<[usize; 3]> {
        Ok(*self.backbone_shapes()?.last().expect("four layers"))
    }

    pub fn validate(&self) -> Result<()> {
        let [c, h, _] = self.feature_shape()?;
        if self.frame_size % 8 != 0 {
            return config_err(format!("frame size {} is not a multiple of 8", self.frame_size));
        }
        if h != self.frame_size / 8 {
            return config_err(format!(
                "backbone yields {h} x {h} features, the flow encoder expects {}",
                self.frame_size / 8
            ));
        }
        if self.t < 2 || self.m == 0 || self.n_classes < 2 {
            return config_err(format!("t {}, m {}, n_classes {}", self.t, self.m, self.n_classes));
        }
        if self.f5c_blocks > 0 && self.use_ccc && (self.k == 0 || self.k >= c) {
            return config_err(format!("k = {} must lie in 1..{c}", self.k));
        }
        if !(self.mer_head || self.flow_head || self.landmark_head) {
            return config_err("at least one head must be enabled");
        }
        let widths = self.backbone_channels.iter().chain(&self.flow_channels);
        if self.in_channels == 0 || widths.chain([&self.mer_channels, &self.landmark_channels]).any(|&w| w == 0) {
            return config_err("layer widths must be positive");
        }
        if self.mer_kernel % 2 == 0 || self.mer_pool == 0 || self.mer_hidden == 0 || self.landmark_hidden == 0 {
            return config_err("MER kernel must be odd; pool and hidden widths positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_f: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_f: 0.1,
            lambda_m: 68.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub workers: usize,
    /// Side of the square crop fed to the model.
    pub crop: usize,
    /// Random crops (and flips if `flip`) during training; center crops otherwise.
    pub augment: bool,
    pub flip: bool,
    /// Start the landmark regressor's output bias at the mean training landmarks.
    pub landmark_bias_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weights: LossWeights::default(),
            seed: 0,
            workers: 1,
            crop: 128,
            augment: true,
            flip: true,
            landmark_bias_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.workers == 0 || self.crop == 0 {
            return config_err("batch size, workers and crop must be positive");
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return config_err("lr and eps must be positive, betas in [0, 1)");
        }
        if self.weights.lambda_f < 0.0 || self.weights.lambda_m < 0.0 {
            return config_err("loss weights must be non-negative");
        }
        Ok(())
    }
}
