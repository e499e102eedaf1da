use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// One VGG stage: `convs` 3x3 convolutions with `channels` outputs, then a
/// 2x2 max-pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub channels: usize,
    pub convs: usize,
}

impl ConvBlock {
    pub const fn new(channels: usize, convs: usize) -> Self {
        Self { channels, convs }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (height, width) of the canonical input.
    pub input_size: (usize, usize),
    pub conv_blocks: Vec<ConvBlock>,
    pub dense_units: usize,
    pub seed: u64,
}

pub const TOY_BLOCKS: [ConvBlock; 3] = [ConvBlock::new(8, 2), ConvBlock::new(16, 2), ConvBlock::new(32, 2)];

pub const VGG16_BLOCKS: [ConvBlock; 5] = [
    ConvBlock::new(64, 2),
    ConvBlock::new(128, 2),
    ConvBlock::new(256, 3),
    ConvBlock::new(512, 3),
    ConvBlock::new(512, 3),
];

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Toy,
    Vgg16,
}

impl ModelConfig {
    pub fn toy(input_size: (usize, usize), seed: u64) -> Self {
        Self { input_size, conv_blocks: TOY_BLOCKS.to_vec(), dense_units: 64, seed }
    }

    /// Convolutional stages of VGG16 in front of a small dense head.
    pub fn vgg16(input_size: (usize, usize), seed: u64) -> Self {
        Self { input_size, conv_blocks: VGG16_BLOCKS.to_vec(), dense_units: 64, seed }
    }

    pub fn preset(preset: Preset, input_size: (usize, usize), seed: u64) -> Self {
        match preset {
            Preset::Toy => Self::toy(input_size, seed),
            Preset::Vgg16 => Self::vgg16(input_size, seed),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_blocks.is_empty() {
            return Err(ModelError::ConfigError("at least one conv block is required".into()));
        }
        if let Some(b) = self.conv_blocks.iter().find(|b| b.channels == 0 || b.convs == 0) {
            return Err(ModelError::ConfigError(format!("degenerate block {b:?}")));
        }
        if self.dense_units == 0 {
            return Err(ModelError::ConfigError("dense_units must be positive".into()));
        }
        let (h, w) = self.input_size;
        let factor = 1usize
            .checked_shl(self.conv_blocks.len() as u32)
            .ok_or_else(|| ModelError::ConfigError("too many blocks".into()))?;
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return Err(ModelError::ConfigError(format!(
                "input {h}x{w} is not divisible by 2^{} = {factor}",
                self.conv_blocks.len()
            )));
        }
        Ok(())
    }

    /// Spatial grid after the last pooling stage.
    pub fn final_grid(&self) -> (usize, usize) {
        let f = 1 << self.conv_blocks.len();
        (self.input_size.0 / f, self.input_size.1 / f)
    }

    /// Number of values fed to the first dense layer.
    pub fn flat_features(&self) -> usize {
        let (gh, gw) = self.final_grid();
        gh * gw * self.conv_blocks.last().map_or(0, |b| b.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// An epoch improves only if it beats the reference by more than this.
    pub min_delta: f64,
    pub augment: crate::preprocess::AugmentParams,
    /// Drives shuffling and augmentation draws.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            patience: 5,
            learning_rate: 0.05,
            batch_size: 16,
            min_delta: 0.0,
            augment: crate::preprocess::AugmentParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_epochs == 0 {
            return Err(ModelError::TrainConfig("max_epochs must be positive".into()));
        }
        if self.patience == 0 || self.patience >= self.max_epochs {
            return Err(ModelError::TrainConfig(format!(
                "patience {} must be in 1..max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::TrainConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(ModelError::TrainConfig("batch_size must be positive".into()));
        }
        if self.min_delta.is_nan() || self.min_delta < 0.0 {
            return Err(ModelError::TrainConfig("min_delta must be non-negative".into()));
        }
        if !self.augment.is_valid() {
            return Err(ModelError::TrainConfig(format!("bad augmentation ranges {:?}", self.augment)));
        }
        Ok(())
    }
}
