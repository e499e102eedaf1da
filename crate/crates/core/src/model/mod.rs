//! VGG-style binary classifiers: construction, inference, training and
//! weight files.

mod config;
mod io;
mod network;
mod train;

pub use config::{ConvBlock, ModelConfig, Preset, TrainConfig, TOY_BLOCKS, VGG16_BLOCKS};
pub use io::{load_weights, read_weights, save_weights, write_weights, FORMAT_VERSION, MAGIC};
pub use network::{bce_with_logit, probability, sigmoid, ForwardTrace, Layer, Network};
pub use train::{train, EarlyStopping, EpochRecord, StopVerdict, TrainingItem};

use rand::Rng;

use crate::domain::ModelTask;
use crate::error::ModelError;
use crate::preprocess::NormalizedBScan;
use crate::rng::{derive_seed, seeded};

/// A classifier for one task. Weights are held at 32-bit precision, which is
/// exactly what the weight file stores.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    config: ModelConfig,
    task: ModelTask,
    network: Network,
    weights: Vec<f32>,
    // f64 copy of `weights` used for computation
    params: Vec<f64>,
    history: Vec<EpochRecord>,
    best_epoch: Option<usize>,
}

impl PartialEq for TrainedModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.task == other.task && self.weights == other.weights
    }
}

/// Untrained model with fan-in scaled uniform weights and zero biases.
pub fn build_model(config: &ModelConfig, task: ModelTask) -> Result<TrainedModel, ModelError> {
    config.validate()?;
    let network = Network::new(config);
    let mut weights = vec![0.0f32; network.param_count()];
    let n_layers = network.layers().len();
    for (i, layer) in network.layers().iter().enumerate() {
        let (offset, n_weights, fan_in) = match *layer {
            Layer::Conv { c_in, c_out, offset, .. } => (offset, 9 * c_in * c_out, 9 * c_in),
            Layer::Dense { n_in, n_out, offset, .. } => (offset, n_in * n_out, n_in),
            Layer::Pool { .. } => continue,
        };
        // He-uniform for ReLU layers, Xavier-style for the logit layer.
        let gain = if i + 1 == n_layers { 3.0 } else { 6.0 };
        let limit = (gain / fan_in as f64).sqrt();
        let mut rng = seeded(derive_seed(config.seed, &[0x1417, i as u64]));
        for w in &mut weights[offset..offset + n_weights] {
            *w = rng.gen_range(-limit..limit) as f32;
        }
    }
    Ok(TrainedModel::from_parts(config.clone(), task, weights))
}

impl TrainedModel {
    pub(crate) fn from_parts(config: ModelConfig, task: ModelTask, weights: Vec<f32>) -> Self {
        let network = Network::new(&config);
        debug_assert_eq!(network.param_count(), weights.len());
        let params = weights.iter().map(|&w| f64::from(w)).collect();
        Self { config, task, network, weights, params, history: Vec::new(), best_epoch: None }
    }

    /// Replaces all weights. Fails if the count does not match the config
    /// or any value is non-finite.
    pub fn with_weights(&self, weights: Vec<f32>) -> Result<Self, ModelError> {
        if weights.len() != self.weights.len() {
            return Err(ModelError::ConfigError(format!(
                "expected {} weights, got {}",
                self.weights.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::ConfigError("non-finite weight".into()));
        }
        Ok(Self::from_parts(self.config.clone(), self.task, weights))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn task(&self) -> ModelTask {
        self.task
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.config.input_size
    }

    /// Per-epoch (train, validation) losses; empty for models that were
    /// built or loaded rather than trained.
    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    /// 0-based epoch whose weights were kept.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    /// Probability in (0, 1) that `img` is positive for this model's task.
    pub fn forward(&self, img: &NormalizedBScan) -> Result<f64, ModelError> {
        self.check_shape(img)?;
        Ok(self.network.forward(&self.params, img.pixels()))
    }

    pub fn check_shape(&self, img: &NormalizedBScan) -> Result<(), ModelError> {
        if img.shape() != self.config.input_size {
            return Err(ModelError::ShapeMismatch { expected: self.config.input_size, actual: img.shape() });
        }
        Ok(())
    }

    pub(crate) fn params(&self) -> &[f64] {
        &self.params
    }
}
