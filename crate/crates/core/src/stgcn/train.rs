use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, StgcnError, StgcnModel};

/// Minibatch gradient-descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Reshuffle sample order every epoch using `seed`; when false samples are visited in order.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-3, batch: 16, shuffle: true, seed: 0 }
    }
}

/// Full-dataset MSE before training and after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingCurve {
    pub initial_mse: f64,
    pub epoch_mse: Vec<f64>,
}

impl TrainingCurve {
    pub fn final_mse(&self) -> f64 {
        self.epoch_mse.last().copied().unwrap_or(self.initial_mse)
    }
}

fn dataset_mse(model: &StgcnModel, data: &Dataset) -> Result<f64, StgcnError> {
    let pairs: Vec<_> = data.samples.iter().map(|(x, y)| (x, y)).collect();
    model.loss(&pairs)
}

/// Plain minibatch gradient descent with a fixed learning rate.
pub fn train(model: &mut StgcnModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainingCurve, StgcnError> {
    if data.is_empty() {
        return Err(StgcnError::EmptyDataset);
    }
    if cfg.batch == 0 || !cfg.lr.is_finite() || cfg.lr < 0.0 {
        return Err(StgcnError::Invalid(format!("batch {} / lr {}", cfg.batch, cfg.lr)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let initial_mse = dataset_mse(model, data)?;
    let mut epoch_mse = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<_> = chunk.iter().map(|&i| (&data.samples[i].0, &data.samples[i].1)).collect();
            let (_, grad) = model.loss_and_grad(&batch)?;
            for (p, g) in model.params_mut().into_iter().zip(grad.params()) {
                p.iter_mut().zip(g.1).for_each(|(w, d)| *w -= cfg.lr * d);
            }
        }
        epoch_mse.push(dataset_mse(model, data)?);
    }
    Ok(TrainingCurve { initial_mse, epoch_mse })
}
