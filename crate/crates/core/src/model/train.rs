use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

use super::ModelParams;

/// Adaptive moment estimation over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Summed minibatch loss before each update.
    pub loss_history: Vec<f64>,
}

/// Minibatch Adam on rebalanced, extension-padded windows.
pub fn train(params: &ModelParams, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.batch_size == 0 || config.batch_size % 2 != 0 {
        return Err(Error::OddBatch(config.batch_size));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Config(format!("learning rate {}", config.learning_rate)));
    }
    let index = dataset.sequence_index(params.horizon());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = params.clone();
    let mut adam = Adam::new(params.values().len(), config.learning_rate);
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch = index.sample_minibatch(dataset, config.batch_size, &mut rng)?;
        let positives = batch.iter().filter(|s| s.has_disengagement()).count();
        if positives != config.batch_size / 2 {
            return Err(Error::InsufficientClass(format!(
                "minibatch holds {positives} disengagement windows, expected {}",
                config.batch_size / 2
            )));
        }
        let (loss, grad) = params.loss_and_gradient(&batch)?;
        adam.step(params.values_mut(), &grad);
        history.push(loss);
    }
    Ok(TrainOutcome {
        params,
        loss_history: history,
    })
}
