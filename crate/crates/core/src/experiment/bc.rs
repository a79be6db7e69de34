//! Behavioral-cloning baseline: observation to heading-change regression
//! with the same encoder as the disengagement predictor.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{init_uniform, Adam, CheckpointTensor, Dense, Encoder, ModelConfig, ParamLayout};
use crate::sim::{Action, Observation};
use crate::world::TerrainClass;

pub const BC_FORMAT: &str = "land-bc.v1";

const GRADIENT_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Records closer than this (arc length) to the next disengagement in
    /// their episode are dropped.
    pub exclusion_m: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        BcConfig {
            steps: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            exclusion_m: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcParams {
    config: ModelConfig,
    layout: ParamLayout,
    encoder: Encoder,
    head: Dense,
    values: Vec<f64>,
}

impl BcParams {
    /// Only the grid and encoder fields of `config` are used.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let encoder = Encoder::declare(&mut layout, config.cells(), config.channels, &config.encoder_hidden);
        let head = Dense::declare(&mut layout, "head", encoder.output_dim(), 1);
        let values = vec![0.0; layout.len()];
        Ok(BcParams {
            config,
            layout,
            encoder,
            head,
            values,
        })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        p.values = init_uniform(&p.layout, seed);
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn check_grid(&self, grid: &[TerrainClass]) -> Result<()> {
        if grid.len() != self.config.cells() {
            return Err(Error::Shape(format!(
                "grid of {} cells for a {}x{} policy",
                grid.len(),
                self.config.grid_side,
                self.config.grid_side
            )));
        }
        Ok(())
    }

    /// Unclamped regression output.
    pub fn predict(&self, grid: &[TerrainClass]) -> Result<f64> {
        self.check_grid(grid)?;
        let acts = self.encoder.forward(&self.values, grid);
        let mut out = [0.0];
        self.head.forward(&self.values, acts.last().expect("encoder has layers"), &mut out);
        Ok(out[0])
    }

    pub fn act(&self, grid: &[TerrainClass]) -> Result<Action> {
        Ok(Action::new(self.predict(grid)?))
    }

    fn sample_loss_and_grad(&self, obs: &Observation, target: f64, grad: &mut [f64]) -> f64 {
        let acts = self.encoder.forward(&self.values, obs.cells());
        let feat = acts.last().expect("encoder has layers");
        let mut out = [0.0];
        self.head.forward(&self.values, feat, &mut out);
        let err = out[0] - target;
        let mut d_feat = vec![0.0; feat.len()];
        self.head.backward(&self.values, feat, &[2.0 * err], grad, Some(&mut d_feat));
        self.encoder.backward(&self.values, obs.cells(), &acts, d_feat, grad);
        err * err
    }

    /// Summed squared error over `(observation, target action)` pairs.
    pub fn loss(&self, batch: &[(&Observation, f64)]) -> Result<f64> {
        let mut total = 0.0;
        for (obs, target) in batch {
            total += (self.predict(obs.cells())? - target).powi(2);
        }
        Ok(total)
    }

    pub fn loss_and_gradient(&self, batch: &[(&Observation, f64)]) -> Result<(f64, Vec<f64>)> {
        for (obs, _) in batch {
            self.check_grid(obs.cells())?;
        }
        let partials: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(GRADIENT_CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; self.values.len()];
                let loss = chunk
                    .iter()
                    .map(|(obs, t)| self.sample_loss_and_grad(obs, *t, &mut grad))
                    .sum::<f64>();
                (loss, grad)
            })
            .collect();
        let mut grad = vec![0.0; self.values.len()];
        let mut loss = 0.0;
        for (l, g) in partials {
            loss += l;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }

    pub fn to_json(&self) -> String {
        let doc = BcCheckpoint {
            format: BC_FORMAT.into(),
            config: self.config.clone(),
            parameters: self
                .layout
                .tensors()
                .iter()
                .map(|t| CheckpointTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    values: self.values[t.range()].to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BcCheckpoint = serde_json::from_str(text)?;
        if doc.format != BC_FORMAT {
            return Err(Error::Version {
                expected: BC_FORMAT.into(),
                found: doc.format,
            });
        }
        let mut params = BcParams::zeros(doc.config)?;
        let specs = params.layout.tensors().to_vec();
        if specs.len() != doc.parameters.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, config declares {}",
                doc.parameters.len(),
                specs.len()
            )));
        }
        for (spec, t) in specs.iter().zip(doc.parameters) {
            if spec.name != t.name || spec.shape != t.shape || t.values.len() != spec.len() {
                return Err(Error::Shape(format!("tensor {} does not match declared {}", t.name, spec.name)));
            }
            params.values[spec.range()].copy_from_slice(&t.values);
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BcCheckpoint {
    format: String,
    config: ModelConfig,
    parameters: Vec<CheckpointTensor>,
}

/// Indices of engaged records whose next disengagement in the same episode
/// lies more than `exclusion_m` of progress ahead (or never comes).
pub fn bc_training_indices(dataset: &Dataset, exclusion_m: f64) -> Vec<usize> {
    let records = dataset.records();
    let mut keep = Vec::new();
    let mut next_disengagement: Option<f64> = None;
    for i in (0..records.len()).rev() {
        let r = &records[i];
        if i + 1 < records.len() && records[i + 1].episode_id != r.episode_id {
            next_disengagement = None;
        }
        if r.disengaged {
            next_disengagement = Some(r.progress_m);
            continue;
        }
        match next_disengagement {
            Some(at) if at - r.progress_m <= exclusion_m => {}
            _ => keep.push(i),
        }
    }
    keep.reverse();
    keep
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcOutcome {
    pub params: BcParams,
    pub loss_history: Vec<f64>,
}

/// Minibatch Adam on squared heading-change error, sampling uniformly from
/// the records that survive the exclusion rule.
pub fn train_bc(dataset: &Dataset, model: &ModelConfig, config: &BcConfig) -> Result<BcOutcome> {
    if config.batch_size == 0 {
        return Err(Error::Config("BC batch size must be positive".into()));
    }
    let usable = bc_training_indices(dataset, config.exclusion_m);
    if usable.is_empty() {
        return Err(Error::EmptyTrainingSet(format!(
            "no engaged record lies more than {} m before a disengagement",
            config.exclusion_m
        )));
    }
    let mut params = BcParams::init(model.clone(), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6263_5f74_7261_696e);
    let mut adam = Adam::new(params.values.len(), config.learning_rate);
    let mut history = Vec::with_capacity(config.steps);
    let records = dataset.records();
    for _ in 0..config.steps {
        let batch: Vec<(&Observation, f64)> = (0..config.batch_size)
            .map(|_| {
                let r = &records[usable[rng.gen_range(0..usable.len())]];
                (&r.observation, r.action.delta_heading())
            })
            .collect();
        let (loss, grad) = params.loss_and_gradient(&batch)?;
        adam.step(&mut params.values, &grad);
        history.push(loss);
    }
    Ok(BcOutcome {
        params,
        loss_history: history,
    })
}
