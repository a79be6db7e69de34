//! Action-conditioned recurrent disengagement predictor.
//!
//! An MLP encoder maps the terrain grid to the initial hidden and cell
//! state of a single LSTM layer. The LSTM consumes one embedded action per
//! future step and a linear head emits one disengagement logit per step, so
//! `probs[h]` only depends on the observation and `actions[..=h]`.
//!
//! All parameters live in one flat `Vec<f64>` described by a
//! [`ParamLayout`]; gradients share the same layout, which keeps Adam,
//! checkpoints and finite-difference checks independent of the network
//! structure.

mod encoder;
mod layout;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::SequenceSample;
use crate::error::{Error, Result};
use crate::sim::{Action, GRID_SIDE};
use crate::world::TerrainClass;

pub use encoder::Encoder;
pub use layout::{Dense, ParamLayout, TensorSpec};
pub use train::{train, Adam, TrainConfig, TrainOutcome};

pub const MODEL_FORMAT: &str = "land-model.v1";

/// Samples per gradient chunk. Chunks are reduced in index order so the
/// result does not depend on the number of worker threads.
const GRADIENT_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid_side: usize,
    pub channels: usize,
    pub encoder_hidden: Vec<usize>,
    pub hidden_dim: usize,
    pub action_embed_dim: usize,
    pub horizon: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            grid_side: GRID_SIDE,
            channels: TerrainClass::COUNT,
            encoder_hidden: vec![128, 64],
            hidden_dim: 32,
            action_embed_dim: 16,
            horizon: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.grid_side > 0
            && self.channels > 0
            && self.hidden_dim > 0
            && self.action_embed_dim > 0
            && self.horizon > 0
            && !self.encoder_hidden.is_empty()
            && self.encoder_hidden.iter().all(|&w| w > 0);
        if !positive {
            return Err(Error::Config(format!("model config must be all positive: {self:?}")));
        }
        if self.channels != TerrainClass::COUNT {
            return Err(Error::Config(format!(
                "channels must equal the number of terrain classes ({})",
                TerrainClass::COUNT
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.grid_side * self.grid_side
    }
}

/// Offsets of every network component inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    pub layout: ParamLayout,
    pub encoder: Encoder,
    pub init_hidden: Dense,
    pub init_cell: Dense,
    pub action_weight: usize,
    pub action_bias: usize,
    /// Gate matrix, row-major `[4 * hidden][embed + hidden]`, gate order i, f, g, o.
    pub lstm_weight: usize,
    pub lstm_bias: usize,
    pub head_weight: usize,
    pub head_bias: usize,
    pub hidden: usize,
    pub embed: usize,
    pub horizon: usize,
}

impl Network {
    pub fn new(config: &ModelConfig) -> Network {
        let mut layout = ParamLayout::default();
        let encoder = Encoder::declare(&mut layout, config.cells(), config.channels, &config.encoder_hidden);
        let feat = encoder.output_dim();
        let hidden = config.hidden_dim;
        let embed = config.action_embed_dim;
        let init_hidden = Dense::declare(&mut layout, "init_hidden", feat, hidden);
        let init_cell = Dense::declare(&mut layout, "init_cell", feat, hidden);
        let action_weight = layout.push("action_embed.weight", vec![embed], 1);
        let action_bias = layout.push("action_embed.bias", vec![embed], 1);
        let lstm_weight = layout.push("lstm.weight", vec![4 * hidden, embed + hidden], embed + hidden);
        let lstm_bias = layout.push("lstm.bias", vec![4 * hidden], embed + hidden);
        let head_weight = layout.push("head.weight", vec![hidden], hidden);
        let head_bias = layout.push("head.bias", vec![1], hidden);
        Network {
            layout,
            encoder,
            init_hidden,
            init_cell,
            action_weight,
            action_bias,
            lstm_weight,
            lstm_bias,
            head_weight,
            head_bias,
            hidden,
            embed,
            horizon: config.horizon,
        }
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization per tensor.
pub fn init_uniform(layout: &ParamLayout, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; layout.len()];
    for t in layout.tensors() {
        let bound = (1.0 / t.fan_in as f64).sqrt();
        for v in &mut values[t.range()] {
            *v = rng.gen_range(-bound..bound);
        }
    }
    values
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    net: Network,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisengagementPrediction {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, in logit form.
pub fn bce_with_logits(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Recurrent state produced by encoding one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedObservation {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

struct StepTrace {
    action: f64,
    input: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

struct ForwardTrace {
    encoder: Vec<Vec<f64>>,
    h0: Vec<f64>,
    steps: Vec<StepTrace>,
    logits: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let net = Network::new(&config);
        let values = vec![0.0; net.layout.len()];
        Ok(ModelParams { config, net, values })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        p.values = init_uniform(&p.net.layout, seed);
        // Forget gates start open so the encoded state reaches later steps.
        let (b, hd) = (p.net.lstm_bias, p.net.hidden);
        p.values[b + hd..b + 2 * hd].iter_mut().for_each(|v| *v += 1.0);
        // A zero head makes the untrained model indifferent to actions, so
        // the first planner drives its sampled mean instead of a random
        // steering preference.
        let h = p.net.head_weight;
        p.values[h..h + hd].iter_mut().for_each(|v| *v = 0.0);
        Ok(p)
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if values.len() != p.values.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.net.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.net.layout.get(name).map(|t| &self.values[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.net.layout.get(name)?.range();
        Some(&mut self.values[range])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_grid(&self, grid: &[TerrainClass]) -> Result<()> {
        if grid.len() != self.config.cells() {
            return Err(Error::Shape(format!(
                "grid has {} cells, model expects {}",
                grid.len(),
                self.config.cells()
            )));
        }
        Ok(())
    }

    fn check_actions(&self, n: usize) -> Result<()> {
        if n != self.config.horizon {
            return Err(Error::Shape(format!(
                "{n} actions given, model horizon is {}",
                self.config.horizon
            )));
        }
        Ok(())
    }

    /// Encodes an observation into the initial recurrent state.
    pub fn encode(&self, grid: &[TerrainClass]) -> Result<EncodedObservation> {
        self.check_grid(grid)?;
        let acts = self.net.encoder.forward(&self.values, grid);
        Ok(self.initial_state(acts.last().unwrap()))
    }

    fn initial_state(&self, features: &[f64]) -> EncodedObservation {
        let n = &self.net;
        let mut hidden = vec![0.0; n.hidden];
        let mut cell = vec![0.0; n.hidden];
        n.init_hidden.forward(&self.values, features, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = v.tanh());
        n.init_cell.forward(&self.values, features, &mut cell);
        EncodedObservation { hidden, cell }
    }

    /// Logits for one action sequence from an encoded observation. The
    /// sequence may be shorter than the horizon (causal prefix).
    pub fn rollout_logits(&self, encoded: &EncodedObservation, actions: &[f64]) -> Vec<f64> {
        let n = &self.net;
        let p = &self.values;
        let hd = n.hidden;
        let width = n.embed + hd;
        let w_lstm = &p[n.lstm_weight..n.lstm_weight + 4 * hd * width];
        let b_lstm = &p[n.lstm_bias..n.lstm_bias + 4 * hd];
        let w_act = &p[n.action_weight..n.action_weight + n.embed];
        let b_act = &p[n.action_bias..n.action_bias + n.embed];
        let w_head = &p[n.head_weight..n.head_weight + hd];
        let b_head = p[n.head_bias];

        let mut input = vec![0.0; width];
        let mut c = encoded.cell.clone();
        input[n.embed..].copy_from_slice(&encoded.hidden);
        let mut gates = vec![0.0; 4 * hd];
        let mut logits = Vec::with_capacity(actions.len());
        for &a in actions {
            for k in 0..n.embed {
                input[k] = (w_act[k] * a + b_act[k]).tanh();
            }
            for (r, gate) in gates.iter_mut().enumerate() {
                let row = &w_lstm[r * width..(r + 1) * width];
                *gate = b_lstm[r] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>();
            }
            let mut logit = b_head;
            for j in 0..hd {
                let i = sigmoid(gates[j]);
                let f = sigmoid(gates[hd + j]);
                let g = gates[2 * hd + j].tanh();
                let o = sigmoid(gates[3 * hd + j]);
                c[j] = f * c[j] + i * g;
                let h = o * c[j].tanh();
                input[n.embed + j] = h;
                logit += w_head[j] * h;
            }
            logits.push(logit);
        }
        logits
    }

    pub fn predict(&self, grid: &[TerrainClass], actions: &[Action]) -> Result<DisengagementPrediction> {
        self.check_actions(actions.len())?;
        let encoded = self.encode(grid)?;
        let raw: Vec<f64> = actions.iter().map(|a| a.delta_heading()).collect();
        let logits = self.rollout_logits(&encoded, &raw);
        Ok(DisengagementPrediction {
            probs: logits.iter().map(|&l| sigmoid(l)).collect(),
            logits,
        })
    }

    /// Disengagement probabilities for many candidate sequences sharing one
    /// observation. Candidates are evaluated in parallel; output order
    /// matches input order.
    pub fn predict_many(&self, encoded: &EncodedObservation, candidates: &[Vec<f64>]) -> Vec<Vec<f64>> {
        candidates
            .par_iter()
            .map(|seq| {
                self.rollout_logits(encoded, seq)
                    .into_iter()
                    .map(sigmoid)
                    .collect()
            })
            .collect()
    }

    fn forward_trace(&self, grid: &[TerrainClass], actions: &[f64]) -> ForwardTrace {
        let n = &self.net;
        let p = &self.values;
        let hd = n.hidden;
        let width = n.embed + hd;
        let encoder = n.encoder.forward(p, grid);
        let init = self.initial_state(encoder.last().unwrap());
        let mut h = init.hidden.clone();
        let mut c = init.cell;
        let mut steps = Vec::with_capacity(actions.len());
        let mut logits = Vec::with_capacity(actions.len());
        for &a in actions {
            let mut input = Vec::with_capacity(width);
            for k in 0..n.embed {
                input.push((p[n.action_weight + k] * a + p[n.action_bias + k]).tanh());
            }
            input.extend_from_slice(&h);
            let mut gates = vec![0.0; 4 * hd];
            for (r, gate) in gates.iter_mut().enumerate() {
                let row = &p[n.lstm_weight + r * width..n.lstm_weight + (r + 1) * width];
                *gate = p[n.lstm_bias + r] + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>();
            }
            let i: Vec<f64> = gates[..hd].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = gates[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = gates[2 * hd..3 * hd].iter().map(|&v| v.tanh()).collect();
            let o: Vec<f64> = gates[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
            let c_prev = c.clone();
            for j in 0..hd {
                c[j] = f[j] * c_prev[j] + i[j] * g[j];
            }
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            h = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
            let logit = p[n.head_bias]
                + h.iter()
                    .zip(&p[n.head_weight..n.head_weight + hd])
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            logits.push(logit);
            steps.push(StepTrace {
                action: a,
                input,
                c_prev,
                i,
                f,
                g,
                o,
                tanh_c,
                h: h.clone(),
            });
        }
        ForwardTrace {
            encoder,
            h0: init.hidden,
            steps,
            logits,
        }
    }

    /// Accumulates d(loss)/d(params) for one sample given d(loss)/d(logits).
    fn backward(&self, grid: &[TerrainClass], trace: &ForwardTrace, d_logits: &[f64], grad: &mut [f64]) {
        let n = &self.net;
        let p = &self.values;
        let hd = n.hidden;
        let width = n.embed + hd;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut d_gates = vec![0.0; 4 * hd];
        for t in (0..trace.steps.len()).rev() {
            let s = &trace.steps[t];
            let dl = d_logits[t];
            let mut dh = dh_next.clone();
            for j in 0..hd {
                dh[j] += dl * p[n.head_weight + j];
                grad[n.head_weight + j] += dl * s.h[j];
            }
            grad[n.head_bias] += dl;
            let mut dc_prev = vec![0.0; hd];
            for j in 0..hd {
                let d_o = dh[j] * s.tanh_c[j];
                let dc = dc_next[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                let d_i = dc * s.g[j];
                let d_g = dc * s.i[j];
                let d_f = dc * s.c_prev[j];
                dc_prev[j] = dc * s.f[j];
                d_gates[j] = d_i * s.i[j] * (1.0 - s.i[j]);
                d_gates[hd + j] = d_f * s.f[j] * (1.0 - s.f[j]);
                d_gates[2 * hd + j] = d_g * (1.0 - s.g[j] * s.g[j]);
                d_gates[3 * hd + j] = d_o * s.o[j] * (1.0 - s.o[j]);
            }
            let mut d_input = vec![0.0; width];
            for (r, &dg) in d_gates.iter().enumerate() {
                grad[n.lstm_bias + r] += dg;
                if dg == 0.0 {
                    continue;
                }
                let off = n.lstm_weight + r * width;
                for k in 0..width {
                    grad[off + k] += dg * s.input[k];
                    d_input[k] += dg * p[off + k];
                }
            }
            for k in 0..n.embed {
                let z = s.input[k];
                let d_pre = d_input[k] * (1.0 - z * z);
                grad[n.action_weight + k] += d_pre * s.action;
                grad[n.action_bias + k] += d_pre;
            }
            dh_next = d_input[n.embed..].to_vec();
            dc_next = dc_prev;
        }

        let features = trace.encoder.last().unwrap();
        let d_pre_h: Vec<f64> = dh_next
            .iter()
            .zip(&trace.h0)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        let mut d_features = vec![0.0; features.len()];
        n.init_hidden.backward(p, features, &d_pre_h, grad, Some(&mut d_features));
        n.init_cell.backward(p, features, &dc_next, grad, Some(&mut d_features));
        n.encoder.backward(p, grid, &trace.encoder, d_features, grad);
    }

    fn sample_loss_and_grad(&self, sample: &SequenceSample, grad: &mut [f64]) -> f64 {
        let actions: Vec<f64> = sample.actions.iter().map(|a| a.delta_heading()).collect();
        let grid = sample.observation.cells();
        let trace = self.forward_trace(grid, &actions);
        let mut loss = 0.0;
        let d_logits: Vec<f64> = trace
            .logits
            .iter()
            .zip(&sample.labels)
            .map(|(&l, &y)| {
                loss += bce_with_logits(l, y);
                sigmoid(l) - if y { 1.0 } else { 0.0 }
            })
            .collect();
        self.backward(grid, &trace, &d_logits, grad);
        loss
    }

    fn check_batch(&self, batch: &[SequenceSample]) -> Result<()> {
        for s in batch {
            self.check_grid(s.observation.cells())?;
            self.check_actions(s.actions.len())?;
            if s.labels.len() != s.actions.len() {
                return Err(Error::Shape("labels and actions differ in length".into()));
            }
        }
        Ok(())
    }

    /// Summed cross-entropy over every sample and step.
    pub fn loss(&self, batch: &[SequenceSample]) -> Result<f64> {
        self.check_batch(batch)?;
        let per_sample: Vec<f64> = batch
            .par_iter()
            .map(|s| {
                let pred = self.predict(s.observation.cells(), &s.actions)?;
                Ok(pred
                    .logits
                    .iter()
                    .zip(&s.labels)
                    .map(|(&l, &y)| bce_with_logits(l, y))
                    .sum::<f64>())
            })
            .collect::<Result<_>>()?;
        Ok(per_sample.iter().sum())
    }

    /// Loss and its exact gradient, congruent to the parameter vector.
    pub fn loss_and_gradient(&self, batch: &[SequenceSample]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        let partials: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(GRADIENT_CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; self.values.len()];
                let mut loss = 0.0;
                for s in chunk {
                    loss += self.sample_loss_and_grad(s, &mut grad);
                }
                (loss, grad)
            })
            .collect();
        let mut iter = partials.into_iter();
        let (mut loss, mut grad) = iter.next().unwrap_or((0.0, vec![0.0; self.values.len()]));
        for (l, g) in iter {
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }

    pub fn gradient(&self, batch: &[SequenceSample]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(batch)?.1)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    config: ModelConfig,
    parameters: Vec<CheckpointTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct CheckpointTensor {
    pub(crate) name: String,
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
}

impl ModelParams {
    /// `land-model.v1` JSON: config plus every tensor in declaration order.
    pub fn to_json(&self) -> String {
        let doc = Checkpoint {
            format: MODEL_FORMAT.into(),
            config: self.config.clone(),
            parameters: self
                .net
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
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT {
            return Err(Error::Version {
                expected: MODEL_FORMAT.into(),
                found: doc.format,
            });
        }
        let mut params = ModelParams::zeros(doc.config)?;
        let specs = params.net.layout.tensors().to_vec();
        if specs.len() != doc.parameters.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, config declares {}",
                doc.parameters.len(),
                specs.len()
            )));
        }
        for (spec, t) in specs.iter().zip(doc.parameters) {
            if spec.name != t.name || spec.shape != t.shape || t.values.len() != spec.len() {
                return Err(Error::Shape(format!(
                    "tensor {} {:?} does not match declared {} {:?}",
                    t.name, t.shape, spec.name, spec.shape
                )));
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
