#![allow(dead_code)]

use land_core::dataset::SequenceSample;
use land_core::model::{ModelConfig, ModelParams};
use land_core::sim::{Action, Observation};
use land_core::world::TerrainClass;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn tiny_config(horizon: usize) -> ModelConfig {
    ModelConfig {
        grid_side: 2,
        channels: TerrainClass::COUNT,
        encoder_hidden: vec![4, 3],
        hidden_dim: 3,
        action_embed_dim: 2,
        horizon,
    }
}

/// Random parameters with a wider spread than the default initializer so
/// every gate operates away from its linear regime.
pub fn random_params(config: ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(config).unwrap();
    for v in p.values_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    p
}

pub fn random_grid(side: usize, rng: &mut impl Rng) -> Observation {
    let cells = (0..side * side)
        .map(|_| TerrainClass::from_index(rng.gen_range(0..TerrainClass::COUNT)).unwrap())
        .collect();
    Observation::from_cells(side, cells).unwrap()
}

/// Random window with absorbing labels.
pub fn random_sample(side: usize, horizon: usize, rng: &mut impl Rng) -> SequenceSample {
    let actions = (0..horizon)
        .map(|_| Action::new(rng.gen_range(-0.4..0.4)))
        .collect();
    let first = rng.gen_range(0..=horizon + horizon / 2);
    let labels: Vec<bool> = (0..horizon).map(|h| h >= first).collect();
    let padded_from = labels.iter().filter(|&&d| d).count();
    SequenceSample {
        observation: random_grid(side, rng),
        actions,
        labels,
        padded_from,
    }
}

fn tensor<'a>(p: &'a ModelParams, name: &str) -> &'a [f64] {
    p.tensor(name).unwrap_or_else(|| panic!("missing tensor {name}"))
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line forward pass over the dense one-hot input, written
/// independently of the library's gather-based implementation.
pub fn oracle_logits(p: &ModelParams, obs: &Observation, actions: &[f64]) -> Vec<f64> {
    let cfg = p.config().clone();
    let cells = (obs.side() * obs.side()) as f64;
    let mut x: Vec<f64> = obs.one_hot().into_iter().map(|v| v / cells.sqrt()).collect();
    for l in 0..cfg.encoder_hidden.len() {
        let w = tensor(p, &format!("encoder.{l}.weight"));
        let b = tensor(p, &format!("encoder.{l}.bias"));
        let n_in = x.len();
        let n_out = cfg.encoder_hidden[l];
        assert_eq!(w.len(), n_in * n_out);
        let mut y = vec![0.0; n_out];
        for j in 0..n_out {
            let mut acc = b[j];
            for i in 0..n_in {
                acc += x[i] * w[i * n_out + j];
            }
            y[j] = acc.tanh();
        }
        x = y;
    }
    let hd = cfg.hidden_dim;
    let e = cfg.action_embed_dim;
    let wh = tensor(p, "init_hidden.weight");
    let bh = tensor(p, "init_hidden.bias");
    let wc = tensor(p, "init_cell.weight");
    let bc = tensor(p, "init_cell.bias");
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for j in 0..hd {
        let mut ah = bh[j];
        let mut ac = bc[j];
        for i in 0..x.len() {
            ah += x[i] * wh[i * hd + j];
            ac += x[i] * wc[i * hd + j];
        }
        h[j] = ah.tanh();
        c[j] = ac;
    }
    let wa = tensor(p, "action_embed.weight");
    let ba = tensor(p, "action_embed.bias");
    let w = tensor(p, "lstm.weight");
    let b = tensor(p, "lstm.bias");
    let wo = tensor(p, "head.weight");
    let bo = tensor(p, "head.bias")[0];
    let width = e + hd;
    let mut logits = Vec::new();
    for &a in actions {
        let mut v = vec![0.0; width];
        for k in 0..e {
            v[k] = (wa[k] * a + ba[k]).tanh();
        }
        v[e..].copy_from_slice(&h);
        let gate = |r: usize| -> f64 {
            let mut acc = b[r];
            for k in 0..width {
                acc += w[r * width + k] * v[k];
            }
            acc
        };
        let mut new_h = vec![0.0; hd];
        for j in 0..hd {
            let i = sig(gate(j));
            let f = sig(gate(hd + j));
            let g = gate(2 * hd + j).tanh();
            let o = sig(gate(3 * hd + j));
            c[j] = f * c[j] + i * g;
            new_h[j] = o * c[j].tanh();
        }
        h = new_h;
        let mut logit = bo;
        for j in 0..hd {
            logit += wo[j] * h[j];
        }
        logits.push(logit);
    }
    logits
}

/// Per-term cross-entropy summed in a plain loop.
pub fn oracle_loss(p: &ModelParams, batch: &[SequenceSample]) -> f64 {
    let mut total = 0.0;
    for s in batch {
        let actions: Vec<f64> = s.actions.iter().map(|a| a.delta_heading()).collect();
        for (l, &y) in oracle_logits(p, &s.observation, &actions).iter().zip(&s.labels) {
            let prob = sig(*l);
            total -= if y { prob.ln() } else { (1.0 - prob).ln() };
        }
    }
    total
}

/// Central finite differences of `ModelParams::loss` over every coordinate.
pub fn finite_difference_gradient(p: &ModelParams, batch: &[SequenceSample], eps: f64) -> Vec<f64> {
    let mut probe = p.clone();
    (0..p.values().len())
        .map(|k| {
            let orig = probe.values()[k];
            probe.values_mut()[k] = orig + eps;
            let up = probe.loss(batch).unwrap();
            probe.values_mut()[k] = orig - eps;
            let down = probe.loss(batch).unwrap();
            probe.values_mut()[k] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Relative error with a floor on the denominator for coordinates whose
/// gradient is structurally zero (inactive one-hot channels).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-8 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}
