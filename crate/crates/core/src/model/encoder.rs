use crate::world::TerrainClass;

use super::layout::{Dense, ParamLayout};

/// Fully connected tanh encoder over a flattened one-hot terrain grid whose
/// active entries equal `1/sqrt(cells)`.
///
/// The first layer never materializes the one-hot vector: each cell
/// contributes the weight row of its active channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    pub layers: Vec<Dense>,
    pub cells: usize,
    pub channels: usize,
}

impl Encoder {
    pub(crate) fn declare(layout: &mut ParamLayout, cells: usize, channels: usize, widths: &[usize]) -> Encoder {
        let mut inputs = cells * channels;
        let mut layers = Vec::with_capacity(widths.len());
        for (l, &w) in widths.iter().enumerate() {
            // The scaled one-hot input always has unit norm.
            let fan_in = if l == 0 { 1 } else { inputs };
            layers.push(Dense::declare_with_fan_in(layout, &format!("encoder.{l}"), inputs, w, fan_in));
            inputs = w;
        }
        Encoder {
            layers,
            cells,
            channels,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.cells * self.channels, |d| d.outputs)
    }

    /// Value of an active one-hot entry. Nearly every cell shares one class
    /// on open sidewalk, so unscaled inputs let a handful of Adam steps
    /// saturate the first layer.
    pub fn input_scale(&self) -> f64 {
        1.0 / (self.cells as f64).sqrt()
    }

    /// Post-activation output of every layer.
    pub fn forward(&self, params: &[f64], grid: &[TerrainClass]) -> Vec<Vec<f64>> {
        debug_assert_eq!(grid.len(), self.cells);
        let scale = self.input_scale();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            if l == 0 {
                out.copy_from_slice(&params[layer.bias..layer.bias + layer.outputs]);
                for (k, class) in grid.iter().enumerate() {
                    let row = layer.weight + (k * self.channels + class.index()) * layer.outputs;
                    for (o, w) in out.iter_mut().zip(&params[row..row + layer.outputs]) {
                        *o += scale * w;
                    }
                }
            } else {
                layer.forward(params, &acts[l - 1], &mut out);
            }
            out.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(out);
        }
        acts
    }

    /// Backpropagates `d_output` (gradient w.r.t. the last activation).
    pub fn backward(
        &self,
        params: &[f64],
        grid: &[TerrainClass],
        acts: &[Vec<f64>],
        d_output: Vec<f64>,
        grad: &mut [f64],
    ) {
        let scale = self.input_scale();
        let mut d_act = d_output;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let d_pre: Vec<f64> = d_act
                .iter()
                .zip(&acts[l])
                .map(|(d, a)| d * (1.0 - a * a))
                .collect();
            if l == 0 {
                for (g, d) in grad[layer.bias..layer.bias + layer.outputs].iter_mut().zip(&d_pre) {
                    *g += d;
                }
                for (k, class) in grid.iter().enumerate() {
                    let row = layer.weight + (k * self.channels + class.index()) * layer.outputs;
                    for (g, d) in grad[row..row + layer.outputs].iter_mut().zip(&d_pre) {
                        *g += scale * d;
                    }
                }
            } else {
                let mut d_in = vec![0.0; layer.inputs];
                layer.backward(params, &acts[l - 1], &d_pre, grad, Some(&mut d_in));
                d_act = d_in;
            }
        }
    }
}
