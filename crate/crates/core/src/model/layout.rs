/// Named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in of the layer this tensor belongs to, for initialization.
    pub fan_in: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Tensors in declaration order; offsets are contiguous.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    tensors: Vec<TensorSpec>,
    len: usize,
}

impl ParamLayout {
    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> usize {
        let offset = self.len;
        let spec = TensorSpec {
            name: name.into(),
            shape,
            offset,
            fan_in,
        };
        self.len += spec.len();
        self.tensors.push(spec);
        offset
    }
}

/// Fully connected layer stored input-major: `weight[i * outputs + j]`
/// connects input `i` to output `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub(crate) fn declare(layout: &mut ParamLayout, name: &str, inputs: usize, outputs: usize) -> Dense {
        Self::declare_with_fan_in(layout, name, inputs, outputs, inputs)
    }

    /// Like `declare`, for inputs where only `fan_in` entries are ever nonzero.
    pub(crate) fn declare_with_fan_in(
        layout: &mut ParamLayout,
        name: &str,
        inputs: usize,
        outputs: usize,
        fan_in: usize,
    ) -> Dense {
        let weight = layout.push(format!("{name}.weight"), vec![inputs, outputs], fan_in);
        let bias = layout.push(format!("{name}.bias"), vec![outputs], fan_in);
        Dense {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    /// `out = bias + x^T W`
    pub fn forward(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&params[self.bias..self.bias + self.outputs]);
        let w = &params[self.weight..self.weight + self.inputs * self.outputs];
        for (xi, row) in x.iter().zip(w.chunks_exact(self.outputs)) {
            if *xi != 0.0 {
                for (o, wij) in out.iter_mut().zip(row) {
                    *o += xi * wij;
                }
            }
        }
    }

    /// Accumulates parameter gradients and, when `dx` is given, the input
    /// gradient for upstream `dout`.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dout: &[f64],
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        for (g, d) in grad[self.bias..self.bias + self.outputs].iter_mut().zip(dout) {
            *g += d;
        }
        let n = self.inputs * self.outputs;
        let gw = &mut grad[self.weight..self.weight + n];
        for (xi, grow) in x.iter().zip(gw.chunks_exact_mut(self.outputs)) {
            if *xi != 0.0 {
                for (g, d) in grow.iter_mut().zip(dout) {
                    *g += xi * d;
                }
            }
        }
        if let Some(dx) = dx {
            let w = &params[self.weight..self.weight + n];
            for (dxi, row) in dx.iter_mut().zip(w.chunks_exact(self.outputs)) {
                *dxi += row.iter().zip(dout).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}
