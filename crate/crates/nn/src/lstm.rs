use rand::Rng;

use crate::error::check_len;
use crate::{NnError, Result};

/// Layer sizes of a stacked LSTM with a dense read-out on the top hidden state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LstmShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl LstmShape {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(NnError::Config("input and output dims must be positive".into()));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(NnError::Config("need at least one non-empty hidden layer".into()));
        }
        Ok(LstmShape {
            input_dim,
            hidden,
            output_dim,
        })
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden[layer - 1]
        }
    }

    fn top_hidden(&self) -> usize {
        *self.hidden.last().expect("validated non-empty")
    }

    fn layer_len(&self, layer: usize) -> usize {
        let h = self.hidden[layer];
        4 * h * (self.layer_input(layer) + h + 1)
    }

    pub fn num_params(&self) -> usize {
        let lstm: usize = (0..self.hidden.len()).map(|l| self.layer_len(l)).sum();
        lstm + self.output_dim * (self.top_hidden() + 1)
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_len(l)).sum()
    }

    fn dense_offset(&self) -> usize {
        self.layer_offset(self.hidden.len())
    }
}

/// Flat parameter vector plus the shape that gives it structure.
///
/// Per layer the block layout is `w_x (4h × in)`, `w_h (4h × h)`, `b (4h)`,
/// row-major, with gate rows ordered input, forget, output, candidate. The
/// dense read-out `w (out × h_top)`, `b (out)` follows the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub shape: LstmShape,
    pub data: Vec<f64>,
}

/// Which outputs enter the mean-squared-error loss.
#[derive(Debug, Clone, Copy)]
pub enum LossSpan<'a> {
    /// Only the output at the final step; target has `output_dim` entries.
    Last(&'a [f64]),
    /// Every step; target is `T × output_dim`, row-major.
    All(&'a [f64]),
}

/// Activations recorded during a forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: usize,
    // per layer, T × 4h post-activation gates (i, f, o, g)
    gates: Vec<Vec<f64>>,
    cell: Vec<Vec<f64>>,
    cell_tanh: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    /// T × output_dim.
    pub outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Final hidden state of each layer.
    pub fn final_hidden(&self) -> Vec<Vec<f64>> {
        self.hidden
            .iter()
            .map(|h| {
                let width = h.len() / self.steps;
                h[(self.steps - 1) * width..].to_vec()
            })
            .collect()
    }

    /// Final cell state of each layer.
    pub fn final_cell(&self) -> Vec<Vec<f64>> {
        self.cell
            .iter()
            .map(|c| {
                let width = c.len() / self.steps;
                c[(self.steps - 1) * width..].to_vec()
            })
            .collect()
    }

    pub fn last_output(&self, output_dim: usize) -> &[f64] {
        &self.outputs[(self.steps - 1) * output_dim..]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmParams {
    pub fn zeros(shape: LstmShape) -> Self {
        let n = shape.num_params();
        LstmParams {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Uniform ±1/√fan_in initialization with the forget-gate bias set to one.
    pub fn init<R: Rng>(shape: LstmShape, rng: &mut R) -> Self {
        let mut params = Self::zeros(shape);
        let shape = params.shape.clone();
        for layer in 0..shape.hidden.len() {
            let h = shape.hidden[layer];
            let input = shape.layer_input(layer);
            let bound = 1.0 / ((input + h) as f64).sqrt();
            let off = shape.layer_offset(layer);
            let weights = 4 * h * (input + h);
            for w in &mut params.data[off..off + weights] {
                *w = rng.random_range(-bound..bound);
            }
            let bias = off + weights;
            for k in 0..h {
                params.data[bias + h + k] = 1.0;
            }
        }
        let off = shape.dense_offset();
        let bound = 1.0 / (shape.top_hidden() as f64).sqrt();
        for w in &mut params.data[off..off + shape.output_dim * shape.top_hidden()] {
            *w = rng.random_range(-bound..bound);
        }
        params
    }

    pub fn from_vec(shape: LstmShape, data: Vec<f64>) -> Result<Self> {
        check_len("parameter vector", shape.num_params(), data.len())?;
        Ok(LstmParams { shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Runs the network over a `T × input_dim` row-major sequence.
    pub fn forward(&self, sequence: &[f64]) -> Result<ForwardCache> {
        let shape = &self.shape;
        if sequence.is_empty() || sequence.len() % shape.input_dim != 0 {
            return Err(NnError::Shape {
                what: "input sequence length (multiple of input_dim)",
                expected: shape.input_dim,
                found: sequence.len(),
            });
        }
        let steps = sequence.len() / shape.input_dim;
        let layers = shape.hidden.len();
        let mut cache = ForwardCache {
            steps,
            gates: Vec::with_capacity(layers),
            cell: Vec::with_capacity(layers),
            cell_tanh: Vec::with_capacity(layers),
            hidden: Vec::with_capacity(layers),
            outputs: vec![0.0; steps * shape.output_dim],
        };

        for layer in 0..layers {
            let h = shape.hidden[layer];
            let input_dim = shape.layer_input(layer);
            let off = shape.layer_offset(layer);
            let wx = &self.data[off..off + 4 * h * input_dim];
            let wh = &self.data[off + 4 * h * input_dim..off + 4 * h * (input_dim + h)];
            let b = &self.data[off + 4 * h * (input_dim + h)..off + shape.layer_len(layer)];

            let mut gates = vec![0.0; steps * 4 * h];
            let mut cell = vec![0.0; steps * h];
            let mut cell_tanh = vec![0.0; steps * h];
            let mut hidden = vec![0.0; steps * h];
            let inputs: &[f64] = if layer == 0 {
                sequence
            } else {
                &cache.hidden[layer - 1]
            };

            let mut z = vec![0.0; 4 * h];
            for t in 0..steps {
                let x = &inputs[t * input_dim..(t + 1) * input_dim];
                z.copy_from_slice(b);
                for (r, zr) in z.iter_mut().enumerate() {
                    let row = &wx[r * input_dim..(r + 1) * input_dim];
                    let mut acc = 0.0;
                    for (w, xi) in row.iter().zip(x) {
                        acc += w * xi;
                    }
                    *zr += acc;
                }
                if t > 0 {
                    let h_prev = &hidden[(t - 1) * h..t * h];
                    for (r, zr) in z.iter_mut().enumerate() {
                        let row = &wh[r * h..(r + 1) * h];
                        let mut acc = 0.0;
                        for (w, hp) in row.iter().zip(h_prev) {
                            acc += w * hp;
                        }
                        *zr += acc;
                    }
                }
                let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
                for k in 0..3 * h {
                    g[k] = sigmoid(z[k]);
                }
                for k in 3 * h..4 * h {
                    g[k] = z[k].tanh();
                }
                for k in 0..h {
                    let c_prev = if t > 0 { cell[(t - 1) * h + k] } else { 0.0 };
                    let c = g[h + k] * c_prev + g[k] * g[3 * h + k];
                    let tc = c.tanh();
                    cell[t * h + k] = c;
                    cell_tanh[t * h + k] = tc;
                    hidden[t * h + k] = g[2 * h + k] * tc;
                }
            }
            cache.gates.push(gates);
            cache.cell.push(cell);
            cache.cell_tanh.push(cell_tanh);
            cache.hidden.push(hidden);
        }

        let top = shape.top_hidden();
        let off = shape.dense_offset();
        let dw = &self.data[off..off + shape.output_dim * top];
        let db = &self.data[off + shape.output_dim * top..];
        let top_hidden = &cache.hidden[layers - 1];
        for t in 0..steps {
            let ht = &top_hidden[t * top..(t + 1) * top];
            for o in 0..shape.output_dim {
                let row = &dw[o * top..(o + 1) * top];
                let mut acc = db[o];
                for (w, hv) in row.iter().zip(ht) {
                    acc += w * hv;
                }
                cache.outputs[t * shape.output_dim + o] = acc;
            }
        }
        Ok(cache)
    }

    /// Mean squared error of the forward pass against `target`.
    pub fn loss(&self, sequence: &[f64], target: LossSpan<'_>) -> Result<f64> {
        let cache = self.forward(sequence)?;
        let (residual, _) = residuals(&cache, self.shape.output_dim, target)?;
        let n = residual.len() as f64;
        Ok(residual.iter().map(|r| r * r).sum::<f64>() / n)
    }

    /// Loss and its exact gradient with respect to every parameter, by
    /// backpropagation through time.
    pub fn loss_and_gradient(&self, sequence: &[f64], target: LossSpan<'_>) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.data.len()];
        let loss = self.accumulate_gradient(sequence, target, 1.0, &mut grad)?;
        Ok((loss, grad))
    }

    /// Adds `scale · ∂loss/∂θ` into `grad` and returns the unscaled loss.
    pub fn accumulate_gradient(
        &self,
        sequence: &[f64],
        target: LossSpan<'_>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        check_len("gradient buffer", self.data.len(), grad.len())?;
        let shape = &self.shape;
        let cache = self.forward(sequence)?;
        let steps = cache.steps;
        let out_dim = shape.output_dim;
        let (residual, first_step) = residuals(&cache, out_dim, target)?;
        let n = residual.len() as f64;
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;

        let layers = shape.hidden.len();
        let top = shape.top_hidden();
        let off = shape.dense_offset();
        let mut d_hidden = vec![0.0; steps * top];
        {
            let (dense_w, rest) = grad[off..].split_at_mut(out_dim * top);
            let w = &self.data[off..off + out_dim * top];
            let top_hidden = &cache.hidden[layers - 1];
            for t in first_step..steps {
                let ht = &top_hidden[t * top..(t + 1) * top];
                let dh = &mut d_hidden[t * top..(t + 1) * top];
                for o in 0..out_dim {
                    let dy = 2.0 * residual[(t - first_step) * out_dim + o] / n;
                    rest[o] += scale * dy;
                    let grow = &mut dense_w[o * top..(o + 1) * top];
                    let wrow = &w[o * top..(o + 1) * top];
                    for k in 0..top {
                        grow[k] += scale * dy * ht[k];
                        dh[k] += dy * wrow[k];
                    }
                }
            }
        }

        for layer in (0..layers).rev() {
            let h = shape.hidden[layer];
            let input_dim = shape.layer_input(layer);
            let off = shape.layer_offset(layer);
            let wx_len = 4 * h * input_dim;
            let wh_len = 4 * h * h;
            let wx = &self.data[off..off + wx_len];
            let wh = &self.data[off + wx_len..off + wx_len + wh_len];
            let inputs: &[f64] = if layer == 0 {
                sequence
            } else {
                &cache.hidden[layer - 1]
            };
            let gates = &cache.gates[layer];
            let cell = &cache.cell[layer];
            let cell_tanh = &cache.cell_tanh[layer];
            let hidden = &cache.hidden[layer];

            let mut d_input = if layer > 0 {
                vec![0.0; steps * input_dim]
            } else {
                Vec::new()
            };
            let mut dh_next = vec![0.0; h];
            let mut dc_next = vec![0.0; h];
            let mut dz = vec![0.0; 4 * h];

            let (g_wx, rest) = grad[off..off + shape.layer_len(layer)].split_at_mut(wx_len);
            let (g_wh, g_b) = rest.split_at_mut(wh_len);

            for t in (0..steps).rev() {
                let g = &gates[t * 4 * h..(t + 1) * 4 * h];
                for k in 0..h {
                    let i = g[k];
                    let f = g[h + k];
                    let o = g[2 * h + k];
                    let cand = g[3 * h + k];
                    let tc = cell_tanh[t * h + k];
                    let c_prev = if t > 0 { cell[(t - 1) * h + k] } else { 0.0 };
                    let dh = d_hidden[t * h + k] + dh_next[k];
                    let d_o = dh * tc;
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                    let d_i = dc * cand;
                    let d_g = dc * i;
                    let d_f = dc * c_prev;
                    dc_next[k] = dc * f;
                    dz[k] = d_i * i * (1.0 - i);
                    dz[h + k] = d_f * f * (1.0 - f);
                    dz[2 * h + k] = d_o * o * (1.0 - o);
                    dz[3 * h + k] = d_g * (1.0 - cand * cand);
                }
                let x = &inputs[t * input_dim..(t + 1) * input_dim];
                for r in 0..4 * h {
                    let d = dz[r];
                    if d == 0.0 {
                        continue;
                    }
                    g_b[r] += scale * d;
                    let grow = &mut g_wx[r * input_dim..(r + 1) * input_dim];
                    for (gw, xi) in grow.iter_mut().zip(x) {
                        *gw += scale * d * xi;
                    }
                }
                if t > 0 {
                    let h_prev = &hidden[(t - 1) * h..t * h];
                    for r in 0..4 * h {
                        let d = dz[r];
                        if d == 0.0 {
                            continue;
                        }
                        let grow = &mut g_wh[r * h..(r + 1) * h];
                        for (gw, hp) in grow.iter_mut().zip(h_prev) {
                            *gw += scale * d * hp;
                        }
                    }
                }
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..4 * h {
                    let d = dz[r];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &wh[r * h..(r + 1) * h];
                    for (dn, w) in dh_next.iter_mut().zip(row) {
                        *dn += d * w;
                    }
                }
                if layer > 0 {
                    let dx = &mut d_input[t * input_dim..(t + 1) * input_dim];
                    for r in 0..4 * h {
                        let d = dz[r];
                        if d == 0.0 {
                            continue;
                        }
                        let row = &wx[r * input_dim..(r + 1) * input_dim];
                        for (dxi, w) in dx.iter_mut().zip(row) {
                            *dxi += d * w;
                        }
                    }
                }
            }
            d_hidden = d_input;
        }
        Ok(loss)
    }
}

/// Output minus target for the steps that enter the loss, and the first such step.
fn residuals(cache: &ForwardCache, out_dim: usize, target: LossSpan<'_>) -> Result<(Vec<f64>, usize)> {
    match target {
        LossSpan::Last(y) => {
            check_len("target (last step)", out_dim, y.len())?;
            let out = cache.last_output(out_dim);
            Ok((out.iter().zip(y).map(|(a, b)| a - b).collect(), cache.steps - 1))
        }
        LossSpan::All(y) => {
            check_len("target (all steps)", cache.outputs.len(), y.len())?;
            Ok((cache.outputs.iter().zip(y).map(|(a, b)| a - b).collect(), 0))
        }
    }
}
