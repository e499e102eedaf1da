//! Layer graph, forward pass and backpropagation over a flat parameter
//! vector.
//!
//! Parameter layout, in order: for every convolution, weights as
//! `[c_out][c_in][3][3]` followed by `c_out` biases; then the hidden dense
//! layer as `[units][flat]` weights and `units` biases; then the output
//! layer as `units` weights and a single bias. Feature maps are stored
//! channel-major (`[c][y][x]`), which is also the flatten order.

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    /// 3x3, stride 1, zero "same" padding, followed by ReLU.
    Conv {
        c_in: usize,
        c_out: usize,
        h: usize,
        w: usize,
        offset: usize,
    },
    /// 2x2 max-pool, stride 2. `h`/`w` are the input extents.
    Pool { channels: usize, h: usize, w: usize },
    /// Fully connected. `relu` is false only for the output layer, whose
    /// single logit feeds a sigmoid.
    Dense {
        n_in: usize,
        n_out: usize,
        offset: usize,
        relu: bool,
    },
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Conv { c_in, c_out, .. } => 9 * c_in * c_out + c_out,
            Layer::Pool { .. } => 0,
            Layer::Dense { n_in, n_out, .. } => n_in * n_out + n_out,
        }
    }

    fn output_len(&self) -> usize {
        match *self {
            Layer::Conv { c_out, h, w, .. } => c_out * h * w,
            Layer::Pool { channels, h, w } => channels * (h / 2) * (w / 2),
            Layer::Dense { n_out, .. } => n_out,
        }
    }
}

/// The layer sequence implied by a config. Assumes the config is valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    layers: Vec<Layer>,
    input_size: (usize, usize),
    param_count: usize,
}

/// Per-layer outputs kept for backpropagation. `outputs[i]` is the
/// post-activation output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
    /// For pool layers: flat input index of each window's winner.
    argmax: Vec<Vec<usize>>,
}

impl ForwardTrace {
    pub fn logit(&self) -> f64 {
        self.outputs.last().expect("network has layers")[0]
    }
}

impl Network {
    pub fn new(config: &ModelConfig) -> Self {
        let (mut h, mut w) = config.input_size;
        let mut c = 1;
        let mut offset = 0;
        let mut layers: Vec<Layer> = Vec::new();
        fn push(layer: Layer, layers: &mut Vec<Layer>, offset: &mut usize) {
            *offset += layer.param_count();
            layers.push(layer);
        }
        for block in &config.conv_blocks {
            for _ in 0..block.convs {
                push(Layer::Conv { c_in: c, c_out: block.channels, h, w, offset }, &mut layers, &mut offset);
                c = block.channels;
            }
            push(Layer::Pool { channels: c, h, w }, &mut layers, &mut offset);
            h /= 2;
            w /= 2;
        }
        let flat = c * h * w;
        let hidden = Layer::Dense { n_in: flat, n_out: config.dense_units, offset, relu: true };
        push(hidden, &mut layers, &mut offset);
        let head = Layer::Dense { n_in: config.dense_units, n_out: 1, offset, relu: false };
        push(head, &mut layers, &mut offset);
        Self { layers, input_size: config.input_size, param_count: offset }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    /// Runs the network and keeps every intermediate output.
    pub fn forward_trace(&self, params: &[f64], input: &[f32]) -> ForwardTrace {
        debug_assert_eq!(params.len(), self.param_count);
        debug_assert_eq!(input.len(), self.input_size.0 * self.input_size.1);
        let input: Vec<f64> = input.iter().map(|&v| f64::from(v)).collect();
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outputs.last().unwrap_or(&input);
            let mut out = vec![0.0; layer.output_len()];
            let mut winners = Vec::new();
            match *layer {
                Layer::Conv { c_in, c_out, h, w, offset } => {
                    conv_forward(x, &params[offset..offset + layer.param_count()], c_in, c_out, h, w, &mut out);
                }
                Layer::Pool { channels, h, w } => {
                    winners = pool_forward(x, channels, h, w, &mut out);
                }
                Layer::Dense { n_in, n_out, offset, relu } => {
                    let (wt, b) = params[offset..offset + n_in * n_out + n_out].split_at(n_in * n_out);
                    for (j, o) in out.iter_mut().enumerate() {
                        let row = &wt[j * n_in..(j + 1) * n_in];
                        let z = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                        *o = if relu { z.max(0.0) } else { z };
                    }
                }
            }
            outputs.push(out);
            argmax.push(winners);
        }
        ForwardTrace { input, outputs, argmax }
    }

    /// Probability of the positive class.
    pub fn forward(&self, params: &[f64], input: &[f32]) -> f64 {
        probability(self.forward_trace(params, input).logit())
    }

    /// Binary cross-entropy for one example; gradient is accumulated
    /// (added) into `grad`.
    pub fn loss_and_grad(&self, params: &[f64], input: &[f32], positive: bool, grad: &mut [f64]) -> f64 {
        let trace = self.forward_trace(params, input);
        let z = trace.logit();
        let y = if positive { 1.0 } else { 0.0 };
        let loss = bce_with_logit(z, y);
        self.backward(params, &trace, sigmoid(z) - y, grad);
        loss
    }

    pub fn loss(&self, params: &[f64], input: &[f32], positive: bool) -> f64 {
        let z = self.forward_trace(params, input).logit();
        bce_with_logit(z, if positive { 1.0 } else { 0.0 })
    }

    fn backward(&self, params: &[f64], trace: &ForwardTrace, dlogit: f64, grad: &mut [f64]) {
        let mut delta = vec![dlogit];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let y = &trace.outputs[i];
            let need_input_grad = i > 0;
            match *layer {
                Layer::Dense { n_in, n_out, offset, relu } => {
                    if relu {
                        for (d, &o) in delta.iter_mut().zip(y) {
                            if o <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    let wt = &params[offset..offset + n_in * n_out];
                    let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                    let mut dx = vec![0.0; if need_input_grad { n_in } else { 0 }];
                    for j in 0..n_out {
                        let d = delta[j];
                        if d == 0.0 {
                            continue;
                        }
                        gb[j] += d;
                        for (g, &xv) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                            *g += d * xv;
                        }
                        if need_input_grad {
                            for (dxv, &wv) in dx.iter_mut().zip(&wt[j * n_in..(j + 1) * n_in]) {
                                *dxv += d * wv;
                            }
                        }
                    }
                    delta = dx;
                }
                Layer::Pool { .. } => {
                    let mut dx = vec![0.0; x.len()];
                    for (&src, &d) in trace.argmax[i].iter().zip(&delta) {
                        dx[src] += d;
                    }
                    delta = dx;
                }
                Layer::Conv { c_in, c_out, h, w, offset } => {
                    for (d, &o) in delta.iter_mut().zip(y) {
                        if o <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    let n = layer.param_count();
                    let mut dx = vec![0.0; if need_input_grad { x.len() } else { 0 }];
                    conv_backward(
                        x,
                        &params[offset..offset + n],
                        &delta,
                        c_in,
                        c_out,
                        h,
                        w,
                        &mut grad[offset..offset + n],
                        need_input_grad.then_some(&mut dx[..]),
                    );
                    delta = dx;
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid kept strictly inside (0, 1).
pub fn probability(logit: f64) -> f64 {
    const TOP: f64 = 1.0 - f64::EPSILON / 2.0;
    sigmoid(logit).clamp(f64::MIN_POSITIVE, TOP)
}

/// Numerically stable -[y ln s(z) + (1 - y) ln(1 - s(z))].
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// Valid output range `[lo, hi)` along one axis for kernel tap `k` (0..3)
/// under same-padding.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n - 1),
    }
}

fn conv_forward(x: &[f64], p: &[f64], c_in: usize, c_out: usize, h: usize, w: usize, out: &mut [f64]) {
    let (wt, bias) = p.split_at(9 * c_in * c_out);
    let plane = h * w;
    for co in 0..c_out {
        let o = &mut out[co * plane..(co + 1) * plane];
        o.fill(bias[co]);
        for ci in 0..c_in {
            let xi = &x[ci * plane..(ci + 1) * plane];
            let k = &wt[(co * c_in + ci) * 9..(co * c_in + ci) * 9 + 9];
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, h);
                for kx in 0..3 {
                    let kv = k[ky * 3 + kx];
                    let (x0, x1) = tap_range(kx, w);
                    for yy in y0..y1 {
                        let sy = yy + ky - 1;
                        let orow = &mut o[yy * w + x0..yy * w + x1];
                        let irow = &xi[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += kv * iv;
                        }
                    }
                }
            }
        }
        for v in o.iter_mut() {
            *v = v.max(0.0);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    p: &[f64],
    delta: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    grad: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let nw = 9 * c_in * c_out;
    let (gw, gb) = grad.split_at_mut(nw);
    let wt = &p[..nw];
    let plane = h * w;
    for co in 0..c_out {
        let d = &delta[co * plane..(co + 1) * plane];
        gb[co] += d.iter().sum::<f64>();
        for ci in 0..c_in {
            let xi = &x[ci * plane..(ci + 1) * plane];
            let base = (co * c_in + ci) * 9;
            for ky in 0..3 {
                let (y0, y1) = tap_range(ky, h);
                for kx in 0..3 {
                    let (x0, x1) = tap_range(kx, w);
                    let mut acc = 0.0;
                    for yy in y0..y1 {
                        let sy = yy + ky - 1;
                        let drow = &d[yy * w + x0..yy * w + x1];
                        let irow = &xi[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        acc += drow.iter().zip(irow).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw[base + ky * 3 + kx] += acc;
                    if let Some(dx) = dx.as_deref_mut() {
                        let kv = wt[base + ky * 3 + kx];
                        let dxi = &mut dx[ci * plane..(ci + 1) * plane];
                        for yy in y0..y1 {
                            let sy = yy + ky - 1;
                            let drow = &d[yy * w + x0..yy * w + x1];
                            let xrow = &mut dxi[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                            for (xv, dv) in xrow.iter_mut().zip(drow) {
                                *xv += kv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Ties go to the first element in row-major window order.
fn pool_forward(x: &[f64], channels: usize, h: usize, w: usize, out: &mut [f64]) -> Vec<usize> {
    let (oh, ow) = (h / 2, w / 2);
    let mut winners = Vec::with_capacity(out.len());
    for c in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = c * h * w + 2 * oy * w + 2 * ox;
                let mut best = x[best_idx];
                for (dy, dxx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = c * h * w + (2 * oy + dy) * w + 2 * ox + dxx;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                out[c * oh * ow + oy * ow + ox] = best;
                winners.push(best_idx);
            }
        }
    }
    winners
}
