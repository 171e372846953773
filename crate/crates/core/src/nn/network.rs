use super::params::{Gradients, ParamVector};
use super::spec::{Layer, ModelSpec};
use crate::error::{Error, Result};

/// Borrowed mini-batch: `inputs` is `(batch, channels, height, width)`
/// flattened row-major, one label per sample.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [f64], labels: &'a [usize]) -> Self {
        Batch { inputs, labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Row-major `(batch, num_classes)` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub values: Vec<f64>,
    pub num_classes: usize,
}

impl Logits {
    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.num_classes)
    }

    pub fn batch_size(&self) -> usize {
        self.values.len() / self.num_classes
    }

    /// Predicted class per row; ties go to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

fn batch_size_of(spec: &ModelSpec, inputs: &[f64]) -> Result<usize> {
    let sample = spec.input_len();
    if inputs.is_empty() || !inputs.len().is_multiple_of(sample) {
        return Err(Error::shape(
            "input tensor",
            format!("a positive multiple of {sample} values ({:?} per sample)", spec.input_shape),
            inputs.len(),
        ));
    }
    Ok(inputs.len() / sample)
}

enum Cache {
    None,
    Pool(Vec<usize>),
}

struct Trace {
    /// activations[l] is the input of layer l; the last entry is the logits.
    activations: Vec<Vec<f64>>,
    caches: Vec<Cache>,
}

fn run_forward(layers: &[Layer], params: &[f64], inputs: &[f64], batch: usize, keep: bool) -> Trace {
    let mut activations = Vec::with_capacity(layers.len() + 1);
    let mut caches = Vec::with_capacity(layers.len());
    let mut current = inputs.to_vec();
    for layer in layers {
        let in_len = current.len() / batch;
        let out_len = layer.output_len(in_len);
        let mut out = vec![0.0; batch * out_len];
        let mut cache = Cache::None;
        match *layer {
            Layer::Dense {
                inputs: n_in,
                outputs: n_out,
                offset,
            } => {
                let (w, b) = params[offset..offset + n_in * n_out + n_out].split_at(n_in * n_out);
                for (x, y) in current.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
                    for (o, yo) in y.iter_mut().enumerate() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        *yo = b[o] + dot(row, x);
                    }
                }
            }
            Layer::Conv {
                in_channels,
                out_channels,
                height,
                width,
                kernel,
                offset,
            } => {
                let wlen = out_channels * in_channels * kernel * kernel;
                let (w, b) = params[offset..offset + wlen + out_channels].split_at(wlen);
                let geom = ConvGeom {
                    in_channels,
                    out_channels,
                    height,
                    width,
                    kernel,
                };
                for (x, y) in current.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                    geom.forward(w, b, x, y);
                }
            }
            Layer::Relu => {
                for (y, x) in out.iter_mut().zip(&current) {
                    *y = x.max(0.0);
                }
            }
            Layer::MaxPool {
                channels,
                height,
                width,
            } => {
                let mut argmax = vec![0usize; batch * out_len];
                let (oh, ow) = (height / 2, width / 2);
                for s in 0..batch {
                    let x = &current[s * in_len..(s + 1) * in_len];
                    for c in 0..channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let base = c * height * width;
                                let mut best = base + 2 * oy * width + 2 * ox;
                                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                    let idx = base + (2 * oy + dy) * width + 2 * ox + dx;
                                    if x[idx] > x[best] {
                                        best = idx;
                                    }
                                }
                                let o = s * out_len + c * oh * ow + oy * ow + ox;
                                out[o] = x[best];
                                argmax[o] = best;
                            }
                        }
                    }
                }
                cache = Cache::Pool(argmax);
            }
        }
        if keep {
            activations.push(std::mem::replace(&mut current, out));
        } else {
            current = out;
        }
        caches.push(cache);
    }
    activations.push(current);
    Trace {
        activations,
        caches,
    }
}

#[inline]
// Four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct ConvGeom {
    in_channels: usize,
    out_channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
}

impl ConvGeom {
    /// Valid output range along one axis for kernel tap `k` with same padding.
    fn span(&self, k: usize, len: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        let lo = pad.saturating_sub(k);
        let hi = (len + pad).saturating_sub(k).min(len);
        (lo, hi)
    }

    fn forward(&self, w: &[f64], b: &[f64], x: &[f64], y: &mut [f64]) {
        let (h, wd, k) = (self.height, self.width, self.kernel);
        let pad = k / 2;
        let plane = h * wd;
        for oc in 0..self.out_channels {
            let out = &mut y[oc * plane..(oc + 1) * plane];
            out.fill(b[oc]);
            for ic in 0..self.in_channels {
                let input = &x[ic * plane..(ic + 1) * plane];
                for ky in 0..k {
                    let (y0, y1) = self.span(ky, h);
                    for kx in 0..k {
                        let (x0, x1) = self.span(kx, wd);
                        let wv = w[((oc * self.in_channels + ic) * k + ky) * k + kx];
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            let src = &input[iy * wd + x0 + kx - pad..iy * wd + x1 + kx - pad];
                            let dst = &mut out[oy * wd + x0..oy * wd + x1];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward(&self, w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64], dx: &mut [f64]) {
        let (h, wd, k) = (self.height, self.width, self.kernel);
        let pad = k / 2;
        let plane = h * wd;
        for oc in 0..self.out_channels {
            let grad_out = &dy[oc * plane..(oc + 1) * plane];
            db[oc] += grad_out.iter().sum::<f64>();
            for ic in 0..self.in_channels {
                let input = &x[ic * plane..(ic + 1) * plane];
                let grad_in = &mut dx[ic * plane..(ic + 1) * plane];
                for ky in 0..k {
                    let (y0, y1) = self.span(ky, h);
                    for kx in 0..k {
                        let (x0, x1) = self.span(kx, wd);
                        let widx = ((oc * self.in_channels + ic) * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oy in y0..y1 {
                            let iy = oy + ky - pad;
                            let start = iy * wd + x0 + kx - pad;
                            let end = start + (x1 - x0);
                            let g = &grad_out[oy * wd + x0..oy * wd + x1];
                            acc += dot(g, &input[start..end]);
                            for (d, gv) in grad_in[start..end].iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// Logits for every sample in `inputs`. Pure in `(spec, params, inputs)`.
pub fn forward(spec: &ModelSpec, params: &ParamVector, inputs: &[f64]) -> Result<Logits> {
    params.check_len(spec)?;
    let batch = batch_size_of(spec, inputs)?;
    let trace = run_forward(&spec.layers(), params.as_slice(), inputs, batch, false);
    let values = trace.activations.into_iter().next_back().unwrap_or_default();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward"));
    }
    Ok(Logits {
        values,
        num_classes: spec.num_classes,
    })
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= num_classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, num_classes }),
        None => Ok(()),
    }
}

/// Mean softmax cross-entropy, with max-subtracted log-sum-exp.
pub fn loss(logits: &Logits, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if logits.batch_size() != labels.len() {
        return Err(Error::shape("labels", logits.batch_size(), labels.len()));
    }
    check_labels(labels, logits.num_classes)?;
    let total: f64 = logits
        .rows()
        .zip(labels)
        .map(|(row, &y)| log_sum_exp(row) - row[y])
        .sum();
    Ok(total / labels.len() as f64)
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_batch(spec: &ModelSpec, batch: &Batch<'_>) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let n = batch_size_of(spec, batch.inputs)?;
    if n != batch.len() {
        return Err(Error::shape("labels", n, batch.len()));
    }
    check_labels(batch.labels, spec.num_classes)?;
    Ok(n)
}

/// Mean loss over the batch and its exact gradient with respect to `params`.
pub fn backward(spec: &ModelSpec, params: &ParamVector, batch: Batch<'_>) -> Result<(f64, Gradients)> {
    params.check_len(spec)?;
    let n = check_batch(spec, &batch)?;
    let layers = spec.layers();
    let p = params.as_slice();
    let trace = run_forward(&layers, p, batch.inputs, n, true);

    let classes = spec.num_classes;
    let logits = &trace.activations[layers.len()];
    let mut delta = vec![0.0; logits.len()];
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    for ((row, d), &y) in logits
        .chunks_exact(classes)
        .zip(delta.chunks_exact_mut(classes))
        .zip(batch.labels)
    {
        let lse = log_sum_exp(row);
        total += lse - row[y];
        for (dv, &v) in d.iter_mut().zip(row) {
            *dv = (v - lse).exp() * inv_n;
        }
        d[y] -= inv_n;
    }
    let mean_loss = total * inv_n;
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite("backward"));
    }

    let mut grads = vec![0.0; p.len()];
    for (l, layer) in layers.iter().enumerate().rev() {
        let input = &trace.activations[l];
        let in_len = input.len() / n;
        let out_len = delta.len() / n;
        let mut next = if l == 0 { Vec::new() } else { vec![0.0; input.len()] };
        let need_input_grad = l > 0;
        match *layer {
            Layer::Dense {
                inputs: n_in,
                outputs: n_out,
                offset,
            } => {
                let (gw, gb) = grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                let w = &p[offset..offset + n_in * n_out];
                for s in 0..n {
                    let x = &input[s * n_in..(s + 1) * n_in];
                    let d = &delta[s * n_out..(s + 1) * n_out];
                    for (o, &dv) in d.iter().enumerate() {
                        gb[o] += dv;
                        if dv == 0.0 {
                            continue;
                        }
                        for (g, xv) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                            *g += dv * xv;
                        }
                        if need_input_grad {
                            let dx = &mut next[s * n_in..(s + 1) * n_in];
                            for (g, wv) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                                *g += dv * wv;
                            }
                        }
                    }
                }
            }
            Layer::Conv {
                in_channels,
                out_channels,
                height,
                width,
                kernel,
                offset,
            } => {
                let wlen = out_channels * in_channels * kernel * kernel;
                let (gw, gb) = grads[offset..offset + wlen + out_channels].split_at_mut(wlen);
                let w = &p[offset..offset + wlen];
                let geom = ConvGeom {
                    in_channels,
                    out_channels,
                    height,
                    width,
                    kernel,
                };
                let mut scratch = vec![0.0; in_len];
                for s in 0..n {
                    let x = &input[s * in_len..(s + 1) * in_len];
                    let d = &delta[s * out_len..(s + 1) * out_len];
                    let dx = if need_input_grad {
                        &mut next[s * in_len..(s + 1) * in_len]
                    } else {
                        scratch.fill(0.0);
                        &mut scratch[..]
                    };
                    geom.backward(w, x, d, gw, gb, dx);
                }
            }
            Layer::Relu => {
                if need_input_grad {
                    for ((g, &d), &x) in next.iter_mut().zip(&delta).zip(input) {
                        *g = if x > 0.0 { d } else { 0.0 };
                    }
                }
            }
            Layer::MaxPool { .. } => {
                if need_input_grad {
                    let Cache::Pool(argmax) = &trace.caches[l] else {
                        unreachable!("pool layer without cache")
                    };
                    for s in 0..n {
                        for o in 0..out_len {
                            let k = s * out_len + o;
                            next[s * in_len + argmax[k]] += delta[k];
                        }
                    }
                }
            }
        }
        delta = next;
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("backward"));
    }
    Ok((mean_loss, Gradients(grads)))
}
