//! From-scratch differentiable model families: logistic regression, a
//! one-hidden-layer MLP, and a small two-stage convnet. Forward passes,
//! exact backprop, and input gradients where supported.

use super::{ClassifierError, Result};
use crate::numerics::RngStream;
use std::collections::BTreeMap;
use std::ops::Range;

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum ModelFamily {
    Logistic,
    Mlp { hidden: usize },
    SmallConv { c1: usize, c2: usize },
}

/// Architecture descriptor: family, input shape, number of classes.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn logistic(in_channels: usize, in_h: usize, in_w: usize, num_classes: usize) -> Self {
        Self {
            family: ModelFamily::Logistic,
            in_channels,
            in_h,
            in_w,
            num_classes,
        }
    }

    pub fn mlp(in_channels: usize, in_h: usize, in_w: usize, num_classes: usize) -> Self {
        Self {
            family: ModelFamily::Mlp { hidden: 128 },
            in_channels,
            in_h,
            in_w,
            num_classes,
        }
    }

    pub fn mlp_with_hidden(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        num_classes: usize,
        hidden: usize,
    ) -> Self {
        Self {
            family: ModelFamily::Mlp { hidden },
            in_channels,
            in_h,
            in_w,
            num_classes,
        }
    }

    pub fn smallconv(in_channels: usize, in_h: usize, in_w: usize, num_classes: usize) -> Self {
        Self {
            family: ModelFamily::SmallConv { c1: 8, c2: 16 },
            in_channels,
            in_h,
            in_w,
            num_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    /// Named layer slices in a fixed order.
    pub fn layout(&self) -> Vec<(String, Range<usize>)> {
        let d = self.input_dim();
        let k = self.num_classes;
        let mut out = Vec::new();
        let mut off = 0usize;
        let mut push = |name: &str, len: usize, off: &mut usize| {
            out.push((name.to_string(), *off..*off + len));
            *off += len;
        };
        match self.family {
            ModelFamily::Logistic => {
                push("w", k * d, &mut off);
                push("b", k, &mut off);
            }
            ModelFamily::Mlp { hidden } => {
                push("w1", hidden * d, &mut off);
                push("b1", hidden, &mut off);
                push("w2", k * hidden, &mut off);
                push("b2", k, &mut off);
            }
            ModelFamily::SmallConv { c1, c2 } => {
                push("conv1_w", c1 * self.in_channels * 9, &mut off);
                push("conv1_b", c1, &mut off);
                push("conv2_w", c2 * c1 * 9, &mut off);
                push("conv2_b", c2, &mut off);
                push("fc_w", k * c2, &mut off);
                push("fc_b", k, &mut off);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().last().map(|(_, r)| r.end).unwrap_or(0)
    }

    /// Dimension of the penultimate feature vector, when one exists.
    pub fn feature_dim(&self) -> Option<usize> {
        match self.family {
            ModelFamily::Logistic => None,
            ModelFamily::Mlp { hidden } => Some(hidden),
            ModelFamily::SmallConv { c2, .. } => Some(c2),
        }
    }
}

/// Flat parameter vector with a name → slice index map.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub values: Vec<f64>,
    pub layout: BTreeMap<String, Range<usize>>,
}

impl Parameters {
    pub fn slice(&self, name: &str) -> &[f64] {
        &self.values[self.layout[name].clone()]
    }
}

/// Uniform ±√(6/fan_in) weights, zero biases, deterministic given the rng.
pub fn init_params(spec: &ModelSpec, rng: &mut RngStream) -> Parameters {
    let layout_vec = spec.layout();
    let mut values = vec![0.0; spec.param_count()];
    let d = spec.input_dim();
    for (name, range) in &layout_vec {
        let fan_in = match (&spec.family, name.as_str()) {
            (ModelFamily::Logistic, "w") => d,
            (ModelFamily::Mlp { .. }, "w1") => d,
            (ModelFamily::Mlp { hidden }, "w2") => *hidden,
            (ModelFamily::SmallConv { .. }, "conv1_w") => spec.in_channels * 9,
            (ModelFamily::SmallConv { c1, .. }, "conv2_w") => c1 * 9,
            (ModelFamily::SmallConv { c2, .. }, "fc_w") => *c2,
            _ => 0, // bias
        };
        if fan_in > 0 {
            let bound = (6.0 / fan_in as f64).sqrt();
            for i in range.clone() {
                values[i] = (rng.next_f64() * 2.0 - 1.0) * bound;
            }
        }
    }
    Parameters {
        values,
        layout: layout_vec.into_iter().collect(),
    }
}

/// Activations cached by the forward pass for backprop.
pub struct ForwardCache {
    /// batch × k
    pub logits: Vec<Vec<f64>>,
    /// mlp hidden pre-activations, conv intermediates, etc.
    hidden: Vec<BatchCache>,
}

enum BatchCache {
    Logistic,
    Mlp {
        pre: Vec<f64>,
    },
    SmallConv {
        a1: Vec<f64>,
        pooled: Vec<f64>,
        a2: Vec<f64>,
        feat: Vec<f64>,
    },
}

fn check_input(spec: &ModelSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim() {
        return Err(ClassifierError::Contract(format!(
            "input length {} does not match spec dim {}",
            x.len(),
            spec.input_dim()
        )));
    }
    Ok(())
}

/// 3×3 same-padding convolution over a ci×h×w volume.
fn conv3x3(
    input: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    co: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        let wbase = o * ci * 9;
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for i in 0..ci {
                    let ibase = i * h * w;
                    let kbase = wbase + i * 9;
                    for ky in 0..3usize {
                        let yy = y as isize + ky as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let xx = x as isize + kx as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            acc += weights[kbase + ky * 3 + kx]
                                * input[ibase + yy as usize * w + xx as usize];
                        }
                    }
                }
                out[(o * h + y) * w + x] = acc;
            }
        }
    }
    out
}

fn smallconv_forward_one(
    spec: &ModelSpec,
    params: &Parameters,
    x: &[f64],
    c1: usize,
    c2: usize,
) -> (Vec<f64>, BatchCache) {
    let (ci, h, w) = (spec.in_channels, spec.in_h, spec.in_w);
    let a1 = conv3x3(x, ci, h, w, params.slice("conv1_w"), params.slice("conv1_b"), c1);
    let r1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
    let (hp, wp) = (h / 2, w / 2);
    let mut pooled = vec![0.0; c1 * hp * wp];
    for c in 0..c1 {
        for y in 0..hp {
            for x_ in 0..wp {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += r1[(c * h + 2 * y + dy) * w + 2 * x_ + dx];
                    }
                }
                pooled[(c * hp + y) * wp + x_] = acc / 4.0;
            }
        }
    }
    let a2 = conv3x3(
        &pooled,
        c1,
        hp,
        wp,
        params.slice("conv2_w"),
        params.slice("conv2_b"),
        c2,
    );
    let r2: Vec<f64> = a2.iter().map(|v| v.max(0.0)).collect();
    let area = (hp * wp) as f64;
    let feat: Vec<f64> = (0..c2)
        .map(|c| r2[c * hp * wp..(c + 1) * hp * wp].iter().sum::<f64>() / area)
        .collect();
    let fc_w = params.slice("fc_w");
    let fc_b = params.slice("fc_b");
    let k = spec.num_classes;
    let logits: Vec<f64> = (0..k)
        .map(|c| {
            fc_b[c]
                + feat
                    .iter()
                    .enumerate()
                    .map(|(j, f)| fc_w[c * c2 + j] * f)
                    .sum::<f64>()
        })
        .collect();
    (
        logits,
        BatchCache::SmallConv {
            a1,
            pooled,
            a2,
            feat,
        },
    )
}

/// Forward pass over a batch of flattened inputs, returning logits and the
/// cache needed for backprop.
pub fn forward(spec: &ModelSpec, params: &Parameters, batch: &[Vec<f64>]) -> Result<ForwardCache> {
    let k = spec.num_classes;
    let d = spec.input_dim();
    let mut logits = Vec::with_capacity(batch.len());
    let mut hidden = Vec::with_capacity(batch.len());
    for x in batch {
        check_input(spec, x)?;
        match spec.family {
            ModelFamily::Logistic => {
                let w = params.slice("w");
                let b = params.slice("b");
                let out: Vec<f64> = (0..k)
                    .map(|c| b[c] + x.iter().enumerate().map(|(j, v)| w[c * d + j] * v).sum::<f64>())
                    .collect();
                logits.push(out);
                hidden.push(BatchCache::Logistic);
            }
            ModelFamily::Mlp { hidden: hdim } => {
                let w1 = params.slice("w1");
                let b1 = params.slice("b1");
                let w2 = params.slice("w2");
                let b2 = params.slice("b2");
                let pre: Vec<f64> = (0..hdim)
                    .map(|hh| {
                        b1[hh]
                            + x.iter()
                                .enumerate()
                                .map(|(j, v)| w1[hh * d + j] * v)
                                .sum::<f64>()
                    })
                    .collect();
                let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let out: Vec<f64> = (0..k)
                    .map(|c| {
                        b2[c]
                            + act
                                .iter()
                                .enumerate()
                                .map(|(j, v)| w2[c * hdim + j] * v)
                                .sum::<f64>()
                    })
                    .collect();
                logits.push(out);
                hidden.push(BatchCache::Mlp { pre });
            }
            ModelFamily::SmallConv { c1, c2 } => {
                let (out, cache) = smallconv_forward_one(spec, params, x, c1, c2);
                logits.push(out);
                hidden.push(cache);
            }
        }
    }
    for row in &logits {
        if !row.iter().all(|v| v.is_finite()) {
            return Err(ClassifierError::Contract("non-finite logits".into()));
        }
    }
    Ok(ForwardCache { logits, hidden })
}

/// Logits only, discarding the cache.
pub fn logits(spec: &ModelSpec, params: &Parameters, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    Ok(forward(spec, params, batch)?.logits)
}

/// Backprop: accumulate parameter gradients given per-sample dL/dlogits.
/// Returns a gradient vector aligned with `params.values`.
pub fn backward(
    spec: &ModelSpec,
    params: &Parameters,
    batch: &[Vec<f64>],
    cache: &ForwardCache,
    dlogits: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.values.len()];
    let k = spec.num_classes;
    let d = spec.input_dim();
    for ((x, bc), dl) in batch.iter().zip(&cache.hidden).zip(dlogits) {
        match (&spec.family, bc) {
            (ModelFamily::Logistic, BatchCache::Logistic) => {
                let wr = params.layout["w"].clone();
                let br = params.layout["b"].clone();
                for c in 0..k {
                    grad[br.start + c] += dl[c];
                    for j in 0..d {
                        grad[wr.start + c * d + j] += dl[c] * x[j];
                    }
                }
            }
            (ModelFamily::Mlp { hidden: hdim }, BatchCache::Mlp { pre }) => {
                let hdim = *hdim;
                let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                let w2 = params.slice("w2").to_vec();
                let w1r = params.layout["w1"].clone();
                let b1r = params.layout["b1"].clone();
                let w2r = params.layout["w2"].clone();
                let b2r = params.layout["b2"].clone();
                let mut dact = vec![0.0; hdim];
                for c in 0..k {
                    grad[b2r.start + c] += dl[c];
                    for j in 0..hdim {
                        grad[w2r.start + c * hdim + j] += dl[c] * act[j];
                        dact[j] += dl[c] * w2[c * hdim + j];
                    }
                }
                for j in 0..hdim {
                    if pre[j] > 0.0 {
                        grad[b1r.start + j] += dact[j];
                        for i in 0..d {
                            grad[w1r.start + j * d + i] += dact[j] * x[i];
                        }
                    }
                }
            }
            (
                ModelFamily::SmallConv { c1, c2 },
                BatchCache::SmallConv {
                    a1,
                    pooled,
                    a2,
                    feat,
                },
            ) => {
                smallconv_backward_one(spec, params, x, a1, pooled, a2, feat, dl, *c1, *c2, &mut grad);
            }
            _ => return Err(ClassifierError::Contract("cache/family mismatch".into())),
        }
    }
    Ok(grad)
}

#[allow(clippy::too_many_arguments)]
fn smallconv_backward_one(
    spec: &ModelSpec,
    params: &Parameters,
    x: &[f64],
    a1: &[f64],
    pooled: &[f64],
    a2: &[f64],
    feat: &[f64],
    dl: &[f64],
    c1: usize,
    c2: usize,
    grad: &mut [f64],
) {
    let (ci, h, w) = (spec.in_channels, spec.in_h, spec.in_w);
    let (hp, wp) = (h / 2, w / 2);
    let k = spec.num_classes;
    let area = (hp * wp) as f64;
    let fc_w = params.slice("fc_w").to_vec();
    let fcw_r = params.layout["fc_w"].clone();
    let fcb_r = params.layout["fc_b"].clone();
    // fc layer
    let mut dfeat = vec![0.0; c2];
    for c in 0..k {
        grad[fcb_r.start + c] += dl[c];
        for j in 0..c2 {
            grad[fcw_r.start + c * c2 + j] += dl[c] * feat[j];
            dfeat[j] += dl[c] * fc_w[c * c2 + j];
        }
    }
    // global mean pool + relu at a2
    let mut da2 = vec![0.0; c2 * hp * wp];
    for c in 0..c2 {
        let g = dfeat[c] / area;
        for i in 0..hp * wp {
            if a2[c * hp * wp + i] > 0.0 {
                da2[c * hp * wp + i] = g;
            }
        }
    }
    // conv2: weight/bias grads and input grad into pooled
    let w2r = params.layout["conv2_w"].clone();
    let b2r = params.layout["conv2_b"].clone();
    let conv2_w = params.slice("conv2_w").to_vec();
    let mut dw2 = vec![0.0; w2r.len()];
    let mut dpooled = vec![0.0; c1 * hp * wp];
    conv3x3_backward(pooled, c1, hp, wp, &conv2_w, c2, &da2, &mut dw2, &mut dpooled);
    for (i, g) in dw2.iter().enumerate() {
        grad[w2r.start + i] += g;
    }
    for o in 0..c2 {
        grad[b2r.start + o] += da2[o * hp * wp..(o + 1) * hp * wp].iter().sum::<f64>();
    }
    // unpool: each pooled cell spreads grad/4 to its 2x2 window
    let mut dr1 = vec![0.0; c1 * h * w];
    for c in 0..c1 {
        for y in 0..hp {
            for x_ in 0..wp {
                let g = dpooled[(c * hp + y) * wp + x_] / 4.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        dr1[(c * h + 2 * y + dy) * w + 2 * x_ + dx] += g;
                    }
                }
            }
        }
    }
    let mut da1 = vec![0.0; c1 * h * w];
    for i in 0..da1.len() {
        if a1[i] > 0.0 {
            da1[i] = dr1[i];
        }
    }
    let w1r = params.layout["conv1_w"].clone();
    let b1r = params.layout["conv1_b"].clone();
    let conv1_w = params.slice("conv1_w").to_vec();
    let mut dw1 = vec![0.0; w1r.len()];
    let mut dx = vec![0.0; ci * h * w];
    conv3x3_backward(x, ci, h, w, &conv1_w, c1, &da1, &mut dw1, &mut dx);
    for (i, g) in dw1.iter().enumerate() {
        grad[w1r.start + i] += g;
    }
    for o in 0..c1 {
        grad[b1r.start + o] += da1[o * h * w..(o + 1) * h * w].iter().sum::<f64>();
    }
}

/// Gradient of a 3×3 same-padding convolution: accumulates weight grads
/// into `dweights` and the input grad into `dinput`. Bias grads are the
/// per-channel sums of `dout`, handled by the caller.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    co: usize,
    dout: &[f64],
    dweights: &mut [f64],
    dinput: &mut [f64],
) {
    for o in 0..co {
        let wbase = o * ci * 9;
        for y in 0..h {
            for x in 0..w {
                let g = dout[(o * h + y) * w + x];
                if g == 0.0 {
                    continue;
                }
                for i in 0..ci {
                    let ibase = i * h * w;
                    let kbase = wbase + i * 9;
                    for ky in 0..3usize {
                        let yy = y as isize + ky as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let xx = x as isize + kx as isize - 1;
                            if xx < 0 || xx >= w as isize {
                                continue;
                            }
                            let idx = ibase + yy as usize * w + xx as usize;
                            dweights[kbase + ky * 3 + kx] += g * input[idx];
                            dinput[idx] += g * weights[kbase + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of log softmax_class(logits(x)) with respect to the input.
/// Supported for logistic and mlp; the guidance sampler differentiates a
/// noised mlp classifier through this path.
pub fn input_grad(
    spec: &ModelSpec,
    params: &Parameters,
    x: &[f64],
    class: usize,
) -> Result<Vec<f64>> {
    check_input(spec, x)?;
    let k = spec.num_classes;
    if class >= k {
        return Err(ClassifierError::Contract(format!(
            "class {class} out of range for k={k}"
        )));
    }
    let cache = forward(spec, params, std::slice::from_ref(&x.to_vec()))?;
    let probs = softmax(&cache.logits[0]);
    // d log p_class / d logit_c = [c == class] - p_c
    let dlog: Vec<f64> = (0..k)
        .map(|c| if c == class { 1.0 - probs[c] } else { -probs[c] })
        .collect();
    let d = spec.input_dim();
    match (&spec.family, &cache.hidden[0]) {
        (ModelFamily::Logistic, _) => {
            let w = params.slice("w");
            let mut dx = vec![0.0; d];
            for c in 0..k {
                for j in 0..d {
                    dx[j] += dlog[c] * w[c * d + j];
                }
            }
            Ok(dx)
        }
        (ModelFamily::Mlp { hidden: hdim }, BatchCache::Mlp { pre }) => {
            let hdim = *hdim;
            let w1 = params.slice("w1");
            let w2 = params.slice("w2");
            let mut dact = vec![0.0; hdim];
            for c in 0..k {
                for j in 0..hdim {
                    dact[j] += dlog[c] * w2[c * hdim + j];
                }
            }
            let mut dx = vec![0.0; d];
            for j in 0..hdim {
                if pre[j] > 0.0 {
                    for i in 0..d {
                        dx[i] += dact[j] * w1[j * d + i];
                    }
                }
            }
            Ok(dx)
        }
        _ => Err(ClassifierError::Unsupported(
            "input gradients are implemented for logistic and mlp families only",
        )),
    }
}

/// Penultimate activation: the mlp hidden layer or the smallconv pooled
/// feature vector. Logistic models have no penultimate layer.
pub fn extract_features(spec: &ModelSpec, params: &Parameters, x: &[f64]) -> Result<Vec<f64>> {
    check_input(spec, x)?;
    match spec.family {
        ModelFamily::Logistic => Err(ClassifierError::Unsupported(
            "logistic models have no penultimate layer",
        )),
        ModelFamily::Mlp { .. } => {
            let cache = forward(spec, params, std::slice::from_ref(&x.to_vec()))?;
            match &cache.hidden[0] {
                BatchCache::Mlp { pre } => Ok(pre.iter().map(|v| v.max(0.0)).collect()),
                _ => unreachable!(),
            }
        }
        ModelFamily::SmallConv { c1, c2 } => {
            let (_, cache) = smallconv_forward_one(spec, params, x, c1, c2);
            match cache {
                BatchCache::SmallConv { feat, .. } => Ok(feat),
                _ => unreachable!(),
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|v| v / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|v| (v - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Smoothed target weight for class `c` given the true `label`: the true
/// class keeps 1−ε and the remaining ε spreads over the other k−1 classes,
/// so ε=(k−1)/k yields the uniform target.
#[inline]
fn smoothed_target(c: usize, label: usize, k: usize, smoothing: f64) -> f64 {
    if c == label {
        1.0 - smoothing
    } else {
        smoothing / (k - 1) as f64
    }
}

/// Mean ε-smoothed cross-entropy in nats over a batch of logits.
pub fn cross_entropy_loss(logits: &[Vec<f64>], labels: &[usize], smoothing: f64) -> f64 {
    let k = logits[0].len();
    let mut total = 0.0;
    for (row, &label) in logits.iter().zip(labels) {
        let ls = log_softmax(row);
        for (c, lp) in ls.iter().enumerate() {
            total -= smoothed_target(c, label, k, smoothing) * lp;
        }
    }
    total / logits.len() as f64
}

/// Loss and exact parameter gradient of the mean smoothed cross-entropy.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &Parameters,
    batch: &[Vec<f64>],
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, Vec<f64>)> {
    let cache = forward(spec, params, batch)?;
    let loss = cross_entropy_loss(&cache.logits, labels, smoothing);
    let k = spec.num_classes;
    let n = batch.len() as f64;
    let dlogits: Vec<Vec<f64>> = cache
        .logits
        .iter()
        .zip(labels)
        .map(|(row, &label)| {
            let p = softmax(row);
            (0..k)
                .map(|c| (p[c] - smoothed_target(c, label, k, smoothing)) / n)
                .collect()
        })
        .collect();
    let grad = backward(spec, params, batch, &cache, &dlogits)?;
    Ok((loss, grad))
}
