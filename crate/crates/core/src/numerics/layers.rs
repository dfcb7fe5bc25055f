//! Forward and backward kernels for the five layer kinds.
//!
//! Backward kernels accumulate (`+=`) into caller-provided gradient buffers so
//! a mini-batch can sum per-sample gradients without reallocating.

use std::fmt;
use std::str::FromStr;

use super::tensor::{as_chw, Tensor};
use crate::{Error, Result};

/// One layer of a sequential chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Fully connected layer; flattens its input.
    Dense {
        outputs: usize,
    },
    /// Valid cross-correlation with stride 1 and a `rows x cols` kernel.
    Conv {
        rows: usize,
        cols: usize,
        channels: usize,
    },
    /// Max over 1x2 regions with stride 2; a trailing odd column is dropped
    /// and a width-1 input passes through.
    MaxPool,
    Relu,
    /// Terminal softmax + cross-entropy head. The chain's forward output is
    /// the logits feeding it.
    SoftmaxXent,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv { .. })
    }

    pub fn is_pool(&self) -> bool {
        matches!(self, LayerSpec::MaxPool)
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { outputs } => write!(f, "dense {outputs}"),
            LayerSpec::Conv { rows, cols, channels } => write!(f, "conv {rows} {cols} {channels}"),
            LayerSpec::MaxPool => write!(f, "maxpool 1 2"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::SoftmaxXent => write!(f, "softmax-xent"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            let v: usize = parts
                .get(i)
                .ok_or_else(|| Error::Format(format!("layer `{s}`: missing field {i}")))?
                .parse()
                .map_err(|_| Error::Format(format!("layer `{s}`: bad integer")))?;
            if v == 0 {
                return Err(Error::Format(format!("layer `{s}`: extents must be positive")));
            }
            Ok(v)
        };
        let spec = match parts.first().copied() {
            Some("dense") if parts.len() == 2 => LayerSpec::Dense { outputs: num(1)? },
            Some("conv") if parts.len() == 4 => LayerSpec::Conv {
                rows: num(1)?,
                cols: num(2)?,
                channels: num(3)?,
            },
            Some("maxpool") if parts.len() == 1 || parts[1..] == ["1", "2"] => LayerSpec::MaxPool,
            Some("relu") if parts.len() == 1 => LayerSpec::Relu,
            Some("softmax-xent") if parts.len() == 1 => LayerSpec::SoftmaxXent,
            _ => return Err(Error::Format(format!("unrecognized layer `{s}`"))),
        };
        Ok(spec)
    }
}

/// Parses a chain written as layer descriptors separated by `,` or newlines.
pub fn parse_chain(text: &str) -> Result<Vec<LayerSpec>> {
    text.split([',', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_chain(chain: &[LayerSpec]) -> String {
    chain.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// `y = W x + b` with `W` stored as `(outputs, inputs)`.
pub fn dense_forward(x: &[f64], weights: &Tensor, bias: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = match *weights.shape() {
        [r, c] => (r, c),
        _ => return Err(Error::Shape("dense weights must be rank 2".into())),
    };
    if cols != x.len() || rows != bias.len() {
        return Err(Error::Shape(format!(
            "dense {}x{} applied to input {} with bias {}",
            rows,
            cols,
            x.len(),
            bias.len()
        )));
    }
    let w = weights.data();
    Ok((0..rows)
        .map(|o| {
            let row = &w[o * cols..(o + 1) * cols];
            bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect())
}

pub fn dense_backward(
    x: &[f64],
    weights: &Tensor,
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
) {
    let cols = x.len();
    let w = weights.data();
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        if g == 0.0 {
            continue;
        }
        let gw = &mut grad_weights[o * cols..(o + 1) * cols];
        for (dst, &xi) in gw.iter_mut().zip(x) {
            *dst += g * xi;
        }
    }
    if let Some(gx) = grad_input {
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * cols..(o + 1) * cols];
            for (dst, &wv) in gx.iter_mut().zip(row) {
                *dst += g * wv;
            }
        }
    }
}

fn conv_dims(input_shape: &[usize], kernels: &Tensor) -> Result<[usize; 7]> {
    let (c, h, w) = as_chw(input_shape)?;
    let (co, ci, kh, kw) = match *kernels.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(Error::Shape("conv kernels must be rank 4".into())),
    };
    if ci != c {
        return Err(Error::Shape(format!("conv expects {ci} input channels, got {c}")));
    }
    if kh > h || kw > w {
        return Err(Error::Shape(format!("conv kernel {kh}x{kw} larger than input {h}x{w}")));
    }
    Ok([co, ci, kh, kw, h, w, 0])
}

/// Valid cross-correlation, stride 1, every input channel feeding every
/// output channel. Kernels are `(out_channels, in_channels, rows, cols)`.
pub fn conv_forward(input: &Tensor, kernels: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let [co, ci, kh, kw, h, w, _] = conv_dims(input.shape(), kernels)?;
    if bias.len() != co {
        return Err(Error::Shape(format!(
            "conv bias has {} entries for {co} channels",
            bias.len()
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias[o]);
        for c in 0..ci {
            for i in 0..kh {
                for j in 0..kw {
                    let wv = k[((o * ci + c) * kh + i) * kw + j];
                    for r in 0..oh {
                        let src = &x[(c * h + r + i) * w + j..][..ow];
                        let dst = &mut plane[r * ow..(r + 1) * ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![co, oh, ow], out)
}

pub fn conv_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &[f64],
    grad_input: Option<&mut [f64]>,
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
) -> Result<()> {
    let [co, ci, kh, kw, h, w, _] = conv_dims(input.shape(), kernels)?;
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    if grad_out.len() != co * oh * ow {
        return Err(Error::Shape("conv upstream gradient has wrong length".into()));
    }
    let x = input.data();
    let k = kernels.data();
    for o in 0..co {
        let g = &grad_out[o * oh * ow..(o + 1) * oh * ow];
        grad_bias[o] += g.iter().sum::<f64>();
        for c in 0..ci {
            for i in 0..kh {
                for j in 0..kw {
                    let mut acc = 0.0;
                    for r in 0..oh {
                        let src = &x[(c * h + r + i) * w + j..][..ow];
                        acc += g[r * ow..(r + 1) * ow].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_kernels[((o * ci + c) * kh + i) * kw + j] += acc;
                }
            }
        }
    }
    if let Some(gx) = grad_input {
        for o in 0..co {
            let g = &grad_out[o * oh * ow..(o + 1) * oh * ow];
            for c in 0..ci {
                for i in 0..kh {
                    for j in 0..kw {
                        let wv = k[((o * ci + c) * kh + i) * kw + j];
                        for r in 0..oh {
                            let dst = &mut gx[(c * h + r + i) * w + j..][..ow];
                            for (d, s) in dst.iter_mut().zip(&g[r * ow..(r + 1) * ow]) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn pooled_width(w: usize) -> usize {
    if w == 1 {
        1
    } else {
        w / 2
    }
}

/// 1x2 max pooling. Returns the pooled tensor and, per output entry, the
/// flat input index of the winning element (left element on ties).
pub fn maxpool_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = as_chw(input.shape())?;
    let pw = pooled_width(w);
    let x = input.data();
    let mut out = Vec::with_capacity(c * h * pw);
    let mut idx = Vec::with_capacity(c * h * pw);
    for row in 0..c * h {
        let base = row * w;
        for p in 0..pw {
            let a = base + 2 * p;
            let best = if w == 1 || x[a] >= x[a + 1] { a } else { a + 1 };
            out.push(x[best]);
            idx.push(best);
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = pw;
    Ok((Tensor::new(shape, out)?, idx))
}

pub fn maxpool_backward(grad_out: &[f64], argmax: &[usize], grad_input: &mut [f64]) {
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad_input[i] += g;
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = relu(*v));
    out
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(input: &[f64], grad_out: &[f64], grad_input: &mut [f64]) {
    for ((d, &x), &g) in grad_input.iter_mut().zip(input).zip(grad_out) {
        if x > 0.0 {
            *d += g;
        }
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of the softmax of `logits` against `label`, with its
/// gradient `p - onehot(label)`.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Index(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_norm = max + total.ln();
    let loss = log_norm - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|z| (z - log_norm).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
