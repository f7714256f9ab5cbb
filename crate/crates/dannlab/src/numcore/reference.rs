//! Direct-loop `f64` forward pass of a [`LayerStack`], used as the
//! finite-difference oracle in gradient checks.
//!
//! It shares no code with the `f32` layers: convolution is the textbook
//! sliding sum, not im2col plus GEMM.

use super::layers::LayerSpec;
use super::stack::LayerStack;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct RefLayer {
    spec: LayerSpec,
    input: Vec<usize>,
    output: Vec<usize>,
    params: Vec<Vec<f64>>,
}

/// An `f64` copy of a stack's layers and parameters.
#[derive(Debug, Clone)]
pub struct ReferenceStack {
    layers: Vec<RefLayer>,
}

impl ReferenceStack {
    pub fn from_stack(stack: &LayerStack) -> Self {
        let layers = stack
            .layers()
            .iter()
            .map(|l| RefLayer {
                spec: l.spec().clone(),
                input: l.input_shape().to_vec(),
                output: l.output_shape().to_vec(),
                params: l
                    .params()
                    .iter()
                    .map(|p| p.value.data().iter().map(|&v| v as f64).collect())
                    .collect(),
            })
            .collect();
        ReferenceStack { layers }
    }

    /// Parameter tensors in the same order as [`LayerStack::params`].
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    /// Forward pass of a batch `[N, ..input_shape]`; returns the flat output.
    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = (0..batch)
                .flat_map(|n| {
                    let size: usize = l.input.iter().product();
                    l.run(&cur[n * size..(n + 1) * size])
                })
                .collect();
        }
        cur
    }
}

impl RefLayer {
    fn run(&self, x: &[f64]) -> Vec<f64> {
        match &self.spec {
            LayerSpec::Conv2d { kernel: k, .. } => {
                let (c, h, w) = (self.input[0], self.input[1], self.input[2]);
                let (oc, oh, ow) = (self.output[0], self.output[1], self.output[2]);
                let (wt, b) = (&self.params[0], &self.params[1]);
                let mut y = vec![0.0; oc * oh * ow];
                for o in 0..oc {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = b[o];
                            for ch in 0..c {
                                for ki in 0..*k {
                                    for kj in 0..*k {
                                        acc += wt[((o * c + ch) * k + ki) * k + kj] * x[(ch * h + i + ki) * w + j + kj];
                                    }
                                }
                            }
                            y[(o * oh + i) * ow + j] = acc;
                        }
                    }
                }
                y
            }
            LayerSpec::MaxPool2d { size: s } => {
                let (h, w) = (self.input[1], self.input[2]);
                let (c, oh, ow) = (self.output[0], self.output[1], self.output[2]);
                let mut y = vec![f64::NEG_INFINITY; c * oh * ow];
                for ch in 0..c {
                    for i in 0..oh * s {
                        for j in 0..ow * s {
                            let o = &mut y[(ch * oh + i / s) * ow + j / s];
                            *o = o.max(x[(ch * h + i) * w + j]);
                        }
                    }
                }
                y
            }
            LayerSpec::Dense { outputs } => {
                let (wt, b) = (&self.params[0], &self.params[1]);
                (0..*outputs)
                    .map(|o| b[o] + x.iter().enumerate().map(|(i, &v)| wt[o * x.len() + i] * v).sum::<f64>())
                    .collect()
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::Softmax => {
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
            LayerSpec::Flatten | LayerSpec::GradReversal { .. } => x.to_vec(),
        }
    }
}

/// Mean softmax cross-entropy of `[N, C]` logits, in `f64`.
pub fn reference_cross_entropy(logits: &[f64], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || !logits.len().is_multiple_of(labels.len()) {
        return Err(Error::input(format!(
            "{} logits do not split into {} rows",
            logits.len(),
            labels.len()
        )));
    }
    let classes = logits.len() / labels.len();
    let mut total = 0.0;
    for (row, &label) in logits.chunks(classes).zip(labels) {
        if label >= classes {
            return Err(Error::input(format!("label {label} out of range for {classes} classes")));
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln() + m;
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

pub fn to_f64(x: &Tensor) -> Vec<f64> {
    x.data().iter().map(|&v| v as f64).collect()
}
