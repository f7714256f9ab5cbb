use serde::{Deserialize, Serialize};

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Declarative description of one layer. Shapes are per sample; tensors fed
/// through a layer carry an extra leading batch axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) stride-1 convolution over `[C, H, W]` input.
    Conv2d { out_channels: usize, kernel: usize },
    /// Non-overlapping max pooling; trailing rows/columns that do not fill a
    /// window are dropped.
    MaxPool2d { size: usize },
    Dense { outputs: usize },
    Relu,
    Softmax,
    Flatten,
    /// Identity forward, `-lambda * grad` backward.
    GradReversal { lambda: f32 },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Flatten => "flatten",
            LayerSpec::GradReversal { .. } => "grad_reversal",
        }
    }
}

/// A trainable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
}

impl Param {
    fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(shape.clone()),
            velocity: Tensor::zeros(shape),
        }
    }

    /// `v <- momentum * v + grad; value <- value - lr * v; grad <- 0`.
    pub fn sgd_step(&mut self, lr: f32, momentum: f32) {
        let value = self.value.data_mut();
        let grad = self.grad.data_mut();
        let velocity = self.velocity.data_mut();
        for ((p, g), v) in value.iter_mut().zip(grad.iter_mut()).zip(velocity.iter_mut()) {
            *v = momentum * *v + *g;
            *p -= lr * *v;
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Empty,
    Input(Tensor),
    Output(Tensor),
    Columns { cols: Vec<f32>, batch: usize },
    Argmax { index: Vec<usize>, batch: usize },
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    params: Vec<Param>,
    cache: Cache,
}

impl Layer {
    /// Resolves the output shape for `input_shape` and initializes weights
    /// He-uniform in `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, biases in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub(crate) fn new(spec: LayerSpec, input_shape: &[usize], rng: &mut Rng) -> Result<Self> {
        let err = |msg: String| Error::config(spec.name(), msg);
        let (output_shape, params) = match &spec {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
            } => {
                let &[c, h, w] = input_shape else {
                    return Err(err(format!("expects [C, H, W] input, got {input_shape:?}")));
                };
                if *kernel == 0 || *kernel > h || *kernel > w {
                    return Err(err(format!("kernel {kernel} does not fit {h}x{w} input")));
                }
                if *out_channels == 0 {
                    return Err(err("needs at least one output channel".into()));
                }
                let fan_in = c * kernel * kernel;
                let weight = uniform_init(vec![*out_channels, fan_in], he_bound(fan_in), rng);
                let bias = uniform_init(vec![*out_channels], bias_bound(fan_in), rng);
                (
                    vec![*out_channels, h - kernel + 1, w - kernel + 1],
                    vec![Param::new(weight), Param::new(bias)],
                )
            }
            LayerSpec::MaxPool2d { size } => {
                let &[c, h, w] = input_shape else {
                    return Err(err(format!("expects [C, H, W] input, got {input_shape:?}")));
                };
                if *size == 0 || h < *size || w < *size {
                    return Err(err(format!("pool size {size} does not fit {h}x{w} input")));
                }
                (vec![c, h / size, w / size], vec![])
            }
            LayerSpec::Dense { outputs } => {
                let &[inputs] = input_shape else {
                    return Err(err(format!(
                        "expects flat input, got {input_shape:?} (add a flatten layer)"
                    )));
                };
                if *outputs == 0 {
                    return Err(err("needs at least one output".into()));
                }
                let weight = uniform_init(vec![*outputs, inputs], he_bound(inputs), rng);
                let bias = uniform_init(vec![*outputs], bias_bound(inputs), rng);
                (vec![*outputs], vec![Param::new(weight), Param::new(bias)])
            }
            LayerSpec::Flatten => (vec![input_shape.iter().product()], vec![]),
            LayerSpec::GradReversal { lambda } => {
                if lambda.is_nan() || *lambda < 0.0 {
                    return Err(err(format!("lambda must be non-negative, got {lambda}")));
                }
                (input_shape.to_vec(), vec![])
            }
            LayerSpec::Relu | LayerSpec::Softmax => (input_shape.to_vec(), vec![]),
        };
        Ok(Layer {
            spec,
            input_shape: input_shape.to_vec(),
            output_shape,
            params,
            cache: Cache::Empty,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub(crate) fn set_lambda(&mut self, value: f32) {
        if let LayerSpec::GradReversal { lambda } = &mut self.spec {
            *lambda = value;
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = Cache::Empty;
    }

    /// Runs the layer on a batch `[N, ..input_shape]`. The returned cache is
    /// what `backward` needs.
    fn run(&self, x: &Tensor, keep: bool) -> (Tensor, Cache) {
        let batch = x.shape()[0];
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&self.output_shape);
        match &self.spec {
            LayerSpec::Conv2d { kernel, .. } => {
                let cols = im2col(x.data(), batch, &self.input_shape, *kernel);
                let out = conv_forward(
                    &cols,
                    batch,
                    &self.output_shape,
                    self.params[0].value.data(),
                    self.params[1].value.data(),
                );
                let cache = if keep {
                    Cache::Columns { cols, batch }
                } else {
                    Cache::Empty
                };
                (Tensor::new(out_shape, out).expect("conv output shape"), cache)
            }
            LayerSpec::MaxPool2d { size } => {
                let (out, index) = maxpool_forward(x.data(), batch, &self.input_shape, *size);
                let cache = if keep {
                    Cache::Argmax { index, batch }
                } else {
                    Cache::Empty
                };
                (Tensor::new(out_shape, out).expect("pool output shape"), cache)
            }
            LayerSpec::Dense { outputs } => {
                let inputs = self.input_shape[0];
                let w = self.params[0].value.data();
                let b = self.params[1].value.data();
                let mut out = Vec::with_capacity(batch * outputs);
                for _ in 0..batch {
                    out.extend_from_slice(b);
                }
                // out[N, O] += x[N, I] * W^T
                gemm(
                    batch,
                    inputs,
                    *outputs,
                    x.data(),
                    (inputs as isize, 1),
                    w,
                    (1, inputs as isize),
                    &mut out,
                    (*outputs as isize, 1),
                    1.0,
                );
                let cache = if keep {
                    Cache::Input(x.clone())
                } else {
                    Cache::Empty
                };
                (Tensor::new(out_shape, out).expect("dense output shape"), cache)
            }
            LayerSpec::Relu => {
                let out = x.map(|v| v.max(0.0));
                let cache = if keep {
                    Cache::Output(out.clone())
                } else {
                    Cache::Empty
                };
                (out, cache)
            }
            LayerSpec::Softmax => {
                let width: usize = self.input_shape.iter().product();
                let mut out = x.data().to_vec();
                for row in out.chunks_mut(width.max(1)) {
                    softmax_in_place(row);
                }
                let out = Tensor::new(out_shape, out).expect("softmax output shape");
                let cache = if keep {
                    Cache::Output(out.clone())
                } else {
                    Cache::Empty
                };
                (out, cache)
            }
            LayerSpec::Flatten => (
                x.clone().reshape(out_shape).expect("flatten output shape"),
                Cache::Empty,
            ),
            LayerSpec::GradReversal { .. } => (x.clone(), Cache::Empty),
        }
    }

    pub(crate) fn forward(&mut self, x: &Tensor) -> Tensor {
        let (out, cache) = self.run(x, true);
        self.cache = cache;
        out
    }

    pub(crate) fn infer(&self, x: &Tensor) -> Tensor {
        self.run(x, false).0
    }

    /// Accumulates parameter gradients and, when `need_input` is set, returns
    /// the gradient with respect to the layer input.
    pub(crate) fn backward(
        &mut self,
        grad: &Tensor,
        need_input: bool,
        location: &str,
    ) -> Result<Option<Tensor>> {
        let batch = grad.shape()[0];
        let mut in_shape = vec![batch];
        in_shape.extend_from_slice(&self.input_shape);
        let missing = || Error::config(location, "backward called without a cached forward pass");
        match (&self.spec, &self.cache) {
            (LayerSpec::Conv2d { kernel, .. }, Cache::Columns { cols, batch: cached }) => {
                if *cached != batch {
                    return Err(missing());
                }
                let (weight, rest) = self.params.split_at_mut(1);
                let dx = conv_backward(
                    cols,
                    batch,
                    &self.input_shape,
                    &self.output_shape,
                    *kernel,
                    grad.data(),
                    weight[0].value.data(),
                    weight[0].grad.data_mut(),
                    rest[0].grad.data_mut(),
                    need_input,
                );
                Ok(dx.map(|d| Tensor::new(in_shape, d).expect("conv grad shape")))
            }
            (LayerSpec::MaxPool2d { .. }, Cache::Argmax { index, batch: cached }) => {
                if *cached != batch {
                    return Err(missing());
                }
                if !need_input {
                    return Ok(None);
                }
                let mut dx = vec![0.0f32; in_shape.iter().product()];
                for (&i, &g) in index.iter().zip(grad.data()) {
                    dx[i] += g;
                }
                Ok(Some(Tensor::new(in_shape, dx).expect("pool grad shape")))
            }
            (LayerSpec::Dense { outputs }, Cache::Input(x)) => {
                if x.shape()[0] != batch {
                    return Err(missing());
                }
                let inputs = self.input_shape[0];
                let outputs = *outputs;
                let (weight, bias) = self.params.split_at_mut(1);
                // dW[O, I] += dY^T[O, N] * X[N, I]
                gemm(
                    outputs,
                    batch,
                    inputs,
                    grad.data(),
                    (1, outputs as isize),
                    x.data(),
                    (inputs as isize, 1),
                    weight[0].grad.data_mut(),
                    (inputs as isize, 1),
                    1.0,
                );
                let db = bias[0].grad.data_mut();
                for row in grad.data().chunks(outputs) {
                    for (b, g) in db.iter_mut().zip(row) {
                        *b += g;
                    }
                }
                if !need_input {
                    return Ok(None);
                }
                // dX[N, I] = dY[N, O] * W[O, I]
                let mut dx = vec![0.0f32; batch * inputs];
                gemm(
                    batch,
                    outputs,
                    inputs,
                    grad.data(),
                    (outputs as isize, 1),
                    weight[0].value.data(),
                    (inputs as isize, 1),
                    &mut dx,
                    (inputs as isize, 1),
                    0.0,
                );
                Ok(Some(Tensor::new(in_shape, dx).expect("dense grad shape")))
            }
            (LayerSpec::Relu, Cache::Output(y)) => {
                if y.shape()[0] != batch {
                    return Err(missing());
                }
                let dx = grad
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                    .collect();
                Ok(Some(Tensor::new(in_shape, dx).expect("relu grad shape")))
            }
            (LayerSpec::Softmax, Cache::Output(y)) => {
                if y.shape()[0] != batch {
                    return Err(missing());
                }
                let width: usize = self.input_shape.iter().product();
                let mut dx = Vec::with_capacity(grad.len());
                for (g, y) in grad.data().chunks(width).zip(y.data().chunks(width)) {
                    let dot: f32 = g.iter().zip(y).map(|(g, y)| g * y).sum();
                    dx.extend(g.iter().zip(y).map(|(g, y)| y * (g - dot)));
                }
                Ok(Some(Tensor::new(in_shape, dx).expect("softmax grad shape")))
            }
            (LayerSpec::Flatten, _) => Ok(Some(
                grad.clone().reshape(in_shape).expect("flatten grad shape"),
            )),
            (LayerSpec::GradReversal { lambda }, _) => Ok(Some(
                grl_backward(grad, *lambda).reshape(in_shape).expect("grl shape"),
            )),
            _ => Err(missing()),
        }
    }
}

/// Backward pass of the gradient reversal layer: `-lambda * upstream`.
pub fn grl_backward(upstream: &Tensor, lambda: f32) -> Tensor {
    upstream.map(|g| -lambda * g)
}

/// Forward pass of the gradient reversal layer (identity).
pub fn grl_forward(x: &Tensor) -> Tensor {
    x.clone()
}

fn he_bound(fan_in: usize) -> f32 {
    (6.0 / fan_in as f32).sqrt()
}

fn bias_bound(fan_in: usize) -> f32 {
    1.0 / (fan_in as f32).sqrt()
}

fn uniform_init(shape: Vec<usize>, bound: f32, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
    Tensor::new(shape, data).expect("init shape")
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `C = A * B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    c: &mut [f32],
    (rsc, csc): (isize, isize),
    beta: f32,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: strides describe matrices that lie inside the given slices,
    // checked by the debug assertion above for the contiguous layouts used here.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Column matrix `[C*k*k, N*OH*OW]` for a valid stride-1 convolution.
fn im2col(x: &[f32], batch: usize, input: &[usize], k: usize) -> Vec<f32> {
    let (c, h, w) = (input[0], input[1], input[2]);
    let (oh, ow) = (h - k + 1, w - k + 1);
    let positions = oh * ow;
    let width = batch * positions;
    let mut cols = vec![0.0f32; c * k * k * width];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst_row = &mut cols[row * width..(row + 1) * width];
                for n in 0..batch {
                    let plane = &x[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                    let dst = &mut dst_row[n * positions..(n + 1) * positions];
                    for i in 0..oh {
                        let src = &plane[(i + ki) * w + kj..(i + ki) * w + kj + ow];
                        dst[i * ow..(i + 1) * ow].copy_from_slice(src);
                    }
                }
            }
        }
    }
    cols
}

fn conv_forward(
    cols: &[f32],
    batch: usize,
    output: &[usize],
    weight: &[f32],
    bias: &[f32],
) -> Vec<f32> {
    let out_c = output[0];
    let positions = output[1] * output[2];
    let width = batch * positions;
    let fan_in = weight.len() / out_c;
    let mut mat = vec![0.0f32; out_c * width];
    gemm(
        out_c,
        fan_in,
        width,
        weight,
        (fan_in as isize, 1),
        cols,
        (width as isize, 1),
        &mut mat,
        (width as isize, 1),
        0.0,
    );
    let mut out = vec![0.0f32; out_c * width];
    for o in 0..out_c {
        let b = bias[o];
        for n in 0..batch {
            let src = &mat[o * width + n * positions..o * width + (n + 1) * positions];
            let dst = &mut out[(n * out_c + o) * positions..(n * out_c + o + 1) * positions];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    cols: &[f32],
    batch: usize,
    input: &[usize],
    output: &[usize],
    k: usize,
    grad: &[f32],
    weight: &[f32],
    weight_grad: &mut [f32],
    bias_grad: &mut [f32],
    need_input: bool,
) -> Option<Vec<f32>> {
    let out_c = output[0];
    let (oh, ow) = (output[1], output[2]);
    let positions = oh * ow;
    let width = batch * positions;
    let fan_in = weight.len() / out_c;

    // [N, O, P] -> [O, N*P]
    let mut g = vec![0.0f32; out_c * width];
    for n in 0..batch {
        for o in 0..out_c {
            let src = &grad[(n * out_c + o) * positions..(n * out_c + o + 1) * positions];
            g[o * width + n * positions..o * width + (n + 1) * positions].copy_from_slice(src);
        }
    }
    for o in 0..out_c {
        bias_grad[o] += g[o * width..(o + 1) * width].iter().sum::<f32>();
    }
    // dW[O, K] += G[O, NP] * cols^T[NP, K]
    gemm(
        out_c,
        width,
        fan_in,
        &g,
        (width as isize, 1),
        cols,
        (1, width as isize),
        weight_grad,
        (fan_in as isize, 1),
        1.0,
    );
    if !need_input {
        return None;
    }
    // dcols[K, NP] = W^T[K, O] * G[O, NP]
    let mut dcols = vec![0.0f32; fan_in * width];
    gemm(
        fan_in,
        out_c,
        width,
        weight,
        (1, fan_in as isize),
        &g,
        (width as isize, 1),
        &mut dcols,
        (width as isize, 1),
        0.0,
    );
    let (c, h, w) = (input[0], input[1], input[2]);
    let mut dx = vec![0.0f32; batch * c * h * w];
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src_row = &dcols[row * width..(row + 1) * width];
                for n in 0..batch {
                    let plane = &mut dx[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
                    let src = &src_row[n * positions..(n + 1) * positions];
                    for i in 0..oh {
                        let dst = &mut plane[(i + ki) * w + kj..(i + ki) * w + kj + ow];
                        for (d, s) in dst.iter_mut().zip(&src[i * ow..(i + 1) * ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    Some(dx)
}

fn maxpool_forward(x: &[f32], batch: usize, input: &[usize], size: usize) -> (Vec<f32>, Vec<usize>) {
    let (c, h, w) = (input[0], input[1], input[2]);
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    let mut index = Vec::with_capacity(batch * c * oh * ow);
    for plane in 0..batch * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * size * w + j * size;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (i * size + di) * w + j * size + dj;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                index.push(best);
            }
        }
    }
    (out, index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grl_examples() {
        let g = Tensor::from_vec(vec![1.0, -2.0]);
        assert_eq!(grl_backward(&g, 1.0).data(), &[-1.0, 2.0]);
        let g = Tensor::from_vec(vec![3.5]);
        assert_eq!(grl_backward(&g, 0.0).data(), &[0.0]);
        let g = Tensor::from_vec(vec![0.5, 0.25]);
        assert_eq!(grl_backward(&g, 2.0).data(), &[-1.0, -0.5]);
    }

    #[test]
    fn sgd_step_examples() {
        let mut p = Param::new(Tensor::from_vec(vec![1.0]));
        p.grad.data_mut()[0] = 0.5;
        p.sgd_step(0.1, 0.0);
        assert!((p.value.data()[0] - 0.95).abs() < 1e-7);
        assert_eq!(p.grad.data()[0], 0.0);

        p.sgd_step(0.1, 0.0);
        assert!((p.value.data()[0] - 0.95).abs() < 1e-7);

        // v1 = 1, p1 = -0.1; v2 = 0.9 + 1 = 1.9, p2 = -0.1 - 0.19 = -0.29
        let mut p = Param::new(Tensor::from_vec(vec![0.0]));
        p.grad.data_mut()[0] = 1.0;
        p.sgd_step(0.1, 0.9);
        assert!((p.value.data()[0] + 0.1).abs() < 1e-7);
        p.grad.data_mut()[0] = 1.0;
        p.sgd_step(0.1, 0.9);
        assert!((p.value.data()[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn im2col_matches_direct_convolution() {
        let mut rng = Rng::seed(5);
        let input = [2, 5, 6];
        let layer = Layer::new(
            LayerSpec::Conv2d {
                out_channels: 3,
                kernel: 3,
            },
            &input,
            &mut rng,
        )
        .unwrap();
        let x: Vec<f32> = (0..2 * 2 * 5 * 6).map(|_| rng.uniform()).collect();
        let x = Tensor::new(vec![2, 2, 5, 6], x).unwrap();
        let y = layer.infer(&x);
        assert_eq!(y.shape(), &[2, 3, 3, 4]);
        let w = layer.params()[0].value.data();
        let b = layer.params()[1].value.data();
        for n in 0..2 {
            for o in 0..3 {
                for i in 0..3 {
                    for j in 0..4 {
                        let mut acc = b[o];
                        for c in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let xv = x.data()[((n * 2 + c) * 5 + i + ki) * 6 + j + kj];
                                    acc += w[o * 18 + (c * 3 + ki) * 3 + kj] * xv;
                                }
                            }
                        }
                        let got = y.data()[((n * 3 + o) * 3 + i) * 4 + j];
                        assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut rng = Rng::seed(0);
        let mut layer = Layer::new(LayerSpec::MaxPool2d { size: 2 }, &[1, 2, 2], &mut rng).unwrap();
        let x = Tensor::new(vec![1, 1, 2, 2], vec![0.1, 0.7, 0.3, 0.2]).unwrap();
        let y = layer.forward(&x);
        assert_eq!(y.data(), &[0.7]);
        let g = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let dx = layer.backward(&g, true, "pool").unwrap().unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
