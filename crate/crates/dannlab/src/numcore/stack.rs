use super::layers::{Layer, LayerSpec, Param};
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// An ordered sequence of layers with a fixed per-sample input shape.
#[derive(Debug, Clone)]
pub struct LayerStack {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl LayerStack {
    pub fn new(input_shape: Vec<usize>) -> Self {
        LayerStack {
            input_shape,
            layers: Vec::new(),
        }
    }

    /// Builds a stack from specs, drawing initial weights from `rng` in
    /// declaration order.
    pub fn build(input_shape: Vec<usize>, specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let mut stack = LayerStack::new(input_shape);
        for spec in specs {
            stack.push(spec.clone(), rng)?;
        }
        Ok(stack)
    }

    pub fn push(&mut self, spec: LayerSpec, rng: &mut Rng) -> Result<()> {
        let index = self.layers.len();
        let name = spec.name();
        let layer = Layer::new(spec, self.output_shape(), rng).map_err(|e| match e {
            Error::Config { message, .. } => {
                Error::config(format!("layer {index} ({name})"), message)
            }
            other => other,
        })?;
        self.layers.push(layer);
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .map(Layer::output_shape)
            .unwrap_or(&self.input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        if shape.len() == self.input_shape.len() + 1 && shape[1..] == self.input_shape[..] {
            return Ok(());
        }
        let location = match self.layers.first() {
            Some(l) => format!("layer 0 ({})", l.spec().name()),
            None => "stack input".to_string(),
        };
        Err(Error::config(
            location,
            format!(
                "expected batch of {:?}, got tensor of shape {shape:?}",
                self.input_shape
            ),
        ))
    }

    /// Forward pass over a batch `[N, ..input_shape]`, caching what the
    /// backward pass needs.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur);
        }
        Ok(cur)
    }

    /// Forward pass without caching; usable on a shared snapshot.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.infer(&cur);
        }
        Ok(cur)
    }

    /// Backpropagates `grad` (shaped like the last forward output),
    /// accumulating parameter gradients. Returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        Ok(self
            .backward_impl(grad, true)?
            .expect("input gradient requested"))
    }

    /// Like [`LayerStack::backward`] but skips the gradient with respect to
    /// the stack input.
    pub fn backward_params(&mut self, grad: &Tensor) -> Result<()> {
        self.backward_impl(grad, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad: &Tensor, need_input: bool) -> Result<Option<Tensor>> {
        let mut expected = vec![grad.shape().first().copied().unwrap_or(0)];
        expected.extend_from_slice(self.output_shape());
        if grad.shape() != expected.as_slice() {
            return Err(Error::config(
                "stack output",
                format!("gradient shape {:?}, expected {expected:?}", grad.shape()),
            ));
        }
        let mut cur = grad.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            let location = format!("layer {i} ({})", layer.spec().name());
            let need = need_input || i > 0;
            match layer.backward(&cur, need, &location)? {
                Some(g) => cur = g,
                None => {
                    debug_assert!(i == 0 || n == 0);
                    return Ok(None);
                }
            }
        }
        Ok(Some(cur))
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Momentum SGD on every parameter, then clears gradients.
    pub fn sgd_step(&mut self, lr: f32, momentum: f32) {
        for p in self.params_mut() {
            p.sgd_step(lr, momentum);
        }
    }

    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }
}
