use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{LayerSpec, LayerStack, Rng, Tensor};

/// Layer sizes of the default architecture. The feature extractor is two
/// conv/ReLU/max-pool stages followed by a flatten; both heads are ReLU MLPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub pool: usize,
    pub label_hidden: Vec<usize>,
    pub domain_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv1_channels: 32,
            conv2_channels: 48,
            kernel: 5,
            pool: 2,
            label_hidden: vec![100, 100],
            domain_hidden: vec![100],
        }
    }
}

impl ModelConfig {
    fn extractor_specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                out_channels: self.conv1_channels,
                kernel: self.kernel,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: self.pool },
            LayerSpec::Conv2d {
                out_channels: self.conv2_channels,
                kernel: self.kernel,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: self.pool },
            LayerSpec::Flatten,
        ]
    }

    fn head_specs(hidden: &[usize], outputs: usize) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(2 * hidden.len() + 1);
        for &h in hidden {
            specs.push(LayerSpec::Dense { outputs: h });
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Dense { outputs });
        specs
    }
}

/// Feature extractor, label predictor, and a domain classifier attached to
/// the extractor through a gradient reversal layer.
#[derive(Debug, Clone)]
pub struct DannModel {
    pub(crate) config: ModelConfig,
    pub(crate) input_shape: [usize; 3],
    pub(crate) num_classes: usize,
    pub(crate) extractor: LayerStack,
    pub(crate) label_head: LayerStack,
    pub(crate) domain_head: LayerStack,
}

impl DannModel {
    /// Builds the model for `[H, W, C]` inputs. Weights are drawn from `rng`
    /// in the order extractor, label head, domain head.
    pub fn build(
        config: &ModelConfig,
        input_shape: [usize; 3],
        num_classes: usize,
        lambda: f32,
        rng: &mut Rng,
    ) -> Result<Self> {
        let [h, w, c] = input_shape;
        if h < 8 || w < 8 || c == 0 {
            return Err(Error::config(
                "model input",
                format!("input must be at least 8x8 with one channel, got {h}x{w}x{c}"),
            ));
        }
        if num_classes < 2 {
            return Err(Error::config(
                "model output",
                format!("need at least 2 classes, got {num_classes}"),
            ));
        }
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::config("gradient reversal", format!("lambda {lambda} < 0")));
        }
        let k = config.kernel;
        let p = config.pool.max(1);
        let after_first = |n: usize| n.checked_sub(k - 1).map(|v| v / p);
        let fits = |n: usize| {
            after_first(n)
                .and_then(|v| v.checked_sub(k.saturating_sub(1)))
                .map(|v| v / p)
                .is_some_and(|v| v >= 1)
        };
        if k == 0 || !fits(h) || !fits(w) {
            return Err(Error::config(
                "feature extractor",
                format!(
                    "{h}x{w} input is too small for two {k}x{k} conv + {p}x{p} pool stages"
                ),
            ));
        }
        let extractor = LayerStack::build(vec![c, h, w], &config.extractor_specs(), rng)
            .map_err(|e| prefix(e, "feature extractor"))?;
        let features = extractor.output_shape().to_vec();
        let label_head = LayerStack::build(
            features.clone(),
            &ModelConfig::head_specs(&config.label_hidden, num_classes),
            rng,
        )
        .map_err(|e| prefix(e, "label predictor"))?;
        let mut domain_specs = vec![LayerSpec::GradReversal { lambda }];
        domain_specs.extend(ModelConfig::head_specs(&config.domain_hidden, 2));
        let domain_head = LayerStack::build(features, &domain_specs, rng)
            .map_err(|e| prefix(e, "domain classifier"))?;
        Ok(DannModel {
            config: config.clone(),
            input_shape,
            num_classes,
            extractor,
            label_head,
            domain_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn lambda(&self) -> f32 {
        match self.domain_head.layers()[0].spec() {
            LayerSpec::GradReversal { lambda } => *lambda,
            _ => unreachable!("domain head starts with the gradient reversal layer"),
        }
    }

    pub fn set_lambda(&mut self, lambda: f32) {
        self.domain_head.layers_mut()[0].set_lambda(lambda);
    }

    pub fn extractor(&self) -> &LayerStack {
        &self.extractor
    }

    pub fn label_head(&self) -> &LayerStack {
        &self.label_head
    }

    pub fn domain_head(&self) -> &LayerStack {
        &self.domain_head
    }

    /// All parameter stacks in declaration order.
    pub fn stacks(&self) -> [&LayerStack; 3] {
        [&self.extractor, &self.label_head, &self.domain_head]
    }

    pub(crate) fn stacks_mut(&mut self) -> [&mut LayerStack; 3] {
        [&mut self.extractor, &mut self.label_head, &mut self.domain_head]
    }

    pub fn num_params(&self) -> usize {
        self.stacks().iter().map(|s| s.num_params()).sum()
    }

    /// Raw parameter bits in declaration order, for exact comparisons.
    pub fn parameter_bits(&self) -> Vec<u32> {
        self.stacks()
            .iter()
            .flat_map(|s| s.params())
            .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    /// Label logits `[N, classes]` for a batch of `[H, W, C]` images.
    pub fn label_logits(&self, images: &[&Tensor]) -> Result<Tensor> {
        let x = to_batch(images, self.input_shape)?;
        let features = self.extractor.infer(&x)?;
        self.label_head.infer(&features)
    }

    /// Domain logits `[N, 2]` for a batch of `[H, W, C]` images.
    pub fn domain_logits(&self, images: &[&Tensor]) -> Result<Tensor> {
        let x = to_batch(images, self.input_shape)?;
        let features = self.extractor.infer(&x)?;
        self.domain_head.infer(&features)
    }
}

fn prefix(e: Error, stack: &str) -> Error {
    match e {
        Error::Config { location, message } => Error::Config {
            location: format!("{stack} {location}"),
            message,
        },
        other => other,
    }
}

/// Packs `[H, W, C]` images into an `[N, C, H, W]` batch.
pub fn to_batch(images: &[&Tensor], shape: [usize; 3]) -> Result<Tensor> {
    let [h, w, c] = shape;
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for im in images {
        if im.shape() != shape {
            return Err(Error::input(format!(
                "image of shape {:?} fed to a model expecting {shape:?}",
                im.shape()
            )));
        }
        if c == 1 {
            data.extend_from_slice(im.data());
        } else {
            let src = im.data();
            for ch in 0..c {
                data.extend((0..h * w).map(|p| src[p * c + ch]));
            }
        }
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}
