use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{to_batch, DannModel};
use crate::data::{DomainPair, LabeledDataset};
use crate::error::{Error, Result};
use crate::numcore::{cross_entropy_batch, Rng, Tensor};

/// Key of the main-batch shuffling stream derived from [`TrainConfig::seed`].
pub const MAIN_SCHEDULE_STREAM: u64 = 0x6d61_696e;

const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub lambda: f32,
    pub seed: u64,
    pub da_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            lambda: 1.0,
            seed: 0,
            da_enabled: false,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, prefixed with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.epochs == 0 {
            out.push(format!("{prefix}epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            out.push(format!("{prefix}batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("{prefix}learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("{prefix}momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            out.push(format!("{prefix}lambda must be >= 0, got {}", self.lambda));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub main_loss: f64,
    /// Running training accuracy of the label head over the epoch.
    pub main_accuracy: f64,
    pub domain_loss: Option<f64>,
    pub domain_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains `model` in place. Each step runs one main batch through extractor
/// and label head and, with DA enabled, one batch of the domain pair through
/// extractor, gradient reversal and domain head. Both gradients accumulate
/// into the extractor before a single momentum SGD step.
///
/// Main batches follow a per-epoch shuffle; DA batches walk the (already
/// shuffled) pair round-robin, so neither schedule depends on the other.
pub fn train(
    model: &mut DannModel,
    train_ds: &LabeledDataset,
    da_pair: Option<&DomainPair>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    if train_ds.image_shape() != Some(&model.input_shape[..]) {
        return Err(Error::input(format!(
            "training images are {:?}, model expects {:?}",
            train_ds.image_shape(),
            model.input_shape
        )));
    }
    if let Some(&bad) = train_ds.labels().iter().find(|&&l| l >= model.num_classes) {
        return Err(Error::input(format!(
            "label {bad} out of range for {} classes",
            model.num_classes
        )));
    }
    let pair = if cfg.da_enabled {
        let pair = da_pair.ok_or_else(|| Error::input("DA is enabled but no domain pair was given"))?;
        if pair.is_empty() {
            return Err(Error::input("domain pair is empty"));
        }
        if pair.image_shape() != Some(&model.input_shape[..]) {
            return Err(Error::input(format!(
                "domain pair images are {:?}, model expects {:?}",
                pair.image_shape(),
                model.input_shape
            )));
        }
        Some(pair)
    } else {
        None
    };
    model.set_lambda(cfg.lambda);
    for s in model.stacks_mut() {
        s.zero_grad();
    }

    let shape = model.input_shape;
    let mut schedule = Rng::stream(cfg.seed, MAIN_SCHEDULE_STREAM);
    let mut da_cursor = 0usize;
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let order = schedule.permutation(train_ds.len());
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        let (mut d_loss_sum, mut d_correct, mut d_seen) = (0.0f64, 0usize, 0usize);
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let images: Vec<&Tensor> = idx.iter().map(|&i| &train_ds.images()[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train_ds.labels()[i]).collect();
            let x = to_batch(&images, shape)?;
            let features = model.extractor.forward(&x)?;
            let logits = model.label_head.forward(&features)?;
            let (loss, grad) = cross_entropy_batch(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: loss as f32,
                });
            }
            loss_sum += loss * idx.len() as f64;
            correct += count_correct(&logits, &labels);
            seen += idx.len();
            let g = model.label_head.backward(&grad)?;
            model.extractor.backward_params(&g)?;

            if let Some(pair) = pair {
                let n = cfg.batch_size.min(pair.len());
                let samples: Vec<_> = (0..n)
                    .map(|j| &pair.samples()[(da_cursor + j) % pair.len()])
                    .collect();
                da_cursor = (da_cursor + n) % pair.len();
                let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
                let domains: Vec<usize> = samples.iter().map(|s| s.domain).collect();
                let x = to_batch(&images, shape)?;
                let features = model.extractor.forward(&x)?;
                let logits = model.domain_head.forward(&features)?;
                let (loss, grad) = cross_entropy_batch(&logits, &domains)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        loss: loss as f32,
                    });
                }
                d_loss_sum += loss * n as f64;
                d_correct += count_correct(&logits, &domains);
                d_seen += n;
                let g = model.domain_head.backward(&grad)?;
                model.extractor.backward_params(&g)?;
            }

            model.extractor.sgd_step(cfg.learning_rate, cfg.momentum);
            model.label_head.sgd_step(cfg.learning_rate, cfg.momentum);
            if pair.is_some() {
                model.domain_head.sgd_step(cfg.learning_rate, cfg.momentum);
            }
        }
        log.epochs.push(EpochLog {
            epoch,
            main_loss: loss_sum / seen as f64,
            main_accuracy: correct as f64 / seen as f64,
            domain_loss: pair.map(|_| d_loss_sum / d_seen as f64),
            domain_accuracy: pair.map(|_| d_correct as f64 / d_seen as f64),
        });
    }
    for s in model.stacks_mut() {
        s.clear_caches();
    }
    Ok(log)
}

/// Predicted class for every image, in order.
pub fn predict(model: &DannModel, images: &[Tensor]) -> Result<Vec<usize>> {
    let parts: Vec<Result<Vec<usize>>> = images
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let logits = model.label_logits(&refs)?;
            Ok(logits.data().chunks(model.num_classes).map(argmax).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(images.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Fraction of images whose arg-max label logit equals the label.
pub fn evaluate(model: &DannModel, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    let correct = predict(model, ds.images())?
        .iter()
        .zip(ds.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}

/// Domain-classification accuracy of the domain head on `pair`.
pub fn evaluate_domain(model: &DannModel, pair: &DomainPair) -> Result<f64> {
    if pair.is_empty() {
        return Err(Error::input("cannot evaluate on an empty domain pair"));
    }
    let counts: Vec<Result<usize>> = pair
        .samples()
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
            let logits = model.domain_logits(&refs)?;
            let domains: Vec<usize> = chunk.iter().map(|s| s.domain).collect();
            Ok(count_correct(&logits, &domains))
        })
        .collect();
    let mut correct = 0;
    for c in counts {
        correct += c?;
    }
    Ok(correct as f64 / pair.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dann::ModelConfig;
    use crate::data::build_domain_pair;

    fn small_config() -> ModelConfig {
        ModelConfig {
            conv1_channels: 4,
            conv2_channels: 6,
            kernel: 3,
            pool: 2,
            label_hidden: vec![16],
            domain_hidden: vec![16],
        }
    }

    /// Class 0: left half bright. Class 1: right half bright.
    fn separable(n: usize, rng: &mut Rng) -> LabeledDataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let data = (0..12 * 12)
                .map(|p| {
                    let left = p % 12 < 6;
                    let base = if left == (label == 0) { 0.8 } else { 0.2 };
                    base + 0.1 * (rng.uniform() - 0.5)
                })
                .collect();
            images.push(Tensor::new(vec![12, 12, 1], data).unwrap());
            labels.push(label);
        }
        LabeledDataset::new(images, labels, "toy").unwrap()
    }

    fn toy_model(seed: u64) -> DannModel {
        DannModel::build(&small_config(), [12, 12, 1], 2, 1.0, &mut Rng::seed(seed)).unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let ds = separable(64, &mut Rng::seed(0));
        let mut model = toy_model(1);
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &ds, None, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 20);
        assert!(log.epochs.iter().all(|e| e.domain_accuracy.is_none()));
        assert_eq!(evaluate(&model, &ds).unwrap(), 1.0);
    }

    #[test]
    fn zero_lambda_leaves_extractor_trajectory_unchanged() {
        let mut rng = Rng::seed(2);
        let ds = separable(32, &mut rng);
        let dark = separable(32, &mut rng);
        let pair = build_domain_pair(&ds, &dark, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            lambda: 0.0,
            ..TrainConfig::default()
        };
        let mut plain = toy_model(3);
        train(&mut plain, &ds, None, &cfg).unwrap();
        let mut adv = toy_model(3);
        let log = train(&mut adv, &ds, Some(&pair), &TrainConfig { da_enabled: true, ..cfg }).unwrap();
        assert!(log.epochs[0].domain_accuracy.is_some());
        let bits = |m: &DannModel| -> Vec<u32> {
            m.extractor()
                .params()
                .chain(m.label_head().params())
                .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bits(&plain), bits(&adv));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable(32, &mut Rng::seed(4));
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut a = toy_model(5);
        let mut b = toy_model(5);
        assert_eq!(
            train(&mut a, &ds, None, &cfg).unwrap(),
            train(&mut b, &ds, None, &cfg).unwrap()
        );
        assert_eq!(a.parameter_bits(), b.parameter_bits());
    }

    #[test]
    fn divergence_names_the_step() {
        let ds = separable(16, &mut Rng::seed(6));
        let mut model = toy_model(7);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e30,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let err = train(&mut model, &ds, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
        assert!(err.to_string().contains("step"));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let ds = LabeledDataset::new(vec![Tensor::zeros(vec![12, 12, 1])], vec![5], "x").unwrap();
        let err = train(&mut toy_model(0), &ds, None, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("label 5"), "{err}");
    }

    #[test]
    fn da_without_pair_rejected() {
        let ds = separable(4, &mut Rng::seed(0));
        let cfg = TrainConfig {
            da_enabled: true,
            ..TrainConfig::default()
        };
        assert!(train(&mut toy_model(0), &ds, None, &cfg).is_err());
    }

    #[test]
    fn evaluate_extremes_and_purity() {
        let ds = separable(16, &mut Rng::seed(8));
        let mut model = toy_model(9);
        train(
            &mut model,
            &ds,
            None,
            &TrainConfig {
                epochs: 20,
                batch_size: 8,
                learning_rate: 0.05,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let one = ds.slice(0, 1).unwrap();
        assert_eq!(evaluate(&model, &one).unwrap(), 1.0);
        let flipped: Vec<usize> = ds.labels().iter().map(|l| 1 - l).collect();
        let wrong = LabeledDataset::new(ds.images().to_vec(), flipped, "flipped").unwrap();
        assert_eq!(evaluate(&model, &wrong).unwrap(), 0.0);
        let before = model.parameter_bits();
        let a = evaluate(&model, &ds).unwrap();
        assert_eq!(a, evaluate(&model, &ds).unwrap());
        assert_eq!(before, model.parameter_bits());
    }

    #[test]
    fn empty_inputs_rejected() {
        let model = toy_model(0);
        let ds = LabeledDataset::new(vec![], vec![], "empty").unwrap();
        assert!(evaluate(&model, &ds).is_err());
    }

    #[test]
    fn domain_accuracy_of_identical_sets_is_half() {
        let ds = separable(40, &mut Rng::seed(10));
        let pair = build_domain_pair(&ds, &ds, &mut Rng::seed(11)).unwrap();
        let acc = evaluate_domain(&toy_model(12), &pair).unwrap();
        assert_eq!(acc, 0.5);
    }
}
