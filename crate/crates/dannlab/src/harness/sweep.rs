use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, SCHEMA_VERSION};
use super::decompose::{decompose, quantize, DecompositionResult};
use super::fit::{fit_gain_surface, fit_sigmoid, FitResult};
use crate::dann::{evaluate, evaluate_domain, train, DannModel, TrainConfig, TrainLog};
use crate::data::{apply_shift, build_domain_pair, DomainPair, LabeledDataset};
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Stream keys under a replicate seed.
const INIT_KEY: u64 = 1;
const SCHEDULE_KEY: u64 = 2;
const TEST_SHIFT_KEY: u64 = 3;
const DA_SHIFT_KEY: u64 = 4;
const PAIR_KEY: u64 = 5;

pub const RESUME_MARKER: &str = "dannlab-partial-sweep";

/// A trained baseline (no DA) and its clean test accuracy.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub model: DannModel,
    pub reference: f64,
    pub log: TrainLog,
}

/// A model trained with DA at one DA shift.
#[derive(Debug, Clone)]
pub struct DaRun {
    pub model: DannModel,
    pub da_shift: f64,
    /// Accuracy on the unshifted test set.
    pub clean_accuracy: f64,
    /// Domain-head accuracy on the pair after training.
    pub domain_accuracy: f64,
    pub log: TrainLog,
}

/// Loaded datasets for one config. Every random choice is keyed by
/// `(master seed, replicate, role, grid value)`, so the same grid value gets
/// the same noise realization no matter which grid it appears in.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Domain C: first half of the DA split, never shifted.
    pub da_c: LabeledDataset,
    /// Second half of the DA split, shifted to form domain D.
    pub da_d: LabeledDataset,
    pub num_classes: usize,
}

impl Experiment {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let base = &config.base_dir;
        let train = config.train.load(base)?;
        let test = config.test.load(base)?;
        let da = config.da.load(base)?;
        let shape = train.image_shape().map(<[usize]>::to_vec);
        for (name, ds) in [("test", &test), ("da", &da)] {
            if ds.image_shape().map(<[usize]>::to_vec) != shape {
                return Err(Error::input(format!(
                    "{name} images are {:?} but training images are {shape:?}",
                    ds.image_shape()
                )));
            }
        }
        let half = da.len() / 2;
        let da_c = da.slice(0, half)?.with_name(format!("{} (C)", da.name()));
        let da_d = da.slice(half, da.len() - half)?.with_name(format!("{} (D)", da.name()));
        let num_classes = train.num_classes().max(test.num_classes()).max(2);
        Ok(Experiment {
            config: config.clone(),
            train,
            test,
            da_c,
            da_d,
            num_classes,
        })
    }

    fn shape(&self) -> [usize; 3] {
        let s = self.train.image_shape().expect("nonempty split");
        [s[0], s[1], s[2]]
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        Rng::stream(self.config.seed, replicate as u64).next_u64()
    }

    fn stream(&self, replicate: usize, role: u64, value: f64) -> Rng {
        let role_seed = Rng::stream(self.replicate_seed(replicate), role).next_u64();
        Rng::stream(role_seed, value.to_bits())
    }

    /// Fresh model with the replicate's initial weights. Baseline and DA
    /// models of one replicate start identical.
    pub fn initial_model(&self, replicate: usize) -> Result<DannModel> {
        let mut rng = Rng::stream(self.replicate_seed(replicate), INIT_KEY);
        DannModel::build(
            &self.config.model,
            self.shape(),
            self.num_classes,
            self.config.training.lambda,
            &mut rng,
        )
    }

    fn train_config(&self, replicate: usize, da_enabled: bool) -> TrainConfig {
        TrainConfig {
            seed: Rng::stream(self.replicate_seed(replicate), SCHEDULE_KEY).next_u64(),
            da_enabled,
            ..self.config.training.clone()
        }
    }

    /// The test set under `test_shift`, identical for every model of a
    /// replicate.
    pub fn test_set(&self, replicate: usize, test_shift: f64) -> Result<LabeledDataset> {
        let spec = self.config.shift.at(test_shift)?;
        if spec.is_identity() {
            return Ok(self.test.clone());
        }
        apply_shift(&self.test, &spec, &mut self.stream(replicate, TEST_SHIFT_KEY, test_shift))
    }

    /// Pair of domain C (unshifted) and domain D (shifted by `da_shift`).
    pub fn domain_pair(&self, replicate: usize, da_shift: f64) -> Result<DomainPair> {
        let spec = self.config.shift.at(da_shift)?;
        let d = apply_shift(&self.da_d, &spec, &mut self.stream(replicate, DA_SHIFT_KEY, da_shift))?;
        build_domain_pair(&self.da_c, &d, &mut self.stream(replicate, PAIR_KEY, da_shift))
    }

    /// Trains without DA and evaluates on the unshifted test set.
    pub fn run_reference(&self, replicate: usize) -> Result<Baseline> {
        let mut model = self.initial_model(replicate)?;
        let log = train(&mut model, &self.train, None, &self.train_config(replicate, false))?;
        let reference = evaluate(&model, &self.test)?;
        Ok(Baseline {
            model,
            reference,
            log,
        })
    }

    /// `reference - accuracy of the baseline on the shifted test set`.
    pub fn run_degradation(&self, baseline: &Baseline, replicate: usize, test_shift: f64) -> Result<f64> {
        let acc = evaluate(&baseline.model, &self.test_set(replicate, test_shift)?)?;
        Ok(quantize(baseline.reference) - quantize(acc))
    }

    /// Trains with DA at `da_shift`; cost is the loss of clean accuracy
    /// relative to the baseline.
    pub fn run_cost(&self, replicate: usize, da_shift: f64) -> Result<DaRun> {
        let pair = self.domain_pair(replicate, da_shift)?;
        let mut model = self.initial_model(replicate)?;
        let log = train(&mut model, &self.train, Some(&pair), &self.train_config(replicate, true))?;
        let clean_accuracy = evaluate(&model, &self.test)?;
        let domain_accuracy = evaluate_domain(&model, &pair)?;
        Ok(DaRun {
            model,
            da_shift,
            clean_accuracy,
            domain_accuracy,
            log,
        })
    }

    /// Raw accuracy of a DA-trained model on the shifted test set.
    pub fn run_full(&self, da: &DaRun, replicate: usize, test_shift: f64) -> Result<f64> {
        evaluate(&da.model, &self.test_set(replicate, test_shift)?)
    }
}

/// Reference accuracy of replicate 0.
pub fn run_reference(cfg: &ExperimentConfig) -> Result<f64> {
    Ok(Experiment::load(cfg)?.run_reference(0)?.reference)
}

/// One completed training job of a sweep, as persisted for resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "unit", rename_all = "snake_case")]
pub enum SweepUnit {
    Baseline {
        replicate: usize,
        reference: f64,
        /// Baseline accuracy at each test-grid value.
        accuracy: Vec<f64>,
    },
    Da {
        replicate: usize,
        da_index: usize,
        clean_accuracy: f64,
        domain_accuracy: f64,
        /// DA-model accuracy at each test-grid value.
        accuracy: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PartialSweep {
    resume_marker: String,
    schema_version: u32,
    config: ExperimentConfig,
    units: Vec<SweepUnit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

/// Outcome of one curve fit. Both fields are empty when the grid is too
/// small for the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

impl FitOutcome {
    fn from(r: Result<FitResult>) -> Self {
        match r {
            Ok(fit) => FitOutcome {
                fit: Some(fit),
                error: None,
            },
            Err(Error::FitFailed { best }) => FitOutcome {
                fit: Some(*best),
                error: Some("no start converged; best candidate kept".into()),
            },
            Err(e) => FitOutcome {
                fit: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    /// Sigmoid through the mean degradation curve.
    pub degradation: FitOutcome,
    /// Gaussian x quadratic through the mean gain grid.
    pub gain: FitOutcome,
}

/// The result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    /// Rows of every grid.
    pub test_axis: Axis,
    /// Columns of every grid.
    pub da_axis: Axis,
    pub decomposition: DecompositionResult,
    /// Mean domain-head accuracy after training, per DA-grid value.
    pub domain_accuracy: Vec<f64>,
    pub fits: Fits,
}

impl SweepResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Reads a result file, refusing other schema versions.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json_err = |e| Error::Json {
            context: path.display().to_string(),
            source: e,
        };
        let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::input(format!(
                    "{}: result schema version {v} cannot be read by this build (version \
                     {SCHEMA_VERSION}); re-run the sweep with this version to migrate it",
                    path.display()
                )))
            }
            None => {
                return Err(Error::input(format!(
                    "{}: no schema_version field; not a sweep result file",
                    path.display()
                )))
            }
        }
        serde_json::from_value(value).map_err(json_err)
    }

    /// One-paragraph text summary.
    pub fn summary(&self) -> String {
        let d = &self.decomposition;
        let t = &self.test_axis.values;
        let a = &self.da_axis.values;
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b })
        };
        let (ti, deg) = argmax(&d.degradation);
        let (ci, cost) = argmax(&d.cost);
        let (gt, gd, gain) = d.max_gain();
        format!(
            "reference        {:.4}\n\
             max degradation  {deg:.4}  at test {}\n\
             max cost         {cost:.4}  at DA {}\n\
             max gain         {gain:.4}  at test {} / DA {}\n",
            d.reference, t[ti], a[ci], t[gt], a[gd]
        )
    }
}

/// Runs the full grid in memory.
pub fn sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    sweep_with(cfg, None, &mut |_| {})
}

/// Runs the full grid. With `partial`, every finished training job is
/// appended to that file; a later call with the same config resumes from
/// it. The file is removed once the sweep completes.
pub fn sweep_with(
    cfg: &ExperimentConfig,
    partial: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<SweepResult> {
    let exp = Experiment::load(cfg)?;
    let mut state = PartialSweep {
        resume_marker: RESUME_MARKER.into(),
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        units: Vec::new(),
    };
    if let Some(path) = partial.filter(|p| p.exists()) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let previous: PartialSweep = serde_json::from_str(&text).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        if previous.resume_marker != RESUME_MARKER || previous.config != state.config {
            return Err(Error::input(format!(
                "{} is a partial sweep of a different config; remove it to start over",
                path.display()
            )));
        }
        progress(&format!("resuming: {} jobs already done", previous.units.len()));
        state.units = previous.units;
    }
    let persist = |state: &PartialSweep| -> Result<()> {
        if let Some(path) = partial {
            let text = serde_json::to_string(state).expect("partial serializes");
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    };

    let tests = &cfg.test_grid;
    for r in 0..cfg.replicates {
        let done = |u: &SweepUnit| matches!(u, SweepUnit::Baseline { replicate, .. } if *replicate == r);
        let mut test_sets = None;
        if !state.units.iter().any(done) {
            progress(&format!("replicate {r}: baseline"));
            let base = exp.run_reference(r)?;
            let sets = tests
                .iter()
                .map(|&t| exp.test_set(r, t))
                .collect::<Result<Vec<_>>>()?;
            let accuracy = sets
                .iter()
                .map(|s| evaluate(&base.model, s))
                .collect::<Result<Vec<_>>>()?;
            state.units.push(SweepUnit::Baseline {
                replicate: r,
                reference: base.reference,
                accuracy,
            });
            persist(&state)?;
            test_sets = Some(sets);
        }
        for (j, &v) in cfg.da_grid.iter().enumerate() {
            let done = |u: &SweepUnit| {
                matches!(u, SweepUnit::Da { replicate, da_index, .. } if *replicate == r && *da_index == j)
            };
            if state.units.iter().any(done) {
                continue;
            }
            progress(&format!("replicate {r}: DA shift {v}"));
            let sets = match &test_sets {
                Some(s) => s,
                None => test_sets.insert(
                    tests
                        .iter()
                        .map(|&t| exp.test_set(r, t))
                        .collect::<Result<Vec<_>>>()?,
                ),
            };
            let run = exp.run_cost(r, v)?;
            let accuracy = sets
                .iter()
                .map(|s| evaluate(&run.model, s))
                .collect::<Result<Vec<_>>>()?;
            state.units.push(SweepUnit::Da {
                replicate: r,
                da_index: j,
                clean_accuracy: run.clean_accuracy,
                domain_accuracy: run.domain_accuracy,
                accuracy,
            });
            persist(&state)?;
        }
    }

    let result = SweepResult::from_units(cfg, &state.units)?;
    if let Some(path) = partial.filter(|p| p.exists()) {
        fs::remove_file(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(result)
}

struct ReplicateRaw {
    reference: f64,
    baseline: Vec<f64>,
    clean: Vec<f64>,
    domain: Vec<f64>,
    accuracy: Vec<Vec<f64>>,
}

impl SweepResult {
    /// Builds the result from finished jobs. Every replicate needs its
    /// baseline and one DA unit per DA-grid value.
    pub fn from_units(cfg: &ExperimentConfig, units: &[SweepUnit]) -> Result<SweepResult> {
        assemble(cfg, units)
    }
}

fn bad_unit(u: &SweepUnit, nt: usize, nd: usize) -> Error {
    Error::input(format!("sweep job {u:?} does not fit a {nt}x{nd} grid"))
}

fn assemble(cfg: &ExperimentConfig, units: &[SweepUnit]) -> Result<SweepResult> {
    let (nt, nd) = (cfg.test_grid.len(), cfg.da_grid.len());
    let mut raws: Vec<ReplicateRaw> = (0..cfg.replicates)
        .map(|_| ReplicateRaw {
            reference: f64::NAN,
            baseline: vec![f64::NAN; nt],
            clean: vec![f64::NAN; nd],
            domain: vec![f64::NAN; nd],
            accuracy: vec![vec![f64::NAN; nd]; nt],
        })
        .collect();
    for u in units {
        match u {
            SweepUnit::Baseline {
                replicate,
                reference,
                accuracy,
            } => {
                if accuracy.len() != nt {
                    return Err(bad_unit(u, nt, nd));
                }
                let raw = raws.get_mut(*replicate).ok_or_else(|| bad_unit(u, nt, nd))?;
                raw.reference = *reference;
                raw.baseline.clone_from(accuracy);
            }
            SweepUnit::Da {
                replicate,
                da_index,
                clean_accuracy,
                domain_accuracy,
                accuracy,
            } => {
                if accuracy.len() != nt || *da_index >= nd {
                    return Err(bad_unit(u, nt, nd));
                }
                let raw = raws.get_mut(*replicate).ok_or_else(|| bad_unit(u, nt, nd))?;
                raw.clean[*da_index] = *clean_accuracy;
                raw.domain[*da_index] = *domain_accuracy;
                for (t, &a) in accuracy.iter().enumerate() {
                    raw.accuracy[t][*da_index] = a;
                }
            }
        }
    }

    for (r, raw) in raws.iter().enumerate() {
        let missing = raw.reference.is_nan()
            || raw.baseline.iter().any(|v| v.is_nan())
            || raw.clean.iter().any(|v| v.is_nan());
        if missing {
            return Err(Error::input(format!("replicate {r} is missing its baseline or a DA job")));
        }
    }

    let decompose_raw = |raw: &ReplicateRaw| {
        let reference = quantize(raw.reference);
        let degradation: Vec<f64> = raw.baseline.iter().map(|&a| reference - quantize(a)).collect();
        let cost: Vec<f64> = raw.clean.iter().map(|&a| reference - quantize(a)).collect();
        decompose(reference, &degradation, &cost, &raw.accuracy)
    };
    let n = raws.len() as f64;
    let mean = |f: &dyn Fn(&ReplicateRaw) -> f64| raws.iter().map(f).sum::<f64>() / n;
    let mean_raw = ReplicateRaw {
        reference: mean(&|r| r.reference),
        baseline: (0..nt).map(|t| mean(&|r| r.baseline[t])).collect(),
        clean: (0..nd).map(|d| mean(&|r| r.clean[d])).collect(),
        domain: (0..nd).map(|d| mean(&|r| r.domain[d])).collect(),
        accuracy: (0..nt)
            .map(|t| (0..nd).map(|d| mean(&|r| r.accuracy[t][d])).collect())
            .collect(),
    };
    let mut decomposition = decompose_raw(&mean_raw)?;
    decomposition.replicates = raws.iter().map(decompose_raw).collect::<Result<_>>()?;

    let fits = Fits {
        degradation: if nt >= 4 {
            FitOutcome::from(fit_sigmoid(&cfg.test_grid, &decomposition.degradation))
        } else {
            FitOutcome::default()
        },
        gain: if nt >= 3 && nd >= 3 {
            FitOutcome::from(fit_gain_surface(&cfg.test_grid, &cfg.da_grid, &decomposition.gain))
        } else {
            FitOutcome::default()
        },
    };
    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        test_axis: Axis {
            name: format!("test {}", cfg.shift.axis_name()),
            values: cfg.test_grid.clone(),
        },
        da_axis: Axis {
            name: format!("DA {}", cfg.shift.axis_name()),
            values: cfg.da_grid.clone(),
        },
        decomposition,
        domain_accuracy: mean_raw.domain,
        fits,
    })
}
