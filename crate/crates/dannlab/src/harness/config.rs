use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dann::{ModelConfig, TrainConfig};
use crate::data::{load_idx, load_image_dir, make_black_dataset, make_synthetic_dataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::shifts::ShiftSpec;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_replicates() -> usize {
    3
}

/// Where a split's images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// An IDX image/label file pair.
    Idx { images: PathBuf, labels: PathBuf },
    /// A directory of PGM/PPM files; the manifest defaults to
    /// `<dir>/manifest.csv`.
    ImageDir {
        dir: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        manifest: Option<PathBuf>,
    },
    /// All-zero images labelled 0.
    Black { count: usize, shape: [usize; 3] },
    /// Class prototypes plus jitter; see [`make_synthetic_dataset`].
    Synthetic {
        count: usize,
        shape: [usize; 3],
        classes: usize,
        seed: u64,
    },
}

/// A contiguous range of a source. `count: None` takes everything after
/// `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSplit {
    pub source: DatasetSource,
    #[serde(default)]
    pub offset: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

impl DataSplit {
    pub fn new(source: DatasetSource, offset: usize, count: usize) -> Self {
        DataSplit {
            source,
            offset,
            count: Some(count),
        }
    }

    /// Loads the split; relative paths are taken from `base`.
    pub fn load(&self, base: &Path) -> Result<LabeledDataset> {
        let full = match &self.source {
            DatasetSource::Idx { images, labels } => load_idx(base.join(images), base.join(labels))?,
            DatasetSource::ImageDir { dir, manifest } => {
                let dir = base.join(dir);
                let manifest = match manifest {
                    Some(m) => base.join(m),
                    None => dir.join("manifest.csv"),
                };
                load_image_dir(&dir, manifest)?
            }
            DatasetSource::Black { count, shape } => make_black_dataset(*count, *shape)?,
            DatasetSource::Synthetic {
                count,
                shape,
                classes,
                seed,
            } => make_synthetic_dataset(*count, *shape, *classes, *seed)?,
        };
        let count = match self.count {
            Some(c) => c,
            None => full.len().checked_sub(self.offset).ok_or_else(|| {
                Error::input(format!("offset {} beyond {} images", self.offset, full.len()))
            })?,
        };
        full.slice(self.offset, count)
    }
}

/// The family of shifts swept along both grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    /// Grid values are noise intensities.
    Noise,
    /// Grid values are odd box-filter sizes.
    Blur,
}

impl ShiftKind {
    pub fn axis_name(self) -> &'static str {
        match self {
            ShiftKind::Noise => "noise intensity",
            ShiftKind::Blur => "blur kernel size",
        }
    }

    /// The shift at grid value `v`.
    pub fn at(self, v: f64) -> Result<ShiftSpec> {
        match self {
            ShiftKind::Noise => ShiftSpec::noise(v),
            ShiftKind::Blur => {
                if v.fract() != 0.0 || !(1.0..=4096.0).contains(&v) {
                    return Err(Error::input(format!("blur kernel size must be an odd integer, got {v}")));
                }
                ShiftSpec::blur(v as usize)
            }
        }
    }
}

/// One experiment: the four datasets of the pipeline, the shift grids and
/// the training setup.
///
/// The DA split is cut into two disjoint halves: domain C (first half, left
/// unshifted) and domain D (second half, shifted by the DA grid value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub train: DataSplit,
    pub test: DataSplit,
    pub da: DataSplit,
    pub shift: ShiftKind,
    pub test_grid: Vec<f64>,
    pub da_grid: Vec<f64>,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths are resolved against; set by
    /// [`ExperimentConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses a JSON config. Relative data paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Json {
            context: context.to_string(),
            source: e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        for (name, split) in [("train", &self.train), ("test", &self.test), ("da", &self.da)] {
            if split.count == Some(0) {
                out.push(format!("{name}.count must be at least 1"));
            }
        }
        if self.da.count == Some(1) {
            out.push("da.count must be at least 2 (it is split into domains C and D)".into());
        }
        for (name, grid) in [("test_grid", &self.test_grid), ("da_grid", &self.da_grid)] {
            if grid.is_empty() {
                out.push(format!("{name} must not be empty"));
            }
            for (i, &v) in grid.iter().enumerate() {
                if let Err(e) = self.shift.at(v) {
                    out.push(format!("{name}[{i}]: {}", strip_prefix(&e)));
                }
            }
        }
        if self.replicates == 0 {
            out.push("replicates must be at least 1".into());
        }
        out.extend(self.training.violations("training."));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Input(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Command-line overrides layered on top of a config file. Each field maps
/// to exactly one config field.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f32>,
    pub momentum: Option<f32>,
    pub lambda: Option<f32>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        let t = &mut cfg.training;
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            t.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            t.momentum = v;
        }
        if let Some(v) = self.lambda {
            t.lambda = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "train": {"source": {"kind": "synthetic", "count": 40, "shape": [12, 12, 1], "classes": 2, "seed": 1}},
        "test": {"source": {"kind": "synthetic", "count": 20, "shape": [12, 12, 1], "classes": 2, "seed": 1}},
        "da": {"source": {"kind": "black", "count": 10, "shape": [12, 12, 1]}},
        "shift": "noise",
        "test_grid": [0.0],
        "da_grid": [0.0]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_json(MINIMAL, "minimal").unwrap();
        assert_eq!(cfg.replicates, 3);
        assert_eq!(cfg.schema_version, SCHEMA_VERSION);
        assert_eq!(cfg.training, TrainConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let text = MINIMAL.replace("\"shift\"", "\"shfit\": 1, \"shift\"");
        let err = ExperimentConfig::from_json(&text, "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown field") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn malformed_json_reports_line_and_column() {
        let err = ExperimentConfig::from_json("{\n  \"train\": ,\n}", "cfg.json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("column"), "{msg}");
    }

    #[test]
    fn every_violation_listed() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL, "minimal").unwrap();
        cfg.test_grid.clear();
        cfg.shift = ShiftKind::Blur;
        cfg.da_grid = vec![2.0];
        cfg.replicates = 0;
        cfg.training.lambda = -1.0;
        let v = cfg.violations();
        assert_eq!(v.len(), 4, "{v:?}");
        let msg = cfg.validate().unwrap_err().to_string();
        for needle in ["test_grid", "da_grid[0]", "replicates", "training.lambda"] {
            assert!(msg.contains(needle), "{msg}");
        }
    }

    #[test]
    fn overrides_touch_one_field_each() {
        let base = ExperimentConfig::from_json(MINIMAL, "minimal").unwrap();
        let mut cfg = base.clone();
        Overrides {
            seed: Some(9),
            ..Overrides::default()
        }
        .apply(&mut cfg);
        assert_eq!(cfg.seed, 9);
        cfg.seed = base.seed;
        assert_eq!(cfg, base);
    }

    #[test]
    fn splits_slice_sources() {
        let split = DataSplit::new(
            DatasetSource::Synthetic {
                count: 30,
                shape: [8, 8, 1],
                classes: 3,
                seed: 0,
            },
            10,
            5,
        );
        let ds = split.load(Path::new(".")).unwrap();
        assert_eq!(ds.len(), 5);
        assert_eq!(ds.labels(), &[1, 2, 0, 1, 2]);
    }

    #[test]
    fn blur_grid_values_must_be_odd_integers() {
        assert!(ShiftKind::Blur.at(3.0).is_ok());
        assert!(ShiftKind::Blur.at(3.5).is_err());
        assert!(ShiftKind::Blur.at(4.0).is_err());
        assert!(ShiftKind::Noise.at(-0.1).is_err());
    }
}
