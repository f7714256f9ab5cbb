//! Full decomposition sweep and report. Without arguments it runs a small
//! synthetic 3x3 grid; given a config path it runs that experiment.
//!
//! ```bash
//! cargo run --release --example noise_sweep
//! cargo run --release --example noise_sweep -- configs/mnist_noise.json
//! ```

use dannlab::dann::{ModelConfig, TrainConfig};
use dannlab::harness::{sweep_with, DataSplit, DatasetSource, ExperimentConfig, ShiftKind, SCHEMA_VERSION};
use dannlab::report::write_report;

fn synthetic_config() -> ExperimentConfig {
    let source = |seed| DatasetSource::Synthetic {
        count: 600,
        shape: [16, 16, 1],
        classes: 4,
        seed,
    };
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        train: DataSplit::new(source(1), 0, 400),
        test: DataSplit::new(source(1), 400, 200),
        da: DataSplit::new(source(2), 0, 300),
        shift: ShiftKind::Noise,
        test_grid: vec![0.0, 0.6, 1.2],
        da_grid: vec![0.0, 0.5, 1.0],
        training: TrainConfig {
            epochs: 2,
            batch_size: 16,
            lambda: 0.2,
            ..TrainConfig::default()
        },
        model: ModelConfig {
            conv1_channels: 6,
            conv2_channels: 8,
            kernel: 3,
            pool: 2,
            label_hidden: vec![24],
            domain_hidden: vec![24],
        },
        replicates: 1,
        seed: 7,
        base_dir: Default::default(),
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => synthetic_config(),
    };
    let result = sweep_with(&cfg, None, &mut |m| println!("{m}"))?;
    print!("{}", result.summary());
    let d = &result.decomposition;
    for (t, v) in result.test_axis.values.iter().enumerate() {
        let gains: Vec<String> = d.gain[t].iter().map(|g| format!("{g:+.3}")).collect();
        println!("test {v:<4} degradation {:+.3}  gain {}", d.degradation[t], gains.join(" "));
    }
    let out = std::env::temp_dir().join("dannlab_noise_sweep");
    for p in write_report(&result, &out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
