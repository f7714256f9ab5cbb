//! Baseline versus DA training on a small synthetic task. Domain C is clean
//! data from a different generator, domain D is the same data with noise;
//! the test set is noised at a stronger intensity.
//!
//! ```bash
//! cargo run --release --example domain_adaptation
//! ```

use dannlab::dann::{evaluate, evaluate_domain, train, DannModel, ModelConfig, TrainConfig};
use dannlab::data::{apply_shift, build_domain_pair, make_synthetic_dataset};
use dannlab::numcore::Rng;
use dannlab::shifts::ShiftSpec;

pub fn run_example() -> anyhow::Result<()> {
    let shape = [16, 16, 1];
    let all = make_synthetic_dataset(600, shape, 4, 1)?;
    let (train_ds, test_ds) = (all.slice(0, 400)?, all.slice(400, 200)?);
    let da = make_synthetic_dataset(400, shape, 3, 2)?;
    let (c, d) = (da.slice(0, 200)?, da.slice(200, 200)?);

    let mut rng = Rng::seed(0);
    let d = apply_shift(&d, &ShiftSpec::noise(0.5)?, &mut rng)?;
    let pair = build_domain_pair(&c, &d, &mut rng)?;
    let noisy_test = apply_shift(&test_ds, &ShiftSpec::noise(1.0)?, &mut rng)?;

    let model_cfg = ModelConfig {
        conv1_channels: 8,
        conv2_channels: 8,
        kernel: 3,
        pool: 2,
        label_hidden: vec![32],
        domain_hidden: vec![32],
    };
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        lambda: 0.2,
        ..TrainConfig::default()
    };
    let init = DannModel::build(&model_cfg, shape, 4, cfg.lambda, &mut Rng::seed(9))?;
    println!("domain accuracy before training {:.3}", evaluate_domain(&init, &pair)?);

    let mut baseline = init.clone();
    train(&mut baseline, &train_ds, None, &cfg)?;
    let mut adapted = init;
    let log = train(&mut adapted, &train_ds, Some(&pair), &TrainConfig { da_enabled: true, ..cfg })?;
    for e in &log.epochs {
        println!(
            "epoch {}  label acc {:.3}  domain acc {:.3}",
            e.epoch,
            e.main_accuracy,
            e.domain_accuracy.unwrap_or(f64::NAN)
        );
    }
    println!("                clean   noisy test");
    for (name, m) in [("baseline", &baseline), ("with DA", &adapted)] {
        println!("{name:<15} {:.3}   {:.3}", evaluate(m, &test_ds)?, evaluate(m, &noisy_test)?);
    }
    println!("domain accuracy after DA training {:.3}", evaluate_domain(&adapted, &pair)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
