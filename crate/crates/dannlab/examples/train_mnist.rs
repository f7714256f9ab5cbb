//! Trains the reference model on a 10k MNIST subset and reports test
//! accuracy, then saves a checkpoint.
//!
//! ```bash
//! python3 scripts/fetch_data.py
//! cargo run --release --example train_mnist -- [train_count] [epochs]
//! ```

use std::time::Instant;

use anyhow::Context;
use dannlab::dann::{evaluate, save_checkpoint, train, DannModel, ModelConfig, TrainConfig};
use dannlab::data::load_idx;
use dannlab::numcore::Rng;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(10_000);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(3);

    let dir = dannlab::data::default_data_dir();
    let train_ds = load_idx(dir.join("mnist-train-images-idx3-ubyte"), dir.join("mnist-train-labels-idx1-ubyte"))
        .context("MNIST not found; run scripts/fetch_data.py")?
        .slice(0, count)?;
    let test_ds = load_idx(dir.join("mnist-t10k-images-idx3-ubyte"), dir.join("mnist-t10k-labels-idx1-ubyte"))?
        .slice(0, 2000)?;

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let mut model = DannModel::build(&ModelConfig::default(), [28, 28, 1], 10, cfg.lambda, &mut Rng::seed(cfg.seed))?;
    println!("{} parameters, {} training images", model.num_params(), train_ds.len());

    let start = Instant::now();
    let log = train(&mut model, &train_ds, None, &cfg)?;
    for e in &log.epochs {
        println!("epoch {}  loss {:.4}  train acc {:.4}", e.epoch, e.main_loss, e.main_accuracy);
    }
    println!("trained in {:.1?}", start.elapsed());
    println!("test accuracy {:.4}", evaluate(&model, &test_ds)?);

    let path = std::env::temp_dir().join("dannlab_mnist.ckpt");
    save_checkpoint(&model, &path)?;
    println!("checkpoint written to {}", path.display());
    Ok(())
}
