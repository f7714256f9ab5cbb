use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dannlab::dann::{evaluate, save_checkpoint, train, TrainConfig};
use dannlab::data::{
    apply_shift, load_image_dir, read_idx_images, read_pnm, write_idx_images, write_image_dir, LabeledDataset,
};
use dannlab::harness::{sweep_with, Experiment, ExperimentConfig, Overrides, SweepResult};
use dannlab::numcore::Rng;
use dannlab::report::write_report;
use dannlab::shifts::{compute_lab_stats, ShiftSpec};

#[derive(Parser)]
#[command(name = "dannlab", version, about = "Data-shift and domain-adversarial training experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file for `shift`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation and shifting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply one shift to an IDX image file or a PGM/PPM directory.
    Shift(ShiftArgs),
    /// Train one model (baseline, or with DA at `--da-shift`).
    Train(TrainArgs),
    /// Run the full test-shift x DA-shift grid and write result.json.
    Sweep(TrainOverrides),
    /// Write CSV tables, SVG heatmaps and fits.json from a result file.
    Report {
        /// Result file written by `sweep`.
        result: PathBuf,
    },
}

#[derive(Args)]
struct ShiftArgs {
    /// IDX image file, or a directory with manifest.csv.
    #[arg(long)]
    input: PathBuf,
    /// Output path; defaults to `--out`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Additive uniform noise intensity (non-negative).
    #[arg(long, group = "kind")]
    noise: Option<f64>,
    /// Odd box-blur kernel size.
    #[arg(long, group = "kind")]
    blur: Option<usize>,
    /// Target image (PPM) whose LAB statistics the output should match.
    #[arg(long, group = "kind")]
    colorshift: Option<PathBuf>,
}

#[derive(Args)]
struct TrainOverrides {
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// SGD momentum.
    #[arg(long)]
    momentum: Option<f32>,
    /// Gradient reversal strength.
    #[arg(long)]
    lambda: Option<f32>,
    /// Number of replicates (independent seeds).
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Enable DA with domain D shifted by this grid value.
    #[arg(long)]
    da_shift: Option<f64>,
    /// Replicate index whose seeds to use.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain, skipping causes whose text is already in the message.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg = format!("{msg}: {c}");
        }
    }
    msg
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Shift(args) => cmd_shift(&cli, args),
        Command::Train(args) => cmd_train(&cli, args),
        Command::Sweep(args) => cmd_sweep(&cli, args),
        Command::Report { result } => cmd_report(&cli, result),
    }
}

fn load_config(cli: &Cli, o: &TrainOverrides) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config <path> is required")?;
    let mut cfg = ExperimentConfig::load(path)?;
    Overrides {
        seed: cli.seed,
        replicates: o.replicates,
        epochs: o.epochs,
        batch_size: o.batch_size,
        learning_rate: o.lr,
        momentum: o.momentum,
        lambda: o.lambda,
    }
    .apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn print_stats(label: &str, ds: &LabeledDataset) {
    let stats: Vec<String> = ds
        .channel_stats()
        .iter()
        .enumerate()
        .map(|(c, (m, s))| format!("ch{c} mean {m:.6} std {s:.6}"))
        .collect();
    println!("{label:<7} {}", stats.join("  "));
}

fn cmd_shift(cli: &Cli, args: &ShiftArgs) -> Result<()> {
    let spec = match (args.noise, args.blur, &args.colorshift) {
        (Some(i), None, None) => ShiftSpec::noise(i)?,
        (None, Some(k), None) => ShiftSpec::blur(k)?,
        (None, None, Some(target)) => ShiftSpec::ColorShift {
            target: compute_lab_stats(&read_pnm(target)?)?,
        },
        _ => bail!("give exactly one of --noise, --blur, --colorshift"),
    };
    let output = args
        .output
        .clone()
        .or_else(|| cli.out.clone())
        .context("--output <path> is required")?;
    let is_dir = args.input.is_dir();
    let ds = if is_dir {
        load_image_dir(&args.input, args.input.join("manifest.csv"))?
    } else {
        let images = read_idx_images(&args.input)?;
        let n = images.len();
        LabeledDataset::new(images, vec![0; n], args.input.display().to_string())?
    };
    spec.validate(ds.channels())?;
    print_stats("before", &ds);
    let shifted = apply_shift(&ds, &spec, &mut Rng::seed(cli.seed.unwrap_or(0)))?;
    print_stats("after", &shifted);
    if is_dir {
        write_image_dir(&shifted, &output)?;
    } else {
        write_idx_images(&output, shifted.images())?;
    }
    Ok(())
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let cfg = load_config(cli, &args.overrides)?;
    if args.replicate >= cfg.replicates {
        bail!("--replicate {} but the config has {} replicate(s)", args.replicate, cfg.replicates);
    }
    let exp = Experiment::load(&cfg)?;
    let dir = out_dir(cli, ".")?;
    let (model, log, clean) = match args.da_shift {
        None => {
            let b = exp.run_reference(args.replicate)?;
            (b.model, b.log, b.reference)
        }
        Some(v) => {
            let pair = exp.domain_pair(args.replicate, v)?;
            let mut model = exp.initial_model(args.replicate)?;
            let tc = TrainConfig {
                da_enabled: true,
                ..cfg.training.clone()
            };
            let log = train(&mut model, &exp.train, Some(&pair), &tc)?;
            let acc = evaluate(&model, &exp.test)?;
            (model, log, acc)
        }
    };
    for e in &log.epochs {
        match e.domain_accuracy {
            Some(d) => println!(
                "epoch {}  loss {:.4}  acc {:.4}  domain acc {d:.4}",
                e.epoch, e.main_loss, e.main_accuracy
            ),
            None => println!("epoch {}  loss {:.4}  acc {:.4}", e.epoch, e.main_loss, e.main_accuracy),
        }
    }
    println!("clean test accuracy {clean:.4}");
    for &t in &cfg.test_grid {
        let acc = evaluate(&model, &exp.test_set(args.replicate, t)?)?;
        println!("test shift {t:<6} accuracy {acc:.4}");
    }
    save_checkpoint(&model, dir.join("model.ckpt"))?;
    let log_path = dir.join("train_log.json");
    fs::write(&log_path, serde_json::to_string_pretty(&log)? + "\n")
        .with_context(|| format!("writing {}", log_path.display()))?;
    Ok(())
}

fn cmd_sweep(cli: &Cli, o: &TrainOverrides) -> Result<()> {
    let cfg = load_config(cli, o)?;
    let dir = out_dir(cli, ".")?;
    let partial = dir.join("result.partial.json");
    let result = sweep_with(&cfg, Some(&partial), &mut |m| eprintln!("{m}"))?;
    let path = dir.join("result.json");
    result.save(&path)?;
    print!("{}", result.summary());
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_report(cli: &Cli, result: &Path) -> Result<()> {
    let r = SweepResult::load(result)?;
    let dir = out_dir(cli, "report")?;
    for p in write_report(&r, &dir)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
