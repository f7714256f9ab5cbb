//! Noise and blur shifts over a grid of intensities, with the per-channel
//! statistics the CLI prints. Shifted samples are written as PGM files.
//!
//! ```bash
//! cargo run --example data_shifts [-- out_dir]
//! ```

use dannlab::data::{apply_shift, make_synthetic_dataset, write_pnm};
use dannlab::numcore::Rng;
use dannlab::shifts::ShiftSpec;

pub fn run_example() -> anyhow::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dannlab_shifts"));
    std::fs::create_dir_all(&out)?;
    let ds = make_synthetic_dataset(32, [28, 28, 1], 4, 0)?;
    let mut rng = Rng::seed(0);

    println!("noise  mean     std");
    for index in [0, 3, 6, 9, 12] {
        let spec = ShiftSpec::noise_from_index(index);
        let shifted = apply_shift(&ds, &spec, &mut rng)?;
        let (m, s) = shifted.channel_stats()[0];
        println!("{:<6} {m:.4}  {s:.4}", index as f64 / 10.0);
        write_pnm(out.join(format!("noise_{index:02}.pgm")), &shifted.images()[0])?;
    }
    println!("blur   mean     std");
    for k in [1, 3, 5, 7, 9] {
        let shifted = apply_shift(&ds, &ShiftSpec::blur(k)?, &mut rng)?;
        let (m, s) = shifted.channel_stats()[0];
        println!("{k:<6} {m:.4}  {s:.4}");
        write_pnm(out.join(format!("blur_{k}.pgm")), &shifted.images()[0])?;
    }
    println!("samples in {}", out.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
