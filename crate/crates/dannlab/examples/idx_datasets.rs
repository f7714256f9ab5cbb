//! Dataset ingestion: IDX files and PGM/PPM directories with a manifest,
//! round-tripped through a temporary directory.
//!
//! ```bash
//! cargo run --example idx_datasets [-- images.idx labels.idx]
//! ```

use dannlab::data::{load_idx, load_image_dir, make_synthetic_dataset, write_idx, write_image_dir};

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let mut args = std::env::args().skip(1);
    let ds = match (args.next(), args.next()) {
        (Some(images), Some(labels)) => load_idx(images, labels)?,
        _ => make_synthetic_dataset(100, [28, 28, 1], 10, 5)?,
    };
    println!(
        "{}: {} images of {:?}, {} classes",
        ds.name(),
        ds.len(),
        ds.image_shape().unwrap_or(&[]),
        ds.num_classes()
    );

    let (images, labels) = (dir.path().join("images.idx"), dir.path().join("labels.idx"));
    write_idx(&ds, &images, &labels)?;
    let back = load_idx(&images, &labels)?;
    let worst = ds
        .images()
        .iter()
        .zip(back.images())
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0f32, f32::max);
    println!("IDX round trip: labels equal {}, worst pixel error {worst:.4} (byte quantization)", back.labels() == ds.labels());

    let subset = back.slice(0, 20)?;
    let pgm_dir = dir.path().join("pgm");
    write_image_dir(&subset, &pgm_dir)?;
    let again = load_image_dir(&pgm_dir, pgm_dir.join("manifest.csv"))?;
    println!(
        "PGM directory round trip of {} images exact: {}",
        again.len(),
        again.images() == subset.images()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
