//! Reinhard color shift of RGB patches toward a target image's LAB
//! statistics, on 96x96 random resized crops.
//!
//! ```bash
//! cargo run --example color_shift
//! ```

use dannlab::data::random_resized_crop;
use dannlab::numcore::{Rng, Tensor};
use dannlab::shifts::{color_shift, compute_lab_stats};

fn stained(rng: &mut Rng, tint: [f32; 3]) -> anyhow::Result<Tensor> {
    let (h, w) = (128, 160);
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            let cell = (((x / 16) + (y / 16)) % 2) as f32;
            for t in tint {
                data.push((t * (0.6 + 0.3 * cell) + 0.1 * rng.uniform()).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Tensor::new(vec![h, w, 3], data)?)
}

pub fn run_example() -> anyhow::Result<()> {
    let mut rng = Rng::seed(11);
    let source = random_resized_crop(&stained(&mut rng, [0.9, 0.5, 0.8])?, 96, 96, &mut rng)?;
    let target = random_resized_crop(&stained(&mut rng, [0.6, 0.3, 0.9])?, 96, 96, &mut rng)?;

    let want = compute_lab_stats(&target)?;
    let before = compute_lab_stats(&source)?;
    let shifted = color_shift(&source, &want)?;
    let after = compute_lab_stats(&shifted)?;
    for (name, s) in [("source", &before), ("target", &want), ("shifted", &after)] {
        let (m, d) = (s.mean(), s.std());
        println!(
            "{name:<8} L {:6.2} +- {:5.2}   a {:6.2} +- {:5.2}   b {:6.2} +- {:5.2}",
            m[0], d[0], m[1], d[1], m[2], d[2]
        );
    }
    // Reapplying the source's own statistics should give the source back.
    let back = color_shift(&source, &before)?;
    println!("identity-target reconstruction error {:.2e}", back.max_abs_diff(&source));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
