//! Sigmoid fit of a degradation curve and gaussian x quadratic fit of a gain
//! surface, on synthetic measurements with a little noise.
//!
//! ```bash
//! cargo run --example curve_fits
//! ```

use dannlab::harness::{fit_gain_surface, fit_sigmoid};
use dannlab::numcore::Rng;

pub fn run_example() -> anyhow::Result<()> {
    let mut rng = Rng::seed(4);
    let xs: Vec<f64> = (0..=12).map(|i| i as f64 / 10.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| 0.78 / (1.0 + (-9.0 * (x - 0.8)).exp()) + 0.01 * (rng.uniform_f64() - 0.5))
        .collect();
    let fit = fit_sigmoid(&xs, &ys)?;
    println!("degradation: {:?}", fit.params);
    println!("  rmse {:.4}, converged {}", fit.rmse, fit.converged);

    let da: Vec<f64> = (0..=12).step_by(2).map(|i| i as f64 / 10.0).collect();
    let grid: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| {
            da.iter()
                .map(|&y| 0.5 * (-(x - 1.1f64).powi(2) / (2.0 * 0.25f64.powi(2))).exp() * (0.8 + 0.4 * y - 0.4 * y * y))
                .collect()
        })
        .collect();
    let fit = fit_gain_surface(&xs, &da, &grid)?;
    println!("gain: {:?}", fit.params);
    println!("  rmse {:.2e}, peak at {:?}", fit.rmse, fit.peak);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
