//! Runs every example that needs no downloaded data.

#[path = "../examples/gradient_reversal.rs"]
mod gradient_reversal;
#[path = "../examples/data_shifts.rs"]
mod data_shifts;
#[path = "../examples/color_shift.rs"]
mod color_shift;
#[path = "../examples/idx_datasets.rs"]
mod idx_datasets;
#[path = "../examples/domain_adaptation.rs"]
mod domain_adaptation;
#[path = "../examples/curve_fits.rs"]
mod curve_fits;
#[path = "../examples/noise_sweep.rs"]
mod noise_sweep;

#[test]
fn gradient_reversal_runs() {
    gradient_reversal::run_example().unwrap();
}

#[test]
fn data_shifts_runs() {
    data_shifts::run_example().unwrap();
}

#[test]
fn color_shift_runs() {
    color_shift::run_example().unwrap();
}

#[test]
fn idx_datasets_runs() {
    idx_datasets::run_example().unwrap();
}

#[test]
fn domain_adaptation_runs() {
    domain_adaptation::run_example().unwrap();
}

#[test]
fn curve_fits_runs() {
    curve_fits::run_example().unwrap();
}

#[test]
fn noise_sweep_runs() {
    noise_sweep::run_example().unwrap();
}
