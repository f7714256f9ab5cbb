//! The four-configuration pipeline (reference, degradation, cost, full),
//! the accuracy decomposition, grid sweeps with resume, and curve fits.

mod config;
mod decompose;
mod fit;
mod sweep;

pub use config::{DataSplit, DatasetSource, ExperimentConfig, Overrides, ShiftKind, SCHEMA_VERSION};
pub use decompose::{decompose, quantize, DecompositionResult, ACCURACY_QUANTUM};
pub use fit::{fit_gain_surface, fit_sigmoid, FitParams, FitResult, FIT_STARTS};
pub use sweep::{
    run_reference, sweep, sweep_with, Axis, Baseline, DaRun, Experiment, FitOutcome, Fits, SweepResult,
    SweepUnit, RESUME_MARKER,
};
