//! A desk-scale laboratory for domain-adversarial (DANN) training.
//!
//! The crate covers the whole loop: synthetic data shifts ([`shifts`]),
//! dataset ingestion ([`data`]), the DANN model and its trainer ([`dann`]),
//! and the reference/degradation/cost/gain decomposition with its sweep and
//! curve fits ([`harness`]). [`report`] turns result files into CSV tables
//! and SVG heatmaps.

pub mod dann;
pub mod data;
pub mod error;
pub mod harness;
pub mod numcore;
pub mod report;
pub mod shifts;

pub use error::{Error, Result};
