//! Fairness-aware spatiotemporal demand forecasting.
//!
//! The crate turns raw trip records and demographic polygons into hourly
//! demand tensors on a square city grid, trains a three-stream
//! convolutional predictor (3D demand history, 2D urban features, 1D
//! city-wide series) under an accuracy + fairness objective, and reports
//! per-capita fairness gaps between advantaged and disadvantaged groups.
//!
//! Module map:
//!
//! - [`ingest`]: grid construction, trip aggregation, polygon allocation,
//!   feature rasterization, series loading, sliding-window slices.
//! - [`tensor`]: dense tensors, reverse-mode autodiff, same-padding
//!   convolutions, Adam, checkpoints.
//! - [`model`]: the three-stream network and the historical-average baseline.
//! - [`fairness`]: group labeling, RFG/IFG gap metrics, the four fairness losses.
//! - [`train`]: mini-batch training under the composite objective.
//! - [`eval`]: MAE, gap reports, Spearman's rho, heatmap export.
//! - [`synth`]: seeded synthetic biased cities.

pub mod error;
pub mod eval;
pub mod fairness;
pub mod ingest;
pub mod io;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
