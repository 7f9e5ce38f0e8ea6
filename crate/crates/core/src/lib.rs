//! Flow-dependent ensemble forecasting workbench.
//!
//! The crate is organized around the forecast pipeline:
//!
//! - [`grid`]: lat-lon geometry, latitude weighting, pooling, distances
//! - [`field_io`]: the shared on-disk field format and CSV export
//! - [`losses`]: CRPS / KL / L1 training objectives with analytic gradients
//! - [`metrics`] + [`climatology`] + [`report`]: probabilistic verification
//! - [`model`]: variational perturbation models, the forecaster, rollout,
//!   curriculum training, and the reverse-mode kernel that drives them
//! - [`dynamics`]: synthetic truth generators (Lorenz-96, translating vortex)
//! - [`track`]: cyclone tracking and ensemble track statistics

pub mod climatology;
pub mod dynamics;
pub mod error;
pub mod field_io;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod report;
pub mod track;

pub use error::{Error, Result};
pub use grid::{Field, GridSpec, LatWeights};
pub use losses::{CrpsEstimator, GaussianLatent, LossValue};
pub use metrics::EnsembleForecast;
pub use report::{MetricReport, MetricRow};
