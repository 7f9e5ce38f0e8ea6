//! Synthetic ground truth at desk scale: a Lorenz-96 system for training
//! and verification experiments, an analytic translating-vortex generator
//! with known tracks for tracker oracles, and sliding-window dataset
//! construction with chronological splits.

pub mod dataset;
pub mod lorenz;
pub mod vortex;

pub use dataset::{Calendar, Dataset, FrameSeries, Split};
pub use lorenz::{l96_integrate, l96_step_rk4, L96Config};
pub use vortex::{vortex_fields, Ridge, VortexCore, VortexScenario};
