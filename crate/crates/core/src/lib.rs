//! Personalized trip energy estimation.
//!
//! Trips are ingested from vehicle logs, labeled with energy, and split per
//! driver. For a target route the model selects similar historical trips,
//! encodes the driver's preferences from their trajectories, predicts
//! per-road driving behavior, and fuses everything into an energy estimate.
//! Parameters are meta-learned across drivers and fine-tuned per driver.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod model;
pub mod selection;
pub mod synthetic;
pub mod training;
pub mod types;

pub use error::{Error, Result};
