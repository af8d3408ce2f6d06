//! Microscopic simulation of a FIFO taxi drop-off lane.
//!
//! Vehicles follow a bounded-acceleration Newell car-following rule, taxis
//! discharge patrons according to a patience-driven decision process, and
//! a control policy (police batching, no control, no-wait, or forced
//! downstream drop-offs) governs lane entry and drop-off locations. The
//! crate also carries the estimation tools used to fit the model from
//! trajectory data and the camera math used to georeference video.

pub mod behavior;
pub mod config;
pub mod control;
pub mod distributions;
pub mod engine;
pub mod error;
pub mod estimation;
pub mod georef;
pub mod kinematics;
pub mod metrics;
pub mod montecarlo;

pub use behavior::{DropoffState, PatienceModel, Phase};
pub use config::ScenarioConfig;
pub use control::{BatchingParams, PolicySpec};
pub use distributions::{EmpiricalDistribution, MixtureGamma};
pub use engine::{run_simulation, Event, EventKind, RunResult, TaxiRecord};
pub use error::{Error, Result};
pub use kinematics::{LaneConfig, VehicleKinematics};
pub use metrics::MetricsReport;
pub use montecarlo::{run_monte_carlo, MonteCarloResult};
