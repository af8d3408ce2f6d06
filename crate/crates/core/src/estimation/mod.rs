//! Fitting model inputs from trajectory-derived data: lane partitioning,
//! censored mixture-gamma patience fits, and empirical distributions.

mod fit;
mod io;
mod likelihood;
mod nelder_mead;
mod partition;

use serde::{Deserialize, Serialize};

pub use fit::{fit_empirical, fit_mixture_gamma, FitOptions, MixtureFit};
pub use io::{parse_observations, read_observations};
pub use likelihood::censored_log_likelihood;
pub use nelder_mead::{nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use partition::{partition_lane, LanePartition};

/// One forced stop seen in trajectory data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcedStopObservation {
    /// Where the stop happened (m).
    pub location: f64,
    /// Forced wait (s): until door opening if the patron alighted at this
    /// stop, else the whole stop.
    pub wait: f64,
    /// The patron alighted here, so `wait` is the patience itself rather
    /// than a lower bound on it.
    pub discharged: bool,
    /// 1-based count of the taxi's forced stops.
    pub instance: u32,
}
