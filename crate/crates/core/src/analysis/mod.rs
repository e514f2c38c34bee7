//! Closed-form convergence bounds, the heterogeneity estimator and its
//! scaling experiment, the majority-vote error experiment and
//! communication-cost accounting.

mod bits;
mod bounds;
mod vote;
mod zeta;

pub use bits::{bit_accounting, downlink_entry_bits, BitMode, BitReport};
pub use bounds::{corollary2_bound, theorem1_bound, theorem4_bound, BoundInputs};
pub use vote::{vote_error_experiment, vote_error_oracle, VoteErrorResult};
pub use zeta::{
    estimate_zeta, heterogeneity_at, log_log_slope, zeta_scaling, zeta_scaling_experiment, ZetaEstimate,
    ZetaScaling,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("flip probability must lie in (0, 1/2), got {0}")]
    FlipProbability(f64),
    #[error("{0}")]
    Empty(&'static str),
    #[error(transparent)]
    Data(#[from] crate::dataio::DataError),
}
