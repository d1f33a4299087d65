//! Joint localization and WiFi propagation-map estimation on a discrete grid.
//!
//! The device position is a Markov chain on a finite grid of cells. Each access
//! point contributes an RSSI map made of a log-distance path-loss mean plus a
//! Gaussian perturbation field, and the device reports noisy RSSI vectors.
//! Positions are tracked with bootstrap particle filters while the maps are
//! learned online by block online EM with averaging and periodic stabilization.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and the
//! experiment driver live in the companion `rssi-slam` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
pub mod emission;
pub mod filter;
pub mod grid;
pub mod linalg;
mod math;
pub mod metrics;
pub mod mstep;
pub mod observation;
pub mod prior;
pub mod rho;
pub mod runner;
pub mod schedule;
pub mod simulate;
pub mod stats;
pub mod theta;
pub mod transition;

pub use emission::{emission_logdensity, ApMask};
pub use error::{Error, Result};
pub use filter::exact::ExactFilter;
pub use filter::particle::{bootstrap_filter_recursion, ParticleSystem, Resampling};
pub use grid::{Cell, GridMap, Point};
pub use metrics::{localization_quantile, map_error};
pub use mstep::{m_step, penalized_q, MStepOptions, PenaltyWeight, SigmaUpdate};
pub use observation::ObservationRecord;
pub use prior::{CovarianceKernel, PerturbationPrior};
pub use runner::{
    evaluate_frozen, run_boem, run_boem_partial, BlockEvent, BoemConfig, BoemRunner, BoemTrace, FrozenEvaluation, Mode,
    PartialSigma, RhoBackend, StepOutput,
};
pub use schedule::BlockSchedule;
pub use simulate::{simulate_from_theta, simulate_observations, simulate_trajectory, InitialDistribution, Visibility};
pub use stats::SufficientStats;
pub use theta::{friis_mean, ApField, Theta};
pub use transition::TransitionKernel;
