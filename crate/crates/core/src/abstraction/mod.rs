//! Finite MDP abstraction of the closed loop.
//!
//! Two state spaces are supported. Enforced convergence keeps one state per
//! waypoint by running the full KF near each waypoint until the covariance
//! reaches the steady state. The discretized method labels each arrival
//! covariance by spectral regions: per eigen-axis, the angle to a nominal
//! direction and the eigenvalue magnitude. Transition probabilities and
//! energy costs are Monte-Carlo estimates from belief pools.

mod builder;
mod config;
mod probe;
mod regions;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use builder::{
    build_mdp, build_mdp_with_regions, Abstraction, AbstractionDiagnostics, AbstractionMeta, BeliefPool, PoolEntry,
};
pub use config::{AbstractionConfig, Method};
pub use probe::{compare_abstractions, refinement_probe, ProbeReport};
pub use regions::{
    calibrate_regions, classify_covariance, empirical_cov_upper_bound, region_count_formulas, AxisRegions, Clamp,
    CovClassification, CovRegion, CovState, RegionTables,
};

/// A state of the abstract MDP. Terminals are absorbing and sort last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbstractState {
    /// Discretized belief at a waypoint.
    Belief { waypoint: usize, cov: CovState },
    /// Belief driven to the steady-state KF covariance at a waypoint.
    Converged { waypoint: usize },
    Coll,
    Tar,
    Free,
}

impl AbstractState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, AbstractState::Coll | AbstractState::Tar | AbstractState::Free)
    }

    pub fn waypoint(&self) -> Option<usize> {
        match self {
            AbstractState::Belief { waypoint, .. } | AbstractState::Converged { waypoint } => Some(*waypoint),
            _ => None,
        }
    }
}

impl fmt::Display for AbstractState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbstractState::Belief { waypoint, cov } => {
                let r: Vec<String> = cov.regions.iter().map(|i| i.to_string()).collect();
                write!(f, "wp{waypoint}[{}]", r.join(","))
            }
            AbstractState::Converged { waypoint } => write!(f, "wp{waypoint}[kf]"),
            AbstractState::Coll => f.write_str("coll"),
            AbstractState::Tar => f.write_str("tar"),
            AbstractState::Free => f.write_str("free"),
        }
    }
}
