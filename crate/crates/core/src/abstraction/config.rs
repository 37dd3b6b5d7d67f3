use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::SegmentMode;

/// Which abstraction to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One state per waypoint: the estimator is driven to the KF steady state
    /// before every decision.
    EnforcedConvergence,
    /// Covariance discretized into spectral regions at every waypoint.
    Discretized,
}

impl Method {
    /// 1 → enforced convergence, 2 → discretized.
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Method::EnforcedConvergence),
            2 => Ok(Method::Discretized),
            _ => Err(Error::Input(format!("method must be 1 or 2, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Method::EnforcedConvergence => 1,
            Method::Discretized => 2,
        }
    }

    pub fn segment_mode(self) -> SegmentMode {
        match self {
            Method::EnforcedConvergence => SegmentMode::EnforcedConvergence,
            Method::Discretized => SegmentMode::Discretized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionConfig {
    pub method: Method,
    pub bins_theta: usize,
    pub bins_lambda: usize,
    /// Monte-Carlo rollouts per (state, action) pair.
    pub samples_per_action: usize,
    pub pool_cap: usize,
    pub calibration_runs: usize,
    pub seed: u64,
}

impl Default for AbstractionConfig {
    fn default() -> Self {
        AbstractionConfig {
            method: Method::Discretized,
            bins_theta: 3,
            bins_lambda: 3,
            samples_per_action: 500,
            pool_cap: 2000,
            calibration_runs: 400,
            seed: 0,
        }
    }
}

impl AbstractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_action == 0 {
            return Err(Error::Input("samples per action must be at least 1".into()));
        }
        if self.pool_cap == 0 || self.bins_theta == 0 || self.bins_lambda == 0 {
            return Err(Error::Input("pool capacity and bin counts must be at least 1".into()));
        }
        if self.method == Method::Discretized && self.calibration_runs == 0 {
            return Err(Error::Input("the discretized method needs calibration runs".into()));
        }
        Ok(())
    }
}
