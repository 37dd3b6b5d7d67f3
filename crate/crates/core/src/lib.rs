//! Synthesis of event-triggered estimation strategies for waypoint navigation.
//!
//! The pipeline simulates an event-triggered Kalman filter in closed loop,
//! abstracts it into a finite MDP over covariance regions, solves the
//! three-objective problem (target reach, collision, communication energy)
//! and validates the chosen strategy by Monte-Carlo simulation.

pub mod abstraction;
pub mod error;
pub mod et_filter;
pub mod harness;
pub mod mo_solver;
pub mod numerics;
pub mod plant;
pub mod scenario;

pub use error::{Error, Result};
