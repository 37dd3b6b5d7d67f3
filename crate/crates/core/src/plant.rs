//! Ground-truth plant, waypoint controller and the closed-loop segment rollout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::et_filter::{self, steady_state_kf_covariance, EstimatorMode, FilterParams, FilterState};
use crate::numerics::{norm2, vec_add, vec_sub, GaussianSampler, Matrix, RngStream};
use crate::scenario::{PointClass, Scenario, TerminationParams};

/// Saturated linear feedback u = clamp(K(℘ − x̂), ±u_max).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLaw {
    pub gain: Matrix,
    pub u_max: Vec<f64>,
    pub target: Vec<f64>,
}

pub fn control(x_hat: &[f64], law: &ControlLaw) -> Vec<f64> {
    let err = vec_sub(&law.target, x_hat);
    law.gain
        .mul_vec(&err)
        .into_iter()
        .zip(&law.u_max)
        .map(|(u, &m)| u.clamp(-m, m))
        .collect()
}

/// Stationary discrete LQR gain for stage weights `state_weight·I`, `input_weight·I`.
pub fn lqr_gain(f: &Matrix, g: &Matrix, state_weight: f64, input_weight: f64) -> Result<Matrix> {
    let n = f.rows();
    let p_dim = g.cols();
    let qc = Matrix::identity(n).scale(state_weight);
    let rc = Matrix::identity(p_dim).scale(input_weight);
    let ft = f.transpose();
    let gt = g.transpose();
    let mut p = qc.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..10_000 {
        let ptf = &p * f;
        let gain = (&rc + &(&(&gt * &p) * g)).inverse()? .matmul(&(&gt * &ptf));
        let next = (&(&qc + &(&ft * &ptf)) - &(&(&ft * &(&p * g)) * &gain)).symmetrized();
        residual = next.max_abs_diff(&p) / next.max_abs().max(1.0);
        p = next;
        if residual < 1e-13 {
            let gain = (&rc + &(&(&gt * &p) * g)).inverse()?.matmul(&(&gt * &(&p * f)));
            return Ok(gain);
        }
    }
    Err(Error::Convergence {
        what: "LQR Riccati iteration",
        iterations: 10_000,
        residual,
    })
}

/// ζ: true iff ‖x̂ − ℘‖₂ ≤ ε_x or the segment step budget is spent.
pub fn terminated(x_hat: &[f64], waypoint: &[f64], k_i: usize, term: &TerminationParams) -> bool {
    norm2(&vec_sub(x_hat, waypoint)) <= term.eps_x || k_i >= term.k_max
}

/// Estimator behaviour inside one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentMode {
    /// Event-triggered throughout; terminate on mean convergence.
    Discretized,
    /// Event-triggered until within ε_KF of the waypoint, then full KF until
    /// both the mean and the covariance (‖P − P_KF‖_max ≤ ε_P) converge.
    EnforcedConvergence,
    /// Every measurement communicated.
    FullKf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentEnd {
    Reached,
    TimedOut,
    Collision(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOutcome {
    pub final_filter: FilterState,
    pub final_true_state: Vec<f64>,
    pub steps: usize,
    pub triggers: usize,
    pub end: SegmentEnd,
}

impl SegmentOutcome {
    /// Enforced-convergence segment that ran out of steps before P converged.
    pub fn covariance_unconverged(&self, mode: SegmentMode) -> bool {
        mode == SegmentMode::EnforcedConvergence && self.end == SegmentEnd::TimedOut
    }
}

/// One simulated step, for plotting and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub true_state: Vec<f64>,
    pub estimate: Vec<f64>,
    pub triggered: bool,
    pub delta: f64,
}

/// Everything needed to simulate a scenario, with noise factors, the control
/// gain and the steady-state KF covariance precomputed.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub scenario: Scenario,
    pub control_gain: Matrix,
    /// Steady-state KF posterior covariance P_KF.
    pub p_kf: Matrix,
    process_noise: GaussianSampler,
    measurement_noise: GaussianSampler,
}

impl ClosedLoop {
    /// Noise covariances only need to be PSD here, so noise-free models can be
    /// simulated; [`Scenario::validate`] is what enforces definiteness.
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let params = &scenario.system;
        params.check_dimensions()?;
        let control_gain = lqr_gain(
            &params.f,
            &params.g,
            scenario.control.state_weight,
            scenario.control.input_weight,
        )?;
        let (p_kf, _) = steady_state_kf_covariance(params, 1e-12, 100_000)?;
        Ok(ClosedLoop {
            scenario: scenario.clone(),
            control_gain,
            p_kf,
            process_noise: GaussianSampler::new(&params.q)?,
            measurement_noise: GaussianSampler::new(&params.r)?,
        })
    }

    pub fn params(&self) -> &FilterParams {
        &self.scenario.system
    }

    pub fn law_toward(&self, waypoint: &[f64]) -> ControlLaw {
        ControlLaw {
            gain: self.control_gain.clone(),
            u_max: vec![self.scenario.control.u_max; self.params().input_dim()],
            target: waypoint.to_vec(),
        }
    }

    /// x' = Fx + Gu + w
    pub fn plant_step(&self, x: &[f64], u: &[f64], rng: &mut RngStream) -> Vec<f64> {
        let p = self.params();
        let mean = vec_add(&p.f.mul_vec(x), &p.g.mul_vec(u));
        self.process_noise.sample(&mean, rng)
    }

    /// y = Hx + v
    pub fn measure(&self, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        self.measurement_noise.sample(&self.params().h.mul_vec(x), rng)
    }

    fn segment_done(&self, filter: &FilterState, waypoint: &[f64], mode: SegmentMode) -> bool {
        let term = &self.scenario.termination;
        let mean_ok = norm2(&vec_sub(&filter.belief.mean, waypoint)) <= term.eps_x;
        match mode {
            SegmentMode::EnforcedConvergence => {
                mean_ok && filter.belief.cov.max_abs_diff(&self.p_kf) <= self.scenario.convergence.eps_p
            }
            _ => mean_ok,
        }
    }

    fn maybe_switch_to_kf(&self, filter: &mut FilterState, waypoint: &[f64], mode: SegmentMode) {
        if mode == SegmentMode::EnforcedConvergence
            && filter.mode == EstimatorMode::EventTriggered
            && norm2(&vec_sub(&filter.belief.mean, waypoint)) <= self.scenario.convergence.eps_kf
        {
            filter.mode = EstimatorMode::Kalman;
        }
    }

    /// Drives the agent from its current belief to `waypoint` under threshold `delta`.
    ///
    /// Each step: control → plant → collision check on the true state →
    /// measure → predict → trigger → update → termination check. A collision
    /// ends the segment before the colliding step's measurement is processed.
    #[allow(clippy::too_many_arguments)]
    pub fn segment_rollout(
        &self,
        start: &FilterState,
        start_true: &[f64],
        waypoint: &[f64],
        delta: f64,
        mode: SegmentMode,
        rng: &mut RngStream,
        mut trace: Option<&mut Vec<TraceStep>>,
    ) -> Result<SegmentOutcome> {
        let params = self.params();
        let k_max = self.scenario.termination.k_max;
        let law = self.law_toward(waypoint);
        let delta = if mode == SegmentMode::FullKf { 0.0 } else { delta };

        let mut filter = start.start_segment();
        let mut x = start_true.to_vec();
        self.maybe_switch_to_kf(&mut filter, waypoint, mode);

        let finish = |filter: FilterState, x: Vec<f64>, end: SegmentEnd| SegmentOutcome {
            steps: filter.step_in_segment,
            triggers: filter.triggers_in_segment,
            final_filter: filter,
            final_true_state: x,
            end,
        };

        if self.segment_done(&filter, waypoint, mode) {
            return Ok(finish(filter, x, SegmentEnd::Reached));
        }

        while filter.step_in_segment < k_max {
            let u = control(&filter.belief.mean, &law);
            x = self.plant_step(&x, &u, rng);
            filter.step_in_segment += 1;
            if let PointClass::Collision(i) = self.scenario.classify_point(&x) {
                return Ok(finish(filter, x, SegmentEnd::Collision(i)));
            }
            let y = self.measure(&x, rng);
            let force = mode == SegmentMode::FullKf || filter.mode == EstimatorMode::Kalman;
            let (next, decision) = et_filter::step(&filter, &u, &y, delta, force, params)?;
            filter = next;
            if let Some(t) = trace.as_deref_mut() {
                t.push(TraceStep {
                    step: filter.step_in_segment,
                    true_state: x.clone(),
                    estimate: filter.belief.mean.clone(),
                    triggered: decision.gamma,
                    delta,
                });
            }
            self.maybe_switch_to_kf(&mut filter, waypoint, mode);
            if self.segment_done(&filter, waypoint, mode) {
                return Ok(finish(filter, x, SegmentEnd::Reached));
            }
        }
        Ok(finish(filter, x, SegmentEnd::TimedOut))
    }
}
