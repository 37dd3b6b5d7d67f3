//! Event-triggered minimum-mean-square-error estimator.
//!
//! Each step runs a Kalman prediction, then the sensor decides from the
//! whitened innovation whether to transmit. A transmitted measurement gets the
//! standard Kalman update; a withheld one still shrinks the covariance by the
//! attenuated factor β(δ), because the estimator learns that the innovation
//! stayed inside the threshold box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{beta_coefficient, vec_add, vec_sub, whiten_innovation, GaussianBelief, Matrix};

/// Linear-Gaussian model x' = Fx + Gu + w, y = Hx + v with w ~ N(0,Q), v ~ N(0,R).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub q: Matrix,
    pub r: Matrix,
}

impl FilterParams {
    pub fn state_dim(&self) -> usize {
        self.f.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.g.cols()
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.rows()
    }

    /// Dimension consistency: F n×n, G n×p, H m×n, Q n×n, R m×m.
    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.f.rows();
        let m = self.h.rows();
        let bad = |what: &str, got: &Matrix, rows: usize, cols: usize| {
            Error::Input(format!(
                "{what} is {}x{}, expected {rows}x{cols}",
                got.rows(),
                got.cols()
            ))
        };
        if !self.f.is_square() {
            return Err(bad("F", &self.f, n, n));
        }
        if self.g.rows() != n {
            return Err(bad("G", &self.g, n, self.g.cols()));
        }
        if self.h.cols() != n {
            return Err(bad("H", &self.h, m, n));
        }
        if self.q.rows() != n || self.q.cols() != n {
            return Err(bad("Q", &self.q, n, n));
        }
        if self.r.rows() != m || self.r.cols() != m {
            return Err(bad("R", &self.r, m, m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorMode {
    /// Innovation-triggered communication.
    EventTriggered,
    /// Every measurement is communicated.
    Kalman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub belief: GaussianBelief,
    pub step_in_segment: usize,
    pub triggers_in_segment: usize,
    pub mode: EstimatorMode,
}

impl FilterState {
    pub fn new(belief: GaussianBelief) -> Self {
        FilterState {
            belief,
            step_in_segment: 0,
            triggers_in_segment: 0,
            mode: EstimatorMode::EventTriggered,
        }
    }

    /// Same belief, counters reset and mode back to event-triggered.
    pub fn start_segment(&self) -> Self {
        FilterState::new(self.belief.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDecision {
    pub gamma: bool,
    pub epsilon: Vec<f64>,
    pub innovation: Vec<f64>,
    pub innovation_cov: Matrix,
}

/// A priori step: x̂⁻ = Fx̂ + Gu, P⁻ = FPFᵀ + Q.
pub fn predict(state: &FilterState, u: &[f64], params: &FilterParams) -> Result<FilterState> {
    let n = params.state_dim();
    if state.belief.dim() != n || u.len() != params.input_dim() {
        return Err(Error::Input(format!(
            "predict: state has {} entries and input {}, model expects {n} and {}",
            state.belief.dim(),
            u.len(),
            params.input_dim()
        )));
    }
    let mean = vec_add(&params.f.mul_vec(&state.belief.mean), &params.g.mul_vec(u));
    let fp = &params.f * &state.belief.cov;
    let cov = (&(&fp * &params.f.transpose()) + &params.q).symmetrized();
    Ok(FilterState {
        belief: GaussianBelief { mean, cov },
        ..state.clone()
    })
}

/// Z = HP⁻Hᵀ + R
pub fn innovation_covariance(p_minus: &Matrix, params: &FilterParams) -> Matrix {
    let hp = &params.h * p_minus;
    (&(&hp * &params.h.transpose()) + &params.r).symmetrized()
}

/// Decides whether the sensor transmits `y`, from the predicted state.
///
/// γ = 0 iff ‖ε‖∞ ≤ δ. A zero innovation never triggers and is not whitened,
/// which keeps noise-free models usable.
pub fn decide_trigger(
    predicted: &FilterState,
    y: &[f64],
    delta: f64,
    params: &FilterParams,
) -> Result<TriggerDecision> {
    if y.len() != params.measurement_dim() {
        return Err(Error::Input(format!(
            "measurement has {} entries, model expects {}",
            y.len(),
            params.measurement_dim()
        )));
    }
    if !(delta >= 0.0) {
        return Err(Error::Input(format!("threshold must be >= 0, got {delta}")));
    }
    let innovation = vec_sub(y, &params.h.mul_vec(&predicted.belief.mean));
    let innovation_cov = innovation_covariance(&predicted.belief.cov, params);
    let epsilon = if innovation.iter().all(|&z| z == 0.0) {
        vec![0.0; innovation.len()]
    } else {
        whiten_innovation(&innovation, &innovation_cov)?
    };
    let sup = epsilon.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok(TriggerDecision {
        gamma: sup > delta,
        epsilon,
        innovation,
        innovation_cov,
    })
}

/// K = P⁻Hᵀ(HP⁻Hᵀ + R)⁻¹; zero when P⁻ is zero.
pub fn kalman_gain(p_minus: &Matrix, params: &FilterParams) -> Result<Matrix> {
    let pht = p_minus * &params.h.transpose();
    if p_minus.is_zero() {
        return Ok(pht);
    }
    let z_inv = innovation_covariance(p_minus, params).inverse()?;
    Ok(&pht * &z_inv)
}

/// g_λ(P) = P − λ·PHᵀ(HPHᵀ + R)⁻¹HP, symmetrized.
pub fn g_lambda(p: &Matrix, lambda: f64, params: &FilterParams) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Input(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    if lambda == 0.0 || p.is_zero() {
        return Ok(p.clone());
    }
    let k = kalman_gain(p, params)?;
    let correction = &(&k * &params.h) * p;
    Ok((p - &correction.scale(lambda)).symmetrized())
}

/// Joseph-form explicit update (I−KH)P⁻(I−KH)ᵀ + KRKᵀ.
fn joseph_update(p_minus: &Matrix, k: &Matrix, params: &FilterParams) -> Matrix {
    let n = p_minus.rows();
    let i_kh = &Matrix::identity(n) - &(k * &params.h);
    let a = &(&i_kh * p_minus) * &i_kh.transpose();
    let b = &(k * &params.r) * &k.transpose();
    (&a + &b).symmetrized()
}

/// A posteriori step.
///
/// γ = 1: x̂ = x̂⁻ + Kz with the Joseph-form covariance update.
/// γ = 0: x̂ = x̂⁻ and P = g_β(δ)(P⁻). At δ = 0 a withheld measurement can
/// only mean ε = 0 exactly, so the full-information limit β = 1 is used.
pub fn update(
    predicted: &FilterState,
    decision: &TriggerDecision,
    delta: f64,
    params: &FilterParams,
) -> Result<FilterState> {
    let p_minus = &predicted.belief.cov;
    let mut next = predicted.clone();
    if decision.gamma {
        let k = kalman_gain(p_minus, params)?;
        next.belief.mean = vec_add(&predicted.belief.mean, &k.mul_vec(&decision.innovation));
        next.belief.cov = if p_minus.is_zero() {
            p_minus.clone()
        } else {
            joseph_update(p_minus, &k, params)
        };
        next.triggers_in_segment += 1;
    } else {
        let beta = if delta > 0.0 { beta_coefficient(delta)? } else { 1.0 };
        next.belief.cov = g_lambda(p_minus, beta, params)?;
    }
    Ok(next)
}

/// One full predict → decide → update cycle. With `force_trigger` the
/// measurement is always transmitted (plain Kalman filter step).
pub fn step(
    state: &FilterState,
    u: &[f64],
    y: &[f64],
    delta: f64,
    force_trigger: bool,
    params: &FilterParams,
) -> Result<(FilterState, TriggerDecision)> {
    let predicted = predict(state, u, params)?;
    let mut decision = decide_trigger(&predicted, y, delta, params)?;
    if force_trigger {
        decision.gamma = true;
    }
    let next = update(&predicted, &decision, delta, params)?;
    Ok((next, decision))
}

/// Fixed point of the Riccati recursion P⁻ = FPFᵀ + Q, P = g₁(P⁻).
///
/// Returns `(posterior, prior)`. Iteration starts from Q and stops when
/// successive posteriors differ by less than `tol` in max-norm.
pub fn steady_state_kf_covariance(
    params: &FilterParams,
    tol: f64,
    max_iter: usize,
) -> Result<(Matrix, Matrix)> {
    params.check_dimensions()?;
    let ft = params.f.transpose();
    let mut p = params.q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let prior = (&(&(&params.f * &p) * &ft) + &params.q).symmetrized();
        let post = g_lambda(&prior, 1.0, params)?;
        residual = post.max_abs_diff(&p);
        p = post;
        if residual < tol {
            return Ok((p, prior));
        }
    }
    Err(Error::Convergence {
        what: "steady-state Riccati recursion",
        iterations: max_iter,
        residual,
    })
}
