use serde::{Deserialize, Serialize};

use super::eigen::sym_eigen;
use super::matrix::Matrix;
use super::rng::RngStream;
use crate::error::{Error, Result};

const FRAC_2_SQRT_2PI: f64 = 0.797_884_560_802_865_4;

/// Standard-normal upper tail Q(δ) = P(X > δ).
pub fn gaussian_tail_q(delta: f64) -> Result<f64> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::Input(format!("tail threshold must be finite and >= 0, got {delta}")));
    }
    Ok(0.5 * libm::erfc(delta / std::f64::consts::SQRT_2))
}

/// Attenuation β(δ) applied to the Kalman correction when no measurement is sent.
///
/// β(δ) = (2/√(2π))·δ·exp(−δ²/2) / (1 − 2Q(δ)). The denominator is evaluated as
/// erf(δ/√2) so the small-δ limit (β → 1) keeps full relative precision.
pub fn beta_coefficient(delta: f64) -> Result<f64> {
    if !delta.is_finite() || delta <= 0.0 {
        return Err(Error::Input(format!(
            "attenuation needs delta > 0, got {delta}; use the explicit update for delta = 0"
        )));
    }
    let mass = libm::erf(delta / std::f64::consts::SQRT_2);
    Ok(FRAC_2_SQRT_2PI * delta * (-0.5 * delta * delta).exp() / mass)
}

/// Probability that at least one of `m` independent whitened innovation
/// components exceeds δ in magnitude: 1 − (1 − 2Q(δ))^m.
pub fn expected_trigger_rate(delta: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Input("measurement dimension must be >= 1".into()));
    }
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::Input(format!("threshold must be finite and >= 0, got {delta}")));
    }
    let inside = libm::erf(delta / std::f64::consts::SQRT_2);
    Ok(1.0 - inside.powi(m as i32))
}

/// Gaussian belief N(mean, cov) over the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl GaussianBelief {
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if cov.rows() != mean.len() || !cov.is_square() {
            return Err(Error::Input(format!(
                "covariance is {}x{} but mean has {} entries",
                cov.rows(),
                cov.cols(),
                mean.len()
            )));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One draw from the belief (see [`GaussianSampler`]).
    pub fn sample(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(GaussianSampler::new(&self.cov)?.sample(&self.mean, rng))
    }
}

/// Precomputed square-root factor L = V·√Λ of a PSD covariance, so that
/// mean + L·ξ with ξ ~ N(0, I) has the requested covariance.
///
/// Eigenvalues in [−1e-9, 0) are floored at zero; more negative ones are rejected.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: Matrix,
    zero: bool,
}

impl GaussianSampler {
    pub fn new(cov: &Matrix) -> Result<Self> {
        let eig = sym_eigen(cov)?;
        let n = cov.rows();
        let mut factor = Matrix::zeros(n, n);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < -1e-9 {
                return Err(Error::Input(format!(
                    "covariance is indefinite (eigenvalue {lam:.3e})"
                )));
            }
            let root = lam.max(0.0).sqrt();
            for i in 0..n {
                factor[(i, k)] = eig.eigenvectors[(i, k)] * root;
            }
        }
        let zero = factor.is_zero();
        Ok(GaussianSampler { factor, zero })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows()
    }

    pub fn sample(&self, mean: &[f64], rng: &mut RngStream) -> Vec<f64> {
        if self.zero {
            return mean.to_vec();
        }
        let xi: Vec<f64> = (0..self.dim()).map(|_| rng.standard_normal()).collect();
        let offset = self.factor.mul_vec(&xi);
        mean.iter().zip(offset).map(|(m, o)| m + o).collect()
    }
}

/// Whitens an innovation: ε = Λ^{−1/2}·Vᵀ·z where Z = V·Λ·Vᵀ, so cov(ε) = I.
pub fn whiten_innovation(z: &[f64], innovation_cov: &Matrix) -> Result<Vec<f64>> {
    if z.len() != innovation_cov.rows() {
        return Err(Error::Input(format!(
            "innovation has {} entries but its covariance is {}x{}",
            z.len(),
            innovation_cov.rows(),
            innovation_cov.cols()
        )));
    }
    let eig = sym_eigen(innovation_cov)?;
    let m = z.len();
    let mut eps = Vec::with_capacity(m);
    for k in 0..m {
        let lam = eig.eigenvalues[k];
        if lam <= 1e-12 {
            return Err(Error::Numerical(format!(
                "innovation covariance is singular (eigenvalue {lam:.3e})"
            )));
        }
        let proj: f64 = (0..m).map(|i| eig.eigenvectors[(i, k)] * z[i]).sum();
        eps.push(proj / lam.sqrt());
    }
    Ok(eps)
}
