use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::AbstractionConfig;
use crate::error::{Error, Result};
use crate::et_filter::{g_lambda, FilterState};
use crate::numerics::{beta_coefficient, dot, norm2, sym_eigen, GaussianBelief, Matrix, RngStream};
use crate::numerics::label;
use crate::plant::{ClosedLoop, SegmentEnd, SegmentMode};

/// Relative gap below which two eigenvalues are treated as equal.
const DEGENERATE_REL: f64 = 1e-9;

/// One cell of an axis table: an orientation band around `v_nom` crossed with
/// an eigenvalue band. Both intervals are half-open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovRegion {
    pub v_nom: Vec<f64>,
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub lam_lo: f64,
    pub lam_hi: f64,
}

impl CovRegion {
    pub fn contains(&self, theta: f64, lambda: f64) -> bool {
        self.theta_lo <= theta && theta < self.theta_hi && self.lam_lo <= lambda && lambda < self.lam_hi
    }
}

/// Region table for one eigen-axis at one waypoint.
///
/// `theta_edges` run from 0 to π/2 and `lambda_edges` from the floor to the
/// cap, both strictly increasing. Region index = θ-bin · λ-bins + λ-bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisRegions {
    pub v_nom: Vec<f64>,
    pub theta_edges: Vec<f64>,
    pub lambda_edges: Vec<f64>,
}

/// Which end of the eigenvalue range a classification had to clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Clamp {
    pub above_cap: bool,
    pub below_floor: bool,
}

fn bin_of(edges: &[f64], value: f64) -> usize {
    let interior = &edges[1..edges.len() - 1];
    interior.partition_point(|&e| e <= value)
}

fn bisect_edges(edges: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * edges.len() - 1);
    for w in edges.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*edges.last().expect("edges are nonempty"));
    out
}

impl AxisRegions {
    pub fn theta_bins(&self) -> usize {
        self.theta_edges.len() - 1
    }

    pub fn lambda_bins(&self) -> usize {
        self.lambda_edges.len() - 1
    }

    pub fn region_count(&self) -> usize {
        self.theta_bins() * self.lambda_bins()
    }

    pub fn region(&self, index: usize) -> CovRegion {
        let (t, l) = (index / self.lambda_bins(), index % self.lambda_bins());
        CovRegion {
            v_nom: self.v_nom.clone(),
            theta_lo: self.theta_edges[t],
            theta_hi: self.theta_edges[t + 1],
            lam_lo: self.lambda_edges[l],
            lam_hi: self.lambda_edges[l + 1],
        }
    }

    /// Region index for an (angle, eigenvalue) pair. Values outside the table
    /// land in the nearest end bin.
    pub fn locate(&self, theta: f64, lambda: f64) -> (usize, Clamp) {
        let t = bin_of(&self.theta_edges, theta);
        let l = bin_of(&self.lambda_edges, lambda);
        let clamp = Clamp {
            above_cap: lambda >= *self.lambda_edges.last().unwrap(),
            below_floor: lambda < self.lambda_edges[0],
        };
        (t * self.lambda_bins() + l, clamp)
    }

    /// Every bin split at its midpoint; each new bin lies inside exactly one old bin.
    pub fn bisected(&self) -> AxisRegions {
        AxisRegions {
            v_nom: self.v_nom.clone(),
            theta_edges: bisect_edges(&self.theta_edges),
            lambda_edges: bisect_edges(&self.lambda_edges),
        }
    }

    /// Index of the region of `self` that contains region `fine_index` of `fine`.
    pub fn containing(&self, fine: &AxisRegions, fine_index: usize) -> usize {
        let r = fine.region(fine_index);
        self.locate(r.theta_lo, r.lam_lo).0
    }

    pub fn check(&self) -> Result<()> {
        let unit = (norm2(&self.v_nom) - 1.0).abs() <= 1e-12;
        let increasing = |e: &[f64]| e.len() >= 2 && e.windows(2).all(|w| w[0] < w[1]);
        if !unit {
            return Err(Error::Input("region table: v_nom is not a unit vector".into()));
        }
        if !increasing(&self.theta_edges) || self.theta_edges[0] != 0.0 || *self.theta_edges.last().unwrap() != FRAC_PI_2 {
            return Err(Error::Input("region table: theta edges must rise from 0 to pi/2".into()));
        }
        if !increasing(&self.lambda_edges) || self.lambda_edges[0] < 0.0 {
            return Err(Error::Input("region table: lambda edges must be nonnegative and increasing".into()));
        }
        Ok(())
    }
}

/// Discretized covariance: one region index per eigen-axis (largest first).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CovState {
    pub regions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovClassification {
    pub state: CovState,
    /// Per-axis angle to the nominal direction.
    pub thetas: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub above_cap: usize,
    pub below_floor: usize,
}

/// Per-axis angles θ_i = arccos|v_i·v_nom,i| with the degenerate-pair rule:
/// any axis whose eigenvalue is within 1e-9·λ₁ of another gets θ = 0.
fn axis_angles(values: &[f64], vectors: &[Vec<f64>], v_nom: &[&[f64]]) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            if is_degenerate(values, i) {
                0.0
            } else {
                dot(&vectors[i], v_nom[i]).abs().clamp(0.0, 1.0).acos()
            }
        })
        .collect()
}

fn is_degenerate(values: &[f64], i: usize) -> bool {
    let scale = values.first().copied().unwrap_or(0.0).abs();
    (0..values.len()).any(|j| j != i && (values[i] - values[j]).abs() <= DEGENERATE_REL * scale)
}

/// Maps a covariance to its covariance state under one waypoint's axis tables.
///
/// Positive semidefinite input is accepted so noise-free models can be
/// abstracted; indefinite, asymmetric or non-finite input is rejected.
pub fn classify_covariance(p: &Matrix, axes: &[AxisRegions]) -> Result<CovClassification> {
    if !p.is_square() || p.rows() != axes.len() {
        return Err(Error::Input(format!(
            "covariance is {}x{} but {} axis tables were given",
            p.rows(),
            p.cols(),
            axes.len()
        )));
    }
    if !p.is_finite() || p.asymmetry() > 1e-9 * p.max_abs().max(1e-300) {
        return Err(Error::Input("covariance is not a finite symmetric matrix".into()));
    }
    let eig = sym_eigen(p)?;
    let min = *eig.eigenvalues.last().unwrap();
    if min < -1e-12 * eig.eigenvalues[0].abs().max(1e-300) {
        return Err(Error::Input(format!("covariance is indefinite (eigenvalue {min:.3e})")));
    }
    let n = axes.len();
    let vectors: Vec<Vec<f64>> = (0..n).map(|i| eig.vector(i)).collect();
    let noms: Vec<&[f64]> = axes.iter().map(|a| a.v_nom.as_slice()).collect();
    let thetas = axis_angles(&eig.eigenvalues, &vectors, &noms);
    let mut regions = Vec::with_capacity(n);
    let (mut above_cap, mut below_floor) = (0, 0);
    for i in 0..n {
        let (idx, clamp) = axes[i].locate(thetas[i], eig.eigenvalues[i]);
        above_cap += clamp.above_cap as usize;
        below_floor += clamp.below_floor as usize;
        regions.push(idx);
    }
    Ok(CovClassification {
        state: CovState { regions },
        thetas,
        eigenvalues: eig.eigenvalues,
        above_cap,
        below_floor,
    })
}

/// Axis tables for every decision waypoint ℘_0 … ℘_{N−1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTables {
    pub waypoints: Vec<Vec<AxisRegions>>,
    /// Calibration observations recorded at each waypoint.
    pub observations: Vec<usize>,
}

impl RegionTables {
    pub fn bisected(&self) -> RegionTables {
        RegionTables {
            waypoints: self
                .waypoints
                .iter()
                .map(|axes| axes.iter().map(AxisRegions::bisected).collect())
                .collect(),
            observations: self.observations.clone(),
        }
    }

    pub fn axes(&self, waypoint: usize) -> Result<&[AxisRegions]> {
        self.waypoints
            .get(waypoint)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Input(format!("no region table for waypoint {waypoint}")))
    }

    pub fn check(&self) -> Result<()> {
        self.waypoints.iter().flatten().try_for_each(AxisRegions::check)
    }
}

/// Per-axis eigenvalue cap: starting from P_KF, apply `k_max` implicit-only
/// updates at the largest threshold and take 1.1× the resulting eigenvalues.
pub fn empirical_cov_upper_bound(closed_loop: &ClosedLoop, k_max: usize) -> Result<Vec<f64>> {
    let params = closed_loop.params();
    let delta_max = *closed_loop
        .scenario
        .deltas
        .last()
        .ok_or_else(|| Error::Input("threshold set is empty".into()))?;
    let beta = beta_coefficient(delta_max)?;
    let ft = params.f.transpose();
    let mut p = closed_loop.p_kf.clone();
    for _ in 0..k_max {
        let prior = (&(&(&params.f * &p) * &ft) + &params.q).symmetrized();
        p = g_lambda(&prior, beta, params)?;
    }
    Ok(sym_eigen(&p)?.eigenvalues.iter().map(|l| 1.1 * l.max(0.0)).collect())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn strictly_inside(mut cuts: Vec<f64>, lo: f64, hi: f64) -> Vec<f64> {
    cuts.retain(|&c| c > lo && c < hi);
    cuts.dedup();
    cuts
}

struct Observation {
    values: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

fn observe(p: &Matrix) -> Result<Observation> {
    let eig = sym_eigen(p)?;
    let n = p.rows();
    Ok(Observation {
        vectors: (0..n).map(|i| eig.vector(i)).collect(),
        values: eig.eigenvalues,
    })
}

/// Covariances seen at each decision waypoint over one calibration run.
fn calibration_run(closed_loop: &ClosedLoop, run: usize, seed: u64) -> Result<Vec<Matrix>> {
    let scenario = &closed_loop.scenario;
    let mut rng = RngStream::derive(seed, &[label("calibrate"), run as u64]);
    let initial = GaussianBelief::new(scenario.initial.mean.clone(), scenario.initial.cov.clone())?;
    let mut x = initial.sample(&mut rng)?;
    let mut filter = FilterState::new(initial);
    let mut seen = Vec::new();
    for i in 0..scenario.segment_count() {
        seen.push(filter.belief.cov.clone());
        let delta = scenario.deltas[(run + i) % scenario.deltas.len()];
        let out = closed_loop.segment_rollout(
            &filter,
            &x,
            &scenario.waypoints[i + 1],
            delta,
            SegmentMode::Discretized,
            &mut rng,
            None,
        )?;
        if let SegmentEnd::Collision(_) = out.end {
            break;
        }
        filter = out.final_filter;
        x = out.final_true_state;
    }
    Ok(seen)
}

fn axis_table(obs: &[Observation], axis: usize, bins_theta: usize, bins_lambda: usize, kf_floor: f64, cap: f64) -> AxisRegions {
    let n = obs[0].values.len();
    let usable: Vec<&Observation> = obs.iter().filter(|o| !is_degenerate(&o.values, axis)).collect();
    let v_nom = match usable.first() {
        None => {
            let mut e = vec![0.0; n];
            e[axis] = 1.0;
            e
        }
        Some(first) => {
            let reference = &first.vectors[axis];
            let mut sum = vec![0.0; n];
            for o in &usable {
                let v = &o.vectors[axis];
                let sign = if dot(v, reference) < 0.0 { -1.0 } else { 1.0 };
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += sign * x;
                }
            }
            let len = norm2(&sum);
            if len > 1e-12 {
                sum.iter().map(|s| s / len).collect()
            } else {
                reference.clone()
            }
        }
    };

    let noms: Vec<&[f64]> = (0..n).map(|_| v_nom.as_slice()).collect();
    let theta_max = obs
        .iter()
        .map(|o| axis_angles(&o.values, &o.vectors, &noms)[axis])
        .fold(0.0f64, f64::max);
    let theta_cap = (1.1 * theta_max).min(FRAC_PI_2);
    let theta_cuts: Vec<f64> = (1..bins_theta).map(|k| theta_cap * k as f64 / bins_theta as f64).collect();
    let mut theta_edges = vec![0.0];
    theta_edges.extend(strictly_inside(theta_cuts, 0.0, FRAC_PI_2));
    theta_edges.push(FRAC_PI_2);

    let mut lambdas: Vec<f64> = obs.iter().map(|o| o.values[axis].max(0.0)).collect();
    lambdas.sort_by(f64::total_cmp);
    let min_obs = lambdas[0];
    let lo = min_obs.min((0.5 * min_obs).max(kf_floor));
    let mut hi = cap;
    if hi <= lo {
        hi = if lo > 0.0 { lo * (1.0 + 1e-9) } else { f64::MIN_POSITIVE };
    }
    let lambda_cuts: Vec<f64> = (1..bins_lambda)
        .map(|k| quantile(&lambdas, k as f64 / bins_lambda as f64))
        .collect();
    let mut lambda_edges = vec![lo];
    lambda_edges.extend(strictly_inside(lambda_cuts, min_obs.max(lo), hi));
    lambda_edges.push(hi);

    AxisRegions {
        v_nom,
        theta_edges,
        lambda_edges,
    }
}

/// Builds per-waypoint region tables from calibration rollouts that cycle
/// through the threshold set (run r uses Δ[(r + i) mod |Δ|] on segment i).
///
/// λ edges are quantiles of the observed eigenvalues, kept strictly inside
/// the observed range; the floor never drops below the KF steady-state
/// eigenvalue unless an observation does, and the cap comes from
/// [`empirical_cov_upper_bound`]. θ edges are uniform up to 1.1× the largest
/// observed angle with the last bin reaching π/2.
pub fn calibrate_regions(closed_loop: &ClosedLoop, config: &AbstractionConfig) -> Result<RegionTables> {
    if config.calibration_runs == 0 || config.bins_theta == 0 || config.bins_lambda == 0 {
        return Err(Error::Input("calibration needs runs >= 1 and at least one bin per axis".into()));
    }
    let scenario = &closed_loop.scenario;
    let n = scenario.state_dim();
    let segments = scenario.segment_count();
    let runs: Vec<Vec<Matrix>> = (0..config.calibration_runs)
        .into_par_iter()
        .map(|r| calibration_run(closed_loop, r, config.seed))
        .collect::<Result<_>>()?;

    let kf = sym_eigen(&closed_loop.p_kf)?.eigenvalues;
    let caps = empirical_cov_upper_bound(closed_loop, scenario.termination.k_max)?;
    let mut waypoints = Vec::with_capacity(segments);
    let mut observations = Vec::with_capacity(segments);
    for w in 0..segments {
        let obs: Vec<Observation> = runs
            .iter()
            .filter_map(|run| run.get(w))
            .map(observe)
            .collect::<Result<_>>()?;
        if obs.is_empty() {
            return Err(Error::Calibration { waypoint: w });
        }
        observations.push(obs.len());
        waypoints.push(
            (0..n)
                .map(|axis| axis_table(&obs, axis, config.bins_theta, config.bins_lambda, kf[axis], caps[axis]))
                .collect(),
        );
    }
    Ok(RegionTables {
        waypoints,
        observations,
    })
}

/// Region-count scaling for an n-dimensional state with d regions per
/// element: (matrix-element count n(n+1)/2, spectral count n, state bound
/// N·d^n + 3 for N decision waypoints).
pub fn region_count_formulas(n: usize, d: usize, segments: usize) -> (usize, usize, u128) {
    let bound = (segments as u128).saturating_mul((d as u128).saturating_pow(n as u32)).saturating_add(3);
    (n * (n + 1) / 2, n, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn table(v_nom: Vec<f64>, theta: Vec<f64>, lambda: Vec<f64>) -> AxisRegions {
        AxisRegions {
            v_nom,
            theta_edges: theta,
            lambda_edges: lambda,
        }
    }

    #[test]
    fn diag_4_1_example() {
        let axes = vec![
            table(vec![1.0, 0.0], vec![0.0, FRAC_PI_4, FRAC_PI_2], vec![0.0, 2.0, 5.0]),
            table(vec![0.0, 1.0], vec![0.0, FRAC_PI_4, FRAC_PI_2], vec![0.0, 2.0, 5.0]),
        ];
        let c = classify_covariance(&Matrix::from_diag(&[4.0, 1.0]), &axes).unwrap();
        // (θ-bin 0, λ-bin 1) and (θ-bin 0, λ-bin 0)
        assert_eq!(c.state.regions, vec![1, 0]);
    }

    #[test]
    fn rotated_nominal_direction() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let axes = vec![
            table(vec![s, s], vec![0.0, FRAC_PI_4, FRAC_PI_2], vec![0.0, 2.0, 5.0]),
            table(vec![0.0, 1.0], vec![0.0, FRAC_PI_4, FRAC_PI_2], vec![0.0, 2.0, 5.0]),
        ];
        let c = classify_covariance(&Matrix::from_diag(&[4.0, 1.0]), &axes).unwrap();
        assert!((c.thetas[0] - FRAC_PI_4).abs() < 1e-12);
        assert_eq!(c.state.regions[0] / 2, 1);
    }

    #[test]
    fn isotropic_covariance_gets_theta_zero_on_every_axis() {
        let axes = vec![
            table(vec![0.0, 1.0], vec![0.0, 0.1, FRAC_PI_2], vec![1e-4, 5e-4, 1e-3, 1e-2]),
            table(vec![1.0, 0.0], vec![0.0, 0.1, FRAC_PI_2], vec![1e-4, 5e-4, 1e-3, 1e-2]),
        ];
        let p_kf = Matrix::identity(2).scale(7.768e-4);
        let c = classify_covariance(&p_kf, &axes).unwrap();
        assert_eq!(c.thetas, vec![0.0, 0.0]);
        assert_eq!(c.state.regions, vec![1, 1]);
    }

    #[test]
    fn clamping_is_counted() {
        let axes = vec![table(vec![1.0], vec![0.0, FRAC_PI_2], vec![1.0, 2.0, 3.0])];
        let high = classify_covariance(&Matrix::from_diag(&[7.0]), &axes).unwrap();
        assert_eq!((high.state.regions[0], high.above_cap, high.below_floor), (1, 1, 0));
        let low = classify_covariance(&Matrix::from_diag(&[0.5]), &axes).unwrap();
        assert_eq!((low.state.regions[0], low.above_cap, low.below_floor), (0, 0, 1));
        let edge = classify_covariance(&Matrix::from_diag(&[2.0]), &axes).unwrap();
        assert_eq!(edge.state.regions[0], 1);
    }

    #[test]
    fn indefinite_and_mismatched_inputs_rejected() {
        let axes = vec![
            table(vec![1.0, 0.0], vec![0.0, FRAC_PI_2], vec![0.0, 1.0]),
            table(vec![0.0, 1.0], vec![0.0, FRAC_PI_2], vec![0.0, 1.0]),
        ];
        assert!(classify_covariance(&Matrix::from_diag(&[1.0, -0.5]), &axes).is_err());
        assert!(classify_covariance(&Matrix::identity(3), &axes).is_err());
        let asym = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(classify_covariance(&asym, &axes).is_err());
    }

    #[test]
    fn bisection_nests() {
        let coarse = table(vec![1.0, 0.0], vec![0.0, 0.3, FRAC_PI_2], vec![1e-4, 1e-3, 1e-2]);
        let fine = coarse.bisected();
        assert_eq!(fine.theta_bins(), 4);
        assert_eq!(fine.lambda_bins(), 4);
        fine.check().unwrap();
        for f in 0..fine.region_count() {
            let c = coarse.region(coarse.containing(&fine, f));
            let r = fine.region(f);
            assert!(c.theta_lo <= r.theta_lo && r.theta_hi <= c.theta_hi);
            assert!(c.lam_lo <= r.lam_lo && r.lam_hi <= c.lam_hi);
        }
    }

    #[test]
    fn region_counts() {
        assert_eq!(region_count_formulas(2, 4, 1).0, 3);
        assert_eq!(region_count_formulas(2, 4, 1).1, 2);
        assert_eq!(region_count_formulas(3, 4, 1).0, 6);
        assert_eq!(region_count_formulas(3, 4, 1).1, 3);
        assert_eq!(region_count_formulas(3, 4, 10).2, 643);
        for n in 2..=6 {
            let (elements, spectral, _) = region_count_formulas(n, 2, 1);
            assert!(spectral < elements);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
