//! Problem definitions: system model, waypoints, obstacles, target, threshold
//! set and tolerances, stored as JSON documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::et_filter::FilterParams;
use crate::numerics::{sym_eigen, Matrix};

/// Closed axis-aligned box `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperRect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl HyperRect {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        HyperRect { lo, hi }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    pub fn intersects(&self, other: &HyperRect) -> bool {
        (0..self.lo.len()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    fn check(&self, what: &str, n: usize) -> Result<()> {
        if self.lo.len() != n || self.hi.len() != n {
            return Err(Error::Invariant(format!("{what} must have {n}-dimensional corners")));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l < h)) {
            return Err(Error::Invariant(format!("{what} needs lo < hi on every axis")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBelief {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationParams {
    /// Convergence radius on ‖x̂ − ℘‖₂.
    pub eps_x: f64,
    /// Step budget per segment.
    pub k_max: usize,
}

impl Default for TerminationParams {
    fn default() -> Self {
        TerminationParams {
            eps_x: 0.05,
            k_max: 400,
        }
    }
}

/// Tolerances for the enforced-convergence abstraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceParams {
    /// Radius around the next waypoint where the estimator switches to full KF.
    pub eps_kf: f64,
    /// Max-norm tolerance on ‖P − P_KF‖.
    pub eps_p: f64,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            eps_kf: 0.15,
            eps_p: 1e-5,
        }
    }
}

/// Waypoint controller settings: LQR stage weights and per-component saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSettings {
    pub u_max: f64,
    #[serde(default = "one")]
    pub state_weight: f64,
    #[serde(default = "one")]
    pub input_weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings {
            u_max: 0.5,
            state_weight: 1.0,
            input_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub system: FilterParams,
    pub initial: InitialBelief,
    /// ℘_0 … ℘_N; the agent starts near ℘_0 and must end in `target` after ℘_N.
    pub waypoints: Vec<Vec<f64>>,
    #[serde(default)]
    pub obstacles: Vec<HyperRect>,
    pub target: HyperRect,
    /// Candidate thresholds Δ, strictly increasing.
    pub deltas: Vec<f64>,
    /// Cost per communicated measurement.
    pub comm_cost: f64,
    #[serde(default)]
    pub termination: TerminationParams,
    #[serde(default)]
    pub convergence: ConvergenceParams,
    #[serde(default)]
    pub control: ControlSettings,
    /// Accept singular (positive-semidefinite) Q, R and P0, e.g. for
    /// noise-free test models. Off by default.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub allow_singular_noise: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointClass {
    Free,
    /// Lowest index among the obstacles containing the point.
    Collision(usize),
    Target,
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// Number of segments N (= waypoints − 1).
    pub fn segment_count(&self) -> usize {
        self.waypoints.len().saturating_sub(1)
    }

    pub fn measurement_dim(&self) -> usize {
        self.system.measurement_dim()
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Checks every structural invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        self.system
            .check_dimensions()
            .map_err(|e| Error::Invariant(format!("system: {e}")))?;
        let n = self.state_dim();
        for (name, m) in [
            ("F", &self.system.f),
            ("G", &self.system.g),
            ("H", &self.system.h),
            ("Q", &self.system.q),
            ("R", &self.system.r),
            ("initial.cov", &self.initial.cov),
        ] {
            if !m.is_finite() {
                return Err(Error::Invariant(format!("{name} has non-finite entries")));
            }
        }
        let singular = self.allow_singular_noise;
        require_spd("Q", &self.system.q, singular)?;
        require_spd("R", &self.system.r, singular)?;
        if self.initial.mean.len() != n || self.initial.cov.rows() != n || !self.initial.cov.is_square() {
            return Err(Error::Invariant(format!("initial belief must be {n}-dimensional")));
        }
        require_spd("initial.cov", &self.initial.cov, singular)?;

        if self.waypoints.len() < 2 {
            return Err(Error::Invariant(
                "waypoints needs a start ℘_0 and at least one further waypoint".into(),
            ));
        }
        if let Some(i) = self.waypoints.iter().position(|w| w.len() != n) {
            return Err(Error::Invariant(format!("waypoint {i} is not {n}-dimensional")));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            o.check(&format!("obstacle {i}"), n)?;
        }
        self.target.check("target", n)?;
        if let Some(i) = self.obstacles.iter().position(|o| o.intersects(&self.target)) {
            return Err(Error::Invariant(format!("target overlaps obstacle {i}")));
        }

        if self.deltas.is_empty() {
            return Err(Error::Invariant("deltas must not be empty".into()));
        }
        if self.deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Invariant("deltas must be finite and positive".into()));
        }
        if self.deltas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invariant("deltas must be strictly increasing".into()));
        }
        if !(self.comm_cost >= 0.0 && self.comm_cost.is_finite()) {
            return Err(Error::Invariant("comm_cost must be a nonnegative number".into()));
        }
        if !(self.termination.eps_x > 0.0) || self.termination.k_max == 0 {
            return Err(Error::Invariant("termination needs eps_x > 0 and k_max >= 1".into()));
        }
        if !(self.convergence.eps_kf > 0.0 && self.convergence.eps_p > 0.0) {
            return Err(Error::Invariant("convergence needs eps_kf > 0 and eps_p > 0".into()));
        }
        if !(self.control.u_max > 0.0) {
            return Err(Error::Invariant("control.u_max must be positive".into()));
        }
        if !(self.control.state_weight > 0.0 && self.control.input_weight > 0.0) {
            return Err(Error::Invariant("control weights must be positive".into()));
        }
        Ok(())
    }

    pub fn classify_point(&self, x: &[f64]) -> PointClass {
        if let Some(i) = self.obstacles.iter().position(|o| o.contains(x)) {
            return PointClass::Collision(i);
        }
        if self.target.contains(x) {
            PointClass::Target
        } else {
            PointClass::Free
        }
    }

    /// Names of the scenarios shipped with the crate.
    pub fn bundled_names() -> &'static [&'static str] {
        &["winding2d", "open2d", "winding3d"]
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let text = match name {
            "winding2d" => include_str!("../scenarios/winding2d.json"),
            "open2d" => include_str!("../scenarios/open2d.json"),
            "winding3d" => include_str!("../scenarios/winding3d.json"),
            _ => return Err(Error::Input(format!("no bundled scenario named {name}"))),
        };
        Scenario::from_json(text, name)
    }
}

fn require_spd(name: &str, m: &Matrix, allow_singular: bool) -> Result<()> {
    if m.asymmetry() > 1e-12 * m.max_abs().max(1.0) {
        return Err(Error::Invariant(format!("{name} is not symmetric")));
    }
    let eig = sym_eigen(m).map_err(|e| Error::Invariant(format!("{name}: {e}")))?;
    let min = eig.eigenvalues.last().copied().unwrap_or(0.0);
    if allow_singular && min >= -1e-12 * m.max_abs().max(1.0) {
        return Ok(());
    }
    if !(min > 0.0) {
        return Err(Error::Invariant(format!(
            "{name} is not positive definite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> Scenario {
        Scenario::bundled("winding2d").unwrap()
    }

    #[test]
    fn bundled_winding2d_loads() {
        let s = base();
        assert_eq!(s.state_dim(), 2);
        assert!(s.deltas.len() >= 4);
    }

    #[test]
    fn all_bundled_scenarios_validate() {
        for name in Scenario::bundled_names() {
            Scenario::bundled(name).unwrap();
        }
    }

    #[test]
    fn negative_q_is_rejected_by_name() {
        let mut s = base();
        s.system.q[(1, 1)] = -0.01;
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("Q"), "{err}");
    }

    #[test]
    fn singular_noise_needs_the_opt_in() {
        let mut s = base();
        s.system.q = Matrix::zeros(2, 2);
        assert!(s.validate().is_err());
        s.allow_singular_noise = true;
        s.validate().unwrap();
        let back = Scenario::from_json(&s.to_json(), "test").unwrap();
        assert!(back.allow_singular_noise);
        s.system.q[(1, 1)] = -0.01;
        assert!(s.validate().is_err());
        assert!(!base().to_json().contains("allow_singular_noise"));
    }

    #[test]
    fn unsorted_deltas_rejected() {
        let mut s = base();
        s.deltas = vec![2.0, 1.0, 3.0];
        assert!(s.validate().is_err());
        s.deltas = vec![1.0, 1.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn overlapping_target_rejected() {
        let mut s = base();
        s.obstacles.push(s.target.clone());
        assert!(s.validate().unwrap_err().to_string().contains("target"));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = Scenario::from_json("{\n \"name\": 3\n}", "inline").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&base().to_json()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(Scenario::from_json(&v.to_string(), "inline").is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        for name in Scenario::bundled_names() {
            let s = Scenario::bundled(name).unwrap();
            let again = Scenario::from_json(&s.to_json(), "rt").unwrap();
            assert_eq!(s, again);
            assert_eq!(s.to_json(), again.to_json());
        }
    }

    #[test]
    fn load_from_disk_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        std::fs::write(&path, base().to_json()).unwrap();
        assert_eq!(load_scenario(&path).unwrap(), base());
        assert!(matches!(load_scenario(dir.path().join("nope.json")), Err(Error::Io { .. })));
    }

    fn classification_fixture() -> Scenario {
        let mut s = base();
        s.obstacles = vec![
            HyperRect::new(vec![0.0, 0.0], vec![2.0, 2.0]),
            HyperRect::new(vec![5.0, 5.0], vec![6.0, 6.0]),
            HyperRect::new(vec![1.0, 1.0], vec![3.0, 3.0]),
        ];
        s.target = HyperRect::new(vec![10.0, 10.0], vec![11.0, 11.0]);
        s
    }

    #[test]
    fn classify_overlap_takes_lowest_index() {
        let s = classification_fixture();
        assert_eq!(s.classify_point(&[1.5, 1.5]), PointClass::Collision(0));
        assert_eq!(s.classify_point(&[2.5, 2.5]), PointClass::Collision(2));
    }

    #[test]
    fn classify_closed_boundaries() {
        let s = classification_fixture();
        assert_eq!(s.classify_point(&[10.0, 10.0]), PointClass::Target);
        assert_eq!(s.classify_point(&[6.0, 5.0]), PointClass::Collision(1));
        assert_eq!(s.classify_point(&[7.0, 7.0]), PointClass::Free);
    }

    fn brute_force(s: &Scenario, x: &[f64]) -> PointClass {
        let inside = |r: &HyperRect| {
            let mut ok = true;
            for i in 0..x.len() {
                if x[i] < r.lo[i] {
                    ok = false;
                }
                if x[i] > r.hi[i] {
                    ok = false;
                }
            }
            ok
        };
        for (i, o) in s.obstacles.iter().enumerate() {
            if inside(o) {
                return PointClass::Collision(i);
            }
        }
        if inside(&s.target) {
            PointClass::Target
        } else {
            PointClass::Free
        }
    }

    #[test]
    fn classify_matches_brute_force() {
        use crate::numerics::RngStream;
        let s = classification_fixture();
        let mut rng = RngStream::new(4);
        for _ in 0..10_000 {
            let x = [rng.uniform() * 12.0 - 0.5, rng.uniform() * 12.0 - 0.5];
            assert_eq!(s.classify_point(&x), brute_force(&s, &x));
        }
    }

    proptest! {
        #[test]
        fn round_trip_with_perturbed_numbers(eps in 0.001f64..0.2, k in 1usize..1000, cm in 0.0f64..5.0) {
            let mut s = base();
            s.termination.eps_x = eps;
            s.termination.k_max = k;
            s.comm_cost = cm;
            let again = Scenario::from_json(&s.to_json(), "rt").unwrap();
            prop_assert_eq!(s, again);
        }
    }
}
