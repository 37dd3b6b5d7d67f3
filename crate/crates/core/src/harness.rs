//! Closed-loop Monte-Carlo validation of synthesized strategies.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abstraction::{AbstractState, AbstractionMeta};
use crate::error::{Error, Result};
use crate::et_filter::{self, FilterParams, FilterState};
use crate::mo_solver::{Mdp, ObjectivePoint, Policy, Strategy};
use crate::numerics::{label, GaussianBelief, GaussianSampler, RngStream};
use crate::plant::{ClosedLoop, SegmentEnd, SegmentMode, TraceStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Tar,
    Coll,
    Free,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Tar => "tar",
            Outcome::Coll => "coll",
            Outcome::Free => "free",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalObjectives {
    pub runs: usize,
    pub p_tar: f64,
    pub p_coll: f64,
    pub p_free: f64,
    pub e_c_mean: f64,
    pub e_c_stderr: f64,
    pub total_triggers: u64,
    /// Sensing instants over all runs; a run's colliding step is excluded.
    pub total_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Time index from the start of the run.
    pub k: usize,
    pub segment: usize,
    pub step: TraceStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub run: usize,
    pub rows: Vec<TraceRow>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub objectives: EmpiricalObjectives,
    pub traces: Vec<TraceRecord>,
    /// Decisions taken at abstract states the strategy does not cover.
    pub misses: u64,
    pub decisions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationOptions {
    pub runs: usize,
    pub seed: u64,
    /// Full traces are kept for runs `0..trace_cap`.
    pub trace_cap: usize,
}

impl SimulationOptions {
    pub fn new(runs: usize, seed: u64) -> Self {
        SimulationOptions {
            runs,
            seed,
            trace_cap: 300,
        }
    }
}

struct RunResult {
    outcome: Outcome,
    triggers: u64,
    steps: u64,
    misses: u64,
    decisions: u64,
    trace: Option<TraceRecord>,
}

/// Chooses (δ, missed?) for the decision at a waypoint.
trait Chooser: Sync {
    fn mode(&self) -> SegmentMode;
    fn choose(&self, policy_index: usize, waypoint: usize, filter: &FilterState, rng: &mut RngStream) -> Result<(f64, bool)>;
    /// Weight of the primary policy when a mixture is in play.
    fn mixture(&self) -> Option<f64>;
}

fn run_once(closed_loop: &ClosedLoop, chooser: &dyn Chooser, run: usize, seed: u64, keep_trace: bool) -> Result<RunResult> {
    let scenario = &closed_loop.scenario;
    let mut rng = RngStream::derive(seed, &[label("run"), run as u64]);
    let policy_index = match chooser.mixture() {
        Some(alpha) if !rng.bernoulli(alpha) => 1,
        _ => 0,
    };
    let initial = GaussianBelief::new(scenario.initial.mean.clone(), scenario.initial.cov.clone())?;
    let mut x = initial.sample(&mut rng)?;
    let mut filter = FilterState::new(initial);
    let mut r = RunResult {
        outcome: Outcome::Free,
        triggers: 0,
        steps: 0,
        misses: 0,
        decisions: 0,
        trace: None,
    };
    let mut rows = Vec::new();
    let segments = scenario.segment_count();
    for w in 0..segments {
        let (delta, missed) = chooser.choose(policy_index, w, &filter, &mut rng)?;
        r.decisions += 1;
        r.misses += missed as u64;
        let mut steps = Vec::new();
        let out = closed_loop.segment_rollout(
            &filter,
            &x,
            &scenario.waypoints[w + 1],
            delta,
            chooser.mode(),
            &mut rng,
            keep_trace.then_some(&mut steps),
        )?;
        let base = r.steps as usize;
        rows.extend(steps.into_iter().map(|step| TraceRow {
            k: base + step.step,
            segment: w,
            step,
        }));
        r.triggers += out.triggers as u64;
        r.steps += out.steps as u64;
        if let SegmentEnd::Collision(_) = out.end {
            // the step that enters the obstacle is never sensed
            r.steps -= 1;
            r.outcome = Outcome::Coll;
            break;
        }
        filter = out.final_filter;
        x = out.final_true_state;
        if w + 1 == segments {
            r.outcome = if scenario.target.contains(&x) { Outcome::Tar } else { Outcome::Free };
        }
    }
    if keep_trace {
        r.trace = Some(TraceRecord {
            run,
            rows,
            outcome: r.outcome,
        });
    }
    Ok(r)
}

fn simulate(closed_loop: &ClosedLoop, chooser: &dyn Chooser, opts: &SimulationOptions) -> Result<SimulationReport> {
    if opts.runs == 0 {
        return Err(Error::Input("at least one run is needed".into()));
    }
    let results: Vec<RunResult> = (0..opts.runs)
        .into_par_iter()
        .map(|run| run_once(closed_loop, chooser, run, opts.seed, run < opts.trace_cap))
        .collect::<Result<_>>()?;
    let n = opts.runs as f64;
    let c_m = closed_loop.scenario.comm_cost;
    let count = |o: Outcome| results.iter().filter(|r| r.outcome == o).count() as f64;
    let total_triggers: u64 = results.iter().map(|r| r.triggers).sum();
    let mean = c_m * total_triggers as f64 / n;
    let var = if opts.runs > 1 {
        results.iter().map(|r| (c_m * r.triggers as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let (tar, coll) = (count(Outcome::Tar), count(Outcome::Coll));
    let objectives = EmpiricalObjectives {
        runs: opts.runs,
        p_tar: tar / n,
        p_coll: coll / n,
        p_free: (opts.runs as f64 - tar - coll) / n,
        e_c_mean: mean,
        e_c_stderr: (var / n).sqrt(),
        total_triggers,
        total_steps: results.iter().map(|r| r.steps).sum(),
    };
    Ok(SimulationReport {
        objectives,
        misses: results.iter().map(|r| r.misses).sum(),
        decisions: results.iter().map(|r| r.decisions).sum(),
        traces: results.into_iter().filter_map(|r| r.trace).collect(),
    })
}

struct StrategyChooser<'a> {
    mdp: &'a Mdp,
    meta: &'a AbstractionMeta,
    policies: Vec<&'a Policy>,
    alpha: Option<f64>,
    ids: HashMap<&'a AbstractState, usize>,
}

impl Chooser for StrategyChooser<'_> {
    fn mode(&self) -> SegmentMode {
        self.meta.method.segment_mode()
    }

    fn mixture(&self) -> Option<f64> {
        self.alpha
    }

    fn choose(&self, policy_index: usize, waypoint: usize, filter: &FilterState, rng: &mut RngStream) -> Result<(f64, bool)> {
        let (state, _, _) = self.meta.classify(waypoint, &filter.belief.cov)?;
        let dist = self
            .ids
            .get(&state)
            .and_then(|&id| self.policies[policy_index].choice.get(id))
            .filter(|d| d.len() == self.mdp.action_count());
        let Some(dist) = dist else {
            return Ok((self.mdp.deltas[0], true));
        };
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut chosen = None;
        let mut last_positive = 0;
        for (a, &p) in dist.iter().enumerate() {
            if p > 0.0 {
                last_positive = a;
                acc += p;
                if u < acc {
                    chosen = Some(a);
                    break;
                }
            }
        }
        let action = chosen.unwrap_or(last_positive);
        Ok((self.mdp.deltas[action], false))
    }
}

/// Runs `opts.runs` closed-loop episodes under `strategy`.
///
/// At each waypoint the current covariance is classified into an abstract
/// state and a threshold is drawn from the strategy's distribution there. A
/// mixture is resolved by one draw at the start of each run. States the
/// strategy does not cover fall back to the smallest threshold and are
/// counted in `misses`.
pub fn simulate_strategy(
    closed_loop: &ClosedLoop,
    mdp: &Mdp,
    meta: &AbstractionMeta,
    strategy: &Strategy,
    opts: &SimulationOptions,
) -> Result<SimulationReport> {
    if mdp.deltas != closed_loop.scenario.deltas {
        return Err(Error::Input("the MDP was built for a different threshold set".into()));
    }
    let mut policies = vec![&strategy.primary];
    let mut alpha = None;
    if let Some(m) = &strategy.mixture {
        if !(0.0..=1.0).contains(&m.alpha) {
            return Err(Error::Input(format!("mixture weight {} outside [0, 1]", m.alpha)));
        }
        policies.push(&m.secondary);
        alpha = Some(m.alpha);
    }
    let chooser = StrategyChooser {
        mdp,
        meta,
        policies,
        alpha,
        ids: mdp.states.iter().enumerate().map(|(i, s)| (s, i)).collect(),
    };
    simulate(closed_loop, &chooser, opts)
}

struct FullKf;

impl Chooser for FullKf {
    fn mode(&self) -> SegmentMode {
        SegmentMode::FullKf
    }

    fn mixture(&self) -> Option<f64> {
        None
    }

    fn choose(&self, _: usize, _: usize, _: &FilterState, _: &mut RngStream) -> Result<(f64, bool)> {
        Ok((0.0, false))
    }
}

/// Same episodes with every measurement communicated.
pub fn full_kf_baseline(closed_loop: &ClosedLoop, opts: &SimulationOptions) -> Result<SimulationReport> {
    simulate(closed_loop, &FullKf, opts)
}

/// Fraction of steps that trigger when an open-loop plant (u = 0) is tracked
/// by the ET filter at a fixed δ. The first `burn_in` steps are discarded so
/// the covariance sits at its ET steady state.
pub fn stationary_trigger_frequency(
    params: &FilterParams,
    delta: f64,
    steps: usize,
    burn_in: usize,
    seed: u64,
) -> Result<f64> {
    params.check_dimensions()?;
    if steps == 0 {
        return Err(Error::Input("at least one counted step is needed".into()));
    }
    let n = params.state_dim();
    let process = GaussianSampler::new(&params.q)?;
    let sensor = GaussianSampler::new(&params.r)?;
    let mut rng = RngStream::derive(seed, &[label("trigger-rate")]);
    let u = vec![0.0; params.input_dim()];
    let mut x = vec![0.0; n];
    let mut filter = FilterState::new(GaussianBelief::new(vec![0.0; n], params.q.clone())?);
    let mut triggers = 0usize;
    for k in 0..burn_in + steps {
        x = process.sample(&params.f.mul_vec(&x), &mut rng);
        let y = sensor.sample(&params.h.mul_vec(&x), &mut rng);
        let (next, decision) = et_filter::step(&filter, &u, &y, delta, false, params)?;
        filter = next;
        if k >= burn_in && decision.gamma {
            triggers += 1;
        }
    }
    Ok(triggers as f64 / steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    /// Allowed |Δp_tar| and |Δp_coll| in percentage points.
    pub points: f64,
    /// Allowed |Δe_c| / e_c,predicted.
    pub relative_energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub p_tar_error_pp: f64,
    pub p_coll_error_pp: f64,
    pub e_c_relative_error: f64,
    pub tolerance: Tolerance,
    pub pass: bool,
}

/// Predicted-vs-simulated errors: percentage points for the probabilities,
/// relative difference for energy.
pub fn compare_theory_empirical(
    predicted: &ObjectivePoint,
    empirical: &EmpiricalObjectives,
    tolerance: Tolerance,
) -> Result<Comparison> {
    if empirical.runs < 100 {
        return Err(Error::Input(format!(
            "comparison needs at least 100 runs, got {}",
            empirical.runs
        )));
    }
    let p_tar_error_pp = 100.0 * (predicted.p_tar - empirical.p_tar).abs();
    let p_coll_error_pp = 100.0 * (predicted.p_coll - empirical.p_coll).abs();
    let diff = (predicted.e_c - empirical.e_c_mean).abs();
    let e_c_relative_error = if diff == 0.0 { 0.0 } else { diff / predicted.e_c.abs() };
    let pass = p_tar_error_pp <= tolerance.points
        && p_coll_error_pp <= tolerance.points
        && e_c_relative_error <= tolerance.relative_energy;
    Ok(Comparison {
        p_tar_error_pp,
        p_coll_error_pp,
        e_c_relative_error,
        tolerance,
        pass,
    })
}

/// One CSV row per simulated step:
/// `run,k,segment,delta,triggered,x_0..,xhat_0..,outcome`.
pub fn traces_csv(traces: &[TraceRecord], state_dim: usize) -> String {
    let mut out = String::from("run,k,segment,delta,triggered");
    for i in 0..state_dim {
        let _ = write!(out, ",x_{i}");
    }
    for i in 0..state_dim {
        let _ = write!(out, ",xhat_{i}");
    }
    out.push_str(",outcome\n");
    for t in traces {
        for row in &t.rows {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                t.run, row.k, row.segment, row.step.delta, row.step.triggered as u8
            );
            for v in row.step.true_state.iter().chain(&row.step.estimate) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", t.outcome.as_str());
        }
    }
    out
}
