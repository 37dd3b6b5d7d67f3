use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AbstractionConfig, Method};
use super::regions::{calibrate_regions, classify_covariance, RegionTables};
use super::AbstractState;
use crate::error::{Error, Result};
use crate::et_filter::FilterState;
use crate::mo_solver::{ActionRow, Mdp};
use crate::numerics::{expected_trigger_rate, label, GaussianBelief, Matrix, RngStream};
use crate::plant::{ClosedLoop, SegmentEnd};
use crate::scenario::Scenario;

/// A concrete belief paired with a true state consistent with it.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub belief: GaussianBelief,
    pub true_state: Vec<f64>,
}

/// Bounded uniform reservoir of the concrete situations that reached an
/// abstract state.
#[derive(Debug, Clone)]
pub struct BeliefPool {
    cap: usize,
    seen: u64,
    entries: Vec<PoolEntry>,
}

impl BeliefPool {
    pub fn new(cap: usize) -> Self {
        BeliefPool {
            cap,
            seen: 0,
            entries: Vec::new(),
        }
    }

    /// Reservoir insertion: after `k` offers each one is kept with
    /// probability min(1, cap/k).
    pub fn offer(&mut self, entry: PoolEntry, rng: &mut RngStream) {
        self.seen += 1;
        if self.entries.len() < self.cap {
            self.entries.push(entry);
        } else {
            let j = rng.index(self.seen as usize);
            if j < self.cap {
                self.entries[j] = entry;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn draw(&self, rng: &mut RngStream) -> Result<&PoolEntry> {
        if self.entries.is_empty() {
            return Err(Error::Internal("sampled an empty belief pool".into()));
        }
        Ok(&self.entries[rng.index(self.entries.len())])
    }
}

/// What is needed to map a runtime belief to an abstract state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractionMeta {
    pub method: Method,
    pub regions: Option<RegionTables>,
}

impl AbstractionMeta {
    /// Abstract state for covariance `cov` at decision waypoint `waypoint`,
    /// plus the number of axes clamped above the cap and below the floor.
    pub fn classify(&self, waypoint: usize, cov: &Matrix) -> Result<(AbstractState, usize, usize)> {
        match self.method {
            Method::EnforcedConvergence => Ok((AbstractState::Converged { waypoint }, 0, 0)),
            Method::Discretized => {
                let tables = self
                    .regions
                    .as_ref()
                    .ok_or_else(|| Error::Input("discretized abstraction without region tables".into()))?;
                let c = classify_covariance(cov, tables.axes(waypoint)?)?;
                Ok((
                    AbstractState::Belief {
                        waypoint,
                        cov: c.state,
                    },
                    c.above_cap,
                    c.below_floor,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AbstractionDiagnostics {
    pub rollouts: u64,
    /// Segments that hit the step budget.
    pub timeouts: u64,
    /// Enforced-convergence segments that timed out before P reached P_KF.
    pub covariance_unconverged: u64,
    pub lambda_above_cap: u64,
    pub lambda_below_floor: u64,
    /// Waypoints that had no arrivals and were seeded with N(℘, P_KF).
    pub fallback_pools: Vec<usize>,
}

/// Result of [`build_mdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstraction {
    pub config: AbstractionConfig,
    pub meta: AbstractionMeta,
    pub mdp: Mdp,
    /// c_m · mean segment length · expected trigger rate, per state and action.
    pub cost_product: Vec<Vec<f64>>,
    /// Pool size of each state when its transitions were estimated.
    pub pool_sizes: Vec<usize>,
    pub diagnostics: AbstractionDiagnostics,
}

impl Abstraction {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("abstraction serialization cannot fail")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let a: Abstraction = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?;
        a.mdp.validate()?;
        Ok(a)
    }
}

#[derive(Default)]
struct PairResult {
    counts: BTreeMap<AbstractState, usize>,
    triggers: u64,
    steps: u64,
    arrivals: Vec<(AbstractState, PoolEntry)>,
    timeouts: u64,
    unconverged: u64,
    above_cap: u64,
    below_floor: u64,
}

struct Row {
    counts: BTreeMap<AbstractState, usize>,
    cost: f64,
    cost_product: f64,
}

fn simulate_pair(
    closed_loop: &ClosedLoop,
    meta: &AbstractionMeta,
    pool: &BeliefPool,
    waypoint: usize,
    delta: f64,
    samples: usize,
    mut rng: RngStream,
) -> Result<PairResult> {
    let scenario = &closed_loop.scenario;
    let mode = meta.method.segment_mode();
    let next = waypoint + 1;
    let last = next == scenario.segment_count();
    let mut r = PairResult::default();
    for _ in 0..samples {
        let entry = pool.draw(&mut rng)?;
        let start = FilterState::new(entry.belief.clone());
        let out = closed_loop.segment_rollout(
            &start,
            &entry.true_state,
            &scenario.waypoints[next],
            delta,
            mode,
            &mut rng,
            None,
        )?;
        r.triggers += out.triggers as u64;
        r.steps += out.steps as u64;
        r.timeouts += (out.end == SegmentEnd::TimedOut) as u64;
        r.unconverged += out.covariance_unconverged(mode) as u64;
        let dest = match out.end {
            SegmentEnd::Collision(_) => AbstractState::Coll,
            _ if last => {
                if scenario.target.contains(&out.final_true_state) {
                    AbstractState::Tar
                } else {
                    AbstractState::Free
                }
            }
            _ => {
                let (s, hi, lo) = meta.classify(next, &out.final_filter.belief.cov)?;
                r.above_cap += hi as u64;
                r.below_floor += lo as u64;
                s
            }
        };
        *r.counts.entry(dest.clone()).or_insert(0) += 1;
        if !dest.is_terminal() {
            r.arrivals.push((
                dest,
                PoolEntry {
                    belief: out.final_filter.belief,
                    true_state: out.final_true_state,
                },
            ));
        }
    }
    Ok(r)
}

fn seeded_pool(belief: &GaussianBelief, cap: usize, rng: &mut RngStream) -> Result<BeliefPool> {
    let mut pool = BeliefPool::new(cap);
    for _ in 0..cap {
        let x = belief.sample(rng)?;
        pool.offer(
            PoolEntry {
                belief: belief.clone(),
                true_state: x,
            },
            rng,
        );
    }
    Ok(pool)
}

/// Calibrates region tables when needed, then builds the abstraction.
pub fn build_mdp(scenario: &Scenario, config: &AbstractionConfig) -> Result<Abstraction> {
    config.validate()?;
    let closed_loop = ClosedLoop::new(scenario)?;
    let regions = match config.method {
        Method::Discretized => Some(calibrate_regions(&closed_loop, config)?),
        Method::EnforcedConvergence => None,
    };
    build_mdp_with_regions(&closed_loop, config, regions)
}

/// Layered Monte-Carlo construction of the abstract MDP.
///
/// Layer w holds the states reached at waypoint w, sorted canonically. Every
/// (state, action) pair simulates `samples_per_action` segment rollouts from
/// starts drawn out of the state's pool, on its own RNG substream. Arrivals
/// feed the next layer's pools in canonical order, so the result does not
/// depend on thread scheduling. State ids follow layer order; the terminals
/// coll, tar, free come last.
pub fn build_mdp_with_regions(
    closed_loop: &ClosedLoop,
    config: &AbstractionConfig,
    regions: Option<RegionTables>,
) -> Result<Abstraction> {
    config.validate()?;
    let scenario = &closed_loop.scenario;
    let meta = AbstractionMeta {
        method: config.method,
        regions,
    };
    if let Some(r) = &meta.regions {
        r.check()?;
    }
    let segments = scenario.segment_count();
    let samples = config.samples_per_action;
    let n_actions = scenario.deltas.len();
    let m = scenario.measurement_dim();

    let initial = GaussianBelief::new(scenario.initial.mean.clone(), scenario.initial.cov.clone())?;
    let (initial_state, _, _) = meta.classify(0, &initial.cov)?;
    let mut rng = RngStream::derive(config.seed, &[label("initial-pool")]);
    let mut layer: BTreeMap<AbstractState, BeliefPool> = BTreeMap::new();
    layer.insert(initial_state, seeded_pool(&initial, config.pool_cap, &mut rng)?);

    let mut diagnostics = AbstractionDiagnostics::default();
    let mut states: Vec<AbstractState> = Vec::new();
    let mut rows: Vec<Vec<Row>> = Vec::new();
    let mut pool_sizes = Vec::new();

    for w in 0..segments {
        if layer.is_empty() && config.method == Method::EnforcedConvergence {
            let belief = GaussianBelief::new(scenario.waypoints[w].clone(), closed_loop.p_kf.clone())?;
            let mut rng = RngStream::derive(config.seed, &[label("fallback-pool"), w as u64]);
            layer.insert(
                AbstractState::Converged { waypoint: w },
                seeded_pool(&belief, config.pool_cap, &mut rng)?,
            );
            diagnostics.fallback_pools.push(w);
        }
        let layer_states: Vec<(AbstractState, BeliefPool)> = std::mem::take(&mut layer).into_iter().collect();
        let offset = states.len();
        let pairs: Vec<(usize, usize)> = (0..layer_states.len())
            .flat_map(|i| (0..n_actions).map(move |a| (i, a)))
            .collect();
        let results: Vec<PairResult> = pairs
            .par_iter()
            .map(|&(i, a)| {
                let rng = RngStream::derive(config.seed, &[label("transition"), (offset + i) as u64, a as u64]);
                simulate_pair(closed_loop, &meta, &layer_states[i].1, w, scenario.deltas[a], samples, rng)
            })
            .collect::<Result<_>>()?;

        let mut merge_rng = RngStream::derive(config.seed, &[label("pool"), (w + 1) as u64]);
        let mut layer_rows: Vec<Vec<Row>> = (0..layer_states.len()).map(|_| Vec::with_capacity(n_actions)).collect();
        for (&(i, a), r) in pairs.iter().zip(results) {
            diagnostics.rollouts += samples as u64;
            diagnostics.timeouts += r.timeouts;
            diagnostics.covariance_unconverged += r.unconverged;
            diagnostics.lambda_above_cap += r.above_cap;
            diagnostics.lambda_below_floor += r.below_floor;
            for (dest, entry) in r.arrivals {
                layer
                    .entry(dest)
                    .or_insert_with(|| BeliefPool::new(config.pool_cap))
                    .offer(entry, &mut merge_rng);
            }
            let mean_steps = r.steps as f64 / samples as f64;
            layer_rows[i].push(Row {
                counts: r.counts,
                cost: scenario.comm_cost * r.triggers as f64 / samples as f64,
                cost_product: scenario.comm_cost * mean_steps * expected_trigger_rate(scenario.deltas[a], m)?,
            });
        }
        for ((state, pool), row) in layer_states.into_iter().zip(layer_rows) {
            pool_sizes.push(pool.len());
            states.push(state);
            rows.push(row);
        }
    }
    if !layer.is_empty() {
        return Err(Error::Internal("arrivals recorded past the final waypoint".into()));
    }

    states.extend([AbstractState::Coll, AbstractState::Tar, AbstractState::Free]);
    pool_sizes.extend([0, 0, 0]);
    let ids: HashMap<&AbstractState, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut mdp_rows = Vec::with_capacity(states.len());
    let mut cost_product = Vec::with_capacity(states.len());
    for row in &rows {
        let mut actions = Vec::with_capacity(row.len());
        for r in row {
            let mut transitions: Vec<(usize, f64)> = r
                .counts
                .iter()
                .map(|(s, &c)| (ids[s], c as f64 / samples as f64))
                .collect();
            transitions.sort_by_key(|t| t.0);
            actions.push(ActionRow {
                transitions,
                cost: r.cost,
            });
        }
        mdp_rows.push(actions);
        cost_product.push(row.iter().map(|r| r.cost_product).collect());
    }
    for _ in 0..3 {
        mdp_rows.push(Vec::new());
        cost_product.push(Vec::new());
    }
    let mdp = Mdp {
        states,
        initial: 0,
        deltas: scenario.deltas.clone(),
        rows: mdp_rows,
    };
    mdp.validate()?;
    Ok(Abstraction {
        config: config.clone(),
        meta,
        mdp,
        cost_product,
        pool_sizes,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reservoir_respects_cap_and_keeps_early_entries_sometimes() {
        let mut rng = RngStream::new(1);
        let belief = GaussianBelief::new(vec![0.0], Matrix::identity(1)).unwrap();
        let mut pool = BeliefPool::new(10);
        for i in 0..1000 {
            pool.offer(
                PoolEntry {
                    belief: belief.clone(),
                    true_state: vec![i as f64],
                },
                &mut rng,
            );
        }
        assert_eq!(pool.len(), 10);
        assert_eq!(pool.seen(), 1000);
        // uniform reservoir: the mean kept index is near 500
        let mean: f64 = pool.entries.iter().map(|e| e.true_state[0]).sum::<f64>() / 10.0;
        assert!(mean > 150.0 && mean < 850.0, "{mean}");
    }

    #[test]
    fn empty_pool_draw_is_internal_error() {
        let pool = BeliefPool::new(3);
        assert!(matches!(pool.draw(&mut RngStream::new(0)), Err(Error::Internal(_))));
    }

    #[test]
    fn zero_samples_rejected() {
        let s = Scenario::bundled("open2d").unwrap();
        let config = AbstractionConfig {
            samples_per_action: 0,
            ..AbstractionConfig::default()
        };
        assert!(matches!(build_mdp(&s, &config), Err(Error::Input(_))));
    }
}
