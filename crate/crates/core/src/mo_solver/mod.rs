//! Three-objective analysis of the abstract MDP: strategy evaluation,
//! scalarized value iteration, Pareto-front construction and point selection.
//!
//! Objectives are p_tar (maximize), p_coll (minimize) and expected energy
//! e_c (minimize). The waypoint-layered MDP is acyclic, so every computation
//! is a single backward pass in reverse topological order.

mod pareto;
mod prism;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::abstraction::AbstractState;
use crate::error::{Error, Result};

pub use pareto::{
    dominates, front_csv, pareto_front, select_point, ParetoFront, Query, Selection, Vertex,
};
pub use prism::{export_prism, parse_prism, to_prism_string, PrismModel};

/// Outcome distribution and energy of one (state, action) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRow {
    /// (destination id, probability), sorted by destination.
    pub transitions: Vec<(usize, f64)>,
    pub cost: f64,
}

/// Finite MDP whose actions are the thresholds Δ. Terminal states have no
/// rows; every other state offers every action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub states: Vec<AbstractState>,
    pub initial: usize,
    pub deltas: Vec<f64>,
    pub rows: Vec<Vec<ActionRow>>,
}

impl Mdp {
    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn action_count(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.states[s].is_terminal()
    }

    pub fn state_id(&self, state: &AbstractState) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        if self.rows.len() != n {
            return Err(Error::Input(format!("{} states but {} row blocks", n, self.rows.len())));
        }
        if self.initial >= n {
            return Err(Error::Input(format!("initial state {} out of range", self.initial)));
        }
        for (s, rows) in self.rows.iter().enumerate() {
            let expected = if self.is_terminal(s) { 0 } else { self.action_count() };
            if rows.len() != expected {
                return Err(Error::Input(format!(
                    "state {s} has {} actions, expected {expected}",
                    rows.len()
                )));
            }
            for (a, row) in rows.iter().enumerate() {
                if !(row.cost >= 0.0 && row.cost.is_finite()) {
                    return Err(Error::Input(format!("cost of ({s}, {a}) is not a nonnegative number")));
                }
                let mut total = 0.0;
                for &(t, p) in &row.transitions {
                    if t >= n || !(p >= 0.0) {
                        return Err(Error::Input(format!("bad transition ({s}, {a}) -> ({t}, {p})")));
                    }
                    total += p;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Input(format!("row ({s}, {a}) sums to {total}")));
                }
            }
        }
        self.topological_order().map(|_| ())
    }

    /// States ordered so every transition points forward; errors on a cycle.
    pub fn topological_order(&self) -> Result<Vec<usize>> {
        let n = self.states.len();
        let mut indegree = vec![0usize; n];
        let succ: Vec<Vec<usize>> = self
            .rows
            .iter()
            .map(|rows| {
                let mut out: Vec<usize> = rows.iter().flat_map(|r| r.transitions.iter().map(|t| t.0)).collect();
                out.sort_unstable();
                out.dedup();
                out
            })
            .collect();
        for list in &succ {
            for &t in list {
                indegree[t] += 1;
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&s| indegree[s] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for &t in &succ[s] {
                indegree[t] -= 1;
                if indegree[t] == 0 {
                    queue.push_back(t);
                }
            }
        }
        if order.len() != n {
            return Err(Error::Input("the MDP contains a cycle".into()));
        }
        Ok(order)
    }

    /// Unit reward vector (p_tar, p_coll) collected on entering a terminal.
    fn terminal_reach(&self, s: usize) -> (f64, f64) {
        match self.states[s] {
            AbstractState::Tar => (1.0, 0.0),
            AbstractState::Coll => (0.0, 1.0),
            _ => (0.0, 0.0),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serialization cannot fail")
    }
}

/// (p_tar, p_coll, e_c) of a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePoint {
    pub p_tar: f64,
    pub p_coll: f64,
    pub e_c: f64,
}

impl ObjectivePoint {
    pub fn mix(alpha: f64, a: &ObjectivePoint, b: &ObjectivePoint) -> ObjectivePoint {
        ObjectivePoint {
            p_tar: alpha * a.p_tar + (1.0 - alpha) * b.p_tar,
            p_coll: alpha * a.p_coll + (1.0 - alpha) * b.p_coll,
            e_c: alpha * a.e_c + (1.0 - alpha) * b.e_c,
        }
    }

    pub fn max_abs_diff(&self, other: &ObjectivePoint) -> f64 {
        (self.p_tar - other.p_tar)
            .abs()
            .max((self.p_coll - other.p_coll).abs())
            .max((self.e_c - other.e_c).abs())
    }
}

/// Per-state distribution over actions; empty for terminals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub choice: Vec<Vec<f64>>,
}

impl Policy {
    /// Deterministic policy; `actions[s]` is ignored for terminal states.
    pub fn pure(mdp: &Mdp, actions: &[usize]) -> Policy {
        let k = mdp.action_count();
        Policy {
            choice: (0..mdp.state_count())
                .map(|s| {
                    if mdp.is_terminal(s) {
                        Vec::new()
                    } else {
                        let mut d = vec![0.0; k];
                        d[actions[s]] = 1.0;
                        d
                    }
                })
                .collect(),
        }
    }

    pub fn uniform_action(mdp: &Mdp, action: usize) -> Policy {
        Policy::pure(mdp, &vec![action; mdp.state_count()])
    }

    /// The action with all the mass, when the choice at `s` is deterministic.
    pub fn pure_action(&self, s: usize) -> Option<usize> {
        let d = self.choice.get(s)?;
        d.iter().position(|&p| p == 1.0)
    }
}

/// Secondary policy used with probability 1 − alpha, drawn once per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub alpha: f64,
    pub secondary: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub primary: Policy,
    pub mixture: Option<Mixture>,
}

impl From<Policy> for Strategy {
    fn from(primary: Policy) -> Self {
        Strategy {
            primary,
            mixture: None,
        }
    }
}

fn reachable(mdp: &Mdp, policy: &Policy) -> Result<Vec<bool>> {
    let mut seen = vec![false; mdp.state_count()];
    let mut stack = vec![mdp.initial];
    seen[mdp.initial] = true;
    while let Some(s) = stack.pop() {
        if mdp.is_terminal(s) {
            continue;
        }
        let dist = policy
            .choice
            .get(s)
            .filter(|d| d.len() == mdp.action_count())
            .ok_or_else(|| Error::Input(format!("strategy has no choice at reachable state {s}")))?;
        let total: f64 = dist.iter().sum();
        if dist.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("choice at state {s} is not a distribution")));
        }
        for (a, &p) in dist.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for &(t, q) in &mdp.rows[s][a].transitions {
                if q > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
    }
    Ok(seen)
}

/// Objectives of a single (possibly randomized) policy from the initial state.
pub fn evaluate_policy(mdp: &Mdp, policy: &Policy) -> Result<ObjectivePoint> {
    let live = reachable(mdp, policy)?;
    let order = mdp.topological_order()?;
    let mut value = vec![(0.0, 0.0, 0.0); mdp.state_count()];
    for &s in order.iter().rev() {
        if mdp.is_terminal(s) {
            let (t, c) = mdp.terminal_reach(s);
            value[s] = (t, c, 0.0);
            continue;
        }
        if !live[s] {
            continue;
        }
        let mut acc = (0.0, 0.0, 0.0);
        for (a, &pa) in policy.choice[s].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            let row = &mdp.rows[s][a];
            let mut v = (0.0, 0.0, row.cost);
            for &(t, p) in &row.transitions {
                v.0 += p * value[t].0;
                v.1 += p * value[t].1;
                v.2 += p * value[t].2;
            }
            acc.0 += pa * v.0;
            acc.1 += pa * v.1;
            acc.2 += pa * v.2;
        }
        value[s] = acc;
    }
    let (p_tar, p_coll, e_c) = value[mdp.initial];
    Ok(ObjectivePoint { p_tar, p_coll, e_c })
}

/// Objectives of a strategy; a mixture evaluates to the convex combination.
pub fn evaluate_strategy(mdp: &Mdp, strategy: &Strategy) -> Result<ObjectivePoint> {
    let primary = evaluate_policy(mdp, &strategy.primary)?;
    match &strategy.mixture {
        None => Ok(primary),
        Some(m) => {
            if !(0.0..=1.0).contains(&m.alpha) {
                return Err(Error::Input(format!("mixture weight {} outside [0, 1]", m.alpha)));
            }
            let secondary = evaluate_policy(mdp, &m.secondary)?;
            Ok(ObjectivePoint::mix(m.alpha, &primary, &secondary))
        }
    }
}

/// Maximizes w₁·p_tar − w₂·p_coll − w₃·e_c by backward induction.
///
/// Ties within 1e-12 of the largest |Q| go to the smallest action index. The returned
/// point is the exact evaluation of the argmax policy.
pub fn scalarized_value_iteration(mdp: &Mdp, w: [f64; 3]) -> Result<(Policy, ObjectivePoint)> {
    if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
        return Err(Error::Input(format!("weights must be nonnegative, got {w:?}")));
    }
    if w.iter().all(|&x| x == 0.0) {
        return Err(Error::Input("weights must not all be zero".into()));
    }
    let order = mdp.topological_order()?;
    let n = mdp.state_count();
    let mut value = vec![0.0; n];
    let mut best = vec![0usize; n];
    for &s in order.iter().rev() {
        if mdp.is_terminal(s) {
            let (t, c) = mdp.terminal_reach(s);
            value[s] = w[0] * t - w[1] * c;
            continue;
        }
        let q: Vec<f64> = mdp.rows[s]
            .iter()
            .map(|row| {
                -w[2] * row.cost + row.transitions.iter().map(|&(t, p)| p * value[t]).sum::<f64>()
            })
            .collect();
        let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a = q.iter().position(|&v| v >= top - tol).expect("nonterminal states have actions");
        best[s] = a;
        value[s] = q[a];
    }
    let policy = Policy::pure(mdp, &best);
    let point = evaluate_policy(mdp, &policy)?;
    Ok((policy, point))
}

/// Largest expected energy over all policies (used to normalize weights).
pub fn max_expected_energy(mdp: &Mdp) -> Result<f64> {
    let order = mdp.topological_order()?;
    let mut value = vec![0.0; mdp.state_count()];
    for &s in order.iter().rev() {
        if mdp.is_terminal(s) {
            continue;
        }
        value[s] = mdp.rows[s]
            .iter()
            .map(|row| row.cost + row.transitions.iter().map(|&(t, p)| p * value[t]).sum::<f64>())
            .fold(0.0, f64::max);
    }
    Ok(value[mdp.initial])
}

/// Every deterministic policy, with its objectives, in lexicographic order of
/// the action vector over non-terminal states. Refuses more than `limit` policies.
pub fn enumerate_pure_strategies(mdp: &Mdp, limit: usize) -> Result<Vec<(Policy, ObjectivePoint)>> {
    let decision: Vec<usize> = (0..mdp.state_count()).filter(|&s| !mdp.is_terminal(s)).collect();
    let k = mdp.action_count();
    let total = (k as u128).checked_pow(decision.len() as u32).unwrap_or(u128::MAX);
    if total > limit as u128 {
        return Err(Error::Input(format!("{total} pure strategies exceed the limit {limit}")));
    }
    let mut actions = vec![0usize; mdp.state_count()];
    let mut out = Vec::with_capacity(total as usize);
    for code in 0..total {
        let mut c = code;
        for &s in decision.iter().rev() {
            actions[s] = (c % k as u128) as usize;
            c /= k as u128;
        }
        let policy = Policy::pure(mdp, &actions);
        let point = evaluate_policy(mdp, &policy)?;
        out.push((policy, point));
    }
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use proptest::prelude::*;

    fn close(a: &ObjectivePoint, b: (f64, f64, f64)) -> bool {
        a.max_abs_diff(&ObjectivePoint {
            p_tar: b.0,
            p_coll: b.1,
            e_c: b.2,
        }) < 1e-12
    }

    #[test]
    fn chain_evaluates_exactly() {
        let m = chain();
        m.validate().unwrap();
        let p = evaluate_policy(&m, &Policy::uniform_action(&m, 0)).unwrap();
        assert!(close(&p, (1.0, 0.0, 5.0)));
    }

    #[test]
    fn single_step_split() {
        let mut m = chain();
        m.rows[0][0] = row(&[(1, 0.1), (2, 0.9)], 3.0);
        let p = evaluate_policy(&m, &Policy::uniform_action(&m, 0)).unwrap();
        assert!(close(&p, (0.9, 0.1, 3.0)));
    }

    #[test]
    fn hand_computed_two_waypoint_values() {
        let m = two_waypoint();
        // actions (s0, s1, s2) = (1, 0, 1):
        // p_tar = 0.3·0.97 + 0.6·0.6 = 0.651
        // p_coll = 0.1 + 0.3·0.01 + 0.6·0.25 = 0.253
        // e_c = 3 + 0.3·9 + 0.6·2 = 6.9
        let p = evaluate_policy(&m, &Policy::pure(&m, &[1, 0, 1, 0, 0, 0])).unwrap();
        assert!(close(&p, (0.651, 0.253, 6.9)), "{p:?}");
    }

    #[test]
    fn missing_choice_at_reachable_state_is_an_error() {
        let m = two_waypoint();
        let mut pol = Policy::uniform_action(&m, 0);
        pol.choice[1].clear();
        assert!(matches!(evaluate_policy(&m, &pol), Err(Error::Input(_))));
        // unreachable state may be left undefined
        let mut only_first = Policy::uniform_action(&m, 0);
        let mut m2 = m.clone();
        m2.rows[0][0] = row(&[(1, 1.0)], 1.0);
        only_first.choice[2].clear();
        evaluate_policy(&m2, &only_first).unwrap();
    }

    #[test]
    fn cycle_is_rejected() {
        let mut m = chain();
        m.states.insert(1, belief(1));
        m.rows = vec![
            vec![row(&[(1, 1.0)], 1.0)],
            vec![row(&[(0, 1.0)], 1.0)],
            vec![],
            vec![],
            vec![],
        ];
        assert!(m.topological_order().is_err());
        assert!(scalarized_value_iteration(&m, [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn weight_validation() {
        let m = two_action();
        assert!(scalarized_value_iteration(&m, [-1.0, 0.0, 0.0]).is_err());
        assert!(scalarized_value_iteration(&m, [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn target_weight_matches_enumeration() {
        let m = two_waypoint();
        let (_, vi) = scalarized_value_iteration(&m, [1.0, 0.0, 0.0]).unwrap();
        let best = enumerate_pure_strategies(&m, 1000)
            .unwrap()
            .iter()
            .map(|(_, p)| p.p_tar)
            .fold(0.0, f64::max);
        assert!((vi.p_tar - best).abs() < 1e-12);
    }

    #[test]
    fn energy_weight_picks_cheapest() {
        let m = two_action();
        let (pol, p) = scalarized_value_iteration(&m, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(pol.pure_action(0), Some(1));
        assert_eq!(p.e_c, 2.0);
    }

    #[test]
    fn ties_go_to_smallest_delta() {
        let mut m = two_action();
        m.rows[0][1] = m.rows[0][0].clone();
        let (pol, _) = scalarized_value_iteration(&m, [0.0, 0.0, 1.0]).unwrap();
        assert_eq!(pol.pure_action(0), Some(0));
    }

    #[test]
    fn max_energy() {
        assert_eq!(max_expected_energy(&two_action()).unwrap(), 10.0);
        // 8 + 0.9·9 + 0.08·12 = 17.06
        assert!((max_expected_energy(&two_waypoint()).unwrap() - 17.06).abs() < 1e-12);
    }

    #[test]
    fn mixture_is_linear() {
        let m = two_waypoint();
        let a = Policy::pure(&m, &[0, 0, 0, 0, 0, 0]);
        let b = Policy::pure(&m, &[1, 1, 1, 0, 0, 0]);
        let pa = evaluate_policy(&m, &a).unwrap();
        let pb = evaluate_policy(&m, &b).unwrap();
        for alpha in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let s = super::Strategy {
                primary: a.clone(),
                mixture: Some(Mixture {
                    alpha,
                    secondary: b.clone(),
                }),
            };
            let got = evaluate_strategy(&m, &s).unwrap();
            assert!(got.max_abs_diff(&ObjectivePoint::mix(alpha, &pa, &pb)) < 1e-12);
        }
    }

    #[test]
    fn randomized_policy_is_average_at_single_state() {
        let m = two_action();
        let mut pol = Policy::uniform_action(&m, 0);
        pol.choice[0] = vec![0.5, 0.5];
        let p = evaluate_policy(&m, &pol).unwrap();
        assert!(close(&p, (0.89, 0.11, 6.0)));
    }

    proptest! {
        #[test]
        fn reach_probabilities_partition(seed in 0u64..500, layers in 1usize..4) {
            let m = random_layered(seed, layers, 2, 2);
            m.validate().unwrap();
            for (_, p) in enumerate_pure_strategies(&m, 10_000).unwrap() {
                prop_assert!(p.p_tar >= 0.0 && p.p_coll >= 0.0);
                prop_assert!(p.p_tar + p.p_coll <= 1.0 + 1e-9);
                prop_assert!(p.e_c >= 0.0);
            }
        }

        #[test]
        fn value_iteration_is_optimal_among_pure(seed in 0u64..500, w0 in 0.0f64..1.0, w1 in 0.0f64..1.0, w2 in 0.0f64..1.0) {
            prop_assume!(w0 + w1 + w2 > 1e-3);
            let m = random_layered(seed, 3, 2, 2);
            let w = [w0, w1, w2];
            let score = |p: &ObjectivePoint| w[0] * p.p_tar - w[1] * p.p_coll - w[2] * p.e_c;
            let (_, vi) = scalarized_value_iteration(&m, w).unwrap();
            for (_, p) in enumerate_pure_strategies(&m, 10_000).unwrap() {
                prop_assert!(score(&vi) >= score(&p) - 1e-9);
            }
        }

        #[test]
        fn argmax_invariant_under_scaling(seed in 0u64..500, w0 in 0.0f64..1.0, w1 in 0.0f64..1.0, w2 in 0.01f64..1.0) {
            let m = random_layered(seed, 3, 2, 3);
            let (a, _) = scalarized_value_iteration(&m, [w0, w1, w2]).unwrap();
            let (b, _) = scalarized_value_iteration(&m, [10.0 * w0, 10.0 * w1, 10.0 * w2]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
