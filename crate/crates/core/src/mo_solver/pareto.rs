use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{max_expected_energy, scalarized_value_iteration, Mdp, Mixture, ObjectivePoint, Policy, Strategy};
use crate::error::{Error, Result};

const TOL: f64 = 1e-12;

/// Weight added to every objective during the sweep so zero weights still
/// break ties toward nondominated strategies.
const WEIGHT_FLOOR: f64 = 1e-6;

/// True iff `a` is at least as good as `b` everywhere and strictly better
/// somewhere (more p_tar, less p_coll, less e_c), up to `tol`.
pub fn dominates(a: &ObjectivePoint, b: &ObjectivePoint, tol: f64) -> bool {
    let no_worse = a.p_tar >= b.p_tar - tol && a.p_coll <= b.p_coll + tol && a.e_c <= b.e_c + tol;
    let better = a.p_tar > b.p_tar + tol || a.p_coll < b.p_coll - tol || a.e_c < b.e_c - tol;
    no_worse && better
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub point: ObjectivePoint,
    /// (p_tar, p_coll, energy) weights on the simplex; energy weight applies
    /// to e_c divided by the MDP's maximal expected energy.
    pub weight: [f64; 3],
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    /// Sorted by descending p_tar, then ascending p_coll and e_c.
    pub vertices: Vec<Vertex>,
    pub grid_resolution: usize,
    pub energy_scale: f64,
}

fn simplex_grid(g: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity((g + 1) * (g + 2) / 2);
    for i in 0..=g {
        for j in 0..=g - i {
            let k = g - i - j;
            out.push([i as f64 / g as f64, j as f64 / g as f64, k as f64 / g as f64]);
        }
    }
    out
}

/// Sweeps a uniform barycentric weight grid, solves each scalarization and
/// keeps the distinct nondominated results.
///
/// Only vertices of the convex hull of achievable points are found; points on
/// hull faces are reached by mixing vertices (see [`select_point`]).
pub fn pareto_front(mdp: &Mdp, grid_resolution: usize) -> Result<ParetoFront> {
    if grid_resolution < 2 {
        return Err(Error::Input(format!("grid resolution must be >= 2, got {grid_resolution}")));
    }
    mdp.validate()?;
    let e_max = max_expected_energy(mdp)?;
    let energy_scale = if e_max > 0.0 { e_max } else { 1.0 };
    let weights = simplex_grid(grid_resolution);
    let solved: Vec<(Policy, ObjectivePoint)> = weights
        .par_iter()
        .map(|w| {
            let eff = [
                w[0] + WEIGHT_FLOOR,
                w[1] + WEIGHT_FLOOR,
                (w[2] + WEIGHT_FLOOR) / energy_scale,
            ];
            scalarized_value_iteration(mdp, eff)
        })
        .collect::<Result<_>>()?;

    let mut kept: Vec<Vertex> = Vec::new();
    for (w, (policy, point)) in weights.iter().zip(solved) {
        let duplicate = kept
            .iter()
            .any(|v| v.policy == policy || v.point.max_abs_diff(&point) <= TOL);
        if !duplicate {
            kept.push(Vertex {
                point,
                weight: *w,
                policy,
            });
        }
    }
    let points: Vec<ObjectivePoint> = kept.iter().map(|v| v.point).collect();
    let mut vertices: Vec<Vertex> = kept
        .into_iter()
        .filter(|v| !points.iter().any(|p| dominates(p, &v.point, TOL)))
        .collect();
    vertices.sort_by(|a, b| {
        b.point
            .p_tar
            .total_cmp(&a.point.p_tar)
            .then(a.point.p_coll.total_cmp(&b.point.p_coll))
            .then(a.point.e_c.total_cmp(&b.point.e_c))
    });
    Ok(ParetoFront {
        vertices,
        grid_resolution,
        energy_scale,
    })
}

/// CSV rendering: `p_tar,p_coll,e_c,w_tar,w_coll,w_energy,strategy_id`.
pub fn front_csv(front: &ParetoFront) -> String {
    let mut out = String::from("p_tar,p_coll,e_c,w_tar,w_coll,w_energy,strategy_id\n");
    for (i, v) in front.vertices.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            v.point.p_tar, v.point.p_coll, v.point.e_c, v.weight[0], v.weight[1], v.weight[2], i
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    MaxPtar,
    /// Least energy subject to p_tar ≥ bound.
    MinEnergyGivenPtar(f64),
    /// Least collision probability subject to e_c ≤ bound.
    MinCollGivenEnergy(f64),
}

impl std::fmt::Display for Query {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Query::MaxPtar => write!(f, "max p_tar"),
            Query::MinEnergyGivenPtar(p) => write!(f, "min e_c subject to p_tar >= {p}"),
            Query::MinCollGivenEnergy(e) => write!(f, "min p_coll subject to e_c <= {e}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub query: Query,
    pub strategy: Strategy,
    pub predicted: ObjectivePoint,
    pub primary_vertex: usize,
    /// Second vertex and the weight on the primary one, for mixtures.
    pub secondary_vertex: Option<usize>,
    pub alpha: f64,
}

struct Candidate {
    i: usize,
    j: Option<usize>,
    alpha: f64,
    point: ObjectivePoint,
}

fn pick<F>(candidates: Vec<Candidate>, better: F) -> Candidate
where
    F: Fn(&ObjectivePoint, &ObjectivePoint) -> std::cmp::Ordering,
{
    candidates
        .into_iter()
        .reduce(|best, c| if better(&c.point, &best.point).is_lt() { c } else { best })
        .expect("feasible queries have a candidate")
}

/// Answers a point query on the front with a vertex or a two-vertex mixture.
///
/// A constrained query that falls between two vertices is met with equality
/// by mixing them at the initial state, since reach probabilities and
/// expected energy are linear in the mixing weight.
pub fn select_point(front: &ParetoFront, query: Query) -> Result<Selection> {
    let v = &front.vertices;
    if v.is_empty() {
        return Err(Error::Input("the Pareto front is empty".into()));
    }
    let vertex = |i: usize| Candidate {
        i,
        j: None,
        alpha: 1.0,
        point: v[i].point,
    };
    let chosen = match query {
        Query::MaxPtar => vertex(0),
        Query::MinEnergyGivenPtar(p) => {
            let best = v.iter().map(|x| x.point.p_tar).fold(f64::NEG_INFINITY, f64::max);
            if p > best + TOL {
                return Err(Error::Infeasible {
                    query: query.to_string(),
                    bound: best,
                });
            }
            let mut cands: Vec<Candidate> = (0..v.len()).filter(|&i| v[i].point.p_tar >= p - TOL).map(vertex).collect();
            for i in 0..v.len() {
                for j in 0..v.len() {
                    let (pi, pj) = (v[i].point.p_tar, v[j].point.p_tar);
                    if pi > p + TOL && pj < p - TOL {
                        let alpha = (p - pj) / (pi - pj);
                        cands.push(Candidate {
                            i,
                            j: Some(j),
                            alpha,
                            point: ObjectivePoint::mix(alpha, &v[i].point, &v[j].point),
                        });
                    }
                }
            }
            pick(cands, |a, b| a.e_c.total_cmp(&b.e_c).then(a.p_coll.total_cmp(&b.p_coll)))
        }
        Query::MinCollGivenEnergy(e) => {
            let cheapest = v.iter().map(|x| x.point.e_c).fold(f64::INFINITY, f64::min);
            if e < cheapest - TOL {
                return Err(Error::Infeasible {
                    query: query.to_string(),
                    bound: cheapest,
                });
            }
            let mut cands: Vec<Candidate> = (0..v.len()).filter(|&i| v[i].point.e_c <= e + TOL).map(vertex).collect();
            for i in 0..v.len() {
                for j in 0..v.len() {
                    let (ei, ej) = (v[i].point.e_c, v[j].point.e_c);
                    if ei < e - TOL && ej > e + TOL {
                        let alpha = (ej - e) / (ej - ei);
                        cands.push(Candidate {
                            i,
                            j: Some(j),
                            alpha,
                            point: ObjectivePoint::mix(alpha, &v[i].point, &v[j].point),
                        });
                    }
                }
            }
            pick(cands, |a, b| a.p_coll.total_cmp(&b.p_coll).then(b.p_tar.total_cmp(&a.p_tar)))
        }
    };
    let strategy = Strategy {
        primary: v[chosen.i].policy.clone(),
        mixture: chosen.j.map(|j| Mixture {
            alpha: chosen.alpha,
            secondary: v[j].policy.clone(),
        }),
    };
    Ok(Selection {
        query,
        strategy,
        predicted: chosen.point,
        primary_vertex: chosen.i,
        secondary_vertex: chosen.j,
        alpha: chosen.alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::super::{enumerate_pure_strategies, evaluate_strategy};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_size() {
        assert_eq!(simplex_grid(40).len(), 861);
        assert!(simplex_grid(7).iter().all(|w| (w.iter().sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_action_gives_one_vertex() {
        let f = pareto_front(&chain(), 10).unwrap();
        assert_eq!(f.vertices.len(), 1);
    }

    #[test]
    fn dominating_action_gives_one_vertex() {
        let mut m = two_action();
        m.rows[0][1] = row(&[(1, 0.2), (2, 0.8)], 20.0);
        assert_eq!(pareto_front(&m, 20).unwrap().vertices.len(), 1);
    }

    #[test]
    fn tradeoff_gives_two_vertices() {
        let f = pareto_front(&two_action(), 40).unwrap();
        assert_eq!(f.vertices.len(), 2);
        assert!(f.vertices[0].point.p_tar > f.vertices[1].point.p_tar);
        assert!(f.vertices[0].point.e_c > f.vertices[1].point.e_c);
    }

    #[test]
    fn resolution_below_two_rejected() {
        assert!(pareto_front(&two_action(), 1).is_err());
    }

    #[test]
    fn csv_is_sorted_and_shaped() {
        let f = pareto_front(&two_waypoint(), 40).unwrap();
        let csv = front_csv(&f);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "p_tar,p_coll,e_c,w_tar,w_coll,w_energy,strategy_id");
        assert_eq!(lines.len(), f.vertices.len() + 1);
        let ptar: Vec<f64> = lines[1..].iter().map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        assert!(ptar.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn max_ptar_query() {
        let f = pareto_front(&two_action(), 40).unwrap();
        let s = select_point(&f, Query::MaxPtar).unwrap();
        assert_eq!(s.primary_vertex, 0);
        assert!((s.predicted.p_tar - 0.98).abs() < 1e-12);
    }

    #[test]
    fn exact_vertex_constraint_returns_vertex() {
        let f = pareto_front(&two_action(), 40).unwrap();
        let s = select_point(&f, Query::MinEnergyGivenPtar(0.8)).unwrap();
        assert_eq!(s.secondary_vertex, None);
        assert_eq!(s.predicted.e_c, 2.0);
    }

    #[test]
    fn midway_constraint_mixes() {
        let m = two_action();
        let f = pareto_front(&m, 40).unwrap();
        let s = select_point(&f, Query::MinEnergyGivenPtar(0.89)).unwrap();
        assert!(s.secondary_vertex.is_some());
        assert!((s.alpha - 0.5).abs() < 1e-12);
        assert!((s.predicted.p_tar - 0.89).abs() < 1e-12);
        assert!((s.predicted.e_c - 6.0).abs() < 1e-12);
        let eval = evaluate_strategy(&m, &s.strategy).unwrap();
        assert!(eval.max_abs_diff(&s.predicted) < 1e-12);
    }

    #[test]
    fn energy_budget_query() {
        let m = two_action();
        let f = pareto_front(&m, 40).unwrap();
        let s = select_point(&f, Query::MinCollGivenEnergy(4.0)).unwrap();
        // primary is the cheap vertex: α·2 + (1 − α)·10 = 4 → α = 0.75
        assert_eq!(s.primary_vertex, 1);
        assert!((s.alpha - 0.75).abs() < 1e-12);
        assert!((s.predicted.e_c - 4.0).abs() < 1e-12);
        assert!((s.predicted.p_coll - (0.75 * 0.2 + 0.25 * 0.02)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_queries_report_bound() {
        let f = pareto_front(&two_action(), 40).unwrap();
        match select_point(&f, Query::MinEnergyGivenPtar(1.01)) {
            Err(Error::Infeasible { bound, .. }) => assert!((bound - 0.98).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        match select_point(&f, Query::MinCollGivenEnergy(1.0)) {
            Err(Error::Infeasible { bound, .. }) => assert_eq!(bound, 2.0),
            other => panic!("{other:?}"),
        }
    }

    fn assert_front_matches_enumeration(m: &Mdp) {
        let f = pareto_front(m, 40).unwrap();
        let all = enumerate_pure_strategies(m, 100_000).unwrap();
        for (i, a) in f.vertices.iter().enumerate() {
            for (j, b) in f.vertices.iter().enumerate() {
                if i != j {
                    assert!(!dominates(&a.point, &b.point, 1e-12));
                }
            }
            assert!(all.iter().any(|(_, p)| p.max_abs_diff(&a.point) <= 1e-9));
            assert!(!all.iter().any(|(_, p)| dominates(p, &a.point, 1e-9)));
        }
    }

    #[test]
    fn hand_fixtures_match_enumeration() {
        assert_front_matches_enumeration(&two_action());
        assert_front_matches_enumeration(&two_waypoint());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_fixtures_match_enumeration(seed in 0u64..10_000, actions in 2usize..=3) {
            let m = random_layered(seed, 3, 2, actions);
            prop_assume!(m.states.len() - 3 <= 6);
            assert_front_matches_enumeration(&m);
        }
    }
}
