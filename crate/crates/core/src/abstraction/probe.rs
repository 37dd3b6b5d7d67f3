use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::builder::{build_mdp_with_regions, Abstraction};
use super::config::{AbstractionConfig, Method};
use super::regions::{calibrate_regions, CovState};
use super::AbstractState;
use crate::error::{Error, Result};
use crate::plant::ClosedLoop;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub coarse_bins: (usize, usize),
    /// ΔP_max for every coarse state that has at least one fine substate.
    pub spreads: Vec<(AbstractState, f64)>,
    pub median: f64,
    pub max: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn coarse_of(state: &AbstractState, coarse: &Abstraction, fine: &Abstraction) -> Result<AbstractState> {
    match state {
        AbstractState::Belief { waypoint, cov } => {
            let missing = || Error::Input("both abstractions need region tables".into());
            let c = coarse.meta.regions.as_ref().ok_or_else(missing)?.axes(*waypoint)?;
            let f = fine.meta.regions.as_ref().ok_or_else(missing)?.axes(*waypoint)?;
            let regions = cov
                .regions
                .iter()
                .enumerate()
                .map(|(axis, &r)| c[axis].containing(&f[axis], r))
                .collect();
            Ok(AbstractState::Belief {
                waypoint: *waypoint,
                cov: CovState { regions },
            })
        }
        other => Ok(other.clone()),
    }
}

/// ΔP_max per coarse state: the largest |T_fine − T_coarse| over the coarse
/// state's fine substates, all actions and all coarse destinations. Fine
/// regions must nest inside coarse ones.
pub fn compare_abstractions(coarse: &Abstraction, fine: &Abstraction) -> Result<Vec<(AbstractState, f64)>> {
    let cm = &coarse.mdp;
    let fm = &fine.mdp;
    if cm.deltas != fm.deltas {
        return Err(Error::Input("abstractions use different threshold sets".into()));
    }
    let fine_to_coarse: Vec<AbstractState> = fm
        .states
        .iter()
        .map(|s| coarse_of(s, coarse, fine))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (sc, state) in cm.states.iter().enumerate() {
        if state.is_terminal() {
            continue;
        }
        let mut spread: Option<f64> = None;
        for (sf, mapped) in fine_to_coarse.iter().enumerate() {
            if mapped != state || fm.is_terminal(sf) {
                continue;
            }
            for a in 0..cm.action_count() {
                let mut diff: BTreeMap<&AbstractState, f64> = BTreeMap::new();
                for &(t, p) in &cm.rows[sc][a].transitions {
                    *diff.entry(&cm.states[t]).or_insert(0.0) -= p;
                }
                for &(t, p) in &fm.rows[sf][a].transitions {
                    *diff.entry(&fine_to_coarse[t]).or_insert(0.0) += p;
                }
                let d = diff.values().fold(0.0f64, |m, v| m.max(v.abs()));
                spread = Some(spread.map_or(d, |s| s.max(d)));
            }
        }
        if let Some(d) = spread {
            out.push((state.clone(), d));
        }
    }
    Ok(out)
}

/// Builds the discretized abstraction at `config`'s resolution and at twice
/// that resolution (every bin bisected, same seed and sample budget) and
/// reports how far the fine transition rows stray from the coarse ones.
pub fn refinement_probe(scenario: &Scenario, config: &AbstractionConfig) -> Result<ProbeReport> {
    if config.method != Method::Discretized {
        return Err(Error::Input("the refinement probe needs the discretized method".into()));
    }
    config.validate()?;
    let closed_loop = ClosedLoop::new(scenario)?;
    let tables = calibrate_regions(&closed_loop, config)?;
    let fine_tables = tables.bisected();
    let coarse = build_mdp_with_regions(&closed_loop, config, Some(tables))?;
    let fine = build_mdp_with_regions(&closed_loop, config, Some(fine_tables))?;
    let spreads = compare_abstractions(&coarse, &fine)?;
    let mut values: Vec<f64> = spreads.iter().map(|s| s.1).collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    Ok(ProbeReport {
        coarse_bins: (config.bins_theta, config.bins_lambda),
        median: median(&mut values),
        max,
        spreads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut []), 0.0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
