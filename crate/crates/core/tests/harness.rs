use etsynth::abstraction::{build_mdp, AbstractionConfig, Method};
use etsynth::harness::{full_kf_baseline, simulate_strategy, traces_csv, SimulationOptions};
use etsynth::mo_solver::{Policy, Strategy};
use etsynth::numerics::Matrix;
use etsynth::plant::ClosedLoop;
use etsynth::scenario::Scenario;

fn noise_free() -> Scenario {
    let mut s = Scenario::bundled("open2d").unwrap();
    s.system.q = Matrix::zeros(2, 2);
    s.system.r = Matrix::zeros(2, 2);
    s.initial.cov = Matrix::zeros(2, 2);
    s
}

fn config(method: Method) -> AbstractionConfig {
    AbstractionConfig {
        method,
        samples_per_action: 60,
        pool_cap: 200,
        calibration_runs: 60,
        seed: 2,
        ..AbstractionConfig::default()
    }
}

#[test]
fn noise_free_runs_all_reach_the_target() {
    let s = noise_free();
    let cl = ClosedLoop::new(&s).unwrap();
    let a = build_mdp(&s, &config(Method::Discretized)).unwrap();
    let policy = Policy::uniform_action(&a.mdp, a.mdp.action_count() - 1);
    let rep = simulate_strategy(&cl, &a.mdp, &a.meta, &policy.into(), &SimulationOptions::new(50, 1)).unwrap();
    assert_eq!(rep.objectives.p_tar, 1.0);
    assert_eq!(rep.objectives.e_c_mean, 0.0);
    assert_eq!(rep.objectives.e_c_stderr, 0.0);
    assert_eq!(rep.misses, 0);

    let kf = full_kf_baseline(&cl, &SimulationOptions::new(50, 1)).unwrap();
    assert_eq!(kf.objectives.p_tar, 1.0);
    assert_eq!(kf.objectives.e_c_stderr, 0.0);
}

#[test]
fn zero_threshold_everywhere_sends_every_measurement() {
    let mut s = Scenario::bundled("winding2d").unwrap();
    s.deltas.insert(0, 0.0);
    let cl = ClosedLoop::new(&s).unwrap();
    let a = build_mdp(&s, &config(Method::EnforcedConvergence)).unwrap();
    let policy = Policy::uniform_action(&a.mdp, 0);
    let rep = simulate_strategy(&cl, &a.mdp, &a.meta, &policy.into(), &SimulationOptions::new(100, 3)).unwrap();
    assert_eq!(rep.objectives.total_triggers, rep.objectives.total_steps);
}

#[test]
fn baseline_energy_is_the_step_count() {
    let s = Scenario::bundled("winding2d").unwrap();
    let cl = ClosedLoop::new(&s).unwrap();
    let kf = full_kf_baseline(&cl, &SimulationOptions::new(200, 4)).unwrap().objectives;
    assert_eq!(kf.total_triggers, kf.total_steps);
    assert_eq!(kf.e_c_mean, s.comm_cost * kf.total_steps as f64 / kf.runs as f64);
}

#[test]
fn tallies_are_consistent_and_reproducible() {
    let s = Scenario::bundled("winding2d").unwrap();
    let cl = ClosedLoop::new(&s).unwrap();
    let a = build_mdp(&s, &config(Method::Discretized)).unwrap();
    let strategy: Strategy = Policy::uniform_action(&a.mdp, 1).into();
    let opts = SimulationOptions::new(300, 5);
    let first = simulate_strategy(&cl, &a.mdp, &a.meta, &strategy, &opts).unwrap();
    let second = simulate_strategy(&cl, &a.mdp, &a.meta, &strategy, &opts).unwrap();
    assert_eq!(first, second);

    let o = &first.objectives;
    assert!((o.p_tar + o.p_coll + o.p_free - 1.0).abs() <= 1e-12);
    assert!((o.e_c_mean * o.runs as f64 - o.total_triggers as f64 * s.comm_cost).abs() <= 1e-9);
    assert_eq!(first.traces.len(), 300);
    let csv = traces_csv(&first.traces, 2);
    assert_eq!(csv.lines().count(), 1 + first.traces.iter().map(|t| t.rows.len()).sum::<usize>());
}

#[test]
fn more_communication_means_fewer_collisions() {
    let s = Scenario::bundled("winding2d").unwrap();
    let cl = ClosedLoop::new(&s).unwrap();
    let a = build_mdp(&s, &config(Method::Discretized)).unwrap();
    let opts = SimulationOptions { trace_cap: 0, ..SimulationOptions::new(1000, 6) };
    let run = |action| {
        let p = Policy::uniform_action(&a.mdp, action);
        simulate_strategy(&cl, &a.mdp, &a.meta, &p.into(), &opts).unwrap().objectives.p_coll
    };
    let (low, high) = (run(0), run(a.mdp.action_count() - 1));
    let se = |p: f64| (p * (1.0 - p) / 1000.0).sqrt();
    assert!(low <= high + 2.0 * (se(low).powi(2) + se(high).powi(2)).sqrt(), "{low} vs {high}");
}
