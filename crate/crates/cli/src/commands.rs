use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use etsynth::abstraction::{build_mdp, refinement_probe, AbstractionConfig, AbstractionMeta, Method, Abstraction};
use etsynth::harness::{
    compare_theory_empirical, full_kf_baseline, simulate_strategy, traces_csv, Comparison, EmpiricalObjectives,
    SimulationOptions, Tolerance,
};
use etsynth::mo_solver::{export_prism, front_csv, pareto_front, select_point, Mdp, ObjectivePoint, ParetoFront, Query, Strategy};
use etsynth::plant::ClosedLoop;
use etsynth::scenario::{load_scenario, Scenario};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{parse_bins, AbstractArgs, BaselineArgs, ParetoArgs, ProbeArgs, QueryKind, SimulateArgs, SynthArgs};
use crate::manifest::{config_hash, content_hash, now_unix, RunManifest};

/// Front plus everything `synth` needs to emit a self-contained strategy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontFile {
    pub abstraction_hash: String,
    pub meta: AbstractionMeta,
    pub mdp: Mdp,
    pub front: ParetoFront,
}

/// A synthesized strategy with the abstraction it refers to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyFile {
    pub name: String,
    pub query: Query,
    pub predicted: ObjectivePoint,
    pub primary_vertex: usize,
    pub secondary_vertex: Option<usize>,
    pub alpha: f64,
    pub abstraction_hash: String,
    pub meta: AbstractionMeta,
    pub mdp: Mdp,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationFile {
    pub strategy: String,
    pub runs: usize,
    pub seed: u64,
    pub predicted: ObjectivePoint,
    pub objectives: EmpiricalObjectives,
    pub comparison: Comparison,
    pub misses: u64,
    pub decisions: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineFile {
    pub runs: usize,
    pub seed: u64,
    pub objectives: EmpiricalObjectives,
}

/// Common bookkeeping for commands that write into an output directory.
struct Run {
    command: &'static str,
    /// Manifest name; differs from `command` when several runs share a directory.
    label: String,
    argv: Vec<String>,
    started: u64,
    out: PathBuf,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn start(command: &'static str, argv: &[String], out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            command,
            label: command.to_string(),
            argv: argv.to_vec(),
            started: now_unix(),
            out: out.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(PathBuf::from(name));
        Ok(path)
    }

    fn finish(self, scenario: Option<&str>, seed: Option<u64>, params: serde_json::Value) -> Result<()> {
        let manifest = RunManifest {
            command: self.label,
            argv: self.argv,
            working_dir: std::env::current_dir().context("reading the working directory")?,
            scenario: scenario.map(str::to_string),
            config_hash: config_hash(self.command, &params),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: self.started,
            finished_unix: now_unix(),
            outputs: self.outputs,
        };
        manifest.write(&self.out)?;
        Ok(())
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        etsynth::Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        }
        .into()
    })
}

/// A path to a scenario file, or the name of a bundled scenario when no
/// such file exists.
pub fn resolve_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if !path.exists() && Scenario::bundled_names().contains(&arg) {
        return Ok(Scenario::bundled(arg)?);
    }
    Ok(load_scenario(path)?)
}

fn scenario_params(scenario: &Scenario) -> serde_json::Value {
    json!(content_hash(scenario.to_json().as_bytes()))
}

pub fn validate(arg: &str) -> Result<()> {
    let scenario = resolve_scenario(arg)?;
    let closed_loop = ClosedLoop::new(&scenario)?;
    let kf: Vec<String> = closed_loop.p_kf.diagonal().iter().map(|v| format!("{v:.4e}")).collect();
    println!("scenario {}: valid", scenario.name);
    println!("  state dim {}, measurement dim {}", scenario.state_dim(), scenario.measurement_dim());
    println!("  waypoints {} (N = {})", scenario.waypoints.len(), scenario.segment_count());
    println!("  obstacles {}", scenario.obstacles.len());
    println!("  thresholds {:?}", scenario.deltas);
    println!("  steady-state KF variances [{}]", kf.join(", "));
    Ok(())
}

pub fn abstract_cmd(args: &AbstractArgs, argv: &[String]) -> Result<()> {
    let scenario = resolve_scenario(&args.scenario)?;
    let Some((bins_theta, bins_lambda)) = parse_bins(&args.bins) else {
        return Err(etsynth::Error::Input(format!("--bins expects B or THETA,LAMBDA, got {:?}", args.bins)).into());
    };
    let config = AbstractionConfig {
        method: Method::from_number(args.method)?,
        bins_theta,
        bins_lambda,
        samples_per_action: args.samples,
        pool_cap: args.pool_cap,
        calibration_runs: args.calibration_runs,
        seed: args.seed.seed,
    };
    let mut run = Run::start("abstract", argv, &args.out)?;
    let abstraction = build_mdp(&scenario, &config)?;
    let text = abstraction.to_json() + "\n";
    run.write("abstraction.json", &text)?;
    if let Some(regions) = &abstraction.meta.regions {
        run.write("calibration.json", &pretty(regions)?)?;
    }
    let d = &abstraction.diagnostics;
    println!(
        "{} states, {} thresholds, {} rollouts ({} timed out, {} eigenvalues clamped)",
        abstraction.mdp.state_count(),
        abstraction.mdp.action_count(),
        d.rollouts,
        d.timeouts,
        d.lambda_above_cap + d.lambda_below_floor
    );
    let params = json!({ "scenario": scenario_params(&scenario), "config": config });
    run.finish(Some(&args.scenario), Some(config.seed), params)
}

fn load_abstraction(path: &Path) -> Result<(Abstraction, String)> {
    let text = read_text(path)?;
    let hash = content_hash(text.as_bytes());
    Ok((Abstraction::from_json(&text, &path.display().to_string())?, hash))
}

pub fn pareto(args: &ParetoArgs, argv: &[String]) -> Result<()> {
    let (abstraction, hash) = load_abstraction(&args.abstraction)?;
    let mut run = Run::start("pareto", argv, &args.out)?;
    let front = pareto_front(&abstraction.mdp, args.grid)?;
    run.write("front.csv", &front_csv(&front))?;
    println!("{} nondominated vertices", front.vertices.len());
    let file = FrontFile {
        abstraction_hash: hash.clone(),
        meta: abstraction.meta,
        mdp: abstraction.mdp,
        front,
    };
    run.write("front.json", &pretty(&file)?)?;
    run.finish(None, None, json!({ "abstraction": hash, "grid": args.grid }))
}

fn query_of(args: &SynthArgs) -> Result<Query> {
    let input = |m: &str| -> anyhow::Error { etsynth::Error::Input(m.to_string()).into() };
    Ok(match args.query {
        QueryKind::MaxPtar => Query::MaxPtar,
        QueryKind::MinEnergy => Query::MinEnergyGivenPtar(args.ptar.ok_or_else(|| input("--query min-energy needs --ptar"))?),
        QueryKind::MinColl => Query::MinCollGivenEnergy(args.energy.ok_or_else(|| input("--query min-coll needs --energy"))?),
    })
}

fn default_name(query: &Query) -> String {
    match query {
        Query::MaxPtar => "max-ptar".into(),
        Query::MinEnergyGivenPtar(p) => format!("min-energy-{p}"),
        Query::MinCollGivenEnergy(e) => format!("min-coll-{e}"),
    }
}

pub fn synth(args: &SynthArgs, argv: &[String]) -> Result<()> {
    let text = read_text(&args.front)?;
    let front_hash = content_hash(text.as_bytes());
    let file: FrontFile = read_json(&args.front)?;
    let query = query_of(args)?;
    let selection = select_point(&file.front, query)?;
    let name = args.name.clone().unwrap_or_else(|| default_name(&query));
    if name.is_empty() || name.contains(['/', '\\']) {
        bail!(etsynth::Error::Input(format!("strategy name {name:?} cannot be used as a file name")));
    }
    let mut run = Run::start("synth", argv, &args.out)?;
    let p = &selection.predicted;
    println!("{name}: p_tar {:.4}, p_coll {:.4}, e_c {:.3}", p.p_tar, p.p_coll, p.e_c);
    let out = StrategyFile {
        name: name.clone(),
        query,
        predicted: selection.predicted,
        primary_vertex: selection.primary_vertex,
        secondary_vertex: selection.secondary_vertex,
        alpha: selection.alpha,
        abstraction_hash: file.abstraction_hash,
        meta: file.meta,
        mdp: file.mdp,
        strategy: selection.strategy,
    };
    run.write(&format!("strategy-{name}.json"), &pretty(&out)?)?;
    run.label = format!("synth-{name}");
    let params = json!({ "front": front_hash, "query": query, "name": name });
    run.finish(None, None, params)
}

pub fn simulate(args: &SimulateArgs, argv: &[String]) -> Result<()> {
    let scenario = resolve_scenario(&args.scenario)?;
    let text = read_text(&args.strategy)?;
    let strategy_hash = content_hash(text.as_bytes());
    let file: StrategyFile = read_json(&args.strategy)?;
    if args.runs < 100 {
        bail!(etsynth::Error::Input(format!("comparison needs at least 100 runs, got {}", args.runs)));
    }
    let closed_loop = ClosedLoop::new(&scenario)?;
    let opts = SimulationOptions {
        runs: args.runs,
        seed: args.seed.seed,
        trace_cap: args.trace_cap,
    };
    let report = simulate_strategy(&closed_loop, &file.mdp, &file.meta, &file.strategy, &opts)?;
    let tolerance = Tolerance {
        points: args.tol_points,
        relative_energy: args.tol_energy,
    };
    let comparison = compare_theory_empirical(&file.predicted, &report.objectives, tolerance)?;
    let name = file.name.clone();
    let mut run = Run::start("simulate", argv, &args.out)?;
    run.write(&format!("traces-{name}.csv"), &traces_csv(&report.traces, scenario.state_dim()))?;
    let o = &report.objectives;
    println!(
        "{name}: predicted ({:.4}, {:.4}, {:.3}) simulated ({:.4}, {:.4}, {:.3}) over {} runs",
        file.predicted.p_tar, file.predicted.p_coll, file.predicted.e_c, o.p_tar, o.p_coll, o.e_c_mean, o.runs
    );
    println!(
        "  errors: p_tar {:.2} pp, p_coll {:.2} pp, e_c {:.2}% -> {}",
        comparison.p_tar_error_pp,
        comparison.p_coll_error_pp,
        100.0 * comparison.e_c_relative_error,
        if comparison.pass { "pass" } else { "fail" }
    );
    if report.misses > 0 {
        println!("  {} of {} decisions hit uncovered states", report.misses, report.decisions);
    }
    let out = SimulationFile {
        strategy: name.clone(),
        runs: o.runs,
        seed: args.seed.seed,
        predicted: file.predicted,
        objectives: report.objectives.clone(),
        comparison,
        misses: report.misses,
        decisions: report.decisions,
    };
    run.write(&format!("simulation-{name}.json"), &pretty(&out)?)?;
    let params = json!({
        "scenario": scenario_params(&scenario),
        "strategy": strategy_hash,
        "runs": args.runs,
        "seed": args.seed.seed,
        "trace_cap": args.trace_cap,
        "tolerance": tolerance,
    });
    run.label = format!("simulate-{name}");
    run.finish(Some(&args.scenario), Some(args.seed.seed), params)
}

pub fn baseline(args: &BaselineArgs, argv: &[String]) -> Result<()> {
    let scenario = resolve_scenario(&args.scenario)?;
    let closed_loop = ClosedLoop::new(&scenario)?;
    let mut run = Run::start("baseline", argv, &args.out)?;
    let opts = SimulationOptions {
        trace_cap: 0,
        ..SimulationOptions::new(args.runs, args.seed.seed)
    };
    let report = full_kf_baseline(&closed_loop, &opts)?;
    let o = &report.objectives;
    println!("full KF: p_tar {:.4}, p_coll {:.4}, e_c {:.3} over {} runs", o.p_tar, o.p_coll, o.e_c_mean, o.runs);
    let out = BaselineFile {
        runs: args.runs,
        seed: args.seed.seed,
        objectives: report.objectives,
    };
    run.write("baseline.json", &pretty(&out)?)?;
    let params = json!({ "scenario": scenario_params(&scenario), "runs": args.runs, "seed": args.seed.seed });
    run.finish(Some(&args.scenario), Some(args.seed.seed), params)
}

pub fn export(abstraction: &Path, out: &Path) -> Result<()> {
    let (a, _) = load_abstraction(abstraction)?;
    export_prism(&a.mdp, out)?;
    println!("wrote {} ({} states)", out.display(), a.mdp.state_count());
    Ok(())
}

pub fn probe(args: &ProbeArgs, argv: &[String]) -> Result<()> {
    let scenario = resolve_scenario(&args.scenario)?;
    let Some((bins_theta, bins_lambda)) = parse_bins(&args.bins) else {
        return Err(etsynth::Error::Input(format!("--bins expects B or THETA,LAMBDA, got {:?}", args.bins)).into());
    };
    let config = AbstractionConfig {
        method: Method::Discretized,
        bins_theta,
        bins_lambda,
        samples_per_action: args.samples,
        pool_cap: args.pool_cap,
        calibration_runs: args.calibration_runs,
        seed: args.seed.seed,
    };
    let mut run = Run::start("probe", argv, &args.out)?;
    let report = refinement_probe(&scenario, &config)?;
    println!(
        "bins ({}, {}) against their bisection: median spread {:.4}, max {:.4} over {} states",
        bins_theta,
        bins_lambda,
        report.median,
        report.max,
        report.spreads.len()
    );
    let mut csv = String::from("state,spread\n");
    for (state, d) in &report.spreads {
        csv.push_str(&format!("{state},{d}\n"));
    }
    run.write("probe.csv", &csv)?;
    run.write("probe.json", &pretty(&report)?)?;
    let params = json!({ "scenario": scenario_params(&scenario), "config": config });
    run.finish(Some(&args.scenario), Some(config.seed), params)
}
