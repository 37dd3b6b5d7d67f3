use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use crate::commands::{BaselineFile, SimulationFile, StrategyFile};

pub const POINTS_HEADER: &str =
    "name,query,predicted_p_tar,predicted_p_coll,predicted_e_c,empirical_p_tar,empirical_p_coll,empirical_e_c,runs,pass";

struct Row {
    name: String,
    strategy: Option<StrategyFile>,
    simulation: Option<SimulationFile>,
}

fn read<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        etsynth::Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        }
        .into()
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

/// Aggregates a run directory into `report.txt` and `report.csv` and returns
/// the text table.
pub fn report(dir: &Path) -> Result<String> {
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.with_context(|| format!("reading {}", dir.display()))?;
        names.push(entry.file_name().to_string_lossy().into_owned());
    }
    names.sort();

    let mut rows: Vec<Row> = Vec::new();
    for file in &names {
        if let Some(name) = file.strip_prefix("strategy-").and_then(|f| f.strip_suffix(".json")) {
            rows.push(Row {
                name: name.to_string(),
                strategy: Some(read(&dir.join(file))?),
                simulation: None,
            });
        }
    }
    for file in &names {
        if let Some(name) = file.strip_prefix("simulation-").and_then(|f| f.strip_suffix(".json")) {
            let sim: SimulationFile = read(&dir.join(file))?;
            match rows.iter_mut().find(|r| r.name == name) {
                Some(row) => row.simulation = Some(sim),
                None => rows.push(Row {
                    name: name.to_string(),
                    strategy: None,
                    simulation: Some(sim),
                }),
            }
        }
    }
    let baseline: Option<BaselineFile> = if names.iter().any(|n| n == "baseline.json") {
        Some(read(&dir.join("baseline.json"))?)
    } else {
        None
    };
    let front = names.iter().any(|n| n == "front.csv");
    if rows.is_empty() && baseline.is_none() && !front {
        return Err(etsynth::Error::Input(format!(
            "{} holds none of front.csv, strategy-*.json, simulation-*.json or baseline.json",
            dir.display()
        ))
        .into());
    }

    let predicted_ptar = |r: &Row| {
        r.strategy
            .as_ref()
            .map(|s| s.predicted.p_tar)
            .or(r.simulation.as_ref().map(|s| s.predicted.p_tar))
            .unwrap_or(0.0)
    };
    rows.sort_by(|a, b| predicted_ptar(b).total_cmp(&predicted_ptar(a)).then_with(|| a.name.cmp(&b.name)));

    let mut csv = String::from(POINTS_HEADER);
    csv.push('\n');
    let mut text = String::new();
    if front {
        let lines = std::fs::read_to_string(dir.join("front.csv")).context("reading front.csv")?;
        let _ = writeln!(text, "Pareto front: {} vertices (front.csv)", lines.lines().count().saturating_sub(1));
    }
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "{:<24} {:>9} {:>9} {:>10} | {:>9} {:>9} {:>10} {:>6}",
        "strategy", "P_tar", "P_coll", "E_c", "sim P_tar", "sim P_coll", "sim E_c", "check"
    );
    for row in &rows {
        let predicted = row.strategy.as_ref().map(|s| s.predicted).or(row.simulation.as_ref().map(|s| s.predicted));
        let query = row.strategy.as_ref().map(|s| s.query.to_string()).unwrap_or_default();
        let (pt, pc, pe) = predicted.map_or((String::new(), String::new(), String::new()), |p| {
            (p.p_tar.to_string(), p.p_coll.to_string(), p.e_c.to_string())
        });
        let (et, ec, ee, runs, pass) = row.simulation.as_ref().map_or(
            (String::new(), String::new(), String::new(), String::new(), String::new()),
            |s| {
                (
                    s.objectives.p_tar.to_string(),
                    s.objectives.p_coll.to_string(),
                    s.objectives.e_c_mean.to_string(),
                    s.runs.to_string(),
                    s.comparison.pass.to_string(),
                )
            },
        );
        let _ = writeln!(csv, "{},\"{query}\",{pt},{pc},{pe},{et},{ec},{ee},{runs},{pass}", row.name);

        let p = predicted.map_or(("-".into(), "-".into(), "-".into()), |p| (pct(p.p_tar), pct(p.p_coll), format!("{:.2}", p.e_c)));
        let s = row.simulation.as_ref().map_or(("-".into(), "-".into(), "-".into(), "-"), |s| {
            (
                pct(s.objectives.p_tar),
                pct(s.objectives.p_coll),
                format!("{:.2}", s.objectives.e_c_mean),
                if s.comparison.pass { "ok" } else { "FAIL" },
            )
        });
        let _ = writeln!(
            text,
            "{:<24} {:>9} {:>9} {:>10} | {:>9} {:>9} {:>10} {:>6}",
            row.name, p.0, p.1, p.2, s.0, s.1, s.2, s.3
        );
    }
    if let Some(b) = &baseline {
        let o = &b.objectives;
        let _ = writeln!(csv, "Full KF,\"\",,,,{},{},{},{},", o.p_tar, o.p_coll, o.e_c_mean, b.runs);
        let _ = writeln!(
            text,
            "{:<24} {:>9} {:>9} {:>10} | {:>9} {:>9} {:>10} {:>6}",
            "Full KF",
            "-",
            "-",
            "-",
            pct(o.p_tar),
            pct(o.p_coll),
            format!("{:.2}", o.e_c_mean),
            "-"
        );
    }
    let write = |name: &str, body: &str| {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    };
    write("report.csv", &csv)?;
    write("report.txt", &text)?;
    Ok(text)
}
