use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ActionRow, Mdp};
use crate::abstraction::AbstractState;
use crate::error::{Error, Result};

/// PRISM-language rendering of the MDP: one integer variable `s`, one
/// command per (state, action) labelled `[dK]` for threshold index K,
/// `target`/`collision`/`free` labels and an `energy` reward structure.
pub fn to_prism_string(mdp: &Mdp) -> String {
    let mut out = String::new();
    let deltas: Vec<String> = mdp.deltas.iter().enumerate().map(|(k, d)| format!("d{k}={d}")).collect();
    let _ = writeln!(out, "// thresholds: {}", deltas.join(", "));
    out.push_str("mdp\n\nmodule etsynth\n");
    let _ = writeln!(out, "  s : [0..{}] init {};", mdp.state_count().saturating_sub(1), mdp.initial);
    for (s, rows) in mdp.rows.iter().enumerate() {
        for (a, row) in rows.iter().enumerate() {
            let updates: Vec<String> = row.transitions.iter().map(|(t, p)| format!("{p}:(s'={t})")).collect();
            let _ = writeln!(out, "  [d{a}] s={s} -> {};", updates.join(" + "));
        }
    }
    out.push_str("endmodule\n\n");
    for (name, kind) in [
        ("target", AbstractState::Tar),
        ("collision", AbstractState::Coll),
        ("free", AbstractState::Free),
    ] {
        let ids: Vec<String> = mdp
            .states
            .iter()
            .enumerate()
            .filter(|(_, st)| **st == kind)
            .map(|(i, _)| format!("s={i}"))
            .collect();
        let expr = if ids.is_empty() { "false".to_string() } else { ids.join("|") };
        let _ = writeln!(out, "label \"{name}\" = {expr};");
    }
    out.push_str("\nrewards \"energy\"\n");
    for (s, rows) in mdp.rows.iter().enumerate() {
        for (a, row) in rows.iter().enumerate() {
            let _ = writeln!(out, "  [d{a}] s={s} : {};", row.cost);
        }
    }
    out.push_str("endrewards\n");
    out
}

pub fn export_prism(mdp: &Mdp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_prism_string(mdp)).map_err(|e| Error::io(path, e))
}

/// The subset of PRISM emitted by [`to_prism_string`], read back.
#[derive(Debug, Clone, PartialEq)]
pub struct PrismModel {
    pub state_count: usize,
    pub initial: usize,
    /// (state, action) → sparse successor distribution.
    pub commands: BTreeMap<(usize, usize), Vec<(usize, f64)>>,
    pub rewards: BTreeMap<(usize, usize), f64>,
    pub labels: BTreeMap<String, Vec<usize>>,
}

impl PrismModel {
    /// Action rows per state, with each command's energy reward attached.
    pub fn rows(&self) -> Vec<Vec<ActionRow>> {
        let mut rows: Vec<Vec<ActionRow>> = vec![Vec::new(); self.state_count];
        for (&(s, a), transitions) in &self.commands {
            let row = ActionRow {
                transitions: transitions.clone(),
                cost: self.rewards.get(&(s, a)).copied().unwrap_or(0.0),
            };
            if rows[s].len() != a {
                // commands are emitted in action order, so a gap means a missing action
                rows[s].resize(a, ActionRow { transitions: Vec::new(), cost: 0.0 });
            }
            rows[s].push(row);
        }
        rows
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: "prism model".into(),
        message: format!("line {line}: {}", message.into()),
    }
}

fn parse_num<T: std::str::FromStr>(text: &str, line: usize) -> Result<T> {
    text.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("cannot parse number {:?}", text.trim())))
}

/// "[dK] s=I" → (I, K)
fn parse_guard(text: &str, line: usize) -> Result<(usize, usize)> {
    let text = text.trim();
    let close = text.find(']').ok_or_else(|| parse_err(line, "missing ']'"))?;
    let action = text[1..close]
        .strip_prefix('d')
        .ok_or_else(|| parse_err(line, "action label must look like dK"))?;
    let state = text[close + 1..]
        .trim()
        .strip_prefix("s=")
        .ok_or_else(|| parse_err(line, "guard must be s=I"))?;
    Ok((parse_num(state, line)?, parse_num(action, line)?))
}

pub fn parse_prism(text: &str) -> Result<PrismModel> {
    let mut model = PrismModel {
        state_count: 0,
        initial: 0,
        commands: BTreeMap::new(),
        rewards: BTreeMap::new(),
        labels: BTreeMap::new(),
    };
    let mut in_rewards = false;
    let mut saw_decl = false;
    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("//") {
            continue;
        }
        let body = line.strip_suffix(';').unwrap_or(line);
        if line.starts_with("rewards") {
            in_rewards = true;
        } else if line == "endrewards" {
            in_rewards = false;
        } else if let Some(rest) = body.strip_prefix("s : [0..") {
            let (hi, init) = rest
                .split_once("] init ")
                .ok_or_else(|| parse_err(n, "malformed state declaration"))?;
            model.state_count = parse_num::<usize>(hi, n)? + 1;
            model.initial = parse_num(init, n)?;
            saw_decl = true;
        } else if line.starts_with('[') && in_rewards {
            let (guard, value) = body.split_once(':').ok_or_else(|| parse_err(n, "reward needs ':'"))?;
            model.rewards.insert(parse_guard(guard, n)?, parse_num(value, n)?);
        } else if line.starts_with('[') {
            let (guard, updates) = body.split_once("->").ok_or_else(|| parse_err(n, "command needs '->'"))?;
            let key = parse_guard(guard, n)?;
            let mut dist = Vec::new();
            for update in updates.split('+') {
                let (p, target) = update.split_once(':').ok_or_else(|| parse_err(n, "update needs 'p:(s'=j)'"))?;
                let target = target
                    .trim()
                    .strip_prefix("(s'=")
                    .and_then(|t| t.strip_suffix(')'))
                    .ok_or_else(|| parse_err(n, "update target must be (s'=j)"))?;
                dist.push((parse_num(target, n)?, parse_num(p, n)?));
            }
            model.commands.insert(key, dist);
        } else if let Some(rest) = body.strip_prefix("label \"") {
            let (name, expr) = rest.split_once("\" = ").ok_or_else(|| parse_err(n, "malformed label"))?;
            let ids = if expr.trim() == "false" {
                Vec::new()
            } else {
                expr.split('|')
                    .map(|t| {
                        t.trim()
                            .strip_prefix("s=")
                            .ok_or_else(|| parse_err(n, "label terms must be s=I"))
                            .and_then(|v| parse_num(v, n))
                    })
                    .collect::<Result<_>>()?
            };
            model.labels.insert(name.to_string(), ids);
        }
    }
    if !saw_decl {
        return Err(parse_err(0, "no state variable declaration"));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;

    #[test]
    fn chain_exports_one_command() {
        let text = to_prism_string(&chain());
        assert_eq!(text.matches("->").count(), 1);
        assert!(text.contains("label \"target\" = s=2;"));
        assert!(text.contains("label \"collision\" = s=1;"));
        assert!(text.contains("[d0] s=0 -> 1:(s'=2);"));
        assert!(text.contains("[d0] s=0 : 5;"));
    }

    #[test]
    fn round_trip_restores_rows() {
        for m in [chain(), two_action(), two_waypoint(), random_layered(7, 3, 3, 3)] {
            let parsed = parse_prism(&to_prism_string(&m)).unwrap();
            assert_eq!(parsed.state_count, m.state_count());
            assert_eq!(parsed.initial, m.initial);
            let rows = parsed.rows();
            for s in 0..m.state_count() {
                assert_eq!(rows[s].len(), m.rows[s].len());
                for (a, b) in rows[s].iter().zip(&m.rows[s]) {
                    assert_eq!(a.cost, b.cost);
                    assert_eq!(a.transitions.len(), b.transitions.len());
                    for (x, y) in a.transitions.iter().zip(&b.transitions) {
                        assert_eq!(x.0, y.0);
                        assert!((x.1 - y.1).abs() <= 1e-12);
                    }
                }
            }
            assert_eq!(parsed.labels["free"], vec![m.state_count() - 1]);
        }
    }

    #[test]
    fn export_is_stable() {
        let m = random_layered(3, 3, 2, 2);
        assert_eq!(to_prism_string(&m), to_prism_string(&m.clone()));
    }

    #[test]
    fn write_and_reread() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.prism");
        export_prism(&two_waypoint(), &path).unwrap();
        let back = parse_prism(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.commands.len(), 6);
        assert!(export_prism(&chain(), dir.path().join("missing/dir/m.prism")).is_err());
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(parse_prism("mdp\n").is_err());
        assert!(parse_prism("s : [0..3] init 0;\n[x] s=0 -> 1:(s'=1);").is_err());
    }
}
