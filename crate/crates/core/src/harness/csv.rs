use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::RunOutput;
use crate::error::{Error, Result};
use crate::switching::{audit_trace, switch_budget, EpisodeLogdets};

/// One episode row of the regret CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub seed: u64,
    pub episode: usize,
    pub switched: bool,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub n_switch_so_far: usize,
    pub logdets: Vec<f64>,
}

fn header(horizon: usize) -> String {
    let mut out = String::from("seed,episode,switched,instant_regret,cum_regret,n_switch_so_far");
    for h in 1..=horizon {
        write!(out, ",logdet_h{h}").unwrap();
    }
    out
}

/// Floats are written with 17 significant digits so that they parse back
/// to the same value.
pub fn episodes_csv(rows: &[CsvRow], horizon: usize) -> String {
    let mut out = header(horizon);
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{:.16e},{:.16e},{}",
            r.seed,
            r.episode,
            u8::from(r.switched),
            r.instant_regret,
            r.cum_regret,
            r.n_switch_so_far
        )
        .unwrap();
        for v in &r.logdets {
            write!(out, ",{v:.16e}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn emit_csv(rows: &[CsvRow], horizon: usize, path: &Path) -> Result<()> {
    std::fs::write(path, episodes_csv(rows, horizon)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("csv line {line}: {msg}"))
}

/// Parses a regret CSV; returns the horizon and the rows.
pub fn parse_csv(text: &str) -> Result<(usize, Vec<CsvRow>)> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let horizon = head.split(',').count().checked_sub(6).ok_or_else(|| bad(1, "short header"))?;
    if head != header(horizon) {
        return Err(bad(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 + horizon {
            return Err(bad(n, format!("expected {} fields, found {}", 6 + horizon, f.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| bad(n, e));
        let float = |s: &str| s.parse::<f64>().map_err(|e| bad(n, e));
        let switched = match f[2] {
            "0" => false,
            "1" => true,
            other => return Err(bad(n, format!("switched must be 0 or 1, found {other}"))),
        };
        rows.push(CsvRow {
            seed: int(f[0])?,
            episode: int(f[1])? as usize,
            switched,
            instant_regret: float(f[3])?,
            cum_regret: float(f[4])?,
            n_switch_so_far: int(f[5])? as usize,
            logdets: f[6..].iter().map(|s| float(s)).collect::<Result<_>>()?,
        });
    }
    Ok((horizon, rows))
}

/// Re-validates a gated run from its CSV alone: the doubling rule at every
/// row, the running switch count, the budget and the regret bookkeeping.
/// Returns the final switch count per seed.
pub fn audit_csv(text: &str, dims: &[usize]) -> Result<BTreeMap<u64, usize>> {
    let (horizon, rows) = parse_csv(text)?;
    if horizon != dims.len() {
        return Err(Error::InvariantViolation(format!(
            "csv has {horizon} layers, expected {}",
            dims.len()
        )));
    }
    let mut by_seed: BTreeMap<u64, Vec<&CsvRow>> = BTreeMap::new();
    for r in &rows {
        by_seed.entry(r.seed).or_default().push(r);
    }
    let mut out = BTreeMap::new();
    for (seed, rows) in by_seed {
        let k = rows.len();
        let budget = if k >= 2 { Some(switch_budget(dims, k)?) } else { None };
        let trace: Vec<EpisodeLogdets> = rows
            .iter()
            .map(|r| EpisodeLogdets {
                episode: r.episode,
                switched: r.switched,
                logdets: r.logdets.clone(),
            })
            .collect();
        audit_trace(&trace, dims, 1.0, budget).map_err(|e| Error::InvariantViolation(format!("seed {seed}: {e}")))?;
        let mut prev = 0usize;
        let mut cum = 0.0;
        for r in &rows {
            let step = r.n_switch_so_far.checked_sub(prev);
            let ok = match step {
                Some(0) => true,
                Some(1) => r.switched && r.episode > 1,
                _ => false,
            };
            if !ok {
                return Err(Error::InvariantViolation(format!(
                    "seed {seed}, episode {}: n_switch_so_far disagrees with the switched column",
                    r.episode
                )));
            }
            if r.instant_regret < -super::REGRET_FLOOR || r.cum_regret < cum {
                return Err(Error::InvariantViolation(format!(
                    "seed {seed}, episode {}: regret bookkeeping broken",
                    r.episode
                )));
            }
            cum = r.cum_regret;
            prev = r.n_switch_so_far;
        }
        out.insert(seed, prev);
    }
    Ok(out)
}

/// Per-update diagnostics of every run; inapplicable cells are empty.
pub fn diagnostics_csv(runs: &[RunOutput]) -> String {
    let horizon = runs.first().map_or(0, RunOutput::horizon);
    let mut out = String::from("seed,episode,planned_value,optimistic");
    for prefix in ["xi_norm", "alpha"] {
        for h in 1..=horizon {
            write!(out, ",{prefix}_h{h}").unwrap();
        }
    }
    out.push_str(",gamma,restarts,degraded,bellman_ok");
    for prefix in ["fit_loss", "fit_iters", "fit_restart"] {
        for h in 1..=horizon {
            write!(out, ",{prefix}_h{h}").unwrap();
        }
    }
    out.push('\n');
    fn cells<T: std::fmt::Display>(out: &mut String, xs: &[T], horizon: usize) {
        for h in 0..horizon {
            out.push(',');
            if let Some(x) = xs.get(h) {
                write!(out, "{x}").unwrap();
            }
        }
    }
    let sci = |xs: &[f64]| xs.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>();
    for run in runs {
        for d in &run.diagnostics {
            write!(out, "{},{},{:.16e},{}", run.seed, d.episode, d.planned_value, u8::from(d.optimistic)).unwrap();
            cells(&mut out, &sci(&d.xi_norms), horizon);
            cells(&mut out, &sci(&d.alphas), horizon);
            out.push(',');
            if let Some(g) = d.gamma {
                write!(out, "{g:.16e}").unwrap();
            }
            write!(out, ",{},{},", d.restarts, u8::from(d.degraded)).unwrap();
            if let Some(b) = d.bellman_ok {
                write!(out, "{}", u8::from(b)).unwrap();
            }
            cells(&mut out, &sci(&d.fit_losses), horizon);
            cells(&mut out, &d.fit_iterations, horizon);
            cells(&mut out, &d.fit_restarts, horizon);
            out.push('\n');
        }
    }
    out
}
