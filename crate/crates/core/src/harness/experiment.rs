use std::fmt::Write as _;

use super::{audit_csv, episodes_csv, Algorithm, ExperimentConfig, RunOutput};
use crate::eleanor::run_eleanor;
use crate::envs::EpisodicEnv;
use crate::error::{invalid, Error, Result};
use crate::glm_lsvi::run_glm;
use crate::switching::switch_budget;

/// Cross-seed aggregates.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean_cum_regret: f64,
    pub min_cum_regret: f64,
    pub max_cum_regret: f64,
    pub mean_n_switch: f64,
    pub min_n_switch: usize,
    pub max_n_switch: usize,
}

impl Summary {
    fn of(runs: &[RunOutput]) -> Self {
        let regrets: Vec<f64> = runs.iter().map(|r| r.regret.cumulative_total()).collect();
        let switches: Vec<usize> = runs.iter().map(RunOutput::n_switch).collect();
        let n = runs.len().max(1) as f64;
        Self {
            mean_cum_regret: regrets.iter().sum::<f64>() / n,
            min_cum_regret: regrets.iter().copied().fold(f64::INFINITY, f64::min),
            max_cum_regret: regrets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_n_switch: switches.iter().sum::<usize>() as f64 / n,
            min_n_switch: switches.iter().copied().min().unwrap_or(0),
            max_n_switch: switches.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// In the order of `config.seeds`.
    pub runs: Vec<RunOutput>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn episodes_csv(&self) -> String {
        let rows: Vec<_> = self.runs.iter().flat_map(RunOutput::csv_rows).collect();
        episodes_csv(&rows, self.runs.first().map_or(0, RunOutput::horizon))
    }

    pub fn summary_text(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        writeln!(out, "algorithm: {:?}", self.config.algorithm).unwrap();
        writeln!(out, "episodes: {}", self.config.episodes).unwrap();
        writeln!(out, "seeds: {}", self.runs.len()).unwrap();
        writeln!(
            out,
            "cum_regret: mean {:.6} min {:.6} max {:.6}",
            s.mean_cum_regret, s.min_cum_regret, s.max_cum_regret
        )
        .unwrap();
        writeln!(
            out,
            "n_switch: mean {:.2} min {} max {}",
            s.mean_n_switch, s.min_n_switch, s.max_n_switch
        )
        .unwrap();
        if let Some(b) = self.runs.first().and_then(|r| r.budget) {
            writeln!(out, "switch_budget: {b}").unwrap();
        }
        out
    }
}

/// One seeded run of the configured learner on `env`.
pub fn run_single(config: &ExperimentConfig, env: &EpisodicEnv, seed: u64) -> Result<RunOutput> {
    if config.algorithm.is_glm() {
        run_glm(env, &config.glm_config(), seed)
    } else {
        run_eleanor(env, &config.eleanor_config(), seed)
    }
}

fn run_seeds(config: &ExperimentConfig, env: &EpisodicEnv) -> Result<Vec<RunOutput>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(config.seeds.len());
    if workers <= 1 {
        return config.seeds.iter().map(|&s| run_single(config, env, s)).collect();
    }
    let chunk = config.seeds.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .chunks(chunk)
            .map(|seeds| scope.spawn(move || seeds.iter().map(|&s| run_single(config, env, s)).collect::<Vec<_>>()))
            .collect();
        let mut out = Vec::with_capacity(config.seeds.len());
        for h in handles {
            let results = h.join().map_err(|_| Error::Internal("worker thread panicked".into()))?;
            for r in results {
                out.push(r?);
            }
        }
        Ok(out)
    })
}

/// Runs every seed, then re-audits each gated run both from its in-memory
/// record and from its CSV alone.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let env = config.validate()?;
    let runs = run_seeds(config, &env)?;
    for run in &runs {
        run.audit()?;
        if run.gated {
            let text = episodes_csv(&run.csv_rows(), run.horizon());
            let counts = audit_csv(&text, &run.dims)?;
            if counts.get(&run.seed) != Some(&run.n_switch()) && !run.episodes.is_empty() {
                return Err(Error::InvariantViolation(format!(
                    "seed {}: csv audit disagrees with the switch log",
                    run.seed
                )));
            }
        }
    }
    Ok(ExperimentResult {
        config: config.clone(),
        summary: Summary::of(&runs),
        runs,
    })
}

/// Cross-seed means at one checkpoint episode.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointRow {
    pub episode: usize,
    pub cum_regret_gated: f64,
    pub cum_regret_ungated: f64,
    pub n_switch_gated: f64,
    pub n_switch_ungated: f64,
    /// Gated over ungated cumulative regret.
    pub regret_ratio: f64,
    pub budget: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub gated: ExperimentResult,
    pub ungated: ExperimentResult,
    pub rows: Vec<CheckpointRow>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "episode,cum_regret_gated,cum_regret_ungated,n_switch_gated,n_switch_ungated,regret_ratio,switch_budget\n",
        );
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.episode,
                r.cum_regret_gated,
                r.cum_regret_ungated,
                r.n_switch_gated,
                r.n_switch_ungated,
                r.regret_ratio,
                r.budget.map_or(String::new(), |b| b.to_string())
            )
            .unwrap();
        }
        out
    }
}

fn checkpoints(episodes: usize) -> Vec<usize> {
    let mut out: Vec<usize> = [8, 4, 2, 1].iter().map(|&q| (episodes / q).max(1)).collect();
    out.dedup();
    out
}

fn mean_at(runs: &[RunOutput], episode: usize, f: impl Fn(&super::EpisodeRow) -> f64) -> f64 {
    runs.iter().map(|r| f(&r.episodes[episode - 1])).sum::<f64>() / runs.len() as f64
}

/// Runs a gated configuration against its always-switch counterpart and
/// tabulates both at `K/8, K/4, K/2, K`.
pub fn compare_adaptivity(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<Comparison> {
    if a.algorithm.counterpart() != b.algorithm {
        return invalid(format!(
            "configs must differ only in the switch gate; got {:?} and {:?}",
            a.algorithm, b.algorithm
        ));
    }
    let mut b_as_a = b.clone();
    b_as_a.algorithm = a.algorithm;
    b_as_a.output = a.output.clone();
    if &b_as_a != a {
        return invalid("configs differ in more than the switch gate");
    }
    let (gated_cfg, ungated_cfg) = if a.algorithm.gated() { (a, b) } else { (b, a) };
    let gated = run_experiment(gated_cfg)?;
    let ungated = run_experiment(ungated_cfg)?;
    let dims = gated.runs[0].dims.clone();
    let rows = checkpoints(a.episodes)
        .into_iter()
        .map(|k| {
            let rg = mean_at(&gated.runs, k, |r| r.cum_regret);
            let ru = mean_at(&ungated.runs, k, |r| r.cum_regret);
            Ok(CheckpointRow {
                episode: k,
                cum_regret_gated: rg,
                cum_regret_ungated: ru,
                n_switch_gated: mean_at(&gated.runs, k, |r| r.n_switch_so_far as f64),
                n_switch_ungated: mean_at(&ungated.runs, k, |r| r.n_switch_so_far as f64),
                regret_ratio: rg / ru,
                budget: if k >= 2 { Some(switch_budget(&dims, k)?) } else { None },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison { gated, ungated, rows })
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Eleanor => "eleanor",
            Algorithm::EleanorAlwaysSwitch => "eleanor_always_switch",
            Algorithm::Glm => "glm",
            Algorithm::GlmAlwaysSwitch => "glm_always_switch",
        }
    }
}
