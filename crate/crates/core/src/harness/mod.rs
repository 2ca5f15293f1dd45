//! Experiment plumbing: run records, configuration, CSV output, the
//! fully-adaptive comparison and the lemma suite behind the CLI.

mod config;
mod csv;
mod experiment;
mod lemmas;

pub use config::{Algorithm, ExperimentConfig, LinkOptions, SolverKind, SolverOptions};
pub use csv::{audit_csv, diagnostics_csv, emit_csv, episodes_csv, parse_csv, CsvRow};
pub use experiment::{compare_adaptivity, run_experiment, run_single, CheckpointRow, Comparison, ExperimentResult, Summary};
pub use lemmas::{lemma_suite, AzumaOutcome, LemmaOutcome, LemmaReport};

use crate::envs::{TabularPolicy, Trajectory};
use crate::error::{Error, Result};
use crate::switching::{audit_trace, EpisodeLogdets, SwitchLog};

/// Regret below this magnitude is treated as exact zero.
pub const REGRET_FLOOR: f64 = 1e-10;

/// Exact per-episode regret `V*₁(s₁) − V₁^{π_k}(s₁)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegretRecord {
    instant: Vec<f64>,
    cumulative: Vec<f64>,
    policy_episode: Vec<usize>,
}

impl RegretRecord {
    /// Appends one episode; `update` is `Some(k)` when the policy in force
    /// was computed at this episode `k`.
    pub fn push(&mut self, regret: f64, update: Option<usize>) {
        let r = if regret < 0.0 && regret >= -REGRET_FLOOR { 0.0 } else { regret };
        let total = self.cumulative_total() + r;
        let b = update.or_else(|| self.policy_episode.last().copied()).unwrap_or(1);
        self.instant.push(r);
        self.cumulative.push(total);
        self.policy_episode.push(b);
    }

    pub fn instant(&self) -> &[f64] {
        &self.instant
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn cumulative_total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// `b_k`: the episode at which the policy in force at `k` was computed.
    pub fn policy_episodes(&self) -> &[usize] {
        &self.policy_episode
    }

    pub fn len(&self) -> usize {
        self.instant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instant.is_empty()
    }

    /// Mean instantaneous regret over `range`.
    pub fn mean(&self, range: std::ops::Range<usize>) -> f64 {
        let n = range.len();
        if n == 0 {
            return 0.0;
        }
        self.instant[range].iter().sum::<f64>() / n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.instant.iter().position(|&r| r < -REGRET_FLOOR) {
            return Err(Error::InvariantViolation(format!(
                "negative regret {} at episode {}",
                self.instant[k],
                k + 1
            )));
        }
        if self.cumulative.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvariantViolation("cumulative regret decreased".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub switched: bool,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub n_switch_so_far: usize,
    /// Per-layer log-determinants seen by the gate at the start of the
    /// episode.
    pub logdets: Vec<f64>,
}

/// What a learner reports at each policy update.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchDiagnostics {
    pub episode: usize,
    pub planned_value: f64,
    /// Planned value at the initial state is at least the optimum there.
    pub optimistic: bool,
    pub xi_norms: Vec<f64>,
    pub alphas: Vec<f64>,
    pub gamma: Option<f64>,
    pub restarts: usize,
    pub degraded: bool,
    pub bellman_ok: Option<bool>,
    pub fit_losses: Vec<f64>,
    pub fit_iterations: Vec<usize>,
    pub fit_restarts: Vec<usize>,
    pub policy: TabularPolicy,
}

/// Run-level counters for the empirical checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunChecks {
    /// Episodes whose policy in force came from an optimistic plan.
    pub optimistic_episodes: usize,
    /// Episodes whose plan satisfied the Bellman-error envelope.
    pub bellman_ok_episodes: Option<usize>,
    /// `Σ_k Σ_h γ‖φ(s_h^k, a_h^k)‖_{(Σ_h^{b_k})⁻¹}`.
    pub bonus_sum: Option<f64>,
    /// `Hγ√(4Kd ln(1 + K))`.
    pub bonus_bound: Option<f64>,
}

/// Everything recorded by one seeded run of a learner.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub seed: u64,
    pub v_star: f64,
    pub regret: RegretRecord,
    pub switches: SwitchLog,
    pub episodes: Vec<EpisodeRow>,
    pub trajectories: Vec<Trajectory>,
    pub diagnostics: Vec<SwitchDiagnostics>,
    /// `None` when `K < 2`.
    pub budget: Option<usize>,
    pub gated: bool,
    pub dims: Vec<usize>,
    pub checks: RunChecks,
}

impl RunOutput {
    pub fn horizon(&self) -> usize {
        self.dims.len()
    }

    /// Global switching cost: episodes whose policy differs from the
    /// previous episode's.
    pub fn n_switch(&self) -> usize {
        self.diagnostics
            .windows(2)
            .filter(|w| w[0].policy != w[1].policy)
            .count()
    }

    /// Updates after the first deployment; never below [`Self::n_switch`].
    pub fn replans(&self) -> usize {
        self.switches.replans()
    }

    pub fn episode_logdets(&self) -> Vec<EpisodeLogdets> {
        self.episodes
            .iter()
            .map(|r| EpisodeLogdets {
                episode: r.episode,
                switched: r.switched,
                logdets: r.logdets.clone(),
            })
            .collect()
    }

    /// Re-checks the regret record and, for gated runs, the doubling rule
    /// and the switch budget.
    pub fn audit(&self) -> Result<()> {
        self.regret.validate()?;
        if let Some(last) = self.episodes.last() {
            if last.n_switch_so_far != self.n_switch() {
                return Err(Error::InvariantViolation(format!(
                    "seed {}: switch count column disagrees with the deployed policies",
                    self.seed
                )));
            }
        }
        if self.gated {
            let n = audit_trace(&self.episode_logdets(), &self.dims, 1.0, self.budget)?;
            if n != self.replans() {
                return Err(Error::InvariantViolation(format!(
                    "seed {}: log has {} re-plans, trace implies {n}",
                    self.seed,
                    self.replans()
                )));
            }
        }
        Ok(())
    }

    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.episodes
            .iter()
            .map(|r| CsvRow {
                seed: self.seed,
                episode: r.episode,
                switched: r.switched,
                instant_regret: r.instant_regret,
                cum_regret: r.cum_regret,
                n_switch_so_far: r.n_switch_so_far,
                logdets: r.logdets.clone(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regret_record_bookkeeping() {
        let mut r = RegretRecord::default();
        r.push(0.5, Some(1));
        r.push(-1e-12, None);
        r.push(0.25, Some(3));
        assert_eq!(r.instant(), &[0.5, 0.0, 0.25]);
        assert_eq!(r.cumulative(), &[0.5, 0.5, 0.75]);
        assert_eq!(r.policy_episodes(), &[1, 1, 3]);
        r.validate().unwrap();
        r.push(-0.1, None);
        assert!(r.validate().is_err());
    }
}
