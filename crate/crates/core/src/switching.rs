//! Determinant-doubling policy-update controller.
//!
//! The controller remembers, per layer, the log-determinant of the empirical
//! covariance at the last policy update. A new update is due as soon as any
//! layer's log-determinant has grown by at least `ln 2`. Since
//! `det Σ_h ≤ K^{d_h}` with unit ridge, at most `Σ d_h · log₂ K` such updates
//! fit in `K` episodes; [`switch_budget`] returns that cap.
//!
//! Episodes are numbered from 1. The first deployment (episode 1) is always
//! logged and is not itself a switch. Every later update is a re-plan; the
//! global switching cost (episodes whose policy differs from the previous
//! one) is at most the number of re-plans.

use std::f64::consts::LN_2;
use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::linalg::det_doubled;

/// Largest horizon representable in a trigger bitmask.
pub const MAX_LAYERS: usize = 64;

/// Ordered record of policy-update episodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwitchLog {
    episodes: Vec<usize>,
    triggers: Vec<u64>,
    logdets: Vec<Vec<f64>>,
}

impl SwitchLog {
    pub fn episodes(&self) -> &[usize] {
        &self.episodes
    }

    /// Bitmask of the layers whose determinant doubled, per update. Bit `h`
    /// is layer `h` (zero-based); the forced first update has mask 0.
    pub fn trigger_masks(&self) -> &[u64] {
        &self.triggers
    }

    /// Per-layer log-determinants at each update.
    pub fn logdets(&self) -> &[Vec<f64>] {
        &self.logdets
    }

    /// Number of policy updates, including the first deployment.
    pub fn deployments(&self) -> usize {
        self.episodes.len()
    }

    /// Updates after the first deployment.
    pub fn replans(&self) -> usize {
        self.episodes.len().saturating_sub(1)
    }

    /// CSV rows `episode,trigger_layer_bitmask,logdet_h1,...,logdet_hH`.
    pub fn to_csv(&self, horizon: usize) -> String {
        let mut out = String::from("episode,trigger_layer_bitmask");
        for h in 1..=horizon {
            let _ = write!(out, ",logdet_h{h}");
        }
        out.push('\n');
        for ((k, mask), logdets) in self.episodes.iter().zip(&self.triggers).zip(&self.logdets) {
            let _ = write!(out, "{k},{mask}");
            for v in logdets {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SwitchController {
    dims: Vec<usize>,
    baselines: Vec<f64>,
    log: SwitchLog,
}

impl SwitchController {
    /// Baselines start at the log-determinant of `ridge · I` on every layer.
    pub fn new(dims: &[usize], ridge: f64) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_LAYERS {
            return invalid(format!("horizon must be in 1..={MAX_LAYERS}"));
        }
        if dims.contains(&0) {
            return invalid("layer dimensions must be positive");
        }
        if !(ridge > 0.0) {
            return invalid("ridge must be positive");
        }
        Ok(Self {
            dims: dims.to_vec(),
            baselines: dims.iter().map(|&d| d as f64 * ridge.ln()).collect(),
            log: SwitchLog::default(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn baselines(&self) -> &[f64] {
        &self.baselines
    }

    pub fn log(&self) -> &SwitchLog {
        &self.log
    }

    pub fn into_log(self) -> SwitchLog {
        self.log
    }

    fn check_len(&self, current: &[f64]) -> Result<()> {
        if current.len() != self.dims.len() {
            return invalid(format!(
                "expected {} log-determinants, got {}",
                self.dims.len(),
                current.len()
            ));
        }
        Ok(())
    }

    /// Layers whose determinant has doubled since the last update.
    pub fn triggers(&self, current_logdets: &[f64]) -> Result<u64> {
        self.check_len(current_logdets)?;
        Ok(current_logdets
            .iter()
            .zip(&self.baselines)
            .enumerate()
            .filter(|(_, (cur, base))| det_doubled(**cur, **base))
            .fold(0u64, |mask, (h, _)| mask | (1 << h)))
    }

    pub fn should_switch(&self, current_logdets: &[f64]) -> Result<bool> {
        Ok(self.triggers(current_logdets)? != 0)
    }

    /// Logs an update at `episode` and resets every baseline to
    /// `current_logdets`.
    pub fn record_switch(&mut self, episode: usize, current_logdets: &[f64]) -> Result<()> {
        let mask = self.triggers(current_logdets)?;
        if let Some(&last) = self.log.episodes.last() {
            if episode <= last {
                return Err(Error::InvalidState(format!(
                    "switch at episode {episode} does not follow the last one at {last}"
                )));
            }
        }
        self.log.episodes.push(episode);
        self.log.triggers.push(mask);
        self.log.logdets.push(current_logdets.to_vec());
        self.baselines.copy_from_slice(current_logdets);
        Ok(())
    }
}

/// `⌊Σ d_h · ln K / ln 2⌋`, the most doubling-triggered updates `K` episodes
/// can contain with unit ridge.
pub fn switch_budget(dims: &[usize], episodes: usize) -> Result<usize> {
    if episodes < 2 {
        return invalid(format!("switch budget needs K ≥ 2, got {episodes}"));
    }
    let total: usize = dims.iter().sum();
    Ok((total as f64 * (episodes as f64).log2()).floor() as usize)
}

/// Per-episode view used to audit a switching trace after the fact.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLogdets {
    pub episode: usize,
    pub switched: bool,
    pub logdets: Vec<f64>,
}

/// Re-checks the doubling rule on a recorded trace.
///
/// Verifies that episodes are consecutive from 1, that episode 1 deploys,
/// that every later update was triggered by a doubling and every skipped
/// episode was not, that the summed log-determinant grows by `ln 2` between
/// updates, and that the number of re-plans stays within `budget`. Returns
/// the re-plan count.
pub fn audit_trace(rows: &[EpisodeLogdets], dims: &[usize], ridge: f64, budget: Option<usize>) -> Result<usize> {
    let fail = |msg: String| Err(Error::InvariantViolation(msg));
    let mut ctrl = SwitchController::new(dims, ridge)?;
    let mut last_sum: Option<f64> = None;
    for (i, row) in rows.iter().enumerate() {
        if row.episode != i + 1 {
            return fail(format!("episode {} out of sequence at row {i}", row.episode));
        }
        let due = ctrl.should_switch(&row.logdets)?;
        if row.episode == 1 {
            if !row.switched {
                return fail("episode 1 must deploy a policy".into());
            }
        } else if row.switched != due {
            return fail(format!(
                "episode {}: switched={} but doubling test says {}",
                row.episode, row.switched, due
            ));
        }
        if row.switched {
            let sum: f64 = row.logdets.iter().sum();
            if let Some(prev) = last_sum {
                if sum < prev + LN_2 {
                    return fail(format!("episode {}: summed log-det grew by less than ln 2", row.episode));
                }
            }
            last_sum = Some(sum);
            ctrl.record_switch(row.episode, &row.logdets)?;
        }
    }
    let n = ctrl.log().replans();
    if let Some(cap) = budget {
        if n > cap {
            return fail(format!("{n} re-plans exceed the budget {cap}"));
        }
    }
    Ok(n)
}
