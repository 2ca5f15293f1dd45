//! Observed transitions, per layer.
//!
//! On finite environments a layer's regression data depends only on how often
//! each `(s, a, s')` was seen and on the rewards collected there, so the
//! backups used by both planners run over these aggregates instead of the raw
//! sample list. The raw samples are kept as well, for explicit
//! [`RidgeTarget`]s.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::envs::{EpisodicEnv, Trajectory};
use crate::error::Result;
use crate::linalg::{CovarianceAccumulator, RidgeTarget};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Aggregate of every sample that hit one `(s, a)` pair.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairStats {
    pub count: usize,
    pub reward_sum: f64,
    pub reward_sq_sum: f64,
    /// next state → (count, reward sum over those samples)
    pub next: BTreeMap<usize, (usize, f64)>,
}

impl PairStats {
    /// `(Σ y, Σ y²)` for responses `y = r + v(s')`.
    pub fn response_moments(&self, next_values: Option<&[f64]>) -> (f64, f64) {
        let Some(v) = next_values else {
            return (self.reward_sum, self.reward_sq_sum);
        };
        let mut sum = self.reward_sum;
        let mut sq = self.reward_sq_sum;
        for (&s, &(n, r)) in &self.next {
            let vs = v[s];
            sum += n as f64 * vs;
            sq += 2.0 * r * vs + n as f64 * vs * vs;
        }
        (sum, sq)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LayerHistory {
    samples: Vec<Sample>,
    pairs: BTreeMap<(usize, usize), PairStats>,
}

impl LayerHistory {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn pairs(&self) -> &BTreeMap<(usize, usize), PairStats> {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn push(&mut self, sample: Sample) {
        let stats = self.pairs.entry((sample.state, sample.action)).or_default();
        stats.count += 1;
        stats.reward_sum += sample.reward;
        stats.reward_sq_sum += sample.reward * sample.reward;
        let slot = stats.next.entry(sample.next_state).or_insert((0, 0.0));
        slot.0 += 1;
        slot.1 += sample.reward;
        self.samples.push(sample);
    }
}

/// Linear-regression moments of one layer: `Σ φ r` and, per next state
/// `s'`, `Σ_{τ: s'_τ = s'} φ_τ`.
#[derive(Clone, Debug)]
pub struct LinearMoments {
    pub reward: DVector<f64>,
    pub next: Vec<(usize, DVector<f64>)>,
}

impl LinearMoments {
    /// `Σ φ (r + v(s'))`.
    pub fn response_moment(&self, next_values: Option<&[f64]>) -> DVector<f64> {
        let mut out = self.reward.clone();
        if let Some(v) = next_values {
            for (s, m) in &self.next {
                out.axpy(v[*s], m, 1.0);
            }
        }
        out
    }
}

/// All data a learner has collected: per-layer samples and covariance.
#[derive(Clone, Debug)]
pub struct History {
    layers: Vec<LayerHistory>,
    accs: Vec<CovarianceAccumulator>,
}

impl History {
    pub fn new(env: &EpisodicEnv, ridge: f64) -> Result<Self> {
        let accs = env
            .dims()
            .iter()
            .map(|&d| CovarianceAccumulator::new(d, ridge))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers: vec![LayerHistory::default(); env.horizon()],
            accs,
        })
    }

    pub fn record(&mut self, env: &EpisodicEnv, traj: &Trajectory) -> Result<()> {
        for step in &traj.steps {
            let h = step.layer;
            self.accs[h].update(env.feature(h, step.state, step.action))?;
            self.layers[h].push(Sample {
                state: step.state,
                action: step.action,
                reward: step.reward,
                next_state: step.next_state,
            });
        }
        Ok(())
    }

    pub fn layer(&self, h: usize) -> &LayerHistory {
        &self.layers[h]
    }

    pub fn acc(&self, h: usize) -> &CovarianceAccumulator {
        &self.accs[h]
    }

    pub fn accs(&self) -> &[CovarianceAccumulator] {
        &self.accs
    }

    pub fn logdets(&self) -> Vec<f64> {
        self.accs.iter().map(|a| a.logdet()).collect()
    }

    pub fn episodes(&self) -> usize {
        self.layers.first().map_or(0, |l| l.len())
    }

    pub fn linear_moments(&self, env: &EpisodicEnv, h: usize) -> LinearMoments {
        let d = env.dims()[h];
        let mut reward = DVector::zeros(d);
        let mut next: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
        for (&(s, a), stats) in self.layers[h].pairs() {
            let phi = env.feature(h, s, a);
            reward.axpy(stats.reward_sum, phi, 1.0);
            for (&t, &(n, _)) in &stats.next {
                next.entry(t)
                    .or_insert_with(|| DVector::zeros(d))
                    .axpy(n as f64, phi, 1.0);
            }
        }
        LinearMoments {
            reward,
            next: next.into_iter().collect(),
        }
    }

    /// Explicit per-sample regression target with responses `r + v(s')`.
    pub fn ridge_target(&self, env: &EpisodicEnv, h: usize, next_values: Option<&[f64]>) -> Result<RidgeTarget> {
        let samples = self.layers[h].samples();
        let features = samples
            .iter()
            .map(|s| env.feature(h, s.state, s.action).clone())
            .collect();
        let responses = samples
            .iter()
            .map(|s| s.reward + next_values.map_or(0.0, |v| v[s.next_state]))
            .collect();
        RidgeTarget::new(features, responses)
    }
}
