//! Finite episodic MDPs with layer-indexed feature maps.
//!
//! Layers, states and actions are dense zero-based indices. Every environment
//! keeps its full transition kernel and mean-reward table so that optimal and
//! policy values can be computed exactly, and regret never depends on sampled
//! returns.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::glm_lsvi::{LinkFunction, LinkKind};
use crate::linalg::NORM_TOL;
use crate::rng::{self, Purpose};

const STOCHASTIC_TOL: f64 = 1e-9;

/// Per-layer feature vectors `φ_h(s, a)`, stored as a table.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    dims: Vec<usize>,
    table: Vec<Vec<Vec<DVector<f64>>>>,
}

impl FeatureMap {
    pub fn new(dims: Vec<usize>, table: Vec<Vec<Vec<DVector<f64>>>>) -> Result<Self> {
        if dims.len() != table.len() {
            return invalid("feature map: one dimension per layer required");
        }
        for (h, (layer, &d)) in table.iter().zip(&dims).enumerate() {
            for (s, row) in layer.iter().enumerate() {
                for (a, phi) in row.iter().enumerate() {
                    if phi.len() != d {
                        return invalid(format!("φ_{h}({s},{a}) has length {}, want {d}", phi.len()));
                    }
                    if phi.norm() > 1.0 + NORM_TOL {
                        return invalid(format!("‖φ_{h}({s},{a})‖ = {} exceeds 1", phi.norm()));
                    }
                }
            }
        }
        Ok(Self { dims, table })
    }

    pub fn horizon(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn eval(&self, layer: usize, state: usize, action: usize) -> &DVector<f64> {
        &self.table[layer][state][action]
    }

    /// Features of every action available at `(layer, state)`.
    pub fn actions_at(&self, layer: usize, state: usize) -> &[DVector<f64>] {
        &self.table[layer][state]
    }
}

/// Something that picks an action at `(layer, state)`.
pub trait Policy {
    fn action(&self, layer: usize, state: usize) -> usize;
}

impl<F> Policy for F
where
    F: Fn(usize, usize) -> usize,
{
    fn action(&self, layer: usize, state: usize) -> usize {
        self(layer, state)
    }
}

/// Deterministic policy given as an action table `[layer][state]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TabularPolicy {
    actions: Vec<Vec<usize>>,
}

impl TabularPolicy {
    pub fn new(actions: Vec<Vec<usize>>) -> Self {
        Self { actions }
    }

    pub fn from_fn(env: &EpisodicEnv, mut f: impl FnMut(usize, usize) -> usize) -> Self {
        let actions = (0..env.horizon())
            .map(|h| (0..env.num_states()).map(|s| f(h, s)).collect())
            .collect();
        Self { actions }
    }

    pub fn table(&self) -> &[Vec<usize>] {
        &self.actions
    }
}

impl Policy for TabularPolicy {
    fn action(&self, layer: usize, state: usize) -> usize {
        self.actions[layer][state]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// A finite-horizon MDP with tabular dynamics and a feature map.
#[derive(Clone, Debug)]
pub struct EpisodicEnv {
    name: String,
    num_states: usize,
    initial_state: usize,
    /// `[layer][state][action]` → sparse next-state distribution.
    transitions: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
    /// `[layer][state][action]` mean reward.
    rewards: Vec<Vec<Vec<f64>>>,
    /// Per-layer upper bound on a single realized reward.
    reward_caps: Vec<f64>,
    reward_noise: f64,
    features: FeatureMap,
    ibe: f64,
}

impl EpisodicEnv {
    #[allow(clippy::too_many_arguments)]
    fn build(
        name: String,
        num_states: usize,
        initial_state: usize,
        transitions: Vec<Vec<Vec<Vec<(usize, f64)>>>>,
        rewards: Vec<Vec<Vec<f64>>>,
        reward_noise: f64,
        features: FeatureMap,
        ibe: f64,
        single_payout: bool,
    ) -> Result<Self> {
        let horizon = features.horizon();
        if horizon == 0 {
            return invalid("horizon must be positive");
        }
        if transitions.len() != horizon || rewards.len() != horizon {
            return invalid("tables must have one entry per layer");
        }
        if initial_state >= num_states {
            return invalid("initial state out of range");
        }
        if !(reward_noise >= 0.0 && reward_noise.is_finite()) {
            return invalid("reward noise must be non-negative");
        }
        for h in 0..horizon {
            if transitions[h].len() != num_states || rewards[h].len() != num_states {
                return invalid(format!("layer {h}: tables must cover every state"));
            }
            for s in 0..num_states {
                let n_actions = transitions[h][s].len();
                if n_actions == 0 {
                    return invalid(format!("layer {h}, state {s}: no actions"));
                }
                if rewards[h][s].len() != n_actions || features.actions_at(h, s).len() != n_actions {
                    return invalid(format!("layer {h}, state {s}: action counts disagree"));
                }
                for a in 0..n_actions {
                    let row = &transitions[h][s][a];
                    let total: f64 = row.iter().map(|(_, p)| p).sum();
                    if row.iter().any(|&(t, p)| t >= num_states || p < 0.0 || !p.is_finite())
                        || (total - 1.0).abs() > STOCHASTIC_TOL
                    {
                        return invalid(format!("P_{h}(·|{s},{a}) is not a distribution"));
                    }
                    let r = rewards[h][s][a];
                    if !(r >= 0.0 && r.is_finite()) {
                        return invalid(format!("r_{h}({s},{a}) = {r} must be non-negative"));
                    }
                }
            }
        }
        let mut reward_caps: Vec<f64> = rewards
            .iter()
            .map(|layer| layer.iter().flatten().copied().fold(0.0, f64::max))
            .collect();
        let cap_total: f64 = reward_caps.iter().sum();
        if single_payout {
            // at most one rewarding step per trajectory
            if reward_caps.iter().any(|&c| c > 1.0) {
                return invalid("rewards must lie in [0, 1]");
            }
            reward_caps = vec![1.0; horizon];
        } else if cap_total > 1.0 + 1e-12 {
            return invalid(format!(
                "per-layer maximum rewards sum to {cap_total}; returns must stay in [0, 1]"
            ));
        }
        Ok(Self {
            name,
            num_states,
            initial_state,
            transitions,
            rewards,
            reward_caps,
            reward_noise,
            features,
            ibe,
        })
    }

    /// Same dynamics and rewards under another feature map with the given
    /// inherent Bellman error.
    pub fn with_features(&self, features: FeatureMap, ibe: f64) -> Result<Self> {
        if features.horizon() != self.horizon() {
            return invalid("feature map horizon differs from the environment");
        }
        for h in 0..self.horizon() {
            for s in 0..self.num_states {
                if features.actions_at(h, s).len() != self.num_actions(h, s) {
                    return invalid(format!("layer {h}, state {s}: action counts disagree"));
                }
            }
        }
        if !(ibe >= 0.0 && ibe.is_finite()) {
            return invalid("inherent Bellman error must be non-negative");
        }
        Ok(Self {
            features,
            ibe,
            ..self.clone()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn horizon(&self) -> usize {
        self.features.horizon()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn num_actions(&self, layer: usize, state: usize) -> usize {
        self.rewards[layer][state].len()
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn dims(&self) -> &[usize] {
        self.features.dims()
    }

    pub fn feature(&self, layer: usize, state: usize, action: usize) -> &DVector<f64> {
        self.features.eval(layer, state, action)
    }

    /// Declared inherent Bellman error.
    pub fn ibe(&self) -> f64 {
        self.ibe
    }

    pub fn reward_noise(&self) -> f64 {
        self.reward_noise
    }

    pub fn mean_reward(&self, layer: usize, state: usize, action: usize) -> f64 {
        self.rewards[layer][state][action]
    }

    pub fn transition(&self, layer: usize, state: usize, action: usize) -> &[(usize, f64)] {
        &self.transitions[layer][state][action]
    }

    /// Expected next-layer value `Σ_{s'} P_h(s'|s,a) v(s')`.
    pub fn expected_next(&self, layer: usize, state: usize, action: usize, next_values: &[f64]) -> f64 {
        self.transition(layer, state, action)
            .iter()
            .map(|&(t, p)| p * next_values[t])
            .sum()
    }

    /// Exact Bellman backup `r_h(s,a) + E[v(s')]` for every `(s, a)` at `layer`.
    pub fn bellman_backup(&self, layer: usize, next_values: &[f64]) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions(layer, s))
                    .map(|a| self.mean_reward(layer, s, a) + self.expected_next(layer, s, a, next_values))
                    .collect()
            })
            .collect()
    }

    pub fn sample_next_state(&self, layer: usize, state: usize, action: usize, rng: &mut impl Rng) -> usize {
        let row = self.transition(layer, state, action);
        if row.len() == 1 {
            return row[0].0;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(t, p) in row {
            acc += p;
            if u < acc {
                return t;
            }
        }
        row.last().map(|&(t, _)| t).unwrap_or(state)
    }

    /// Mean reward plus zero-mean Gaussian noise, clamped symmetrically about
    /// the mean so the draw stays in `[0, cap_h]` and keeps its mean.
    pub fn sample_reward(&self, layer: usize, state: usize, action: usize, rng: &mut impl Rng) -> f64 {
        let mean = self.mean_reward(layer, state, action);
        let z: f64 = StandardNormal.sample(rng);
        if self.reward_noise == 0.0 {
            return mean;
        }
        let half_width = mean.min(self.reward_caps[layer] - mean).max(0.0);
        mean + (z * self.reward_noise).clamp(-half_width, half_width)
    }
}

/// Rolls out one episode. Transition and reward draws come from `rng`.
pub fn run_policy(env: &EpisodicEnv, policy: &impl Policy, rng: &mut impl Rng) -> Result<Trajectory> {
    let mut state = env.initial_state();
    let mut steps = Vec::with_capacity(env.horizon());
    for layer in 0..env.horizon() {
        let action = policy.action(layer, state);
        if action >= env.num_actions(layer, state) {
            return Err(Error::InvalidAction { layer, state, action });
        }
        let reward = env.sample_reward(layer, state, action, rng);
        let next_state = env.sample_next_state(layer, state, action, rng);
        steps.push(Step {
            layer,
            state,
            action,
            reward,
            next_state,
        });
        state = next_state;
    }
    Ok(Trajectory { steps })
}

/// Optimal action values `Q*_h(s, a)` by backward induction.
pub fn optimal_q(env: &EpisodicEnv) -> Vec<Vec<Vec<f64>>> {
    let mut next = vec![0.0; env.num_states()];
    let mut q = vec![Vec::new(); env.horizon()];
    for h in (0..env.horizon()).rev() {
        let layer_q = env.bellman_backup(h, &next);
        next = layer_q.iter().map(|row| max_value(row)).collect();
        q[h] = layer_q;
    }
    q
}

/// `V*_1(s_1)`.
pub fn optimal_value(env: &EpisodicEnv) -> f64 {
    let q = optimal_q(env);
    max_value(&q[0][env.initial_state()])
}

/// An optimal deterministic policy (lowest index among ties).
pub fn optimal_policy(env: &EpisodicEnv) -> TabularPolicy {
    let q = optimal_q(env);
    TabularPolicy::new(
        q.iter()
            .map(|layer| layer.iter().map(|row| argmax(row)).collect())
            .collect(),
    )
}

/// `V^π_1(s_1)` by forward propagation of the state distribution.
pub fn policy_value(env: &EpisodicEnv, policy: &impl Policy) -> Result<f64> {
    let mut dist = vec![0.0; env.num_states()];
    dist[env.initial_state()] = 1.0;
    let mut value = 0.0;
    for h in 0..env.horizon() {
        let mut next = vec![0.0; env.num_states()];
        for (s, &mass) in dist.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let a = policy.action(h, s);
            if a >= env.num_actions(h, s) {
                return Err(Error::InvalidAction {
                    layer: h,
                    state: s,
                    action: a,
                });
            }
            value += mass * env.mean_reward(h, s, a);
            for &(t, p) in env.transition(h, s, a) {
                next[t] += mass * p;
            }
        }
        dist = next;
    }
    Ok(value)
}

pub(crate) fn max_value(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn one_hot(dim: usize, index: usize) -> DVector<f64> {
    let mut v = DVector::zeros(dim);
    v[index] = 1.0;
    v
}

/// Tabular MDP with one-hot features `φ_h(s, a) = e_{s·A + a}` (so `d = S·A`
/// on every layer and the inherent Bellman error is zero).
///
/// `rewards[h][s][a]` and `transitions[h][s][a][s']` are dense tables.
pub fn make_linear_mdp_onehot(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    rewards: Vec<Vec<Vec<f64>>>,
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    reward_noise: f64,
) -> Result<EpisodicEnv> {
    if num_states == 0 || num_actions == 0 || horizon == 0 {
        return invalid("states, actions and horizon must be positive");
    }
    let dim = num_states * num_actions;
    let shape_ok = rewards.len() == horizon
        && transitions.len() == horizon
        && rewards.iter().all(|l| l.len() == num_states && l.iter().all(|r| r.len() == num_actions))
        && transitions.iter().all(|l| {
            l.len() == num_states
                && l.iter().all(|r| r.len() == num_actions && r.iter().all(|p| p.len() == num_states))
        });
    if !shape_ok {
        return invalid("reward/transition tables do not match (H, S, A)");
    }
    let sparse = transitions
        .into_iter()
        .map(|layer| {
            layer
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|probs| {
                            probs
                                .into_iter()
                                .enumerate()
                                .filter(|&(_, p)| p != 0.0)
                                .collect::<Vec<_>>()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let table = (0..horizon)
        .map(|_| {
            (0..num_states)
                .map(|s| (0..num_actions).map(|a| one_hot(dim, s * num_actions + a)).collect())
                .collect()
        })
        .collect();
    let features = FeatureMap::new(vec![dim; horizon], table)?;
    EpisodicEnv::build(
        format!("onehot(S={num_states},A={num_actions},H={horizon})"),
        num_states,
        0,
        sparse,
        rewards,
        reward_noise,
        features,
        0.0,
        false,
    )
}

/// Random one-hot MDP: mean rewards uniform on `[0, 1/H]`, transition rows
/// uniform on the simplex.
pub fn random_onehot_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    reward_noise: f64,
    rng: &mut impl Rng,
) -> Result<EpisodicEnv> {
    let cap = 1.0 / horizon.max(1) as f64;
    let rewards = (0..horizon)
        .map(|_| {
            (0..num_states)
                .map(|_| (0..num_actions).map(|_| rng.random_range(0.0..cap)).collect())
                .collect()
        })
        .collect();
    let transitions = (0..horizon)
        .map(|_| {
            (0..num_states)
                .map(|_| {
                    (0..num_actions)
                        .map(|_| {
                            let w: Vec<f64> = (0..num_states).map(|_| Exp1.sample(rng)).collect();
                            let total: f64 = w.iter().sum();
                            let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
                            // absorb rounding so each row sums to one
                            let drift = 1.0 - p.iter().sum::<f64>();
                            p[0] += drift;
                            p
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    make_linear_mdp_onehot(num_states, num_actions, horizon, rewards, transitions, reward_noise)
}

/// State ids of the two-state hard instance.
pub const HARD_START: usize = 0;
pub const HARD_ABSORB: usize = 1;

/// Two-state deterministic MDP whose deterministic policies act like the arms
/// of a multi-armed bandit.
///
/// At the start state in layer `h` there are `d_h − 1` actions: action `0`
/// stays put with no reward, action `j ≥ 1` moves to the absorbing state and
/// pays `rewards[(h, j)]` (zero if absent). The absorbing state has a single
/// action with no reward. Features are unit vectors: the absorbing action
/// uses `e_0` and start-state action `j` uses `e_{j+1}`.
///
/// Only exits with `j ≤ d_h − 2` may carry reward, which yields `Σ (d_h − 2)`
/// informative arms.
pub fn make_hard_instance(dims: &[usize], rewards: &BTreeMap<(usize, usize), f64>) -> Result<EpisodicEnv> {
    if dims.is_empty() {
        return invalid("hard instance needs at least one layer");
    }
    if let Some(d) = dims.iter().find(|&&d| d < 3) {
        return invalid(format!("hard instance needs d_h ≥ 3, got {d}"));
    }
    for (&(h, j), &r) in rewards {
        if h >= dims.len() || j == 0 || j > dims[h] - 2 {
            return invalid(format!("no informative arm ({h}, {j})"));
        }
        if !(0.0..=1.0).contains(&r) {
            return invalid(format!("arm ({h}, {j}) reward {r} outside [0, 1]"));
        }
    }
    let horizon = dims.len();
    let mut transitions = Vec::with_capacity(horizon);
    let mut reward_table = Vec::with_capacity(horizon);
    let mut feature_table = Vec::with_capacity(horizon);
    for (h, &d) in dims.iter().enumerate() {
        let n_start = d - 1;
        let start_rows: Vec<Vec<(usize, f64)>> = (0..n_start)
            .map(|j| if j == 0 { vec![(HARD_START, 1.0)] } else { vec![(HARD_ABSORB, 1.0)] })
            .collect();
        transitions.push(vec![start_rows, vec![vec![(HARD_ABSORB, 1.0)]]]);
        let start_rewards: Vec<f64> = (0..n_start)
            .map(|j| rewards.get(&(h, j)).copied().unwrap_or(0.0))
            .collect();
        reward_table.push(vec![start_rewards, vec![0.0]]);
        let start_features = (0..n_start).map(|j| one_hot(d, j + 1)).collect();
        feature_table.push(vec![start_features, vec![one_hot(d, 0)]]);
    }
    let features = FeatureMap::new(dims.to_vec(), feature_table)?;
    EpisodicEnv::build(
        format!("hard(dims={dims:?})"),
        2,
        HARD_START,
        transitions,
        reward_table,
        0.0,
        features,
        0.0,
        true,
    )
}

/// Draws every informative arm's reward i.i.d. uniform on `[0.1, 0.9]`.
pub fn sample_hard_rewards(dims: &[usize], rng: &mut impl Rng) -> BTreeMap<(usize, usize), f64> {
    let mut out = BTreeMap::new();
    for (h, &d) in dims.iter().enumerate() {
        for j in 1..d.saturating_sub(1) {
            out.insert((h, j), rng.random_range(0.1..0.9));
        }
    }
    out
}

/// Number of informative arms `Σ (d_h − 2)` in a hard instance.
pub fn hard_arm_count(dims: &[usize]) -> usize {
    dims.iter().map(|d| d.saturating_sub(2)).sum()
}

/// Identifies the arm a deterministic trajectory on the hard instance pulls:
/// `Some((h, j))` for an exit at layer `h` via action `j`, `None` if the
/// agent never leaves the start state.
pub fn hard_arm_of(traj: &Trajectory) -> Option<(usize, usize)> {
    traj.steps
        .iter()
        .find(|s| s.state == HARD_START && s.action != 0)
        .map(|s| (s.layer, s.action))
}

/// One-step linear bandit: one state, one action per arm, mean reward
/// `armᵀθ*`.
pub fn make_linear_bandit(theta_star: &[f64], arms: &[Vec<f64>], noise_std: f64) -> Result<EpisodicEnv> {
    let d = theta_star.len();
    if d == 0 || arms.is_empty() {
        return invalid("linear bandit needs a parameter and at least one arm");
    }
    let theta = DVector::from_column_slice(theta_star);
    let mut feats = Vec::with_capacity(arms.len());
    let mut means = Vec::with_capacity(arms.len());
    for (i, arm) in arms.iter().enumerate() {
        if arm.len() != d {
            return invalid(format!("arm {i} has dimension {}, want {d}", arm.len()));
        }
        let phi = DVector::from_column_slice(arm);
        if phi.norm() > 1.0 + NORM_TOL {
            return invalid(format!("arm {i} has norm {} > 1", phi.norm()));
        }
        let mean = phi.dot(&theta);
        if !(-1e-12..=1.0 + 1e-12).contains(&mean) {
            return invalid(format!("arm {i} mean reward {mean} outside [0, 1]"));
        }
        feats.push(phi);
        means.push(mean.clamp(0.0, 1.0));
    }
    let n = arms.len();
    let features = FeatureMap::new(vec![d], vec![vec![feats]])?;
    EpisodicEnv::build(
        format!("bandit(d={d},arms={n})"),
        1,
        0,
        vec![vec![vec![vec![(0, 1.0)]; n]]],
        vec![vec![means]],
        noise_std,
        features,
        0.0,
        true,
    )
}

/// Standard-basis arms `e_1, …, e_d`.
pub fn orthogonal_arms(d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|i| one_hot(d, i).as_slice().to_vec()).collect()
}

/// Generalized-linear variant of `base`.
///
/// The identity link returns `base` unchanged (one-hot MDPs are exactly
/// realizable). Other links are supported on one-step environments: each mean
/// reward `z` becomes `f(z)`, so a linear bandit with parameter `θ*` turns
/// into a bandit with mean rewards `f(φᵀθ*)`.
pub fn make_glm_env(base: &EpisodicEnv, link: &LinkFunction) -> Result<EpisodicEnv> {
    link.validate()?;
    if link.kind() == LinkKind::Identity {
        return Ok(base.clone());
    }
    if base.horizon() != 1 {
        return Err(Error::Unsupported(
            "non-identity links are only shipped for one-step environments".into(),
        ));
    }
    let mut env = base.clone();
    for row in env.rewards[0].iter_mut() {
        for r in row.iter_mut() {
            let z = *r;
            let fz = link.f(z);
            if !(0.0..=1.0).contains(&fz) {
                return invalid(format!("link maps mean {z} to {fz}, outside [0, 1]"));
            }
            *r = fz;
        }
    }
    env.reward_caps = vec![1.0];
    env.name = format!("glm[{:?}]({})", link.kind(), base.name);
    Ok(env)
}

/// Serializable environment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvDescriptor {
    /// Random one-hot MDP drawn from `table_seed`.
    Onehot {
        states: usize,
        actions: usize,
        horizon: usize,
        table_seed: u64,
        #[serde(default)]
        reward_noise: f64,
    },
    /// Hard instance; rewards as `[layer, action, reward]` triples, or drawn
    /// uniform on `[0.1, 0.9]` from `reward_seed` when omitted.
    Hard {
        dims: Vec<usize>,
        #[serde(default)]
        rewards: Option<Vec<(usize, usize, f64)>>,
        #[serde(default)]
        reward_seed: u64,
    },
    /// Linear bandit; arms default to the standard basis.
    Bandit {
        theta_star: Vec<f64>,
        #[serde(default)]
        arms: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        noise_std: f64,
    },
    /// Linear bandit pushed through a link function.
    GlmBandit {
        theta_star: Vec<f64>,
        #[serde(default)]
        arms: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        noise_std: f64,
        link: LinkKind,
    },
}

impl EnvDescriptor {
    pub fn build(&self) -> Result<EpisodicEnv> {
        match self {
            EnvDescriptor::Onehot {
                states,
                actions,
                horizon,
                table_seed,
                reward_noise,
            } => {
                let mut rng = rng::stream(*table_seed, 0, 0, Purpose::EnvBuild);
                random_onehot_mdp(*states, *actions, *horizon, *reward_noise, &mut rng)
            }
            EnvDescriptor::Hard {
                dims,
                rewards,
                reward_seed,
            } => {
                let table = match rewards {
                    Some(list) => list.iter().map(|&(h, j, r)| ((h, j), r)).collect(),
                    None => {
                        let mut rng = rng::stream(*reward_seed, 0, 0, Purpose::EnvBuild);
                        sample_hard_rewards(dims, &mut rng)
                    }
                };
                make_hard_instance(dims, &table)
            }
            EnvDescriptor::Bandit {
                theta_star,
                arms,
                noise_std,
            } => {
                let arms = arms.clone().unwrap_or_else(|| orthogonal_arms(theta_star.len()));
                make_linear_bandit(theta_star, &arms, *noise_std)
            }
            EnvDescriptor::GlmBandit {
                theta_star,
                arms,
                noise_std,
                link,
            } => {
                let arms = arms.clone().unwrap_or_else(|| orthogonal_arms(theta_star.len()));
                let base = make_linear_bandit(theta_star, &arms, *noise_std)?;
                make_glm_env(&base, &LinkFunction::new(*link))
            }
        }
    }
}
