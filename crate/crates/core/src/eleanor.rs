//! Globally optimistic LSVI with a determinant-doubling update gate.
//!
//! At an update, the planner chooses perturbations `ξ̄_h` inside the
//! confidence ellipsoids `‖ξ‖_{Σ_h} ≤ √α_h` so as to maximize the value
//! `max_a φ₁(s₁, a)ᵀθ̄₁` at the initial state, where `θ̄_h = θ̂_h + ξ̄_h` and
//! `θ̂_h` is the ridge regression of `r + max_a' φ_{h+1}ᵀθ̄_{h+1}`. Every
//! returned `θ̄_h` is kept in the bounded class: `‖θ̄_h‖ ≤ √d_h` and
//! `|φᵀθ̄_h| ≤ 1` on every enumerable `(s, a)`.
//!
//! Layers are indexed from 0 throughout this module.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{self, argmax, EpisodicEnv, TabularPolicy};
use crate::error::{invalid, Error, Result};
use crate::harness::{EpisodeRow, RegretRecord, RunChecks, RunOutput, SwitchDiagnostics};
use crate::history::History;
use crate::linalg::{quad_form, CovarianceAccumulator, RidgeTarget};
use crate::rng::{self, Purpose};
use crate::switching::{switch_budget, SwitchController};

/// Confidence radii `β_h^k` and `α_h^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceSchedule {
    episodes: usize,
    delta: f64,
    ibe: f64,
    /// `d_1, …, d_H, d_{H+1} = 1`.
    dims: Vec<usize>,
}

impl ConfidenceSchedule {
    pub fn new(dims: &[usize], episodes: usize, delta: f64, ibe: f64) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return invalid("dimensions must be positive and non-empty");
        }
        if episodes == 0 {
            return invalid("K must be positive");
        }
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("δ must be in (0, 1), got {delta}"));
        }
        if !(ibe >= 0.0 && ibe.is_finite()) {
            return invalid(format!("inherent Bellman error must be ≥ 0, got {ibe}"));
        }
        let mut dims = dims.to_vec();
        dims.push(1);
        Ok(Self {
            episodes,
            delta,
            ibe,
            dims,
        })
    }

    pub fn horizon(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    fn check(&self, h: usize, k: usize) -> Result<()> {
        if h >= self.horizon() {
            return invalid(format!("layer {h} out of range for horizon {}", self.horizon()));
        }
        if k == 0 || k > self.episodes {
            return invalid(format!("episode {k} out of range 1..={}", self.episodes));
        }
        Ok(())
    }

    /// `√β = √(d_h ln(1 + k/d_h) + 2 d_{h+1} ln(1 + 4√(k d_h)) + ln(2KH/δ)) + 1`.
    pub fn sqrt_beta(&self, h: usize, k: usize) -> Result<f64> {
        self.check(h, k)?;
        let d = self.dims[h] as f64;
        let d_next = self.dims[h + 1] as f64;
        let k = k as f64;
        let kh = self.episodes as f64 * self.horizon() as f64;
        let inner = d * (k / d).ln_1p() + 2.0 * d_next * (4.0 * (k * d).sqrt()).ln_1p() + (2.0 * kh / self.delta).ln();
        Ok(inner.sqrt() + 1.0)
    }

    pub fn beta(&self, h: usize, k: usize) -> Result<f64> {
        Ok(self.sqrt_beta(h, k)?.powi(2))
    }

    /// `√α = √β + √k·𝓘 + √d_h`.
    pub fn sqrt_alpha(&self, h: usize, k: usize) -> Result<f64> {
        Ok(self.sqrt_beta(h, k)? + (k as f64).sqrt() * self.ibe + (self.dims[h] as f64).sqrt())
    }

    pub fn alpha(&self, h: usize, k: usize) -> Result<f64> {
        Ok(self.sqrt_alpha(h, k)?.powi(2))
    }
}

/// Ridge regression of one layer's targets.
pub fn lsvi_backup(target: &RidgeTarget, acc: &CovarianceAccumulator) -> Result<DVector<f64>> {
    acc.ridge_solve(target)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanParams {
    pub theta_hat: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub theta_bar: Vec<DVector<f64>>,
    /// `max_a φ₁(s₁, a)ᵀθ̄₁`.
    pub planned_value: f64,
    /// Ellipsoid-constrained optimum before the feasibility clip.
    pub objective: f64,
    /// Set when some `θ̂_h` was itself outside the bounded class.
    pub degraded: bool,
    /// Starts evaluated by the solver.
    pub restarts: usize,
}

impl PlanParams {
    /// Checks the ellipsoid, sum and boundedness invariants.
    pub fn check(&self, problem: &PlanningProblem<'_>) -> Result<()> {
        for h in 0..self.theta_bar.len() {
            let sum = &self.theta_hat[h] + &self.xi[h];
            if (&sum - &self.theta_bar[h]).amax() > 1e-12 {
                return Err(Error::InvariantViolation(format!("layer {h}: θ̄ ≠ θ̂ + ξ̄")));
            }
            if !self.degraded && problem.xi_norm(h, &self.xi[h]) > problem.sqrt_alpha(h) + 1e-9 {
                return Err(Error::InvariantViolation(format!("layer {h}: ξ̄ leaves its ellipsoid")));
            }
            if !problem.is_feasible(h, &self.theta_bar[h], 1e-9) {
                return Err(Error::InvariantViolation(format!("layer {h}: θ̄ outside the bounded class")));
            }
        }
        Ok(())
    }
}

/// Largest `t ∈ [0, 1]` with `base + t·dir` in the bounded class of a layer.
/// Requires `base` itself to be feasible.
fn max_feasible_step(grid: &[DVector<f64>], radius_sq: f64, base: &DVector<f64>, dir: &DVector<f64>) -> f64 {
    let mut t: f64 = 1.0;
    for g in grid {
        let p = g.dot(base);
        let q = g.dot(dir);
        if q > 0.0 {
            t = t.min(((1.0 - p) / q).max(0.0));
        } else if q < 0.0 {
            t = t.min(((-1.0 - p) / q).max(0.0));
        }
    }
    let a = dir.norm_squared();
    if a > 0.0 {
        let b = base.dot(dir);
        let c = base.norm_squared() - radius_sq;
        let disc = (b * b - a * c).max(0.0);
        t = t.min(((-b + disc.sqrt()) / a).max(0.0));
    }
    t
}

/// Data of one update: per-layer regression moments, covariance, radii and
/// the enumerable feature grid.
pub struct PlanningProblem<'a> {
    env: &'a EpisodicEnv,
    inverses: Vec<DMatrix<f64>>,
    matrices: Vec<DMatrix<f64>>,
    /// `Σ_h⁻¹ Σ φ r`.
    reward_coef: Vec<DVector<f64>>,
    /// `(s', Σ_h⁻¹ Σ_{τ: s'_τ = s'} φ_τ)`.
    next_coef: Vec<Vec<(usize, DVector<f64>)>>,
    sqrt_alphas: Vec<f64>,
    grids: Vec<Vec<DVector<f64>>>,
}

impl<'a> PlanningProblem<'a> {
    pub fn new(env: &'a EpisodicEnv, history: &History, sqrt_alphas: Vec<f64>) -> Result<Self> {
        let horizon = env.horizon();
        if sqrt_alphas.len() != horizon || sqrt_alphas.iter().any(|a| !(*a >= 0.0)) {
            return invalid("one non-negative radius per layer required");
        }
        let mut reward_coef = Vec::with_capacity(horizon);
        let mut next_coef = Vec::with_capacity(horizon);
        let mut grids = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let inv = history.acc(h).inverse();
            let moments = history.linear_moments(env, h);
            reward_coef.push(inv * &moments.reward);
            next_coef.push(moments.next.iter().map(|(s, m)| (*s, inv * m)).collect());
            grids.push(
                (0..env.num_states())
                    .flat_map(|s| env.features().actions_at(h, s).iter().cloned())
                    .collect(),
            );
        }
        Ok(Self {
            env,
            inverses: history.accs().iter().map(|a| a.inverse().clone()).collect(),
            matrices: history.accs().iter().map(|a| a.matrix().clone()).collect(),
            reward_coef,
            next_coef,
            sqrt_alphas,
            grids,
        })
    }

    pub fn horizon(&self) -> usize {
        self.env.horizon()
    }

    pub fn sqrt_alpha(&self, h: usize) -> f64 {
        self.sqrt_alphas[h]
    }

    pub fn xi_norm(&self, h: usize, xi: &DVector<f64>) -> f64 {
        quad_form(&self.matrices[h], xi).max(0.0).sqrt()
    }

    pub fn is_feasible(&self, h: usize, theta: &DVector<f64>, tol: f64) -> bool {
        let d = self.env.dims()[h] as f64;
        theta.norm_squared() <= d * (1.0 + tol)
            && self.grids[h].iter().all(|g| g.dot(theta).abs() <= 1.0 + tol)
    }

    /// `(V̄(s), argmax action)` for every state at layer `h`.
    fn values(&self, h: usize, theta_bar: &DVector<f64>) -> (Vec<f64>, Vec<usize>) {
        (0..self.env.num_states())
            .map(|s| {
                let qs: Vec<f64> = self
                    .env
                    .features()
                    .actions_at(h, s)
                    .iter()
                    .map(|phi| phi.dot(theta_bar))
                    .collect();
                let a = argmax(&qs);
                (qs[a], a)
            })
            .unzip()
    }

    fn theta_hat(&self, h: usize, next_values: Option<&[f64]>) -> DVector<f64> {
        let mut out = self.reward_coef[h].clone();
        if let Some(v) = next_values {
            for (s, w) in &self.next_coef[h] {
                out.axpy(v[*s], w, 1.0);
            }
        }
        out
    }

    /// Clips `θ̂ + ξ` into the bounded class. Returns `(θ̄, degraded)`.
    fn clip(&self, h: usize, theta_hat: &DVector<f64>, xi: &DVector<f64>) -> (DVector<f64>, bool) {
        let radius_sq = self.env.dims()[h] as f64;
        if self.is_feasible(h, theta_hat, 0.0) {
            let t = max_feasible_step(&self.grids[h], radius_sq, theta_hat, xi);
            (theta_hat + xi * t, false)
        } else {
            let zero = DVector::zeros(theta_hat.len());
            let s = max_feasible_step(&self.grids[h], radius_sq, &zero, theta_hat);
            (theta_hat * s, true)
        }
    }

    /// Backward LSVI with the given pre-clip perturbations.
    pub fn evaluate(&self, xis: &[DVector<f64>]) -> PlanParams {
        let horizon = self.horizon();
        let mut theta_hat = vec![DVector::zeros(0); horizon];
        let mut theta_bar = vec![DVector::zeros(0); horizon];
        let mut xi = vec![DVector::zeros(0); horizon];
        let mut degraded = false;
        let mut next: Option<Vec<f64>> = None;
        for h in (0..horizon).rev() {
            let hat = self.theta_hat(h, next.as_deref());
            let (bar, deg) = self.clip(h, &hat, &xis[h]);
            degraded |= deg;
            xi[h] = &bar - &hat;
            next = Some(self.values(h, &bar).0);
            theta_hat[h] = hat;
            theta_bar[h] = bar;
        }
        let planned_value = envs::max_value(
            &self
                .env
                .features()
                .actions_at(0, self.env.initial_state())
                .iter()
                .map(|phi| phi.dot(&theta_bar[0]))
                .collect::<Vec<_>>(),
        );
        PlanParams {
            theta_hat,
            xi,
            theta_bar,
            planned_value,
            objective: planned_value,
            degraded,
            restarts: 1,
        }
    }

    /// `∂ planned_value / ∂θ̄_h` for every layer, holding argmaxes fixed.
    fn sensitivities(&self, plan: &PlanParams) -> Vec<DVector<f64>> {
        let horizon = self.horizon();
        let s1 = self.env.initial_state();
        let first = self.env.features().actions_at(0, s1);
        let q1: Vec<f64> = first.iter().map(|phi| phi.dot(&plan.theta_bar[0])).collect();
        let mut grads = vec![first[argmax(&q1)].clone()];
        for h in 0..horizon - 1 {
            let (_, acts) = self.values(h + 1, &plan.theta_bar[h + 1]);
            let mut g = DVector::zeros(self.env.dims()[h + 1]);
            for (s, w) in &self.next_coef[h] {
                let weight = w.dot(&grads[h]);
                g.axpy(weight, self.env.feature(h + 1, *s, acts[*s]), 1.0);
            }
            grads.push(g);
        }
        grads
    }

    fn project(&self, h: usize, xi: DVector<f64>) -> DVector<f64> {
        let n = self.xi_norm(h, &xi);
        let r = self.sqrt_alphas[h];
        if n > r {
            if r == 0.0 {
                DVector::zeros(xi.len())
            } else {
                xi * (r / n)
            }
        } else {
            xi
        }
    }

    /// `√α Σ⁻¹g / ‖g‖_{Σ⁻¹}`, the ellipsoid point maximizing `gᵀξ`.
    fn ascent_direction(&self, h: usize, g: &DVector<f64>) -> Option<DVector<f64>> {
        let n = quad_form(&self.inverses[h], g).max(0.0).sqrt();
        (n > 0.0 && self.sqrt_alphas[h] > 0.0).then(|| &self.inverses[h] * g * (self.sqrt_alphas[h] / n))
    }

    fn random_start(&self, rng: &mut impl Rng) -> Vec<DVector<f64>> {
        (0..self.horizon())
            .map(|h| {
                let d = self.env.dims()[h];
                let w = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
                let wn = w.norm();
                let rho: f64 = rng.random::<f64>().powf(1.0 / d as f64);
                let Some(chol) = self.matrices[h].clone().cholesky() else {
                    return DVector::zeros(d);
                };
                let lt = chol.l().transpose();
                let Some(x) = lt.solve_upper_triangular(&w) else {
                    return DVector::zeros(d);
                };
                if wn > 0.0 {
                    self.project(h, x * (self.sqrt_alphas[h] * rho / wn))
                } else {
                    DVector::zeros(d)
                }
            })
            .collect()
    }

    /// Coordinate ascent over layers from one start. Returns the best plan
    /// and the accepted planned values in order.
    fn ascend(&self, mut xis: Vec<DVector<f64>>, iters: usize, tol: f64) -> (PlanParams, Vec<f64>, Vec<DVector<f64>>) {
        let mut best = self.evaluate(&xis);
        let mut trace = vec![best.planned_value];
        for _ in 0..iters {
            let mut improved = false;
            for h in (0..self.horizon()).rev() {
                let grads = self.sensitivities(&best);
                let Some(dir) = self.ascent_direction(h, &grads[h]) else {
                    continue;
                };
                let mut t = 2.0;
                for _ in 0..=13 {
                    let cand_xi = self.project(h, &xis[h] + &dir * t);
                    let mut cand_xis = xis.clone();
                    cand_xis[h] = cand_xi;
                    let cand = self.evaluate(&cand_xis);
                    if cand.planned_value > best.planned_value + tol && (!cand.degraded || best.degraded) {
                        xis = cand_xis;
                        best = cand;
                        trace.push(best.planned_value);
                        improved = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if !improved {
                break;
            }
        }
        (best, trace, xis)
    }

    /// Multi-start alternating ascent: the zero start plus `restarts` random
    /// ellipsoid starts.
    pub fn solve_alternating(&self, restarts: usize, iters: usize, tol: f64, rng: &mut impl Rng) -> Result<PlanParams> {
        if self.horizon() < 2 {
            return invalid("the alternating solver needs H ≥ 2");
        }
        let zero: Vec<DVector<f64>> = self.env.dims().iter().map(|&d| DVector::zeros(d)).collect();
        let (mut best, _, _) = self.ascend(zero, iters, tol);
        for _ in 0..restarts {
            let start = self.random_start(rng);
            let (cand, _, _) = self.ascend(start, iters, tol);
            let better = match (cand.degraded, best.degraded) {
                (false, true) => true,
                (true, false) => false,
                _ => cand.planned_value > best.planned_value + tol,
            };
            if better {
                best = cand;
            }
        }
        best.objective = best.planned_value;
        best.restarts = restarts + 1;
        Ok(best)
    }

    /// Accepted planned values of a single ascent from `start`.
    pub fn ascent_trace(&self, start: Vec<DVector<f64>>, iters: usize, tol: f64) -> Vec<f64> {
        self.ascend(start, iters, tol).1
    }

    /// Exact optimum for `H = 1`.
    pub fn solve_bandit_exact(&self) -> Result<PlanParams> {
        if self.horizon() != 1 {
            return invalid("the exact planner needs H = 1");
        }
        let arms = self.env.features().actions_at(0, self.env.initial_state());
        let theta_hat = self.theta_hat(0, None);
        let raw = bandit_optimum(arms, &self.inverses[0], &theta_hat, self.sqrt_alphas[0])?;
        let mut plan = self.evaluate(&[raw.xi]);
        plan.objective = raw.value;
        Ok(plan)
    }
}

struct BanditOptimum {
    xi: DVector<f64>,
    value: f64,
}

fn bandit_optimum(arms: &[DVector<f64>], inverse: &DMatrix<f64>, theta_hat: &DVector<f64>, sqrt_alpha: f64) -> Result<BanditOptimum> {
    if arms.is_empty() {
        return invalid("empty arm set");
    }
    let scores: Vec<f64> = arms
        .iter()
        .map(|phi| phi.dot(theta_hat) + sqrt_alpha * quad_form(inverse, phi).max(0.0).sqrt())
        .collect();
    let best = argmax(&scores);
    let phi = &arms[best];
    let n = quad_form(inverse, phi).max(0.0).sqrt();
    let xi = if n > 0.0 {
        inverse * phi * (sqrt_alpha / n)
    } else {
        DVector::zeros(theta_hat.len())
    };
    Ok(BanditOptimum { xi, value: scores[best] })
}

/// Optimistic arm selection over the confidence ellipsoid, followed by the
/// feasibility clip over `arms`.
pub fn plan_bandit_exact(arms: &[DVector<f64>], acc: &CovarianceAccumulator, theta_hat: &DVector<f64>, alpha: f64) -> Result<PlanParams> {
    if !(alpha >= 0.0) {
        return invalid(format!("α must be ≥ 0, got {alpha}"));
    }
    let raw = bandit_optimum(arms, acc.inverse(), theta_hat, alpha.sqrt())?;
    let radius_sq = acc.dim() as f64;
    let hat_ok = theta_hat.norm_squared() <= radius_sq && arms.iter().all(|g| g.dot(theta_hat).abs() <= 1.0);
    let (theta_bar, degraded) = if hat_ok {
        let t = max_feasible_step(arms, radius_sq, theta_hat, &raw.xi);
        (theta_hat + &raw.xi * t, false)
    } else {
        let zero = DVector::zeros(theta_hat.len());
        let s = max_feasible_step(arms, radius_sq, &zero, theta_hat);
        (theta_hat * s, true)
    };
    let planned_value = envs::max_value(&arms.iter().map(|phi| phi.dot(&theta_bar)).collect::<Vec<_>>());
    Ok(PlanParams {
        xi: vec![&theta_bar - theta_hat],
        theta_hat: vec![theta_hat.clone()],
        theta_bar: vec![theta_bar],
        planned_value,
        objective: raw.value,
        degraded,
        restarts: 1,
    })
}

/// `π_h(s) = argmax_a φ_h(s, a)ᵀθ̄_h`, lowest index on ties.
pub fn greedy_policy(plan: &PlanParams, env: &EpisodicEnv) -> TabularPolicy {
    TabularPolicy::new(
        (0..env.horizon())
            .map(|h| {
                (0..env.num_states())
                    .map(|s| {
                        let qs: Vec<f64> = env
                            .features()
                            .actions_at(h, s)
                            .iter()
                            .map(|phi| phi.dot(&plan.theta_bar[h]))
                            .collect();
                        argmax(&qs)
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Checks `|Q̄_h − 𝒯_h Q̄_{h+1}| ≤ 𝓘 + 2‖φ‖_{Σ_h⁻¹}√α_h` on every grid point.
pub fn bellman_envelope_holds(plan: &PlanParams, env: &EpisodicEnv, inverses: &[DMatrix<f64>], sqrt_alphas: &[f64], ibe: f64) -> bool {
    let horizon = env.horizon();
    let mut next_values = vec![0.0; env.num_states()];
    for h in (0..horizon).rev() {
        let mut values = vec![0.0; env.num_states()];
        for s in 0..env.num_states() {
            let mut best = f64::NEG_INFINITY;
            for (a, phi) in env.features().actions_at(h, s).iter().enumerate() {
                let q = phi.dot(&plan.theta_bar[h]);
                best = best.max(q);
                let backup = env.mean_reward(h, s, a) + env.expected_next(h, s, a, &next_values);
                let width = quad_form(&inverses[h], phi).max(0.0).sqrt();
                if (q - backup).abs() > ibe + 2.0 * width * sqrt_alphas[h] + 1e-12 {
                    return false;
                }
            }
            values[s] = best;
        }
        next_values = values;
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    /// Exact planner when `H = 1`, alternating ascent otherwise.
    Auto,
    BanditExact,
    Alternating,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EleanorConfig {
    pub episodes: usize,
    pub delta: f64,
    pub solver: Solver,
    pub restarts: usize,
    pub iters: usize,
    pub tol: f64,
    /// Overrides the environment's inherent Bellman error.
    pub ibe: Option<f64>,
    /// `false` re-plans every episode.
    pub gated: bool,
}

impl Default for EleanorConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            delta: 0.05,
            solver: Solver::Auto,
            restarts: 8,
            iters: 200,
            tol: 1e-8,
            ibe: None,
            gated: true,
        }
    }
}

/// Runs the learner for `cfg.episodes` episodes on `env` with seed `seed`.
pub fn run_eleanor(env: &EpisodicEnv, cfg: &EleanorConfig, seed: u64) -> Result<RunOutput> {
    let horizon = env.horizon();
    let solver = match (cfg.solver, horizon) {
        (Solver::Auto, 1) | (Solver::BanditExact, 1) => Solver::BanditExact,
        (Solver::Auto, _) | (Solver::Alternating, 2..) => Solver::Alternating,
        (Solver::BanditExact, _) => return invalid("the exact planner needs H = 1"),
        (Solver::Alternating, _) => return invalid("the alternating solver needs H ≥ 2"),
    };
    let ibe = cfg.ibe.unwrap_or(env.ibe());
    let schedule = ConfidenceSchedule::new(env.dims(), cfg.episodes, cfg.delta, ibe)?;
    let dims = env.dims();

    let q_star = envs::optimal_q(env);
    let v_star = envs::max_value(&q_star[0][env.initial_state()]);

    let mut history = History::new(env, 1.0)?;
    let mut ctrl = SwitchController::new(dims, 1.0)?;
    let mut regret = RegretRecord::default();
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut trajectories = Vec::with_capacity(cfg.episodes);
    let mut diagnostics = Vec::new();
    let mut current: Option<(TabularPolicy, f64, bool, bool)> = None;
    let mut optimistic_episodes = 0;
    let mut bellman_ok_episodes = 0;
    let mut policy_changes = 0;

    for k in 1..=cfg.episodes {
        let logdets = history.logdets();
        let switched = k == 1 || !cfg.gated || ctrl.should_switch(&logdets)?;
        if switched {
            let sqrt_alphas = (0..horizon)
                .map(|h| schedule.sqrt_alpha(h, k))
                .collect::<Result<Vec<_>>>()?;
            let problem = PlanningProblem::new(env, &history, sqrt_alphas.clone())?;
            let plan = match solver {
                Solver::BanditExact => problem.solve_bandit_exact()?,
                _ => {
                    let mut prng = rng::stream(seed, k as u64, 0, Purpose::Planner);
                    problem.solve_alternating(cfg.restarts, cfg.iters, cfg.tol, &mut prng)?
                }
            };
            plan.check(&problem)?;
            let policy = greedy_policy(&plan, env);
            let value = envs::policy_value(env, &policy)?;
            let optimistic = plan.planned_value >= v_star;
            let bellman_ok = bellman_envelope_holds(&plan, env, &problem.inverses, &sqrt_alphas, ibe);
            ctrl.record_switch(k, &logdets)?;
            diagnostics.push(SwitchDiagnostics {
                episode: k,
                planned_value: plan.planned_value,
                optimistic,
                xi_norms: (0..horizon).map(|h| problem.xi_norm(h, &plan.xi[h])).collect(),
                alphas: sqrt_alphas.iter().map(|a| a * a).collect(),
                gamma: None,
                restarts: plan.restarts,
                degraded: plan.degraded,
                bellman_ok: Some(bellman_ok),
                fit_losses: Vec::new(),
                fit_iterations: Vec::new(),
                fit_restarts: Vec::new(),
                policy: policy.clone(),
            });
            if current.as_ref().is_some_and(|c| c.0 != policy) {
                policy_changes += 1;
            }
            current = Some((policy, value, optimistic, bellman_ok));
        }
        let (policy, value, optimistic, bellman_ok) = current.as_ref().expect("policy deployed at episode 1");
        optimistic_episodes += usize::from(*optimistic);
        bellman_ok_episodes += usize::from(*bellman_ok);
        let mut step_rng = rng::stream(seed, k as u64, 0, Purpose::Transition);
        let traj = envs::run_policy(env, policy, &mut step_rng)?;
        regret.push(v_star - value, switched.then_some(k));
        rows.push(EpisodeRow {
            episode: k,
            switched,
            instant_regret: regret.instant().last().copied().unwrap_or(0.0),
            cum_regret: regret.cumulative_total(),
            n_switch_so_far: policy_changes,
            logdets,
        });
        history.record(env, &traj)?;
        trajectories.push(traj);
    }

    let budget = if cfg.episodes >= 2 { Some(switch_budget(dims, cfg.episodes)?) } else { None };
    Ok(RunOutput {
        seed,
        v_star,
        regret,
        switches: ctrl.into_log(),
        episodes: rows,
        trajectories,
        diagnostics,
        budget,
        gated: cfg.gated,
        dims: dims.to_vec(),
        checks: RunChecks {
            optimistic_episodes,
            bellman_ok_episodes: Some(bellman_ok_episodes),
            bonus_sum: None,
            bonus_bound: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_hard_instance, make_linear_bandit, make_linear_mdp_onehot, orthogonal_arms, run_policy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    #[test]
    fn beta_example() {
        let sched = ConfidenceSchedule::new(&[1], 1, 0.1, 0.0).unwrap();
        let expected = (2f64.ln() + 2.0 * 5f64.ln() + 20f64.ln()).sqrt() + 1.0;
        assert!((sched.sqrt_beta(0, 1).unwrap() - expected).abs() < 1e-12);
        assert!((sched.sqrt_beta(0, 1).unwrap() - 3.62826).abs() < 1e-5);
        assert!(sched.beta(0, 1).unwrap() >= 1.0);
    }

    #[test]
    fn beta_monotone() {
        let sched = ConfidenceSchedule::new(&[3, 2], 1000, 0.05, 0.0).unwrap();
        let tight = ConfidenceSchedule::new(&[3, 2], 1000, 0.01, 0.0).unwrap();
        for h in 0..2 {
            let mut prev = 0.0;
            for k in [1, 2, 4, 8, 100, 500, 1000] {
                let b = sched.beta(h, k).unwrap();
                assert!(b > prev);
                prev = b;
                assert!(tight.beta(h, k).unwrap() > b);
            }
        }
        assert!(sched.beta(2, 1).is_err());
        assert!(sched.beta(0, 0).is_err());
        assert!(sched.beta(0, 1001).is_err());
        assert!(ConfidenceSchedule::new(&[1], 1, 1.0, 0.0).is_err());
        assert!(ConfidenceSchedule::new(&[1], 1, 0.1, -0.1).is_err());
    }

    #[test]
    fn alpha_examples() {
        let s0 = ConfidenceSchedule::new(&[4], 1000, 0.05, 0.0).unwrap();
        let s1 = ConfidenceSchedule::new(&[4], 1000, 0.05, 0.1).unwrap();
        let b = s0.sqrt_beta(0, 100).unwrap();
        assert!((s0.sqrt_alpha(0, 100).unwrap() - (b + 2.0)).abs() < 1e-12);
        assert!((s1.sqrt_alpha(0, 100).unwrap() - (b + 1.0 + 2.0)).abs() < 1e-12);
        assert!(s1.alpha(0, 200).unwrap() >= s1.alpha(0, 100).unwrap());
    }

    #[test]
    fn lsvi_backup_examples() {
        let mut acc = CovarianceAccumulator::new(1, 1.0).unwrap();
        assert_eq!(lsvi_backup(&RidgeTarget::default(), &acc).unwrap()[0], 0.0);
        let phi = DVector::from_vec(vec![1.0]);
        let mut target = RidgeTarget::default();
        for _ in 0..10 {
            acc.update(&phi).unwrap();
            target.push(phi.clone(), 0.7).unwrap();
        }
        let theta = lsvi_backup(&target, &acc).unwrap();
        assert!((theta[0] - 10.0 * 0.7 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn bandit_exact_examples() {
        let acc = CovarianceAccumulator::new(3, 1.0).unwrap();
        let arms = orthogonal_arms(3).into_iter().map(DVector::from_vec).collect::<Vec<_>>();
        let plan = plan_bandit_exact(&arms, &acc, &DVector::zeros(3), 0.25).unwrap();
        assert!((plan.objective - 0.5).abs() < 1e-15);
        assert!((plan.xi[0][0] - 0.5).abs() < 1e-15);
        assert_eq!(plan.xi[0][1], 0.0);

        let mut acc = CovarianceAccumulator::new(1, 1.0).unwrap();
        acc.update(&DVector::from_vec(vec![1.0])).unwrap();
        let arm = [DVector::from_vec(vec![1.0])];
        let plan = plan_bandit_exact(&arm, &acc, &DVector::from_vec(vec![0.5]), 1.0).unwrap();
        assert!((plan.objective - (0.5 + 0.5f64.sqrt())).abs() < 1e-14);
        assert!((plan.planned_value - 1.0).abs() < 1e-14);
        assert!(plan_bandit_exact(&[], &acc, &DVector::zeros(1), 1.0).is_err());
    }

    #[test]
    fn bandit_exact_beats_sampled_ellipsoid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 3;
        let arms: Vec<DVector<f64>> = (0..5)
            .map(|_| {
                let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
                &v / v.norm()
            })
            .collect();
        let mut acc = CovarianceAccumulator::new(d, 1.0).unwrap();
        for _ in 0..20 {
            acc.update(&arms[rng.random_range(0..5)]).unwrap();
        }
        let theta_hat = DVector::from_vec(vec![0.1, -0.2, 0.05]);
        let alpha = 0.3;
        let plan = plan_bandit_exact(&arms, &acc, &theta_hat, alpha).unwrap();
        let chol = acc.matrix().clone().cholesky().unwrap();
        let lt = chol.l().transpose();
        for _ in 0..100_000 {
            let w = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let rho: f64 = rng.random::<f64>().powf(1.0 / d as f64);
            let xi = lt.solve_upper_triangular(&w).unwrap() * (alpha.sqrt() * rho / w.norm());
            let val = arms.iter().map(|a| a.dot(&(&theta_hat + &xi))).fold(f64::NEG_INFINITY, f64::max);
            assert!(val <= plan.objective + 1e-9);
        }
    }

    fn two_layer_env() -> EpisodicEnv {
        // one state, two actions per layer, scalar features
        make_hard_instance(&[3, 3], &BTreeMap::from([((0, 1), 0.4), ((1, 1), 0.6)])).unwrap()
    }

    fn history_for(env: &EpisodicEnv, episodes: u64, seed: u64) -> History {
        let mut hist = History::new(env, 1.0).unwrap();
        for k in 0..episodes {
            let mut prng = rng::stream(seed, k, 0, Purpose::Policy);
            let table: Vec<Vec<usize>> = (0..env.horizon())
                .map(|h| (0..env.num_states()).map(|s| prng.random_range(0..env.num_actions(h, s))).collect())
                .collect();
            let policy = move |h: usize, s: usize| table[h][s];
            let traj = run_policy(env, &policy, &mut rng::stream(seed, k, 0, Purpose::Transition)).unwrap();
            hist.record(env, &traj).unwrap();
        }
        hist
    }

    #[test]
    fn zero_radius_is_plain_lsvi() {
        let env = two_layer_env();
        let hist = history_for(&env, 30, 1);
        let problem = PlanningProblem::new(&env, &hist, vec![0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = problem.solve_alternating(3, 50, 1e-8, &mut rng).unwrap();
        assert!(plan.xi.iter().all(|x| x.amax() == 0.0));
        // plain backward LSVI through explicit ridge targets
        let mut next: Option<Vec<f64>> = None;
        for h in (0..2).rev() {
            let target = hist.ridge_target(&env, h, next.as_deref()).unwrap();
            let theta = lsvi_backup(&target, hist.acc(h)).unwrap();
            assert!((&theta - &plan.theta_hat[h]).amax() < 1e-12);
            next = Some(
                (0..env.num_states())
                    .map(|s| env.features().actions_at(h, s).iter().map(|p| p.dot(&theta)).fold(f64::NEG_INFINITY, f64::max))
                    .collect(),
            );
        }
    }

    /// Scalar-feature, two-layer chain: one state per layer, two actions.
    fn scalar_chain() -> EpisodicEnv {
        let rewards = vec![vec![vec![0.2, 0.3]], vec![vec![0.4, 0.1]]];
        let transitions = vec![vec![vec![vec![1.0], vec![1.0]]], vec![vec![vec![1.0], vec![1.0]]]];
        let base = make_linear_mdp_onehot(1, 2, 2, rewards, transitions, 0.0).unwrap();
        // collapse features to d = 1 by giving every action φ = ±c
        let table = (0..2)
            .map(|_| vec![vec![DVector::from_vec(vec![0.6]), DVector::from_vec(vec![-0.9])]])
            .collect();
        base.with_features(crate::envs::FeatureMap::new(vec![1, 1], table).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn alternating_matches_grid_oracle() {
        let env = scalar_chain();
        let hist = history_for(&env, 12, 3);
        let sqrt_alphas = vec![0.8, 0.5];
        let problem = PlanningProblem::new(&env, &hist, sqrt_alphas.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let plan = problem.solve_alternating(8, 200, 1e-8, &mut rng).unwrap();
        plan.check(&problem).unwrap();

        let half = |h: usize| sqrt_alphas[h] / problem.matrices[h][(0, 0)].sqrt();
        let n = 1000;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let x0 = -half(0) + 2.0 * half(0) * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let x1 = -half(1) + 2.0 * half(1) * j as f64 / (n - 1) as f64;
                let v = problem
                    .evaluate(&[DVector::from_vec(vec![x0]), DVector::from_vec(vec![x1])])
                    .planned_value;
                best = best.max(v);
            }
        }
        assert!((plan.planned_value - best).abs() < 1e-3, "{} vs {best}", plan.planned_value);
    }

    #[test]
    fn ascent_is_monotone_and_feasible() {
        let env = two_layer_env();
        let hist = history_for(&env, 40, 2);
        let problem = PlanningProblem::new(&env, &hist, vec![1.5, 2.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let start = problem.random_start(&mut rng);
            let trace = problem.ascent_trace(start, 200, 1e-8);
            assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        }
        let plan = problem.solve_alternating(8, 200, 1e-8, &mut rng).unwrap();
        plan.check(&problem).unwrap();
        assert_eq!(plan.restarts, 9);
    }

    #[test]
    fn greedy_policy_examples() {
        let env = make_hard_instance(&[4, 4], &BTreeMap::from([((0, 2), 0.8)])).unwrap();
        let zero = PlanParams {
            theta_hat: vec![DVector::zeros(4); 2],
            xi: vec![DVector::zeros(4); 2],
            theta_bar: vec![DVector::zeros(4); 2],
            planned_value: 0.0,
            objective: 0.0,
            degraded: false,
            restarts: 1,
        };
        let pol = greedy_policy(&zero, &env);
        assert!(pol.table().iter().flatten().all(|&a| a == 0));

        let mut favor = zero.clone();
        favor.theta_bar[0][3] = 0.9;
        let pol = greedy_policy(&favor, &env);
        assert_eq!(pol.table()[0][crate::envs::HARD_START], 2);
        let mut scaled = favor.clone();
        scaled.theta_bar[0] *= 3.0;
        assert_eq!(greedy_policy(&scaled, &env), pol);
    }

    #[test]
    fn single_episode_run() {
        let env = make_linear_bandit(&[0.9, 0.4], &orthogonal_arms(2), 0.0).unwrap();
        let out = run_eleanor(&env, &EleanorConfig { episodes: 1, ..Default::default() }, 0).unwrap();
        assert_eq!(out.switches.deployments(), 1);
        assert_eq!(out.switches.replans(), 0);
    }

    #[test]
    fn noiseless_bandit_locks_in() {
        let env = make_linear_bandit(&[0.9, 0.4], &orthogonal_arms(2), 0.0).unwrap();
        let cfg = EleanorConfig { episodes: 3000, ..Default::default() };
        let out = run_eleanor(&env, &cfg, 11).unwrap();
        let inst = out.regret.instant();
        assert!(inst[2500..].iter().all(|&r| r == 0.0));
        assert!(out.switches.replans() <= out.budget.unwrap());
    }

    #[test]
    fn solver_horizon_mismatch_is_rejected() {
        let env = make_linear_bandit(&[0.9, 0.4], &orthogonal_arms(2), 0.0).unwrap();
        let cfg = EleanorConfig { solver: Solver::Alternating, episodes: 3, ..Default::default() };
        assert!(run_eleanor(&env, &cfg, 0).is_err());
        let env2 = two_layer_env();
        let cfg = EleanorConfig { solver: Solver::BanditExact, episodes: 3, ..Default::default() };
        assert!(run_eleanor(&env2, &cfg, 0).is_err());
    }
}
