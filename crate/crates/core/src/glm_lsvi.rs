//! Low-switching LSVI-UCB with generalized linear Q-functions.
//!
//! At every policy update the learner fits, from the last layer backwards,
//! `θ_h = argmin_{‖θ‖₂ ≤ 1} Σ (f(φᵀθ) − r − max_a' Q_{h+1}(s', a'))²` and
//! builds the clipped optimistic value
//! `Q_h(s, a) = min{1, f(φᵀθ_h) + γ‖φ‖_{Σ_h⁻¹}}`. The bonus uses the ridged
//! covariance frozen at the update; the fit itself has no ridge term.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{self, argmax, EpisodicEnv, TabularPolicy};
use crate::error::{invalid, Error, Result};
use crate::harness::{EpisodeRow, RegretRecord, RunChecks, RunOutput, SwitchDiagnostics};
use crate::history::History;
use crate::linalg::quad_form;
use crate::rng::{self, Purpose};
use crate::switching::{switch_budget, SwitchController};

/// Grid size used to certify link-function constants on `[-1, 1]`.
pub const LINK_GRID: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Identity,
    Logistic,
}

/// A monotone link `f` with `κ₁ ≤ |f′| ≤ κ₂` and `|f″| ≤ M` on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkFunction {
    kind: LinkKind,
    kappa1: f64,
    kappa2: f64,
    m: f64,
}

fn grid() -> impl Iterator<Item = f64> {
    (0..LINK_GRID).map(|i| -1.0 + 2.0 * i as f64 / (LINK_GRID - 1) as f64)
}

impl LinkFunction {
    /// Builds the link and measures its constants on the grid.
    pub fn new(kind: LinkKind) -> Self {
        let mut link = Self {
            kind,
            kappa1: f64::INFINITY,
            kappa2: 0.0,
            m: 0.0,
        };
        for z in grid() {
            let d1 = link.fprime(z).abs();
            link.kappa1 = link.kappa1.min(d1);
            link.kappa2 = link.kappa2.max(d1);
            link.m = link.m.max(link.fsecond(z).abs());
        }
        link
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    pub fn kappa1(&self) -> f64 {
        self.kappa1
    }

    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn curvature_bound(&self) -> f64 {
        self.m
    }

    pub fn f(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => z,
            LinkKind::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    pub fn fprime(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 1.0,
            LinkKind::Logistic => {
                let s = self.f(z);
                s * (1.0 - s)
            }
        }
    }

    pub fn fsecond(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Identity => 0.0,
            LinkKind::Logistic => {
                let s = self.f(z);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }

    /// Re-checks monotonicity and the derivative bounds on the grid.
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa1 > 0.0 && self.kappa1 <= self.kappa2 && self.kappa2.is_finite() && self.m.is_finite()) {
            return invalid(format!(
                "link constants invalid: κ₁={}, κ₂={}, M={}",
                self.kappa1, self.kappa2, self.m
            ));
        }
        let sign = self.fprime(0.0).signum();
        for z in grid() {
            let d1 = self.fprime(z);
            if d1.signum() != sign {
                return invalid(format!("link is not monotone near z={z}"));
            }
            let a = d1.abs();
            if a < self.kappa1 - 1e-15 || a > self.kappa2 + 1e-15 || self.fsecond(z).abs() > self.m + 1e-15 {
                return invalid(format!("link derivative bounds violated at z={z}"));
            }
        }
        Ok(())
    }
}

/// `Γ = d·ln(1 + K)`.
pub fn gamma_cap(dim: usize, episodes: f64) -> f64 {
    dim as f64 * episodes.ln_1p()
}

/// `γ = C κ₂/κ₁ √(1 + M + κ₂ + d² ln((1 + κ₂ + Γ)/δ))`.
pub fn gamma_value(dim: usize, episodes: f64, delta: f64, link: &LinkFunction, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return invalid(format!("C must be positive, got {c}"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return invalid(format!("δ must be in (0, 1], got {delta}"));
    }
    let big_gamma = gamma_cap(dim, episodes);
    let d = dim as f64;
    let k2 = link.kappa2();
    let inner = 1.0 + link.curvature_bound() + k2 + d * d * ((1.0 + k2 + big_gamma) / delta).ln();
    Ok(c * k2 / link.kappa1() * inner.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Stop once `‖θ − P(θ − ∇L)‖ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Random unit-ball starts added to the zero start for non-identity links.
    pub restarts: usize,
    pub armijo: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            restarts: 4,
            armijo: 1e-4,
        }
    }
}

/// Samples sharing one feature vector: `weight` copies with response sum
/// `target_sum` and squared-response sum `target_sq_sum`.
#[derive(Clone, Debug)]
pub struct FitGroup {
    pub phi: DVector<f64>,
    pub weight: f64,
    pub target_sum: f64,
    pub target_sq_sum: f64,
}

#[derive(Clone, Debug)]
pub struct GlmFit {
    pub theta: DVector<f64>,
    pub loss: f64,
    pub iterations: usize,
    /// 0 for the zero start, `i` for the `i`-th random start.
    pub restart: usize,
    /// Loss after each accepted iterate of the chosen start.
    pub trace: Vec<f64>,
}

fn project_unit_ball(theta: &mut DVector<f64>) {
    let n = theta.norm();
    if n > 1.0 {
        *theta /= n;
    }
}

fn grouped_loss(groups: &[FitGroup], link: &LinkFunction, theta: &DVector<f64>) -> f64 {
    groups
        .iter()
        .map(|g| {
            let fz = link.f(g.phi.dot(theta));
            g.weight * fz * fz - 2.0 * fz * g.target_sum + g.target_sq_sum
        })
        .sum()
}

fn grouped_grad(groups: &[FitGroup], link: &LinkFunction, theta: &DVector<f64>) -> DVector<f64> {
    let mut grad = DVector::zeros(theta.len());
    for g in groups {
        let z = g.phi.dot(theta);
        let coef = 2.0 * (g.weight * link.f(z) - g.target_sum) * link.fprime(z);
        grad.axpy(coef, &g.phi, 1.0);
    }
    grad
}

/// Projected gradient descent from one start. Steps use a Barzilai–Borwein
/// trial length, halved until the Armijo condition holds along the
/// projection arc, so the loss never increases.
fn descend(
    groups: &[FitGroup],
    link: &LinkFunction,
    opts: &FitOptions,
    mut theta: DVector<f64>,
) -> Result<(DVector<f64>, f64, usize, Vec<f64>)> {
    project_unit_ball(&mut theta);
    let mut loss = grouped_loss(groups, link, &theta);
    let mut grad = grouped_grad(groups, link, &theta);
    let curvature: f64 = groups
        .iter()
        .map(|g| 2.0 * g.weight * link.kappa2() * link.kappa2() * g.phi.norm_squared())
        .sum();
    let mut step = if curvature > 0.0 { 1.0 / curvature } else { 1.0 };
    let mut trace = vec![loss];
    let mut iters = 0;
    while iters < opts.max_iters {
        if !loss.is_finite() {
            return Err(Error::Internal("GLM loss is not finite".into()));
        }
        let mut probe = &theta - &grad;
        project_unit_ball(&mut probe);
        if (&theta - &probe).norm() <= opts.tol {
            break;
        }
        iters += 1;
        let mut accepted = None;
        let mut t = step;
        while t > 1e-300 {
            let mut cand = &theta - &grad * t;
            project_unit_ball(&mut cand);
            let cand_loss = grouped_loss(groups, link, &cand);
            if cand_loss <= loss + opts.armijo * grad.dot(&(&cand - &theta)) {
                accepted = Some((cand, cand_loss));
                break;
            }
            t *= 0.5;
        }
        let Some((next, next_loss)) = accepted else {
            break;
        };
        let next_grad = grouped_grad(groups, link, &next);
        let s = &next - &theta;
        let y = &next_grad - &grad;
        let sy = s.dot(&y);
        step = if sy > 0.0 { s.norm_squared() / sy } else { t * 2.0 };
        let moved = s.norm();
        theta = next;
        grad = next_grad;
        loss = next_loss;
        trace.push(loss);
        if moved == 0.0 {
            break;
        }
    }
    Ok((theta, loss, iters, trace))
}

/// Constrained least squares over grouped samples.
pub fn glm_fit_grouped(
    groups: &[FitGroup],
    dim: usize,
    link: &LinkFunction,
    opts: &FitOptions,
    rng: &mut impl Rng,
) -> Result<GlmFit> {
    if groups.iter().any(|g| g.phi.len() != dim) {
        return invalid("feature dimension mismatch in GLM fit");
    }
    let mut starts = vec![DVector::zeros(dim)];
    if link.kind() != LinkKind::Identity {
        for _ in 0..opts.restarts {
            let dir = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
            let radius: f64 = rng.random::<f64>().powf(1.0 / dim as f64);
            let n = dir.norm();
            starts.push(if n > 0.0 { dir * (radius / n) } else { dir });
        }
    }
    let mut best: Option<GlmFit> = None;
    for (restart, start) in starts.into_iter().enumerate() {
        let (theta, loss, iterations, trace) = descend(groups, link, opts, start)?;
        let better = match &best {
            None => true,
            Some(b) => loss < b.loss - 1e-9 * (1.0 + b.loss.abs()),
        };
        if better {
            best = Some(GlmFit {
                theta,
                loss,
                iterations,
                restart,
                trace,
            });
        }
    }
    best.ok_or_else(|| Error::Internal("no GLM start evaluated".into()))
}

/// `argmin_{‖θ‖₂ ≤ 1} Σ (f(φᵀθ) − y)²` over individual samples.
pub fn glm_fit(
    features: &[DVector<f64>],
    targets: &[f64],
    link: &LinkFunction,
    opts: &FitOptions,
    rng: &mut impl Rng,
) -> Result<GlmFit> {
    if features.len() != targets.len() {
        return invalid("features and targets differ in length");
    }
    let dim = match features.first() {
        Some(phi) => phi.len(),
        None => return Ok(GlmFit {
            theta: DVector::zeros(0),
            loss: 0.0,
            iterations: 0,
            restart: 0,
            trace: vec![0.0],
        }),
    };
    let groups: Vec<FitGroup> = features
        .iter()
        .zip(targets)
        .map(|(phi, &y)| FitGroup {
            phi: phi.clone(),
            weight: 1.0,
            target_sum: y,
            target_sq_sum: y * y,
        })
        .collect();
    glm_fit_grouped(&groups, dim, link, opts, rng)
}

/// Fitted parameters and frozen bonus geometry of one policy update.
#[derive(Clone, Debug)]
pub struct GlmPlan {
    pub thetas: Vec<DVector<f64>>,
    pub gamma: f64,
    /// `Σ_h⁻¹` at the update episode.
    pub inverses: Vec<DMatrix<f64>>,
    pub link: LinkFunction,
}

impl GlmPlan {
    pub fn bonus(&self, h: usize, phi: &DVector<f64>) -> f64 {
        self.gamma * quad_form(&self.inverses[h], phi).max(0.0).sqrt()
    }
}

/// `min{1, f(φᵀθ_h) + γ‖φ‖_{Σ_h⁻¹}}`.
pub fn q_value(plan: &GlmPlan, h: usize, phi: &DVector<f64>) -> f64 {
    let est = plan.link.f(phi.dot(&plan.thetas[h]));
    (est + plan.bonus(h, phi)).min(1.0)
}

/// `Q_h(s, ·)` for every state of `env` at layer `h`.
pub fn q_table(plan: &GlmPlan, env: &EpisodicEnv, h: usize) -> Vec<Vec<f64>> {
    (0..env.num_states())
        .map(|s| {
            env.features()
                .actions_at(h, s)
                .iter()
                .map(|phi| q_value(plan, h, phi))
                .collect()
        })
        .collect()
}

pub fn greedy_policy(plan: &GlmPlan, env: &EpisodicEnv) -> TabularPolicy {
    TabularPolicy::new(
        (0..env.horizon())
            .map(|h| q_table(plan, env, h).iter().map(|row| argmax(row)).collect())
            .collect(),
    )
}

/// Fit groups of layer `h` with responses `r + max_a' Q_{h+1}(s', a')`.
pub fn layer_groups(env: &EpisodicEnv, history: &History, h: usize, next_values: Option<&[f64]>) -> Vec<FitGroup> {
    history
        .layer(h)
        .pairs()
        .iter()
        .map(|(&(s, a), stats)| {
            let (target_sum, target_sq_sum) = stats.response_moments(next_values);
            FitGroup {
                phi: env.feature(h, s, a).clone(),
                weight: stats.count as f64,
                target_sum,
                target_sq_sum,
            }
        })
        .collect()
}

/// Backward pass `h = H, …, 1` of constrained fits.
pub fn backward_solve(
    env: &EpisodicEnv,
    history: &History,
    link: &LinkFunction,
    gamma: f64,
    opts: &FitOptions,
    rng: &mut impl Rng,
) -> Result<(GlmPlan, Vec<GlmFit>)> {
    let horizon = env.horizon();
    let mut plan = GlmPlan {
        thetas: vec![DVector::zeros(0); horizon],
        gamma,
        inverses: history.accs().iter().map(|a| a.inverse().clone()).collect(),
        link: link.clone(),
    };
    let mut fits: Vec<Option<GlmFit>> = vec![None; horizon];
    let mut next_values: Option<Vec<f64>> = None;
    for h in (0..horizon).rev() {
        let groups = layer_groups(env, history, h, next_values.as_deref());
        let fit = glm_fit_grouped(&groups, env.dims()[h], link, opts, rng)?;
        plan.thetas[h] = fit.theta.clone();
        fits[h] = Some(fit);
        next_values = Some(
            q_table(&plan, env, h)
                .iter()
                .map(|row| envs::max_value(row))
                .collect(),
        );
    }
    Ok((plan, fits.into_iter().map(|f| f.expect("every layer fitted")).collect()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlmConfig {
    pub episodes: usize,
    pub delta: f64,
    pub link: LinkKind,
    pub c: f64,
    pub fit: FitOptions,
    /// `false` recomputes the policy every episode.
    pub gated: bool,
}

impl Default for GlmConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            delta: 0.05,
            link: LinkKind::Identity,
            c: 1.0,
            fit: FitOptions::default(),
            gated: true,
        }
    }
}

/// Runs the learner for `cfg.episodes` episodes on `env` with seed `seed`.
pub fn run_glm(env: &EpisodicEnv, cfg: &GlmConfig, seed: u64) -> Result<RunOutput> {
    let dims = env.dims();
    let dim = dims[0];
    if dims.iter().any(|&d| d != dim) {
        return invalid("the GLM learner needs one feature dimension on every layer");
    }
    if cfg.episodes == 0 {
        return invalid("episodes must be positive");
    }
    let link = LinkFunction::new(cfg.link);
    link.validate()?;
    let gamma = gamma_value(dim, cfg.episodes as f64, cfg.delta, &link, cfg.c)?;
    let horizon = env.horizon();

    let q_star = envs::optimal_q(env);
    let v_star = envs::max_value(&q_star[0][env.initial_state()]);
    let best_first = argmax(&q_star[0][env.initial_state()]);

    let mut history = History::new(env, 1.0)?;
    let mut ctrl = SwitchController::new(dims, 1.0)?;
    let mut regret = RegretRecord::default();
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut trajectories = Vec::with_capacity(cfg.episodes);
    let mut diagnostics = Vec::new();
    let mut current: Option<(GlmPlan, TabularPolicy, f64, bool)> = None;
    let mut optimistic_episodes = 0;
    let mut bonus_sum = 0.0;
    let mut policy_changes = 0;

    for k in 1..=cfg.episodes {
        let logdets = history.logdets();
        let switched = k == 1 || !cfg.gated || ctrl.should_switch(&logdets)?;
        if switched {
            let mut fit_rng = rng::stream(seed, k as u64, 0, Purpose::Fit);
            let (plan, fits) = backward_solve(env, &history, &link, gamma, &cfg.fit, &mut fit_rng)?;
            let policy = greedy_policy(&plan, env);
            let value = envs::policy_value(env, &policy)?;
            let q1 = q_table(&plan, env, 0);
            let planned_value = envs::max_value(&q1[env.initial_state()]);
            let optimistic = q1[env.initial_state()][best_first] >= q_star[0][env.initial_state()][best_first];
            ctrl.record_switch(k, &logdets)?;
            diagnostics.push(SwitchDiagnostics {
                episode: k,
                planned_value,
                optimistic,
                xi_norms: Vec::new(),
                alphas: Vec::new(),
                gamma: Some(gamma),
                restarts: 1 + if link.kind() == LinkKind::Identity { 0 } else { cfg.fit.restarts },
                degraded: false,
                bellman_ok: None,
                fit_losses: fits.iter().map(|f| f.loss).collect(),
                fit_iterations: fits.iter().map(|f| f.iterations).collect(),
                fit_restarts: fits.iter().map(|f| f.restart).collect(),
                policy: policy.clone(),
            });
            if current.as_ref().is_some_and(|c| c.1 != policy) {
                policy_changes += 1;
            }
            current = Some((plan, policy, value, optimistic));
        }
        let (plan, policy, value, optimistic) = current.as_ref().expect("policy deployed at episode 1");
        if *optimistic {
            optimistic_episodes += 1;
        }
        let mut step_rng = rng::stream(seed, k as u64, 0, Purpose::Transition);
        let traj = envs::run_policy(env, policy, &mut step_rng)?;
        for step in &traj.steps {
            bonus_sum += plan.bonus(step.layer, env.feature(step.layer, step.state, step.action));
        }
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

    let k = cfg.episodes as f64;
    let bonus_bound = horizon as f64 * gamma * (4.0 * k * dim as f64 * k.ln_1p()).sqrt();
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
            bellman_ok_episodes: None,
            bonus_sum: Some(bonus_sum),
            bonus_bound: Some(bonus_bound),
        },
    })
}
