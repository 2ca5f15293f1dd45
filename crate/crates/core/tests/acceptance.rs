//! Acceptance criteria, one line per criterion.
//!
//! Run with `cargo test --release --test acceptance`; pass criterion numbers
//! after `--` to run a subset (e.g. `-- 3 4`).

use std::collections::BTreeSet;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use lowswitch::eleanor::{plan_bandit_exact, run_eleanor, EleanorConfig};
use lowswitch::envs::{
    self, hard_arm_count, hard_arm_of, make_linear_bandit, orthogonal_arms, EnvDescriptor, EpisodicEnv,
};
use lowswitch::glm_lsvi::{glm_fit, FitOptions, GlmConfig, LinkFunction, LinkKind, run_glm};
use lowswitch::harness::RunOutput;
use lowswitch::linalg::{max_abs_diff, CovarianceAccumulator, RidgeTarget};
use lowswitch::switching::switch_budget;

struct Outcome {
    pass: bool,
    detail: String,
}

fn onehot(states: usize, actions: usize, horizon: usize, seed: u64) -> EpisodicEnv {
    EnvDescriptor::Onehot {
        states,
        actions,
        horizon,
        table_seed: seed,
        reward_noise: 0.0,
    }
    .build()
    .unwrap()
}

fn hard(dims: Vec<usize>, seed: u64) -> EpisodicEnv {
    EnvDescriptor::Hard {
        dims,
        rewards: None,
        reward_seed: seed,
    }
    .build()
    .unwrap()
}

/// Value of the uniformly random policy at the initial state.
fn uniform_value(env: &EpisodicEnv) -> f64 {
    let mut next = vec![0.0; env.num_states()];
    for h in (0..env.horizon()).rev() {
        next = (0..env.num_states())
            .map(|s| {
                let n = env.num_actions(h, s);
                (0..n)
                    .map(|a| env.mean_reward(h, s, a) + env.expected_next(h, s, a, &next))
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
    }
    next[env.initial_state()]
}

fn eleanor(env: &EpisodicEnv, episodes: usize, seed: u64) -> RunOutput {
    run_eleanor(env, &EleanorConfig { episodes, ..Default::default() }, seed).unwrap()
}

fn glm(env: &EpisodicEnv, episodes: usize, gated: bool, seed: u64) -> RunOutput {
    let cfg = GlmConfig {
        episodes,
        gated,
        ..Default::default()
    };
    run_glm(env, &cfg, seed).unwrap()
}

fn sum(xs: &[usize]) -> usize {
    xs.iter().sum()
}

/// Criteria 1 and 2 share one sweep.
fn switching_sweep() -> (Outcome, Outcome) {
    let mut runs = 0;
    let mut over_budget = Vec::new();
    let mut growth_fail = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_growth = (0usize, 1usize);
    for horizon in 1..=3 {
        for d in [2usize, 4] {
            let (s, a) = if d == 2 { (1, 2) } else { (2, 2) };
            for seed in 0..5u64 {
                let mut envs = vec![("onehot", onehot(s, a, horizon, seed))];
                if d >= 3 {
                    envs.push(("hard", hard(vec![d; horizon], seed)));
                }
                for (family, env) in &envs {
                    let mut counts = Vec::new();
                    for k in [512usize, 4096] {
                        for (learner, out) in [("eleanor", eleanor(env, k, seed)), ("glm", glm(env, k, true, seed))] {
                            runs += 1;
                            let budget = switch_budget(env.dims(), k).unwrap();
                            worst_ratio = worst_ratio.max(out.replans() as f64 / budget as f64);
                            if out.n_switch() > budget || out.replans() > budget {
                                over_budget.push(format!("{learner}/{family} H={horizon} d={d} K={k} seed={seed}"));
                            }
                            counts.push((learner, out.n_switch()));
                        }
                    }
                    let total = sum(env.dims());
                    for learner in ["eleanor", "glm"] {
                        let n: Vec<usize> = counts.iter().filter(|c| c.0 == learner).map(|c| c.1).collect();
                        let growth = n[1].saturating_sub(n[0]);
                        if growth * worst_growth.1 >= worst_growth.0 * total {
                            worst_growth = (growth, total);
                        }
                        if growth > 3 * total {
                            growth_fail.push(format!(
                                "{learner}/{family} H={horizon} d={d} seed={seed}: {} → {} (3Σd = {})",
                                n[0],
                                n[1],
                                3 * total
                            ));
                        }
                    }
                }
            }
        }
    }
    let c1 = Outcome {
        pass: over_budget.is_empty(),
        detail: format!(
            "{runs} gated runs, {} over budget, max re-plans/budget = {worst_ratio:.3}{}",
            over_budget.len(),
            over_budget.first().map_or(String::new(), |f| format!(", first: {f}"))
        ),
    };
    let c2 = Outcome {
        pass: growth_fail.is_empty(),
        detail: format!(
            "{} violations, largest growth {} vs Σd = {}{}",
            growth_fail.len(),
            worst_growth.0,
            worst_growth.1,
            growth_fail.first().map_or(String::new(), |f| format!(", first: {f}"))
        ),
    };
    (c1, c2)
}

const GLM_SEEDS: u64 = 20;
const GLM_EPISODES: usize = 5000;

fn glm_env(seed: u64) -> EpisodicEnv {
    onehot(4, 3, 3, seed)
}

fn criterion3(gated: &[RunOutput]) -> Outcome {
    let k = GLM_EPISODES;
    let tenth = k / 10;
    let n = gated.len() as f64;
    let first: f64 = gated.iter().map(|r| r.regret.mean(0..tenth)).sum::<f64>() / n;
    let last: f64 = gated.iter().map(|r| r.regret.mean(k - tenth..k)).sum::<f64>() / n;
    let cum: f64 = gated.iter().map(|r| r.regret.cumulative_total()).sum::<f64>() / n;
    let uniform: f64 = gated
        .iter()
        .map(|r| {
            let env = glm_env(r.seed);
            (r.v_star - uniform_value(&env)) * (k / 4) as f64
        })
        .sum::<f64>()
        / n;
    let pass = last <= 0.5 * first && cum <= uniform;
    let optimism: f64 = gated.iter().map(|r| r.checks.optimistic_episodes as f64).sum::<f64>() / (n * k as f64);
    Outcome {
        pass,
        detail: format!(
            "mean regret first 10% {first:.4}, last 10% {last:.4} (ratio {:.3}, need ≤ 0.5); cum regret {cum:.1} vs uniform@K/4 {uniform:.1}; optimistic episodes {:.1}%",
            last / first,
            100.0 * optimism
        ),
    }
}

fn criterion4(gated: &[RunOutput], ungated: &[RunOutput]) -> Outcome {
    let n = gated.len() as f64;
    let rg: f64 = gated.iter().map(|r| r.regret.cumulative_total()).sum::<f64>() / n;
    let ru: f64 = ungated.iter().map(|r| r.regret.cumulative_total()).sum::<f64>() / n;
    let within_budget = gated.iter().all(|r| r.replans() <= r.budget.unwrap());
    let max_gated = gated.iter().map(RunOutput::n_switch).max().unwrap_or(0);
    let min_ungated = ungated.iter().map(RunOutput::n_switch).min().unwrap_or(0);
    let mean_gated = gated.iter().map(|r| r.n_switch() as f64).sum::<f64>() / n;
    let mean_ungated = ungated.iter().map(|r| r.n_switch() as f64).sum::<f64>() / n;
    let pass = rg <= 2.0 * ru && within_budget && mean_ungated >= 50.0 * mean_gated;
    Outcome {
        pass,
        detail: format!(
            "cum regret gated {rg:.1} vs ungated {ru:.1} (ratio {:.3}, need ≤ 2); N_switch gated mean {mean_gated:.1} max {max_gated}, ungated mean {mean_ungated:.1} min {min_ungated} (need ungated mean ≥ 50× gated mean); budget {}",
            rg / ru,
            gated[0].budget.unwrap()
        ),
    }
}

const BANDIT_THETA: [f64; 4] = [0.9, 0.5, 0.3, 0.1];

/// Maximizes `max_a φ_aᵀ(θ̂ + ξ)` over `‖ξ‖_Σ ≤ √α` by sampling the boundary
/// and refining each arm by projected ascent in whitened coordinates.
fn ellipsoid_oracle(arms: &[DVector<f64>], sigma: &DMatrix<f64>, theta_hat: &DVector<f64>, alpha: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let d = theta_hat.len();
    let l = sigma.clone().cholesky().unwrap().l();
    let lt = l.transpose();
    let r = alpha.sqrt();
    let value = |w: &DVector<f64>, arm: &DVector<f64>| {
        let xi = lt.solve_upper_triangular(w).unwrap();
        arm.dot(&(theta_hat + xi))
    };
    let mut best_w: Vec<(f64, DVector<f64>)> = vec![(f64::NEG_INFINITY, DVector::zeros(d)); arms.len()];
    let mut sampled = f64::NEG_INFINITY;
    for _ in 0..100_000 {
        let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(rng));
        let w = &z * (r / z.norm());
        for (i, arm) in arms.iter().enumerate() {
            let v = value(&w, arm);
            sampled = sampled.max(v);
            if v > best_w[i].0 {
                best_w[i] = (v, w.clone());
            }
        }
    }
    let mut refined = sampled;
    for (i, arm) in arms.iter().enumerate() {
        // gradient of the arm's value in whitened coordinates
        let c = l.solve_lower_triangular(arm).unwrap();
        if c.norm() == 0.0 {
            refined = refined.max(arm.dot(theta_hat));
            continue;
        }
        let mut w = best_w[i].1.clone();
        let step = 10.0 * r / c.norm();
        for _ in 0..500 {
            let next = &w + &c * step;
            let n = next.norm();
            w = next * (r / n);
        }
        refined = refined.max(value(&w, arm));
    }
    (sampled, refined)
}

fn criterion5() -> Outcome {
    let env = make_linear_bandit(&BANDIT_THETA, &orthogonal_arms(4), 0.0).unwrap();
    let best = envs::argmax(&BANDIT_THETA);
    let mut optimal = 0usize;
    let mut total = 0usize;
    for seed in 0..20 {
        let out = eleanor(&env, 10_000, seed);
        for t in &out.trajectories[9_000..] {
            total += 1;
            optimal += usize::from(t.steps[0].action == best);
        }
    }
    let share = optimal as f64 / total as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let arms: Vec<DVector<f64>> = orthogonal_arms(4).into_iter().map(DVector::from_vec).collect();
    let mut max_gap: f64 = 0.0;
    let mut sample_excess: f64 = f64::NEG_INFINITY;
    for _ in 0..100 {
        let mut acc = CovarianceAccumulator::new(4, 1.0).unwrap();
        let mut target = RidgeTarget::default();
        for _ in 0..rng.random_range(0..200) {
            let a = rng.random_range(0..4);
            acc.update(&arms[a]).unwrap();
            target.push(arms[a].clone(), BANDIT_THETA[a]).unwrap();
        }
        let theta_hat = acc.ridge_solve(&target).unwrap();
        let alpha = rng.random_range(0.01..200.0);
        let plan = plan_bandit_exact(&arms, &acc, &theta_hat, alpha).unwrap();
        let (sampled, refined) = ellipsoid_oracle(&arms, acc.matrix(), &theta_hat, alpha, &mut rng);
        max_gap = max_gap.max((plan.objective - refined).abs());
        sample_excess = sample_excess.max(sampled - plan.objective);
    }
    let pass = share >= 0.99 && max_gap <= 1e-6 && sample_excess <= 1e-9;
    Outcome {
        pass,
        detail: format!(
            "optimal arm in {:.2}% of the last 1000 episodes (20 seeds); planner vs oracle max gap {max_gap:.2e}; best sample exceeds planner by {sample_excess:.2e}",
            100.0 * share
        ),
    }
}

fn criterion6() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_lowswitch"))
        .args(["lemmas", "--trials", "1000", "--seed", "0"])
        .output()
        .expect("lowswitch binary runs");
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let last = text.lines().last().unwrap_or("").to_string();
    let rate: f64 = text
        .lines()
        .find(|l| l.starts_with("azuma"))
        .and_then(|l| l.split("pass rate ").nth(1))
        .and_then(|r| r.split_whitespace().next())
        .and_then(|r| r.parse().ok())
        .unwrap_or(f64::NAN);
    let violations_ok = last.starts_with("0 violations / ")
        && last
            .trim_start_matches("0 violations / ")
            .trim_end_matches(" trials")
            .parse::<usize>()
            .is_ok_and(|n| n >= 3000);
    let pass = out.status.success() && violations_ok && (0.93..=1.0).contains(&rate);
    Outcome {
        pass,
        detail: format!("\"{last}\", azuma pass rate {rate:.3}"),
    }
}

fn random_arm_bandit(seed: u64) -> EpisodicEnv {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let d = 3;
    let arms: Vec<Vec<f64>> = (0..6)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let theta: Vec<f64> = {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| 0.95 * x / n).collect()
    };
    make_linear_bandit(&theta, &arms, 0.0).unwrap()
}

fn criterion7() -> Outcome {
    let k = 2000;
    let mut ok = 0usize;
    let mut total = 0usize;
    let orthogonal = make_linear_bandit(&BANDIT_THETA, &orthogonal_arms(4), 0.0).unwrap();
    for seed in 0..20 {
        for env in [&orthogonal, &random_arm_bandit(seed)] {
            let out = eleanor(env, k, seed);
            ok += out.checks.bellman_ok_episodes.unwrap();
            total += k;
        }
    }
    let share = ok as f64 / total as f64;
    Outcome {
        pass: share >= 0.95,
        detail: format!("envelope held in {:.2}% of {total} episodes (40 runs)", 100.0 * share),
    }
}

fn criterion8() -> Outcome {
    let dims = vec![5usize; 4];
    let arms = hard_arm_count(&dims);
    let k = 4000;
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for seed in 0..5 {
        let env = hard(dims.clone(), seed);
        let out = glm(&env, k, true, seed);
        let played: BTreeSet<(usize, usize)> = out.trajectories.iter().filter_map(hard_arm_of).collect();
        let budget = out.budget.unwrap();
        let tail = out.regret.mean(k - 1000..k);
        let ok = played.len() == arms
            && out.n_switch() + 1 >= played.len()
            && out.replans() <= budget
            && tail < 0.05;
        details.push(format!("seed {seed}: arms {}/{arms}, N_switch {}, tail regret {tail:.4}", played.len(), out.n_switch()));
        if !ok {
            failures.push(seed);
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!("budget {}; {}", switch_budget(&dims, k).unwrap(), details.join("; ")),
    }
}

fn criterion9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut inv_err: f64 = 0.0;
    for _ in 0..5 {
        let d = rng.random_range(1..=8);
        let mut acc = CovarianceAccumulator::new(d, 1.0).unwrap();
        for _ in 0..10_000 {
            let v = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let r: f64 = rng.random();
            acc.update(&(&v * (r / v.norm()))).unwrap();
        }
        let direct = acc.matrix().clone().try_inverse().unwrap();
        inv_err = inv_err.max(max_abs_diff(acc.inverse(), &direct));
    }

    let mut ridge_err: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..=8);
        let mut acc = CovarianceAccumulator::new(d, 1.0).unwrap();
        let mut target = RidgeTarget::default();
        let mut gram = DMatrix::<f64>::identity(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for _ in 0..rng.random_range(1..500) {
            let v = DVector::<f64>::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let phi = &v / v.norm().max(1.0);
            let y = rng.random_range(-1.0..2.0);
            acc.update(&phi).unwrap();
            gram += &phi * phi.transpose();
            rhs += &phi * y;
            target.push(phi, y).unwrap();
        }
        let oracle = gram.lu().solve(&rhs).unwrap();
        ridge_err = ridge_err.max((acc.ridge_solve(&target).unwrap() - oracle).amax());
    }

    let mut fit_err: f64 = 0.0;
    let link = LinkFunction::new(LinkKind::Identity);
    for _ in 0..20 {
        let d = rng.random_range(1..=6);
        let theta: DVector<f64> = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)) * 0.3 / (d as f64).sqrt();
        let feats: Vec<DVector<f64>> = (0..200)
            .map(|_| {
                let v = DVector::<f64>::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
                &v / v.norm().max(1.0)
            })
            .collect();
        let ys: Vec<f64> = feats.iter().map(|p| p.dot(&theta) + rng.random_range(-0.05..0.05)).collect();
        let mut gram = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for (p, y) in feats.iter().zip(&ys) {
            gram += p * p.transpose();
            rhs += p * *y;
        }
        let direct = gram.lu().solve(&rhs).unwrap();
        if direct.norm() >= 1.0 {
            continue;
        }
        let fit = glm_fit(&feats, &ys, &link, &FitOptions::default(), &mut rng).unwrap();
        fit_err = fit_err.max((fit.theta - direct).amax());
    }
    Outcome {
        pass: inv_err <= 1e-8 && ridge_err <= 1e-10 && fit_err <= 1e-6,
        detail: format!("inverse {inv_err:.2e} (≤ 1e-8), ridge {ridge_err:.2e} (≤ 1e-10), glm fit {fit_err:.2e} (≤ 1e-6)"),
    }
}

fn report(n: usize, name: &str, budget: Duration, started: Instant, outcome: Outcome) -> bool {
    let elapsed = started.elapsed();
    let in_time = elapsed <= budget;
    let pass = outcome.pass && in_time;
    println!(
        "criterion {n} [{name}]: {} ({:.1}s of {}s) {}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs(),
        outcome.detail
    );
    pass
}

fn main() -> ExitCode {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut all = true;

    if run(1) || run(2) {
        let t = Instant::now();
        let (c1, c2) = switching_sweep();
        let elapsed = t.elapsed();
        all &= report(1, "switching budget", Duration::from_secs(120), Instant::now() - elapsed, c1);
        all &= report(2, "logarithmic growth", Duration::from_secs(120), Instant::now() - elapsed, c2);
    }
    if run(3) || run(4) {
        let t = Instant::now();
        let gated: Vec<RunOutput> = (0..GLM_SEEDS).map(|s| glm(&glm_env(s), GLM_EPISODES, true, s)).collect();
        let gated_time = t.elapsed();
        if run(3) {
            all &= report(3, "glm sublinear regret", Duration::from_secs(300), Instant::now() - gated_time, criterion3(&gated));
        }
        if run(4) {
            let ungated: Vec<RunOutput> = (0..GLM_SEEDS).map(|s| glm(&glm_env(s), GLM_EPISODES, false, s)).collect();
            all &= report(4, "low-switching parity", Duration::from_secs(600), t, criterion4(&gated, &ungated));
        }
    }
    let singles: [(usize, &str, u64, fn() -> Outcome); 5] = [
        (5, "bandit exact planner", 120, criterion5),
        (6, "lemma suite", 60, criterion6),
        (7, "bellman envelope", 120, criterion7),
        (8, "hard instance", 180, criterion8),
        (9, "numerical core", 60, criterion9),
    ];
    for (n, name, secs, f) in singles {
        if run(n) {
            let t = Instant::now();
            let outcome = f();
            all &= report(n, name, Duration::from_secs(secs), t, outcome);
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
