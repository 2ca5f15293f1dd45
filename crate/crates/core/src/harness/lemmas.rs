use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg::{det_ratio_oracle, elliptical_potential_oracle, CovarianceAccumulator};
use crate::rng::{self, Purpose};

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub violations: usize,
    /// Debug dump of the first failing instance.
    pub first_violation: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AzumaOutcome {
    pub trials: usize,
    pub n: usize,
    pub delta: f64,
    pub passes: usize,
    pub rate: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaReport {
    pub lemmas: Vec<LemmaOutcome>,
    pub azuma: AzumaOutcome,
}

impl LemmaReport {
    pub fn deterministic_trials(&self) -> usize {
        self.lemmas.iter().map(|l| l.trials).sum()
    }

    pub fn violations(&self) -> usize {
        self.lemmas.iter().map(|l| l.violations).sum()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0 && self.azuma.ok
    }
}

impl fmt::Display for LemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lemmas {
            writeln!(f, "{}: {} violations / {} trials", l.name, l.violations, l.trials)?;
            if let Some(v) = &l.first_violation {
                writeln!(f, "  first violation: {v}")?;
            }
        }
        writeln!(
            f,
            "azuma (n={}, delta={}): pass rate {:.4} over {} trials [{}]",
            self.azuma.n,
            self.azuma.delta,
            self.azuma.rate,
            self.azuma.trials,
            if self.azuma.ok { "ok" } else { "out of band" }
        )?;
        write!(f, "{} violations / {} trials", self.violations(), self.deterministic_trials())
    }
}

fn ball_vector(rng: &mut impl Rng, d: usize) -> DVector<f64> {
    let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
    let r: f64 = rng.random::<f64>().powf(1.0 / d as f64);
    let n = v.norm();
    if n > 0.0 {
        v * (r / n)
    } else {
        v
    }
}

fn run_lemma(name: &'static str, trials: usize, seed: u64, tag: u64, mut trial: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> Result<Option<String>>) -> Result<LemmaOutcome> {
    let mut violations = 0;
    let mut first_violation = None;
    for t in 0..trials {
        let mut rng = rng::stream(seed, tag, t as u64, Purpose::Lemma);
        if let Some(instance) = trial(&mut rng)? {
            violations += 1;
            first_violation.get_or_insert(instance);
        }
    }
    Ok(LemmaOutcome {
        name,
        trials,
        violations,
        first_violation,
    })
}

/// Randomized checks of the determinant envelope, the determinant-ratio
/// inequality and the elliptical potential lemma, plus an empirical
/// Azuma–Hoeffding coverage rate.
pub fn lemma_suite(trials: usize, seed: u64) -> Result<LemmaReport> {
    let envelope = run_lemma("determinant envelope", trials, seed, 1, |rng| {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=200);
        let mut acc = CovarianceAccumulator::new(d, 1.0)?;
        let mut phis = Vec::with_capacity(n);
        for _ in 0..n {
            let phi = ball_vector(rng, d);
            acc.update(&phi)?;
            phis.push(phi);
            if !acc.within_determinant_envelope() {
                return Ok(Some(format!("d={d}, phis={:?}", phis.iter().map(|p| p.as_slice().to_vec()).collect::<Vec<_>>())));
            }
        }
        Ok(None)
    })?;

    let ratio = run_lemma("determinant ratio", trials, seed, 2, |rng| {
        let d = rng.random_range(1..=8);
        let mut b = DMatrix::<f64>::identity(d, d);
        for _ in 0..rng.random_range(0..=30) {
            let phi = ball_vector(rng, d);
            b += &phi * phi.transpose();
        }
        let mut a = b.clone();
        for _ in 0..rng.random_range(0..=30) {
            let phi = ball_vector(rng, d);
            a += &phi * phi.transpose();
        }
        let x = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        Ok((!det_ratio_oracle(&a, &b, &x)?).then(|| format!("A={a:?}, B={b:?}, x={:?}", x.as_slice())))
    })?;

    let potential = run_lemma("elliptical potential", trials, seed, 3, |rng| {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=300);
        let phis: Vec<DVector<f64>> = (0..n).map(|_| ball_vector(rng, d)).collect();
        let check = elliptical_potential_oracle(d, &phis)?;
        Ok((!check.ok).then(|| format!("d={d}, lhs={}, bound={}, phis={:?}", check.lhs, check.bound, phis.iter().map(|p| p.as_slice().to_vec()).collect::<Vec<_>>())))
    })?;

    let n = 1000;
    let delta: f64 = 0.05;
    let azuma_trials = 1000;
    let bound = (2.0 * n as f64 * (1.0 / delta).ln()).sqrt();
    let mut passes = 0;
    for t in 0..azuma_trials {
        let mut rng = rng::stream(seed, 4, t as u64, Purpose::Lemma);
        let sum: f64 = (0..n).map(|_| rng.random_range(-1.0..=1.0)).sum();
        passes += usize::from(sum.abs() <= bound);
    }
    let rate = passes as f64 / azuma_trials as f64;
    Ok(LemmaReport {
        lemmas: vec![envelope, ratio, potential],
        azuma: AzumaOutcome {
            trials: azuma_trials,
            n,
            delta,
            passes,
            rate,
            ok: (1.0 - delta - 0.02..=1.0).contains(&rate),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_is_reproducible() {
        let a = lemma_suite(50, 7).unwrap();
        let b = lemma_suite(50, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.passed(), "{a}");
        assert_eq!(a.deterministic_trials(), 150);
        assert!(a.to_string().ends_with("0 violations / 150 trials"));
    }
}
