use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eleanor::{EleanorConfig, Solver};
use crate::envs::{EnvDescriptor, EpisodicEnv};
use crate::error::{Error, Result};
use crate::glm_lsvi::{FitOptions, GlmConfig, LinkKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Eleanor,
    EleanorAlwaysSwitch,
    Glm,
    GlmAlwaysSwitch,
}

impl Algorithm {
    pub fn gated(self) -> bool {
        matches!(self, Algorithm::Eleanor | Algorithm::Glm)
    }

    pub fn is_glm(self) -> bool {
        matches!(self, Algorithm::Glm | Algorithm::GlmAlwaysSwitch)
    }

    /// The same learner with the gate toggled.
    pub fn counterpart(self) -> Self {
        match self {
            Algorithm::Eleanor => Algorithm::EleanorAlwaysSwitch,
            Algorithm::EleanorAlwaysSwitch => Algorithm::Eleanor,
            Algorithm::Glm => Algorithm::GlmAlwaysSwitch,
            Algorithm::GlmAlwaysSwitch => Algorithm::Glm,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Auto,
    BanditExact,
    Alternating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub restarts: usize,
    pub iters: usize,
    pub tol: f64,
    /// Overrides the environment's inherent Bellman error.
    pub ibe: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            restarts: 8,
            iters: 200,
            tol: 1e-8,
            ibe: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkOptions {
    pub kind: LinkKind,
    pub tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for LinkOptions {
    fn default() -> Self {
        let fit = FitOptions::default();
        Self {
            kind: LinkKind::Identity,
            tol: fit.tol,
            max_iters: fit.max_iters,
            restarts: fit.restarts,
        }
    }
}

fn default_delta() -> f64 {
    0.05
}

fn default_c() -> f64 {
    1.0
}

/// One experiment: a learner, an environment and a list of seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvDescriptor,
    pub algorithm: Algorithm,
    /// Number of episodes `K`.
    pub episodes: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub link: LinkOptions,
    #[serde(default = "default_c")]
    pub c: f64,
    /// Output directory; the CLI's `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(env: EnvDescriptor, algorithm: Algorithm, episodes: usize, seeds: Vec<u64>) -> Self {
        Self {
            env,
            algorithm,
            episodes,
            delta: default_delta(),
            seeds,
            solver: SolverOptions::default(),
            link: LinkOptions::default(),
            c: default_c(),
            output: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msgs) => Error::Config(msgs.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    /// Validates every field and builds the environment. All violations are
    /// reported together.
    pub fn validate(&self) -> Result<EpisodicEnv> {
        let mut errs = Vec::new();
        if self.seeds.is_empty() {
            errs.push("seeds: must be non-empty".to_string());
        }
        if self.episodes == 0 {
            errs.push("episodes: must be at least 1".to_string());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            errs.push(format!("delta: must be in (0, 1), got {}", self.delta));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            errs.push(format!("c: must be positive, got {}", self.c));
        }
        if !(self.solver.tol > 0.0) {
            errs.push(format!("solver.tol: must be positive, got {}", self.solver.tol));
        }
        if let Some(ibe) = self.solver.ibe {
            if !(ibe >= 0.0 && ibe.is_finite()) {
                errs.push(format!("solver.ibe: must be non-negative, got {ibe}"));
            }
        }
        if !(self.link.tol > 0.0) {
            errs.push(format!("link.tol: must be positive, got {}", self.link.tol));
        }
        if self.link.max_iters == 0 {
            errs.push("link.max_iters: must be at least 1".to_string());
        }
        let env = match self.env.build() {
            Ok(env) => Some(env),
            Err(e) => {
                errs.push(format!("env: {e}"));
                None
            }
        };
        if let Some(env) = &env {
            if self.algorithm.is_glm() {
                if env.dims().iter().any(|&d| d != env.dims()[0]) {
                    errs.push("env: the glm learners need one feature dimension on every layer".to_string());
                }
            } else {
                match (self.solver.kind, env.horizon()) {
                    (SolverKind::BanditExact, h) if h != 1 => {
                        errs.push(format!("solver.kind: bandit_exact needs horizon 1, env has {h}"))
                    }
                    (SolverKind::Alternating, 1) => {
                        errs.push("solver.kind: alternating needs horizon ≥ 2".to_string())
                    }
                    _ => {}
                }
            }
        }
        match env {
            Some(env) if errs.is_empty() => Ok(env),
            _ => Err(Error::Config(errs)),
        }
    }

    pub fn eleanor_config(&self) -> EleanorConfig {
        EleanorConfig {
            episodes: self.episodes,
            delta: self.delta,
            solver: match self.solver.kind {
                SolverKind::Auto => Solver::Auto,
                SolverKind::BanditExact => Solver::BanditExact,
                SolverKind::Alternating => Solver::Alternating,
            },
            restarts: self.solver.restarts,
            iters: self.solver.iters,
            tol: self.solver.tol,
            ibe: self.solver.ibe,
            gated: self.algorithm.gated(),
        }
    }

    pub fn glm_config(&self) -> GlmConfig {
        GlmConfig {
            episodes: self.episodes,
            delta: self.delta,
            link: self.link.kind,
            c: self.c,
            fit: FitOptions {
                tol: self.link.tol,
                max_iters: self.link.max_iters,
                restarts: self.link.restarts,
                ..FitOptions::default()
            },
            gated: self.algorithm.gated(),
        }
    }
}
