//! Dense covariance accumulation for small feature dimensions.
//!
//! [`CovarianceAccumulator`] keeps `Σ = λI + Σ φφᵀ` together with its inverse
//! (rank-1 Sherman–Morrison updates, refreshed from a Cholesky factorization
//! every [`REFRESH_INTERVAL`] updates) and its natural log-determinant
//! (matrix determinant lemma). The log-determinant drives the doubling test
//! used by both learners.
//!
//! The module also carries the deterministic lemma oracles used by the
//! property suite: the determinant envelope, the determinant-ratio bound for
//! ordered PD matrices, and the elliptical potential bound.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Error, Result};

/// Number of rank-1 updates between full re-inversions.
pub const REFRESH_INTERVAL: usize = 256;

/// Largest supported feature dimension.
pub const MAX_DIM: usize = 64;

/// Tolerance on feature norms (`‖φ‖₂ ≤ 1 + NORM_TOL`).
pub const NORM_TOL: f64 = 1e-12;

/// Eigenvalue floor used when checking positive semi-definiteness.
pub const PSD_FLOOR: f64 = -1e-10;

/// `λI + Σ φφᵀ` with its inverse and log-determinant kept in sync.
#[derive(Clone, Debug)]
pub struct CovarianceAccumulator {
    dim: usize,
    ridge: f64,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    logdet: f64,
    count: usize,
}

impl CovarianceAccumulator {
    pub fn new(dim: usize, ridge: f64) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return invalid(format!("dimension must be in 1..={MAX_DIM}, got {dim}"));
        }
        if !(ridge > 0.0 && ridge.is_finite()) {
            return invalid(format!("ridge must be positive and finite, got {ridge}"));
        }
        Ok(Self {
            dim,
            ridge,
            matrix: DMatrix::identity(dim, dim) * ridge,
            inverse: DMatrix::identity(dim, dim) / ridge,
            logdet: dim as f64 * ridge.ln(),
            count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Natural log of `det Σ`.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Number of rank-1 updates applied so far.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds `φφᵀ` to the matrix.
    pub fn update(&mut self, phi: &DVector<f64>) -> Result<()> {
        self.check_dim(phi)?;
        let norm = phi.norm();
        if norm > 1.0 + NORM_TOL {
            return invalid(format!("feature norm {norm} exceeds 1"));
        }

        let inv_phi = &self.inverse * phi;
        let quad = phi.dot(&inv_phi).max(0.0);

        self.matrix.ger(1.0, phi, phi, 1.0);
        self.inverse.ger(-1.0 / (1.0 + quad), &inv_phi, &inv_phi, 1.0);
        self.logdet += quad.ln_1p();
        self.count += 1;

        if self.count % REFRESH_INTERVAL == 0 {
            self.refresh_inverse()?;
        } else {
            symmetrize(&mut self.inverse);
        }
        Ok(())
    }

    fn refresh_inverse(&mut self) -> Result<()> {
        let chol = self
            .matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Internal("covariance lost positive definiteness".into()))?;
        self.inverse = chol.inverse();
        symmetrize(&mut self.inverse);
        Ok(())
    }

    /// `‖x‖_{Σ⁻¹} = √(xᵀ Σ⁻¹ x)`.
    pub fn mahalanobis_inv(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(quad_form(&self.inverse, x).max(0.0).sqrt())
    }

    /// `‖x‖_Σ = √(xᵀ Σ x)`.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        Ok(quad_form(&self.matrix, x).max(0.0).sqrt())
    }

    /// Closed-form minimizer of `Σ (φᵀθ − y)² + λ‖θ‖²`.
    ///
    /// The target must list exactly the features this accumulator has seen.
    pub fn ridge_solve(&self, target: &RidgeTarget) -> Result<DVector<f64>> {
        if target.len() != self.count {
            return Err(Error::InvalidState(format!(
                "ridge target has {} samples but accumulator saw {}",
                target.len(),
                self.count
            )));
        }
        let mut moment = DVector::zeros(self.dim);
        for (phi, y) in target.features.iter().zip(&target.responses) {
            self.check_dim(phi)?;
            moment.axpy(*y, phi, 1.0);
        }
        Ok(&self.inverse * moment)
    }

    /// Checks `det Σ ≤ (λ + count/dim)^dim` in log space.
    pub fn within_determinant_envelope(&self) -> bool {
        let d = self.dim as f64;
        self.logdet <= d * (self.ridge + self.count as f64 / d).ln() + 1e-9
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return invalid(format!("expected a {}-vector, got length {}", self.dim, x.len()));
        }
        Ok(())
    }
}

/// Feature/response pairs for a ridge regression.
#[derive(Clone, Debug, Default)]
pub struct RidgeTarget {
    features: Vec<DVector<f64>>,
    responses: Vec<f64>,
}

impl RidgeTarget {
    pub fn new(features: Vec<DVector<f64>>, responses: Vec<f64>) -> Result<Self> {
        if features.len() != responses.len() {
            return invalid(format!(
                "{} features but {} responses",
                features.len(),
                responses.len()
            ));
        }
        if let Some(phi) = features.iter().find(|phi| phi.norm() > 1.0 + NORM_TOL) {
            return invalid(format!("feature norm {} exceeds 1", phi.norm()));
        }
        Ok(Self { features, responses })
    }

    pub fn push(&mut self, phi: DVector<f64>, response: f64) -> Result<()> {
        if phi.norm() > 1.0 + NORM_TOL {
            return invalid(format!("feature norm {} exceeds 1", phi.norm()));
        }
        self.features.push(phi);
        self.responses.push(response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }
}

/// True when `logdet` is at least `ln 2` above `baseline_logdet`.
///
/// Exact float comparison: landing on the boundary counts as doubled.
pub fn det_doubled(logdet: f64, baseline_logdet: f64) -> bool {
    logdet >= baseline_logdet + std::f64::consts::LN_2
}

/// Outcome of the elliptical potential check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialCheck {
    pub lhs: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Sums `‖φ_t‖²` under the running inverse covariance (starting from `I`)
/// and compares against `2d·ln(1 + T/d)`.
pub fn elliptical_potential_oracle(dim: usize, phis: &[DVector<f64>]) -> Result<PotentialCheck> {
    let mut acc = CovarianceAccumulator::new(dim, 1.0)?;
    let mut lhs = 0.0;
    for phi in phis {
        let m = acc.mahalanobis_inv(phi)?;
        lhs += m * m;
        acc.update(phi)?;
    }
    let d = dim as f64;
    let bound = 2.0 * d * (1.0 + phis.len() as f64 / d).ln();
    Ok(PotentialCheck {
        lhs,
        bound,
        ok: lhs <= bound,
    })
}

/// For PD `A ⪰ B`, checks `‖x‖²_A / ‖x‖²_B ≤ det A / det B`.
pub fn det_ratio_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>) -> Result<bool> {
    let d = a.nrows();
    if a.ncols() != d || b.shape() != (d, d) || x.len() != d {
        return invalid("det_ratio_oracle: shape mismatch");
    }
    let (Some(chol_a), Some(chol_b)) = (a.clone().cholesky(), b.clone().cholesky()) else {
        return invalid("det_ratio_oracle: matrices must be positive definite");
    };
    let diff = a - b;
    if min_eigenvalue(&diff) < PSD_FLOOR {
        return invalid("det_ratio_oracle: A - B is not positive semi-definite");
    }
    if x.iter().all(|v| *v == 0.0) {
        return Ok(true);
    }
    let ratio = quad_form(a, x) / quad_form(b, x);
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let det_ratio = (logdet(&chol_a.l()) - logdet(&chol_b.l())).exp();
    Ok(ratio <= det_ratio + 1e-9)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Max-abs entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
