//! Distribution of the quadratic form `xᵀQx` for bivariate Gaussian `x`:
//! spectral decomposition, Imhof characteristic-function inversion and the
//! Liu–Tang–Zhang noncentral chi-square approximation.

mod imhof;
mod ltz;
pub mod special;

pub use imhof::{imhof_cdf, IMHOF_MAX_EVALS};
pub use ltz::{ltz_cdf, LTZ_SYMMETRY_EPS};
pub use special::noncentral_chi2_cdf;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use thiserror::Error;

use crate::scenario::{Ellipsoid, GaussianComponent2, Mixture2};

/// Covariance eigenvalues below this are treated as exactly zero.
pub const DEGENERATE_EIG: f64 = 1e-12;

/// Clamping beyond this magnitude is reported instead of silently applied.
pub const CLAMP_FLAG_TOL: f64 = 1e-8;

/// Default Imhof tolerance used as ground truth and as the LTZ fallback.
pub const GROUND_TRUTH_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QfError {
    #[error("covariance is degenerate in every direction")]
    DegenerateCovariance,
    #[error("Imhof integration did not reach tolerance within {evaluations} evaluations (error estimate {error:e})")]
    Convergence { evaluations: usize, error: f64 },
    #[error("LTZ skewness {s1:e} too small; use Imhof")]
    FallbackToImhof { s1: f64 },
    #[error("invalid argument: {0}")]
    Param(String),
}

/// `Q(x) =ᵈ Σ_j λ_j (z_j + δ_j)² + offset` with `z_j` iid standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadFormSpectrum {
    lambdas: Vec<f64>,
    deltas: Vec<f64>,
    offset: f64,
}

impl QuadFormSpectrum {
    pub fn new(lambdas: Vec<f64>, deltas: Vec<f64>) -> Result<Self, QfError> {
        Self::with_offset(lambdas, deltas, 0.0)
    }

    pub fn with_offset(lambdas: Vec<f64>, deltas: Vec<f64>, offset: f64) -> Result<Self, QfError> {
        if lambdas.is_empty() || lambdas.len() != deltas.len() {
            return Err(QfError::Param("spectrum needs equal, non-zero numbers of λ and δ".into()));
        }
        if lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) || deltas.iter().any(|d| !d.is_finite()) {
            return Err(QfError::Param(format!("invalid spectrum λ={lambdas:?} δ={deltas:?}")));
        }
        if !offset.is_finite() || offset < 0.0 {
            return Err(QfError::Param(format!("invalid offset {offset}")));
        }
        Ok(QuadFormSpectrum { lambdas, deltas, offset })
    }

    /// Builds a spectrum without validation; only for probing edge cases.
    #[doc(hidden)]
    pub fn new_unchecked(lambdas: Vec<f64>, deltas: Vec<f64>) -> Self {
        QuadFormSpectrum {
            lambdas,
            deltas,
            offset: 0.0,
        }
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// Deterministic part folded out of a degenerate direction.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub(crate) fn terms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lambdas.iter().copied().zip(self.deltas.iter().copied())
    }

    /// `E[Q(x)] = Σ λ_j (1 + δ_j²) + offset`.
    pub fn mean(&self) -> f64 {
        self.terms().map(|(l, d)| l * (1.0 + d * d)).sum::<f64>() + self.offset
    }
}

/// Result of a distribution-function evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfResult {
    pub value: f64,
    /// Bound on the absolute error (Imhof only).
    pub abs_error_bound: Option<f64>,
    pub evaluations: usize,
    /// Set when clamping into `[0, 1]` moved the value by more than 1e-8.
    pub clamp_flag: bool,
}

impl CdfResult {
    pub(crate) fn clamped(raw: f64, abs_error_bound: Option<f64>, evaluations: usize) -> Self {
        let value = raw.clamp(0.0, 1.0);
        CdfResult {
            value,
            abs_error_bound,
            evaluations,
            clamp_flag: (value - raw).abs() > CLAMP_FLAG_TOL,
        }
    }

    pub(crate) fn exact(value: f64) -> Self {
        CdfResult {
            value,
            abs_error_bound: Some(0.0),
            evaluations: 0,
            clamp_flag: false,
        }
    }
}

fn sym_sqrt(eig: &SymmetricEigen<f64, nalgebra::U2>) -> Matrix2<f64> {
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    eig.eigenvectors * Matrix2::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// Spectral form of `xᵀQx` for `x ~ N(mean, cov)`.
///
/// Eigendecomposes `Σ^{1/2} Q Σ^{1/2} = UΛUᵀ` and sets
/// `δ = Λ⁻¹ Uᵀ Σ^{1/2} Q μ` (equal to `Uᵀ Σ^{-1/2} μ` without inverting Σ).
/// A covariance that is degenerate in one direction yields a one-term
/// spectrum plus a deterministic offset.
pub fn decompose(q: &Ellipsoid, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> Result<QuadFormSpectrum, QfError> {
    let q = q.q();
    let cov_eig = SymmetricEigen::new(0.5 * (cov + cov.transpose()));
    let (imax, smax) = if cov_eig.eigenvalues[0] >= cov_eig.eigenvalues[1] {
        (0, cov_eig.eigenvalues[0])
    } else {
        (1, cov_eig.eigenvalues[1])
    };
    let smin = cov_eig.eigenvalues[1 - imax];
    if smax < DEGENERATE_EIG {
        return Err(QfError::DegenerateCovariance);
    }
    if smin < DEGENERATE_EIG {
        let u: Vector2<f64> = cov_eig.eigenvectors.column(imax).into();
        let sigma = smax.sqrt();
        let uqu = (u.transpose() * q * u)[0];
        let uqm = (u.transpose() * q * mean)[0];
        let mqm = (mean.transpose() * q * mean)[0];
        let lambda = smax * uqu;
        let delta = uqm / (sigma * uqu);
        let offset = (mqm - uqm * uqm / uqu).max(0.0);
        return QuadFormSpectrum::with_offset(vec![lambda], vec![delta], offset);
    }
    let root = sym_sqrt(&cov_eig);
    let m = root * q * root;
    let eig = SymmetricEigen::new(0.5 * (m + m.transpose()));
    let proj = eig.eigenvectors.transpose() * root * q * mean;
    let lambdas = vec![eig.eigenvalues[0], eig.eigenvalues[1]];
    let deltas = vec![proj[0] / lambdas[0], proj[1] / lambdas[1]];
    QuadFormSpectrum::new(lambdas, deltas)
}

/// Which distribution-function evaluator to use for per-component risk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CdfMethod {
    Imhof { tol: f64 },
    Ltz,
}

/// Per-component and mixture membership probabilities for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRisk {
    pub modes: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub flags: Vec<String>,
}

/// `P(xᵀQx ≤ 1)` for one Gaussian component.
pub fn component_risk(c: &GaussianComponent2, e: &Ellipsoid, method: CdfMethod) -> Result<CdfResult, QfError> {
    let spectrum = match decompose(e, &c.mean, &c.cov) {
        Ok(s) => s,
        Err(QfError::DegenerateCovariance) => {
            return Ok(CdfResult::exact(if e.contains(&c.mean) { 1.0 } else { 0.0 }));
        }
        Err(err) => return Err(err),
    };
    match method {
        CdfMethod::Imhof { tol } => imhof_cdf(&spectrum, 1.0, tol),
        CdfMethod::Ltz => match ltz_cdf(&spectrum, 1.0) {
            Err(QfError::FallbackToImhof { .. }) => imhof_cdf(&spectrum, 1.0, GROUND_TRUTH_TOL),
            other => other,
        },
    }
}

/// Mixture risk `Σ_i w_i P(xᵀQx ≤ 1 | component i)` with per-mode values.
pub fn gmm_step_risk(m: &Mixture2, e: &Ellipsoid, method: CdfMethod) -> Result<StepRisk, QfError> {
    let mut modes = Vec::with_capacity(m.len());
    let mut value = 0.0;
    let mut evaluations = 0;
    let mut flags = Vec::new();
    for (w, c) in m.components() {
        let r = component_risk(c, e, method)?;
        if r.clamp_flag && !flags.iter().any(|f| f == "clamped") {
            flags.push("clamped".to_string());
        }
        evaluations += r.evaluations;
        value += w * r.value;
        modes.push(r.value);
    }
    Ok(StepRisk {
        modes,
        value: value.clamp(0.0, 1.0),
        evaluations,
        flags,
    })
}
