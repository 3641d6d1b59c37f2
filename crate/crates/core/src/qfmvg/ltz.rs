use super::special::noncentral_chi2_cdf;
use super::{CdfResult, QfError, QuadFormSpectrum};

/// Skewness surrogate below which the approximation is not attempted.
pub const LTZ_SYMMETRY_EPS: f64 = 1e-12;

/// Liu–Tang–Zhang approximation of `P(Q(x) ≤ q)`: a noncentral chi-square
/// law matched on mean, variance, skewness and (approximately) kurtosis.
pub fn ltz_cdf(s: &QuadFormSpectrum, q: f64) -> Result<CdfResult, QfError> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(QfError::Param(format!("threshold must be positive, got {q}")));
    }
    let q_eff = q - s.offset();
    if q_eff <= 0.0 {
        return Ok(CdfResult::exact(0.0));
    }
    let c = |k: i32| -> f64 {
        s.terms()
            .map(|(l, d)| l.powi(k) + k as f64 * d * d * l.powi(k))
            .sum()
    };
    let (c1, c2, c3, c4) = (c(1), c(2), c(3), c(4));
    let s1 = c3 / c2.powf(1.5);
    let s2 = c4 / (c2 * c2);
    if !s1.is_finite() || !s2.is_finite() || s1 <= LTZ_SYMMETRY_EPS {
        return Err(QfError::FallbackToImhof { s1 });
    }
    let (l, nc) = if s1 * s1 > s2 {
        let a = 1.0 / (s1 - (s1 * s1 - s2).sqrt());
        let nc = s1 * a * a * a - a * a;
        (a * a - 2.0 * nc, nc)
    } else {
        (1.0 / (s1 * s1), 0.0)
    };
    if !(l > 0.0) || !(nc >= 0.0) {
        return Err(QfError::FallbackToImhof { s1 });
    }
    let t = (q_eff - c1) / (2.0 * c2).sqrt();
    let x = t * (2.0 * (l + 2.0 * nc)).sqrt() + l + nc;
    let value = if x <= 0.0 { 0.0 } else { noncentral_chi2_cdf(x, l, nc) };
    Ok(CdfResult::clamped(value, None, 1))
}
