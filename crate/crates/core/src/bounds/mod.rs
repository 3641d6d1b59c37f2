//! Distributionally robust upper bounds on `P(xᵀQx ≤ 1)` from moments:
//! Cantelli on the quadratic form, a circumscribing half-space polygon,
//! and univariate sum-of-squares programs on `g(x) = xᵀQx − 1`.

mod sdp;
mod sos;

pub use sdp::{solve_sdp, SdpOptions, SdpProblem, SdpSolution, SdpStatus};
pub use sos::{
    build_sos_sdp, offline_polynomial_eval, sos_risk_bound, CertificateCheck, SosBound, SosCertificate, SOS_DEGREES,
};

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::Poly;
use crate::scenario::Ellipsoid;
use crate::statmoments::MomentArray2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("moments of order {needed} required, only {have} available")]
    Order { needed: usize, have: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("degenerate moments: {0}")]
    Degenerate(String),
    #[error("certificate invalid: {0}")]
    Certificate(String),
    #[error("SDP solver failed: {0}")]
    Solver(String),
}

/// Why a bound carries a caveat.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundDiagnostic {
    /// The mean of `g` is not positive; no bound below 1 is attempted.
    Inapplicable,
    /// The raw value exceeded 1 and was clamped.
    Uninformative,
}

impl BoundDiagnostic {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundDiagnostic::Inapplicable => "inapplicable",
            BoundDiagnostic::Uninformative => "uninformative",
        }
    }
}

/// A probability upper bound with an optional caveat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub value: f64,
    pub diagnostic: Option<BoundDiagnostic>,
}

impl Bound {
    fn inapplicable() -> Self {
        Bound {
            value: 1.0,
            diagnostic: Some(BoundDiagnostic::Inapplicable),
        }
    }

    fn clamped(raw: f64) -> Self {
        if raw > 1.0 {
            Bound {
                value: 1.0,
                diagnostic: Some(BoundDiagnostic::Uninformative),
            }
        } else {
            Bound {
                value: raw.max(0.0),
                diagnostic: None,
            }
        }
    }
}

fn quad_poly(e: &Ellipsoid) -> Poly {
    let q = e.q();
    let x = Poly::var(2, 0);
    let y = Poly::var(2, 1);
    x.pow(2)
        .scale(q[(0, 0)])
        .add(&x.mul(&y).scale(2.0 * q[(0, 1)]))
        .add(&y.pow(2).scale(q[(1, 1)]))
}

fn expect(p: &Poly, m: &MomentArray2) -> f64 {
    p.expectation(|e| m.get(e[0] as usize, e[1] as usize))
}

fn require_order(m: &MomentArray2, needed: usize) -> Result<(), BoundsError> {
    if m.order() < needed {
        Err(BoundsError::Order {
            needed,
            have: m.order(),
        })
    } else {
        Ok(())
    }
}

/// `(E[xᵀQx], E[(xᵀQx)²])` from raw position moments of order ≥ 4.
pub fn quadform_first_two_moments(m: &MomentArray2, e: &Ellipsoid) -> Result<(f64, f64), BoundsError> {
    require_order(m, 4)?;
    let q = quad_poly(e);
    Ok((expect(&q, m), expect(&q.pow(2), m)))
}

/// One-sided Chebyshev (Cantelli) bound on `P(g ≤ 0)` from `E[g]` and
/// `E[g²]`: `Var(g) / E[g²]` when `E[g] > 0`, otherwise 1.
pub fn cantelli_bound(mean_g: f64, second_moment_g: f64) -> Bound {
    if !(mean_g > 0.0) {
        return Bound::inapplicable();
    }
    let var = (second_moment_g - mean_g * mean_g).max(0.0);
    Bound::clamped(var / (var + mean_g * mean_g))
}

/// Half-plane `{x : aᵀx + b ≤ 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub a: Vector2<f64>,
    pub b: f64,
}

impl HalfSpace {
    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        self.a.dot(x) + self.b <= 0.0
    }
}

/// Tangent lines of `{xᵀQx = 1}` at `Q^{-1/2}(cos φ_k, sin φ_k)`,
/// `φ_k = 2πk/n_h`; the intersection of the half-planes circumscribes the
/// ellipse.
pub fn halfspace_tangents(e: &Ellipsoid, n_h: usize) -> Result<Vec<HalfSpace>, BoundsError> {
    if n_h < 3 {
        return Err(BoundsError::Param(format!("need at least 3 half-spaces, got {n_h}")));
    }
    let q = e.q();
    let eig = SymmetricEigen::new(*q);
    let inv_root = eig.eigenvectors * Matrix2::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * eig.eigenvectors.transpose();
    Ok((0..n_h)
        .map(|k| {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / n_h as f64;
            let p = inv_root * Vector2::new(phi.cos(), phi.sin());
            HalfSpace { a: q * p, b: -1.0 }
        })
        .collect())
}

/// Minimum over half-planes of the Cantelli bound on
/// `P(aᵀx + b ≤ 0)`, using those with positive mean margin.
pub fn halfspace_cheby_bound(mean: &Vector2<f64>, cov: &Matrix2<f64>, hs: &[HalfSpace]) -> Bound {
    let mut best: Option<f64> = None;
    for h in hs {
        let m = h.a.dot(mean) + h.b;
        if m > 0.0 {
            let var = (h.a.transpose() * cov * h.a)[0].max(0.0);
            let v = var / (var + m * m);
            best = Some(best.map_or(v, |b: f64| b.min(v)));
        }
    }
    best.map_or_else(Bound::inapplicable, Bound::clamped)
}

/// `E[g^k]`, `k = 0..=d`, of `g = xᵀQx − 1`, optionally rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct GMoments {
    values: Vec<f64>,
    scale: f64,
}

impl GMoments {
    /// From raw moment values (first entry must be 1).
    pub fn new(values: Vec<f64>, scale: f64) -> Result<Self, BoundsError> {
        if values.is_empty() || (values[0] - 1.0).abs() > 1e-12 {
            return Err(BoundsError::Param("moment sequence must start with E[g⁰] = 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) || !(scale > 0.0) {
            return Err(BoundsError::Param("non-finite moments or non-positive scale".into()));
        }
        if values.len() > 2 && values[2] - values[1] * values[1] < -1e-9 * values[2].abs().max(1.0) {
            return Err(BoundsError::Param(format!(
                "E[g²] = {} below E[g]² = {}",
                values[2],
                values[1] * values[1]
            )));
        }
        Ok(GMoments { values, scale })
    }

    pub fn degree(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// Factor `c` such that these are the moments of `c·g`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.values.get(1).copied().unwrap_or(0.0)
    }

    /// `{"values": [1, E[g], …], "scale": c}`.
    pub fn to_json(&self) -> String {
        let wire = GMomentsFile {
            values: self.values.clone(),
            scale: self.scale,
        };
        serde_json::to_string_pretty(&wire).expect("moments serialise") + "\n"
    }

    pub fn from_json(text: &[u8]) -> Result<Self, BoundsError> {
        let wire: GMomentsFile =
            serde_json::from_slice(text).map_err(|e| BoundsError::Param(format!("unreadable moment file: {e}")))?;
        GMoments::new(wire.values, wire.scale)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GMomentsFile {
    values: Vec<f64>,
    #[serde(default = "unit_scale")]
    scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Moments of `g = xᵀQx − 1` up to degree `d` from position moments of
/// order ≥ `2d`.
pub fn g_moments(m: &MomentArray2, e: &Ellipsoid, d: usize) -> Result<GMoments, BoundsError> {
    require_order(m, 2 * d)?;
    let g = quad_poly(e).sub(&Poly::constant(2, 1.0));
    let mut values = Vec::with_capacity(d + 1);
    let mut power = Poly::constant(2, 1.0);
    for k in 0..=d {
        if k > 0 {
            power = power.mul(&g);
        }
        values.push(expect(&power, m));
    }
    values[0] = 1.0;
    GMoments::new(values, 1.0)
}

/// Rescales to `E[(cg)²] = 1` with `c = 1/√E[g²]`.
pub fn normalize_gmoments(g: &GMoments) -> Result<GMoments, BoundsError> {
    if g.degree() < 2 {
        return Err(BoundsError::Param("normalisation needs E[g²]".into()));
    }
    let m2 = g.get(2);
    if !(m2 > 1e-300) {
        return Err(BoundsError::Degenerate(format!("E[g²] = {m2:e}")));
    }
    let c = 1.0 / m2.sqrt();
    let values = g.values.iter().enumerate().map(|(k, v)| v * c.powi(k as i32)).collect();
    Ok(GMoments {
        values,
        scale: g.scale * c,
    })
}
