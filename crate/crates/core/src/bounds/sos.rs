//! Univariate sum-of-squares risk bounds.
//!
//! A polynomial `p` with `p ≥ 0` everywhere and `p ≥ 1` on `(−∞, 0]` gives
//! `P(g ≤ 0) ≤ E[p(g)] = Σ c_k E[g^k]`. Both conditions are certified by
//! `p` SOS and `p − 1 = s₁ − x·s₂` with `s₁`, `s₂` SOS, so the best such
//! bound is a semidefinite program over the Gram matrices of `p`, `s₁`,
//! `s₂`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::sdp::{solve_sdp, SdpOptions, SdpProblem, SdpStatus};
use super::{normalize_gmoments, Bound, BoundDiagnostic, BoundsError, GMoments};

/// Supported polynomial degrees.
pub const SOS_DEGREES: [usize; 4] = [2, 4, 6, 8];

const REPAIR_EPS_START: f64 = 1e-9;
const REPAIR_EPS_MAX: f64 = 1e-6;
/// Largest admissible coefficient residual of a certificate.
pub const CERT_RESIDUAL_TOL: f64 = 1e-7;

/// `p(z) = Σ c_k z^k` in the normalised variable `z = g/√E[g²]`, with
/// Gram matrices for `p`, `s₁` and `s₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosCertificate {
    pub degree: usize,
    pub coeffs: Vec<f64>,
    pub gram_p: Vec<Vec<f64>>,
    pub gram_s1: Vec<Vec<f64>>,
    pub gram_s2: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

/// Gram matrices of `p`, `s₁` and `s₂`.
type Grams = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);

/// Independent validity check of a certificate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    /// Smallest eigenvalue over the three Gram matrices.
    pub min_eigenvalue: f64,
    /// Largest coefficient residual of `p − 1 − s₁ + x·s₂` (and of `p`
    /// against its Gram matrix).
    pub residual: f64,
}

impl CertificateCheck {
    pub fn is_valid(&self) -> bool {
        self.min_eigenvalue >= 0.0 && self.residual <= CERT_RESIDUAL_TOL
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], size: usize, name: &str) -> Result<DMatrix<f64>, BoundsError> {
    if rows.len() != size || rows.iter().any(|r| r.len() != size) {
        return Err(BoundsError::Certificate(format!("{name} must be {size}×{size}")));
    }
    Ok(DMatrix::from_fn(size, size, |i, j| rows[i][j]))
}

/// `Σ_{i+j=k} G_ij`: coefficient of `x^k` in `mᵀ G m`, `m = (1, x, x², …)`.
fn coef(g: &DMatrix<f64>, k: usize) -> f64 {
    let n = g.nrows();
    (0..n).filter(|&i| k >= i && k - i < n).map(|i| g[(i, k - i)]).sum()
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn clip(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(0.5 * (m + m.transpose()));
    let vals = e.eigenvalues.map(|v| v.max(0.0));
    &e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose()
}

fn identity_residuals(p: &DMatrix<f64>, s1: &DMatrix<f64>, s2: &DMatrix<f64>, d: usize) -> Vec<f64> {
    (0..=d)
        .map(|k| {
            let s2k = if k >= 1 { coef(s2, k - 1) } else { 0.0 };
            coef(p, k) - coef(s1, k) + s2k - if k == 0 { 1.0 } else { 0.0 }
        })
        .collect()
}

fn gram_sizes(d: usize) -> (usize, usize, usize) {
    let n = d / 2;
    (n + 1, n + 1, n)
}

fn check_degree(d: usize) -> Result<(), BoundsError> {
    if SOS_DEGREES.contains(&d) {
        Ok(())
    } else {
        Err(BoundsError::Param(format!("SOS degree must be one of {SOS_DEGREES:?}, got {d}")))
    }
}

impl SosCertificate {
    /// The trivial certificate `p ≡ 1`.
    pub fn constant_one(degree: usize) -> Self {
        let (np, n1, n2) = gram_sizes(degree);
        let mut gp = DMatrix::zeros(np, np);
        gp[(0, 0)] = 1.0;
        let mut coeffs = vec![0.0; degree + 1];
        coeffs[0] = 1.0;
        SosCertificate {
            degree,
            coeffs,
            gram_p: to_rows(&gp),
            gram_s1: to_rows(&DMatrix::zeros(n1, n1)),
            gram_s2: to_rows(&DMatrix::zeros(n2, n2)),
            bound: Some(1.0),
        }
    }

    fn grams(&self) -> Result<Grams, BoundsError> {
        check_degree(self.degree)?;
        let (np, n1, n2) = gram_sizes(self.degree);
        if self.coeffs.len() != self.degree + 1 {
            return Err(BoundsError::Certificate(format!("{} coefficients for degree {}", self.coeffs.len(), self.degree)));
        }
        Ok((
            from_rows(&self.gram_p, np, "gram_p")?,
            from_rows(&self.gram_s1, n1, "gram_s1")?,
            from_rows(&self.gram_s2, n2, "gram_s2")?,
        ))
    }

    /// Gram eigenvalues and coefficient residuals, computed from scratch.
    pub fn check(&self) -> Result<CertificateCheck, BoundsError> {
        let (p, s1, s2) = self.grams()?;
        let sym_err = [&p, &s1, &s2]
            .iter()
            .map(|m| (*m - m.transpose()).abs().max())
            .fold(0.0, f64::max);
        let ident = identity_residuals(&p, &s1, &s2, self.degree);
        let coeff_err = (0..=self.degree).map(|k| (coef(&p, k) - self.coeffs[k]).abs());
        let residual = ident.iter().map(|r| r.abs()).chain(coeff_err).fold(sym_err, f64::max);
        let min_eigenvalue = [&p, &s1, &s2].iter().map(|m| min_eig(m)).fold(f64::INFINITY, f64::min);
        Ok(CertificateCheck {
            min_eigenvalue,
            residual,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serialises") + "\n"
    }

    /// Parses and verifies a certificate.
    pub fn from_json(text: &[u8]) -> Result<Self, BoundsError> {
        let cert: SosCertificate =
            serde_json::from_slice(text).map_err(|e| BoundsError::Certificate(format!("unreadable certificate: {e}")))?;
        let check = cert.check()?;
        if !check.is_valid() {
            return Err(BoundsError::Certificate(format!(
                "min eigenvalue {:e}, residual {:e}",
                check.min_eigenvalue, check.residual
            )));
        }
        Ok(cert)
    }
}

/// Result of an SOS bound computation.
#[derive(Debug, Clone, PartialEq)]
pub struct SosBound {
    pub bound: Bound,
    /// Diagonal shift applied during certificate repair (0 if none).
    pub repair_eps: f64,
    pub solver_status: Option<SdpStatus>,
    pub iterations: usize,
}

/// The SDP whose optimum is the degree-`d` SOS bound for these moments.
pub fn build_sos_sdp(g: &GMoments, d: usize) -> Result<SdpProblem, BoundsError> {
    check_degree(d)?;
    if g.degree() < d {
        return Err(BoundsError::Order {
            needed: d,
            have: g.degree(),
        });
    }
    let (np, n1, n2) = gram_sizes(d);
    let mut prob = SdpProblem::new(vec![np, n1, n2]);
    prob.set_objective(0, DMatrix::from_fn(np, np, |i, j| g.get(i + j)));
    let pattern = |size: usize, k: usize, v: f64| DMatrix::from_fn(size, size, |i, j| if i + j == k { v } else { 0.0 });
    for k in 0..=d {
        let mut parts = vec![(0, pattern(np, k, 1.0)), (1, pattern(n1, k, -1.0))];
        if k >= 1 && n2 > 0 {
            parts.push((2, pattern(n2, k - 1, 1.0)));
        }
        prob.add_constraint(&parts, if k == 0 { 1.0 } else { 0.0 });
    }
    Ok(prob)
}

fn repair(
    p: &DMatrix<f64>,
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    d: usize,
) -> Result<(Grams, f64), BoundsError> {
    let s1 = clip(s1);
    let s2 = clip(s2);
    let mut p = clip(p);
    // push the identity residual back into p so the identity holds exactly
    for (k, r) in identity_residuals(&p, &s1, &s2, d).into_iter().enumerate() {
        if k % 2 == 0 {
            p[(k / 2, k / 2)] -= r;
        } else {
            p[((k - 1) / 2, k.div_ceil(2))] -= 0.5 * r;
            p[(k.div_ceil(2), (k - 1) / 2)] -= 0.5 * r;
        }
    }
    // adding εI to both p and s₁ keeps p − 1 = s₁ − x·s₂ intact
    let mut eps = 0.0;
    loop {
        let id = DMatrix::<f64>::identity(p.nrows(), p.nrows()) * eps;
        let pe = &p + &id;
        let s1e = &s1 + &id;
        let res = identity_residuals(&pe, &s1e, &s2, d).iter().fold(0.0f64, |a, r| a.max(r.abs()));
        if min_eig(&pe) >= 0.0 && min_eig(&s1e) >= 0.0 && res <= CERT_RESIDUAL_TOL {
            return Ok(((pe, s1e, s2), eps));
        }
        eps = if eps == 0.0 { REPAIR_EPS_START } else { 2.0 * eps };
        if eps > REPAIR_EPS_MAX {
            return Err(BoundsError::Certificate(format!(
                "no valid certificate with diagonal shift up to {REPAIR_EPS_MAX:e}"
            )));
        }
    }
}

fn evaluate(coeffs: &[f64], g: &GMoments) -> Bound {
    let raw: f64 = coeffs.iter().enumerate().map(|(k, c)| c * g.get(k)).sum();
    Bound::clamped(raw)
}

/// Degree-`d` SOS upper bound on `P(g ≤ 0)` with a verified certificate.
pub fn sos_risk_bound(g: &GMoments, d: usize) -> Result<(SosBound, SosCertificate), BoundsError> {
    check_degree(d)?;
    if g.degree() < d {
        return Err(BoundsError::Order {
            needed: d,
            have: g.degree(),
        });
    }
    if !(g.mean() > 0.0) {
        return Ok((
            SosBound {
                bound: Bound {
                    value: 1.0,
                    diagnostic: Some(BoundDiagnostic::Inapplicable),
                },
                repair_eps: 0.0,
                solver_status: None,
                iterations: 0,
            },
            SosCertificate::constant_one(d),
        ));
    }
    let gn = normalize_gmoments(g)?;
    let prob = build_sos_sdp(&gn, d)?;
    let sol = solve_sdp(&prob, &SdpOptions::default());
    if sol.status == SdpStatus::Infeasible {
        return Err(BoundsError::Solver("SOS program reported infeasible".into()));
    }
    let blocks = sol.blocks(&prob);
    let ((p, s1, s2), eps) = repair(&blocks[0], &blocks[1], &blocks[2], d)?;
    let coeffs: Vec<f64> = (0..=d).map(|k| coef(&p, k)).collect();
    let bound = evaluate(&coeffs, &gn);
    let cert = SosCertificate {
        degree: d,
        coeffs,
        gram_p: to_rows(&p),
        gram_s1: to_rows(&s1),
        gram_s2: to_rows(&s2),
        bound: Some(bound.value),
    };
    Ok((
        SosBound {
            bound,
            repair_eps: eps,
            solver_status: Some(sol.status),
            iterations: sol.iterations,
        },
        cert,
    ))
}

/// `Σ c_k E[z^k]` for a stored certificate, `z = g/√E[g²]`; valid for any
/// distribution because the certificate does not depend on the moments.
pub fn offline_polynomial_eval(cert: &SosCertificate, g: &GMoments) -> Result<Bound, BoundsError> {
    if g.degree() < cert.degree {
        return Err(BoundsError::Order {
            needed: cert.degree,
            have: g.degree(),
        });
    }
    if cert.coeffs.len() != cert.degree + 1 {
        return Err(BoundsError::Certificate("coefficient count does not match degree".into()));
    }
    if cert.coeffs.iter().skip(1).all(|c| *c == 0.0) {
        return Ok(Bound::clamped(cert.coeffs[0]));
    }
    let gn = normalize_gmoments(g)?;
    Ok(evaluate(&cert.coeffs, &gn))
}
