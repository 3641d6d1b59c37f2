use std::f64::consts::PI;

use super::{CdfResult, QfError, QuadFormSpectrum};
use crate::quadrature::{gk21, integrate, QuadError, WynnEpsilon};

/// Integrand-evaluation budget for one Imhof inversion.
pub const IMHOF_MAX_EVALS: usize = 1_000_000;

/// Upper limit on the number of oscillation panels summed in the tail.
const MAX_PANELS: usize = 5_000;

/// Share of the tolerance given to the head interval, the tail and the
/// truncation bound respectively (they sum to less than one).
const HEAD_SHARE: f64 = 0.3;
const TAIL_SHARE: f64 = 0.4;
const TRUNC_SHARE: f64 = 0.25;

struct Integrand<'a> {
    s: &'a QuadFormSpectrum,
    q: f64,
}

impl Integrand<'_> {
    fn theta(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (l, d) in self.s.terms() {
            let lu = l * u;
            acc += lu.atan() + d * d * lu / (1.0 + lu * lu);
        }
        0.5 * acc - 0.5 * self.q * u
    }

    fn theta_prime(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (l, d) in self.s.terms() {
            let l2u2 = l * l * u * u;
            let den = 1.0 + l2u2;
            acc += l / den + d * d * l * (1.0 - l2u2) / (den * den);
        }
        0.5 * acc - 0.5 * self.q
    }

    fn ln_rho(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (l, d) in self.s.terms() {
            let l2u2 = l * l * u * u;
            acc += 0.25 * l2u2.ln_1p() + 0.5 * d * d * l2u2 / (1.0 + l2u2);
        }
        acc
    }

    fn eval(&self, u: f64) -> f64 {
        if u == 0.0 {
            return self.theta_prime(0.0);
        }
        let th = self.theta(u);
        th.sin() * (-(u.ln() + self.ln_rho(u))).exp()
    }

    /// Log of a bound on `∫_U^∞ 1/(uρ(u)) du`, which dominates the
    /// truncation error of the integral.
    fn ln_truncation_bound(&self, u: f64) -> f64 {
        let k = 0.5 * self.s.lambdas().len() as f64;
        let mut acc = 0.0;
        for (l, d) in self.s.terms() {
            let l2u2 = l * l * u * u;
            acc += 0.5 * l.ln() + 0.5 * d * d * l2u2 / (1.0 + l2u2);
        }
        -(k.ln() + k * u.ln() + acc)
    }

    /// Beyond this point `θ'(u) ≤ −q/4`, so θ is strictly decreasing and
    /// every panel between successive multiples of π has a single sign.
    fn monotone_start(&self) -> f64 {
        let s: f64 = self.s.terms().map(|(l, d)| (1.0 + d * d) / l).sum();
        (2.0 * s / self.q).sqrt()
    }

    /// Solves `θ(u) = target` for `u > from`, assuming θ is decreasing
    /// with slope at most `−q/4` on `[from, ∞)`.
    fn solve_theta(&self, from: f64, target: f64) -> (f64, usize) {
        let gap = self.theta(from) - target;
        if gap <= 0.0 {
            return (from, 1);
        }
        let mut lo = from;
        let mut hi = from + 4.0 * gap / self.q;
        let mut u = from + 2.0 * gap / self.q;
        let mut evals = 1;
        for _ in 0..200 {
            let f = self.theta(u) - target;
            evals += 1;
            if f.abs() <= 1e-14 * (1.0 + target.abs()) {
                break;
            }
            if f > 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let step = u - f / self.theta_prime(u);
            u = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        (u, evals)
    }
}

fn quad_err(e: QuadError, spent: usize) -> QfError {
    match e {
        QuadError::Budget { evals, error } => QfError::Convergence {
            evaluations: spent + evals,
            error,
        },
        QuadError::NonFinite(_) => QfError::Convergence {
            evaluations: spent,
            error: f64::NAN,
        },
    }
}

/// `P(Q(x) ≤ q)` by numerical inversion of the characteristic function:
/// `P = ½ − (1/π) ∫₀^∞ sin θ(u) / (u ρ(u)) du`.
///
/// The integral is split at a point past which the phase is strictly
/// monotone. The head is integrated adaptively; the tail is summed panel by
/// panel between successive zeros of `sin θ` and the alternating panel
/// series is accelerated with the epsilon algorithm. Whenever the analytic
/// truncation bound already meets the tolerance the integral is cut there.
pub fn imhof_cdf(s: &QuadFormSpectrum, q: f64, tol: f64) -> Result<CdfResult, QfError> {
    if !(q > 0.0) || !q.is_finite() {
        return Err(QfError::Param(format!("threshold must be positive, got {q}")));
    }
    if !(1e-12..=1e-2).contains(&tol) {
        return Err(QfError::Param(format!("tolerance {tol:e} outside [1e-12, 1e-2]")));
    }
    let q_eff = q - s.offset();
    if q_eff <= 0.0 {
        return Ok(CdfResult::exact(0.0));
    }
    let f = Integrand { s, q: q_eff };
    let integrand = |u: f64| f.eval(u);
    // errors on the integral are divided by π in the probability
    let budget_trunc = (PI * tol * TRUNC_SHARE).ln();
    let head_tol = PI * tol * HEAD_SHARE;
    let tail_tol = PI * tol * TAIL_SHARE;

    let u_mono = f.monotone_start();
    let mut evals = 0usize;

    if f.ln_truncation_bound(u_mono) <= budget_trunc {
        // cut the integral where the truncation bound meets the budget
        let (mut lo, mut hi) = (u_mono * 1e-12, u_mono);
        for _ in 0..100 {
            let mid = (lo * hi).sqrt();
            if f.ln_truncation_bound(mid) <= budget_trunc {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi / lo < 1.0 + 1e-6 {
                break;
            }
        }
        let head = integrate(&integrand, 0.0, hi, head_tol, 0.0, IMHOF_MAX_EVALS).map_err(|e| quad_err(e, 0))?;
        let bound = (head.error + f.ln_truncation_bound(hi).exp()) / PI;
        return Ok(CdfResult::clamped(0.5 - head.value / PI, Some(bound), head.evals));
    }

    // head: [0, U1] with θ(U1) a multiple of π
    let k0 = (-f.theta(u_mono) / PI).ceil();
    let (u1, n) = f.solve_theta(u_mono, -k0 * PI);
    evals += n;
    let head = integrate(&integrand, 0.0, u1, head_tol, 0.0, IMHOF_MAX_EVALS).map_err(|e| quad_err(e, evals))?;
    evals += head.evals;

    let mut wynn = WynnEpsilon::new();
    let mut partial = 0.0;
    let mut left = u1;
    let mut k = k0;
    let mut best = (0.0, f64::INFINITY);
    for panel in 0..MAX_PANELS {
        k += 1.0;
        let (right, n) = f.solve_theta(left, -k * PI);
        evals += n;
        let first = gk21(&integrand, left, right).map_err(|e| quad_err(e, evals))?;
        let piece = if first.error <= 0.01 * tail_tol {
            evals += first.evals;
            first.value
        } else {
            let e = integrate(&integrand, left, right, 0.01 * tail_tol, 0.0, IMHOF_MAX_EVALS.saturating_sub(evals))
                .map_err(|e| quad_err(e, evals))?;
            evals += e.evals;
            e.value
        };
        partial += piece;
        left = right;

        // the plain partial sum is good enough once the truncation bound is
        let trunc = f.ln_truncation_bound(left);
        if trunc <= budget_trunc {
            let bound = (head.error + trunc.exp()) / PI;
            return Ok(CdfResult::clamped(0.5 - (head.value + partial) / PI, Some(bound), evals));
        }
        let (est, err) = wynn.push(partial);
        if err < best.1 {
            best = (est, err);
        }
        if panel >= 3 && err <= tail_tol {
            let bound = (head.error + err) / PI;
            return Ok(CdfResult::clamped(0.5 - (head.value + est) / PI, Some(bound), evals));
        }
        if evals >= IMHOF_MAX_EVALS {
            break;
        }
    }
    Err(QfError::Convergence {
        evaluations: evals,
        error: (head.error + best.1) / PI,
    })
}
