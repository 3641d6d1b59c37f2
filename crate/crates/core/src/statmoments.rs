//! Characteristic functions and moments: raw and trigonometric moments of
//! scalar control distributions, raw moments of bivariate Gaussians and
//! their mixtures, and frame changes applied to moments and ellipsoids.

use nalgebra::{Matrix2, Rotation2, Vector2};
use num_complex::Complex64;
use thiserror::Error;

use crate::scenario::{Ellipsoid, GaussianComponent2, Mixture2};

/// Largest moment / trigonometric-moment order supported.
pub const MAX_ORDER: usize = 16;

/// Tolerance on the imaginary part left over when assembling a
/// trigonometric moment from characteristic-function values.
pub const TRIG_IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("moment order {requested} exceeds the supported maximum {max}")]
    Order { requested: usize, max: usize },
    #[error("trigonometric moment assembly left imaginary residual {0:e}")]
    ImaginaryResidual(f64),
    #[error("invalid distribution: {0}")]
    Invalid(String),
}

fn check_order(requested: usize) -> Result<(), MomentError> {
    if requested > MAX_ORDER {
        Err(MomentError::Order {
            requested,
            max: MAX_ORDER,
        })
    } else {
        Ok(())
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// Distribution of a scalar control input.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarDist {
    Gaussian { mean: f64, variance: f64 },
    /// `(weight, mean, variance)` triples.
    Mixture1D(Vec<(f64, f64, f64)>),
}

impl ScalarDist {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, MomentError> {
        if !mean.is_finite() || !variance.is_finite() || variance < 0.0 {
            return Err(MomentError::Invalid(format!("N({mean}, {variance})")));
        }
        Ok(ScalarDist::Gaussian { mean, variance })
    }

    pub fn point(value: f64) -> Self {
        ScalarDist::Gaussian {
            mean: value,
            variance: 0.0,
        }
    }

    pub fn mixture(components: Vec<(f64, f64, f64)>) -> Result<Self, MomentError> {
        if components.is_empty() {
            return Err(MomentError::Invalid("empty mixture".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|&(w, m, v)| w < 0.0 || !m.is_finite() || !(v >= 0.0) || !v.is_finite())
            || (total - 1.0).abs() > 1e-9
        {
            return Err(MomentError::Invalid(format!("mixture weights sum to {total}")));
        }
        Ok(ScalarDist::Mixture1D(components))
    }

    fn components(&self) -> Vec<(f64, f64, f64)> {
        match self {
            ScalarDist::Gaussian { mean, variance } => vec![(1.0, *mean, *variance)],
            ScalarDist::Mixture1D(c) => c.clone(),
        }
    }
}

/// `E[exp(i t X)]`.
pub fn char_eval(d: &ScalarDist, t: f64) -> Complex64 {
    let gaussian = |mean: f64, var: f64| Complex64::from_polar((-0.5 * var * t * t).exp(), mean * t);
    match d {
        ScalarDist::Gaussian { mean, variance } => gaussian(*mean, *variance),
        ScalarDist::Mixture1D(c) => c.iter().map(|&(w, m, v)| gaussian(m, v) * w).sum(),
    }
}

/// `E[X^j]` for `j = 0..=k`.
pub fn raw_moments_1d(d: &ScalarDist, k: usize) -> Result<Vec<f64>, MomentError> {
    check_order(k)?;
    let mut out = vec![0.0; k + 1];
    for (w, mean, var) in d.components() {
        let mut m = vec![0.0; k + 1];
        m[0] = 1.0;
        for j in 1..=k {
            m[j] = mean * m[j - 1] + if j >= 2 { (j - 1) as f64 * var * m[j - 2] } else { 0.0 };
        }
        out.iter_mut().zip(&m).for_each(|(o, v)| *o += w * v);
    }
    Ok(out)
}

/// `E[cos^m(X) sin^n(X)]` assembled from characteristic-function values at
/// integer arguments.
pub fn trig_moment(d: &ScalarDist, m: usize, n: usize) -> Result<f64, MomentError> {
    check_order(m + n)?;
    let mut acc = Complex64::new(0.0, 0.0);
    if n == 0 {
        // E[cos^m] = 2^-m Σ_k C(m,k) Φ(2k - m)
        for k in 0..=m {
            acc += char_eval(d, 2.0 * k as f64 - m as f64) * binomial(m, k);
        }
        acc /= 2f64.powi(m as i32);
    } else if m == 0 {
        // E[sin^n] = (-i)^n 2^-n Σ_k C(n,k) (-1)^(n-k) Φ(2k - n)
        for k in 0..=n {
            let sign = if (n - k).is_multiple_of(2) { 1.0 } else { -1.0 };
            acc += char_eval(d, 2.0 * k as f64 - n as f64) * (sign * binomial(n, k));
        }
        acc *= Complex64::new(0.0, -1.0).powi(n as i32) / 2f64.powi(n as i32);
    } else {
        for k1 in 0..=m {
            for k2 in 0..=n {
                let sign = if (n - k2).is_multiple_of(2) { 1.0 } else { -1.0 };
                let arg = 2.0 * (k1 + k2) as f64 - (m + n) as f64;
                acc += char_eval(d, arg) * (sign * binomial(m, k1) * binomial(n, k2));
            }
        }
        acc *= Complex64::new(0.0, -1.0).powi(n as i32) / 2f64.powi((m + n) as i32);
    }
    if acc.im.abs() > TRIG_IMAG_TOL {
        return Err(MomentError::ImaginaryResidual(acc.im.abs()));
    }
    Ok(acc.re)
}

#[inline]
fn trig_index(m: usize, n: usize) -> usize {
    let s = m + n;
    s * (s + 1) / 2 + n
}

/// Table of `E[w_v^a cos^m(w_θ) sin^n(w_θ)]` for `a ≤ max_power`,
/// `m + n ≤ max_trig`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigMomentSet {
    max_power: usize,
    max_trig: usize,
    values: Vec<f64>,
}

impl TrigMomentSet {
    fn row_len(max_trig: usize) -> usize {
        (max_trig + 1) * (max_trig + 2) / 2
    }

    pub fn max_power(&self) -> usize {
        self.max_power
    }

    pub fn max_trig(&self) -> usize {
        self.max_trig
    }

    /// `None` when the entry lies outside the table.
    pub fn get(&self, a: usize, m: usize, n: usize) -> Option<f64> {
        if a > self.max_power || m + n > self.max_trig {
            return None;
        }
        Some(self.values[a * Self::row_len(self.max_trig) + trig_index(m, n)])
    }

    /// Entrywise weighted sum of tables with identical shape.
    pub fn weighted_sum(parts: &[(f64, &TrigMomentSet)]) -> Option<TrigMomentSet> {
        let (_, first) = parts.first()?;
        let mut values = vec![0.0; first.values.len()];
        for (w, t) in parts {
            if t.max_power != first.max_power || t.max_trig != first.max_trig {
                return None;
            }
            values.iter_mut().zip(&t.values).for_each(|(v, x)| *v += w * x);
        }
        Some(TrigMomentSet {
            max_power: first.max_power,
            max_trig: first.max_trig,
            values,
        })
    }

    /// Bitwise fingerprint used to key caches.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.max_power.hash(&mut h);
        self.max_trig.hash(&mut h);
        for v in &self.values {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Moment table of an independent pair `(w_v, w_θ)`.
pub fn control_trig_table(
    w_v: &ScalarDist,
    w_theta: &ScalarDist,
    max_power: usize,
    max_trig: usize,
) -> Result<TrigMomentSet, MomentError> {
    let raw = raw_moments_1d(w_v, max_power)?;
    check_order(max_trig)?;
    let row = TrigMomentSet::row_len(max_trig);
    let mut trig = vec![0.0; row];
    for s in 0..=max_trig {
        for n in 0..=s {
            trig[trig_index(s - n, n)] = trig_moment(w_theta, s - n, n)?;
        }
    }
    let values = raw.iter().flat_map(|r| trig.iter().map(move |t| r * t)).collect();
    Ok(TrigMomentSet {
        max_power,
        max_trig,
        values,
    })
}

/// Raw moments `E[x^a y^b]`, `a + b ≤ order`, of a planar random vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentArray2 {
    order: usize,
    values: Vec<f64>,
}

#[inline]
fn idx2(a: usize, b: usize) -> usize {
    let s = a + b;
    s * (s + 1) / 2 + b
}

impl MomentArray2 {
    pub fn zeros(order: usize) -> Self {
        MomentArray2 {
            order,
            values: vec![0.0; (order + 1) * (order + 2) / 2],
        }
    }

    /// Moments of a deterministic point.
    pub fn point(p: &Vector2<f64>, order: usize) -> Self {
        let mut m = Self::zeros(order);
        for s in 0..=order {
            for b in 0..=s {
                m.set(s - b, b, p.x.powi((s - b) as i32) * p.y.powi(b as i32));
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `E[x^a y^b]`; panics when `a + b` exceeds the order.
    pub fn get(&self, a: usize, b: usize) -> f64 {
        assert!(a + b <= self.order, "moment ({a},{b}) beyond order {}", self.order);
        self.values[idx2(a, b)]
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.values[idx2(a, b)] = v;
    }

    pub fn mean(&self) -> Vector2<f64> {
        Vector2::new(self.get(1, 0), self.get(0, 1))
    }

    pub fn cov(&self) -> Matrix2<f64> {
        let mu = self.mean();
        let cxy = self.get(1, 1) - mu.x * mu.y;
        Matrix2::new(self.get(2, 0) - mu.x * mu.x, cxy, cxy, self.get(0, 2) - mu.y * mu.y)
    }

    /// The same moments cut down to a lower order.
    pub fn truncated(&self, order: usize) -> MomentArray2 {
        assert!(order <= self.order);
        MomentArray2 {
            order,
            values: self.values[..(order + 1) * (order + 2) / 2].to_vec(),
        }
    }

    pub(crate) fn add_scaled(&mut self, w: f64, other: &MomentArray2) {
        assert_eq!(self.order, other.order);
        self.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += w * b);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pairs `((a, b), value)` in graded order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        (0..=self.order).flat_map(move |s| (0..=s).map(move |b| ((s - b, b), self.values[idx2(s - b, b)])))
    }
}

/// Raw moments of a bivariate Gaussian up to `order`, from the Stein
/// recursion `E[x^(a+1) y^b] = μx E[x^a y^b] + a Σxx E[x^(a-1) y^b] + b Σxy E[x^a y^(b-1)]`.
pub fn mvg_raw_moments(mean: &Vector2<f64>, cov: &Matrix2<f64>, order: usize) -> Result<MomentArray2, MomentError> {
    check_order(order)?;
    let mut m = MomentArray2::zeros(order);
    m.set(0, 0, 1.0);
    let (sxx, sxy, syy) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
    for s in 1..=order {
        for b in 0..=s {
            let a = s - b;
            let v = if a > 0 {
                let (a0, b0) = (a - 1, b);
                let mut v = mean.x * m.get(a0, b0);
                if a0 > 0 {
                    v += a0 as f64 * sxx * m.get(a0 - 1, b0);
                }
                if b0 > 0 {
                    v += b0 as f64 * sxy * m.get(a0, b0 - 1);
                }
                v
            } else {
                let b0 = b - 1;
                let mut v = mean.y * m.get(0, b0);
                if b0 > 0 {
                    v += b0 as f64 * syy * m.get(0, b0 - 1);
                }
                v
            };
            m.set(a, b, v);
        }
    }
    Ok(m)
}

pub fn component_moments(c: &GaussianComponent2, order: usize) -> Result<MomentArray2, MomentError> {
    mvg_raw_moments(&c.mean, &c.cov, order)
}

/// Weighted sum of component moments.
pub fn mixture_moments_2d(m: &Mixture2, order: usize) -> Result<MomentArray2, MomentError> {
    let mut out = MomentArray2::zeros(order);
    for (w, c) in m.components() {
        out.add_scaled(*w, &component_moments(c, order)?);
    }
    Ok(out)
}

/// Raw moments of `(x - v₁, y - v₂)` by binomial expansion.
pub fn translate_moments(m: &MomentArray2, v: &Vector2<f64>) -> MomentArray2 {
    let d = m.order();
    let px: Vec<f64> = (0..=d).map(|k| (-v.x).powi(k as i32)).collect();
    let py: Vec<f64> = (0..=d).map(|k| (-v.y).powi(k as i32)).collect();
    let mut out = MomentArray2::zeros(d);
    for s in 0..=d {
        for b in 0..=s {
            let a = s - b;
            let mut acc = 0.0;
            for i in 0..=a {
                let ci = binomial(a, i) * px[a - i];
                for j in 0..=b {
                    acc += ci * binomial(b, j) * py[b - j] * m.get(i, j);
                }
            }
            out.set(a, b, acc);
        }
    }
    out
}

/// `R(θ)ᵀ Q R(θ)` with `R` the counter-clockwise rotation by `θ`.
pub fn rotate_ellipsoid(e: &Ellipsoid, theta: f64) -> Ellipsoid {
    let r = Rotation2::new(theta).into_inner();
    let q = r.transpose() * e.q() * r;
    Ellipsoid::from_trusted(0.5 * (q + q.transpose()))
}
