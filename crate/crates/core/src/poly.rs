//! Sparse multivariate polynomials with `f64` coefficients.
//!
//! Monomials are packed into a `u64`: the total degree occupies the top
//! bits, followed by one 6-bit exponent field per variable (variable 0
//! most significant). Multiplying monomials is then integer addition, and
//! ascending key order is a graded lexicographic order, which fixes a
//! deterministic iteration order.

use std::fmt;

/// Maximum number of variables.
pub const MAX_VARS: usize = 9;
/// Maximum exponent of a single variable.
pub const MAX_EXP: u32 = 63;
const FIELD_BITS: u32 = 6;
const DEG_SHIFT: u32 = FIELD_BITS * MAX_VARS as u32;

#[inline]
fn shift(var: usize) -> u32 {
    FIELD_BITS * (MAX_VARS - 1 - var) as u32
}

/// Packs an exponent vector (length ≤ [`MAX_VARS`]) into a monomial key.
pub fn pack(exps: &[u32]) -> u64 {
    assert!(exps.len() <= MAX_VARS);
    let mut key = 0u64;
    let mut deg = 0u64;
    for (i, &e) in exps.iter().enumerate() {
        assert!(e <= MAX_EXP, "exponent {e} too large");
        key |= (e as u64) << shift(i);
        deg += e as u64;
    }
    assert!(deg < (1 << (64 - DEG_SHIFT)), "degree overflow");
    key | (deg << DEG_SHIFT)
}

/// Exponent of variable `var` in a packed key.
#[inline]
pub fn exponent(key: u64, var: usize) -> u32 {
    ((key >> shift(var)) & ((1 << FIELD_BITS) - 1)) as u32
}

/// Total degree of a packed key.
#[inline]
pub fn key_degree(key: u64) -> u32 {
    (key >> DEG_SHIFT) as u32
}

pub fn unpack(key: u64, nvars: usize) -> Vec<u32> {
    (0..nvars).map(|i| exponent(key, i)).collect()
}

/// Sparse polynomial in `nvars` variables; terms are kept sorted by key
/// with no zero coefficients.
#[derive(Clone, PartialEq)]
pub struct Poly {
    nvars: usize,
    terms: Vec<(u64, f64)>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        assert!(nvars <= MAX_VARS);
        Poly { nvars, terms: Vec::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::monomial(nvars, &[], c)
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars);
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(nvars, &e, 1.0)
    }

    /// `coef · Π x_i^{exps_i}`; missing trailing exponents are zero.
    pub fn monomial(nvars: usize, exps: &[u32], coef: f64) -> Self {
        assert!(nvars <= MAX_VARS && exps.len() <= nvars);
        let mut p = Poly::zero(nvars);
        if coef != 0.0 {
            p.terms.push((pack(exps), coef));
        }
        p
    }

    /// Builds from arbitrary (possibly repeated) terms.
    pub fn from_terms(nvars: usize, mut terms: Vec<(u64, f64)>) -> Self {
        terms.sort_unstable_by_key(|t| t.0);
        let mut out: Vec<(u64, f64)> = Vec::with_capacity(terms.len());
        for (k, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == k => last.1 += c,
                _ => out.push((k, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        Poly { nvars, terms: out }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms as `(packed key, coefficient)` in ascending graded order.
    pub fn terms(&self) -> &[(u64, f64)] {
        &self.terms
    }

    /// Coefficient of the monomial with the given exponents.
    pub fn coeff(&self, exps: &[u32]) -> f64 {
        let k = pack(exps);
        self.terms
            .binary_search_by_key(&k, |t| t.0)
            .map(|i| self.terms[i].1)
            .unwrap_or(0.0)
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.last().map(|t| key_degree(t.0))
    }

    /// Whether every term has the same total degree in the variables
    /// `vars`.
    pub fn is_homogeneous_in(&self, vars: std::ops::Range<usize>) -> bool {
        let deg = |k: u64| vars.clone().map(|v| exponent(k, v)).sum::<u32>();
        let mut it = self.terms.iter().map(|t| deg(t.0));
        match it.next() {
            None => true,
            Some(d0) => it.all(|d| d == d0),
        }
    }

    pub fn scale(&self, s: f64) -> Poly {
        if s == 0.0 {
            return Poly::zero(self.nvars);
        }
        Poly {
            nvars: self.nvars,
            terms: self.terms.iter().map(|&(k, c)| (k, c * s)).collect(),
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let (a, b) = (&self.terms, &other.terms);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let c = a[i].1 + b[j].1;
                    if c != 0.0 {
                        out.push((a[i].0, c));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Poly { nvars: self.nvars, terms: out }
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        let mut acc = Poly::zero(self.nvars);
        for &(k, c) in &small.terms {
            // adding a key to every term of a sorted list keeps it sorted
            let shifted = Poly {
                nvars: self.nvars,
                terms: large.terms.iter().map(|&(k2, c2)| (k + k2, c * c2)).collect(),
            };
            acc = acc.add(&shifted);
        }
        acc
    }

    pub fn pow(&self, n: u32) -> Poly {
        let mut out = Poly::constant(self.nvars, 1.0);
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        self.terms
            .iter()
            .map(|&(k, c)| c * (0..self.nvars).map(|i| x[i].powi(exponent(k, i) as i32)).product::<f64>())
            .sum()
    }

    /// Linear functional `Σ c_β · value(β)` over the terms.
    pub fn expectation<F: FnMut(&[u32]) -> f64>(&self, mut value: F) -> f64 {
        let mut buf = vec![0u32; self.nvars];
        self.terms
            .iter()
            .map(|&(k, c)| {
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = exponent(k, i);
                }
                c * value(&buf)
            })
            .sum()
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (n, &(k, c)) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for i in 0..self.nvars {
                match exponent(k, i) {
                    0 => {}
                    1 => write!(f, "·x{i}")?,
                    e => write!(f, "·x{i}^{e}")?,
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_round_trips_and_orders_by_degree() {
        let k = pack(&[3, 0, 2]);
        assert_eq!(unpack(k, 3), vec![3, 0, 2]);
        assert_eq!(key_degree(k), 5);
        assert!(pack(&[0, 0, 4]) < pack(&[1, 1, 1, 1, 1]));
        assert!(pack(&[0, 2]) < pack(&[2, 0]));
        assert_eq!(pack(&[1, 2]) + pack(&[3, 0]), pack(&[4, 2]));
    }

    #[test]
    fn binomial_expansion() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let p = x.add(&y).pow(4);
        assert_eq!(p.len(), 5);
        assert_eq!(p.coeff(&[2, 2]), 6.0);
        assert_eq!(p.coeff(&[1, 3]), 4.0);
        assert!(p.is_homogeneous_in(0..2));
        assert_eq!(p.degree(), Some(4));
    }

    #[test]
    fn cancellation_removes_terms() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let p = x.add(&y).mul(&x.sub(&y)).sub(&x.pow(2)).add(&y.pow(2));
        assert!(p.is_zero());
    }

    #[test]
    fn evaluation_and_expectation() {
        let x = Poly::var(2, 0);
        let y = Poly::var(2, 1);
        let g = x.pow(2).add(&y.pow(2)).sub(&Poly::constant(2, 1.0));
        assert_eq!(g.eval(&[2.0, 1.0]), 4.0);
        // E[g²] for standard normal (x, y): 3 + 2 + 3 − 4 + 1 = 5
        let gauss = |e: &[u32]| -> f64 {
            let m = |k: u32| match k {
                0 => 1.0,
                2 => 1.0,
                4 => 3.0,
                _ if k % 2 == 1 => 0.0,
                _ => unreachable!(),
            };
            m(e[0]) * m(e[1])
        };
        assert_eq!(g.pow(2).expectation(gauss), 5.0);
    }
}
