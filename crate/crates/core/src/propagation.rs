//! Exact moment propagation for the stochastic Dubins model.
//!
//! The dynamics
//! `x⁺ = x + v cos θ`, `y⁺ = y + v sin θ`, `v⁺ = v + w_v`, `θ⁺ = θ + w_θ`
//! are linear in the augmented state `(x, y, v cos θ, v sin θ, cos θ, sin θ)`
//! with coefficients that are polynomials in the control atoms
//! `w_v, cos w_θ, sin w_θ`. Monomials of degree α in the augmented state
//! therefore map to linear combinations of monomials of the same degree,
//! and taking expectations over controls that are independent of the state
//! gives one matrix per order.
//!
//! Propagation keeps the position part centred on the running mean so that
//! high-order moments keep their precision far from the origin.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, Vector2};
use thiserror::Error;

use crate::poly::{exponent, Poly};
use crate::scenario::{AgentKind, AgentPrediction, InitialState, Mixture2, ModeModel};
use crate::statmoments::{binomial, control_trig_table, translate_moments, MomentArray2, MomentError, ScalarDist, TrigMomentSet};

/// Dimension of the augmented state.
pub const STATE_DIM: usize = 6;
/// Highest supported moment order.
pub const MAX_PROPAGATION_ORDER: usize = 16;
/// Labels of the augmented state variables.
pub const STATE_LABELS: [&str; STATE_DIM] = ["x", "y", "vc", "vs", "c", "s"];

/// Index of the control atoms in the 9-variable polynomials used here.
const W: usize = 6;
const CW: usize = 7;
const SW: usize = 8;
const NVARS: usize = 9;

/// Upper bound on cached matrix non-zeros before the cache is flushed.
const MATRIX_CACHE_NNZ: usize = 40_000_000;

/// Exponents over the augmented state `(x, y, vc, vs, c, s)`.
pub type Monomial = [u32; STATE_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagationError {
    #[error("moment order {requested} exceeds the supported maximum {max}")]
    Order { requested: usize, max: usize },
    #[error("control moment table covers powers ≤ {have_power} and trig order ≤ {have_trig}, order {alpha} needs both ≥ {alpha}")]
    TableGap { alpha: usize, have_power: usize, have_trig: usize },
    #[error("{0}")]
    Moment(#[from] MomentError),
    #[error("inconsistent modes: {0}")]
    Mode(String),
    #[error("prediction kind {0} cannot be propagated")]
    Kind(&'static str),
    #[error("{needed} control steps required, {have} supplied")]
    Horizon { needed: usize, have: usize },
}

fn check_order(alpha: usize) -> Result<(), PropagationError> {
    if alpha > MAX_PROPAGATION_ORDER {
        Err(PropagationError::Order {
            requested: alpha,
            max: MAX_PROPAGATION_ORDER,
        })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// monomial bases

const BINOM_N: usize = MAX_PROPAGATION_ORDER + STATE_DIM + 2;

/// Exact binomial coefficients for the small arguments used in ranking.
fn choose(n: usize, k: usize) -> usize {
    static TABLE: OnceLock<Vec<[usize; BINOM_N]>> = OnceLock::new();
    let t = TABLE.get_or_init(|| {
        let mut t = vec![[0usize; BINOM_N]; BINOM_N];
        for i in 0..BINOM_N {
            t[i][0] = 1;
            for j in 1..=i {
                t[i][j] = t[i - 1][j - 1] + t[i - 1][j];
            }
        }
        t
    });
    t[n][k]
}

/// Number of monomials of degree `d` in `n` variables.
fn count(d: usize, n: usize) -> usize {
    if n == 0 {
        return usize::from(d == 0);
    }
    choose(d + n - 1, n - 1)
}

/// Position of `e` among the monomials of the same degree listed in
/// graded-lex order (first variable descending).
fn rank(e: &[u32]) -> usize {
    let n = e.len();
    let mut rem: usize = e.iter().map(|&v| v as usize).sum();
    let mut r = 0;
    for (v, &ev) in e.iter().enumerate().take(n.saturating_sub(1)) {
        let ev = ev as usize;
        let m = n - v - 1;
        if rem > ev {
            // monomials whose exponent in this variable exceeds ev
            r += choose(rem - ev - 1 + m, m);
        }
        rem -= ev;
    }
    r
}

/// All monomials of degree `d` in `n` variables in graded-lex order.
fn monomials(d: usize, n: usize) -> Vec<Vec<u32>> {
    fn rec(d: usize, n: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if n == 1 {
            prefix.push(d as u32);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=d).rev() {
            prefix.push(e as u32);
            rec(d - e, n - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(count(d, n));
    if n > 0 {
        rec(d, n, &mut Vec::new(), &mut out);
    }
    out
}

/// Augmented-state monomials of degree `alpha` in graded-lex order.
pub fn state_monomials(alpha: usize) -> Vec<Monomial> {
    monomials(alpha, STATE_DIM)
        .into_iter()
        .map(|v| v.try_into().expect("six exponents"))
        .collect()
}

/// Number of augmented-state monomials of degree `alpha`, `C(α+5, 5)`.
pub fn state_dim(alpha: usize) -> usize {
    count(alpha, STATE_DIM)
}

/// Index of `beta` in [`state_monomials`] of its degree.
pub fn state_index(beta: &Monomial) -> usize {
    rank(beta)
}

pub fn monomial_label(beta: &Monomial) -> String {
    let parts: Vec<String> = beta
        .iter()
        .zip(STATE_LABELS)
        .filter(|(e, _)| **e > 0)
        .map(|(e, l)| if *e == 1 { l.to_string() } else { format!("{l}^{e}") })
        .collect();
    if parts.is_empty() {
        "1".into()
    } else {
        parts.join("*")
    }
}

// ---------------------------------------------------------------------------
// symbolic transition

fn atom(exps: &[(usize, u32)], coef: f64) -> Poly {
    let mut e = [0u32; NVARS];
    for &(i, p) in exps {
        e[i] = p;
    }
    Poly::monomial(NVARS, &e, coef)
}

/// The transition `A(w)`: entry `(i, j)` is the coefficient of state
/// variable `j` in the update of state variable `i`, as a polynomial in the
/// control atoms `w_v` (variable 6), `cos w_θ` (7) and `sin w_θ` (8).
pub fn augmented_transition() -> [[Poly; STATE_DIM]; STATE_DIM] {
    let z = || Poly::zero(NVARS);
    let one = || atom(&[], 1.0);
    let c = |s: f64| atom(&[(CW, 1)], s);
    let s = |k: f64| atom(&[(SW, 1)], k);
    let wc = |k: f64| atom(&[(W, 1), (CW, 1)], k);
    let ws = |k: f64| atom(&[(W, 1), (SW, 1)], k);
    [
        [one(), z(), one(), z(), z(), z()],
        [z(), one(), z(), one(), z(), z()],
        [z(), z(), c(1.0), s(-1.0), wc(1.0), ws(-1.0)],
        [z(), z(), s(1.0), c(1.0), ws(1.0), wc(1.0)],
        [z(), z(), z(), z(), c(1.0), s(-1.0)],
        [z(), z(), z(), z(), s(1.0), c(1.0)],
    ]
}

/// Rows of `A(w) x` as polynomials in state and control atoms.
fn transition_rows() -> [Poly; STATE_DIM] {
    let a = augmented_transition();
    std::array::from_fn(|i| {
        (0..STATE_DIM).fold(Poly::zero(NVARS), |acc, j| acc.add(&a[i][j].mul(&Poly::var(NVARS, j))))
    })
}

/// `Π_i (A(w) x)_i^{β_i}`: a polynomial homogeneous of degree `|β|` in the
/// state whose coefficients are polynomials in the control atoms.
pub fn expand_monomial(beta: &Monomial) -> Result<Poly, PropagationError> {
    check_order(beta.iter().sum::<u32>() as usize)?;
    let rows = transition_rows();
    let mut p = Poly::constant(NVARS, 1.0);
    for (i, &e) in beta.iter().enumerate() {
        for _ in 0..e {
            p = p.mul(&rows[i]);
        }
    }
    Ok(p)
}

/// Expansions of every monomial of the `(vc, vs, c, s)` block up to a
/// given order, built by prefix multiplication. Independent of the control
/// distribution, so it is built once and shared.
struct BlockExpansions {
    order: usize,
    /// `memo[k][rank]` for block monomials of degree `k`.
    memo: Vec<Vec<Poly>>,
}

impl BlockExpansions {
    fn build(order: usize) -> Self {
        let rows = transition_rows();
        let mut memo: Vec<Vec<Poly>> = vec![vec![Poly::constant(NVARS, 1.0)]];
        for k in 1..=order {
            let level: Vec<Poly> = monomials(k, 4)
                .into_iter()
                .map(|b| {
                    let i = b.iter().position(|&e| e > 0).expect("positive degree");
                    let mut prev = b.clone();
                    prev[i] -= 1;
                    memo[k - 1][rank(&prev)].mul(&rows[2 + i])
                })
                .collect();
            memo.push(level);
        }
        BlockExpansions { order, memo }
    }
}

fn block_expansions(order: usize) -> Arc<BlockExpansions> {
    static CACHE: OnceLock<RwLock<Option<Arc<BlockExpansions>>>> = OnceLock::new();
    let lock = CACHE.get_or_init(|| RwLock::new(None));
    if let Some(b) = lock.read().expect("cache lock").as_ref() {
        if b.order >= order {
            return b.clone();
        }
    }
    let mut guard = lock.write().expect("cache lock");
    if let Some(b) = guard.as_ref() {
        if b.order >= order {
            return b.clone();
        }
    }
    let built = Arc::new(BlockExpansions::build(order));
    *guard = Some(built.clone());
    built
}

/// Block expansions with control expectations taken: for each block
/// monomial, `(rank of output block monomial, coefficient)` pairs.
struct NumericBlock {
    levels: Vec<Vec<Vec<(u32, f64)>>>,
}

impl NumericBlock {
    fn new(order: usize, table: &TrigMomentSet) -> Result<Self, PropagationError> {
        check_table(order, table)?;
        let sym = block_expansions(order);
        let mut levels = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let mut scratch = vec![0.0; count(k, 4)];
            let mut mark = vec![false; count(k, 4)];
            let mut touched: Vec<u32> = Vec::new();
            let level = sym.memo[k]
                .iter()
                .map(|p| {
                    for &(key, coef) in p.terms() {
                        let g = [exponent(key, 2), exponent(key, 3), exponent(key, 4), exponent(key, 5)];
                        let e = table
                            .get(exponent(key, W) as usize, exponent(key, CW) as usize, exponent(key, SW) as usize)
                            .expect("table coverage checked");
                        let r = rank(&g);
                        if !mark[r] {
                            mark[r] = true;
                            touched.push(r as u32);
                        }
                        scratch[r] += coef * e;
                    }
                    touched.sort_unstable();
                    let row: Vec<(u32, f64)> = touched
                        .iter()
                        .map(|&r| {
                            mark[r as usize] = false;
                            (r, std::mem::take(&mut scratch[r as usize]))
                        })
                        .filter(|&(_, v)| v != 0.0)
                        .collect();
                    touched.clear();
                    row
                })
                .collect();
            levels.push(level);
        }
        Ok(NumericBlock { levels })
    }
}

fn check_table(alpha: usize, table: &TrigMomentSet) -> Result<(), PropagationError> {
    if table.max_power() < alpha || table.max_trig() < alpha {
        return Err(PropagationError::TableGap {
            alpha,
            have_power: table.max_power(),
            have_trig: table.max_trig(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// moment matrices

/// Sparse (CSR) moment-state matrix of one order: row β, column γ holds the
/// expected coefficient of `x^γ` in the expansion of `(x⁺)^β`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrix {
    alpha: usize,
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl MomentMatrix {
    pub fn order(&self) -> usize {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        match self.cols[lo..hi].binary_search(&(col as u32)) {
            Ok(i) => self.vals[lo + i],
            Err(_) => 0.0,
        }
    }

    /// Sparse row as `(column, value)` pairs.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.cols[lo..hi].iter().zip(&self.vals[lo..hi]).map(|(&c, &v)| (c as usize, v))
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|r| {
                let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
                self.cols[lo..hi].iter().zip(&self.vals[lo..hi]).map(|(&c, &v)| v * x[c as usize]).sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for (c, v) in self.row(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    /// Dense CSV with monomial labels on the first row and column.
    pub fn to_csv(&self) -> String {
        let labels: Vec<String> = state_monomials(self.alpha).iter().map(monomial_label).collect();
        let mut out = String::from("row");
        for l in &labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (r, l) in labels.iter().enumerate() {
            out.push_str(l);
            let mut dense = vec![0.0; self.dim];
            for (c, v) in self.row(r) {
                dense[c] = v;
            }
            for v in dense {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn assemble(alpha: usize, block: &NumericBlock) -> MomentMatrix {
    let dim = state_dim(alpha);
    let mut row_ptr = Vec::with_capacity(dim + 1);
    row_ptr.push(0);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut scratch = vec![0.0; dim];
    let mut mark = vec![false; dim];
    let mut touched: Vec<u32> = Vec::new();
    for beta in state_monomials(alpha) {
        let (bx, by) = (beta[0], beta[1]);
        let b4 = [beta[2], beta[3], beta[4], beta[5]];
        let k = (alpha as u32 - bx - by) as usize;
        let terms = &block.levels[k][rank(&b4)];
        for i in 0..=bx {
            for j in 0..=by {
                let coef = binomial(bx as usize, i as usize) * binomial(by as usize, j as usize);
                for &(g, v) in terms {
                    let g4 = &monomials_cached(k)[g as usize];
                    let out = [bx - i, by - j, g4[0] + i, g4[1] + j, g4[2], g4[3]];
                    let c = rank(&out);
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c as u32);
                    }
                    scratch[c] += coef * v;
                }
            }
        }
        touched.sort_unstable();
        for &c in &touched {
            let v = std::mem::take(&mut scratch[c as usize]);
            mark[c as usize] = false;
            if v != 0.0 {
                cols.push(c);
                vals.push(v);
            }
        }
        touched.clear();
        row_ptr.push(vals.len());
    }
    MomentMatrix {
        alpha,
        dim,
        row_ptr,
        cols,
        vals,
    }
}

fn monomials_cached(k: usize) -> &'static [[u32; 4]] {
    static LEVELS: OnceLock<Vec<Vec<[u32; 4]>>> = OnceLock::new();
    let levels = LEVELS.get_or_init(|| {
        (0..=MAX_PROPAGATION_ORDER)
            .map(|d| monomials(d, 4).into_iter().map(|v| [v[0], v[1], v[2], v[3]]).collect())
            .collect()
    });
    &levels[k]
}

/// Builds the order-`alpha` moment matrix for one control table.
pub fn build_moment_matrix(alpha: usize, table: &TrigMomentSet) -> Result<MomentMatrix, PropagationError> {
    check_order(alpha)?;
    check_table(alpha, table)?;
    let block = NumericBlock::new(alpha, table)?;
    Ok(assemble(alpha, &block))
}

/// Moment matrices for all orders `1..=order` of one table, with caching
/// keyed by the table's fingerprint.
pub fn moment_matrices(order: usize, table: &TrigMomentSet) -> Result<Vec<Arc<MomentMatrix>>, PropagationError> {
    check_order(order)?;
    check_table(order, table)?;
    type Cache = RwLock<(HashMap<(usize, u64), Arc<MomentMatrix>>, usize)>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new((HashMap::new(), 0)));
    let fp = table.fingerprint();
    {
        let guard = cache.read().expect("cache lock");
        let hits: Option<Vec<_>> = (1..=order).map(|a| guard.0.get(&(a, fp)).cloned()).collect();
        if let Some(h) = hits {
            return Ok(h);
        }
    }
    let block = NumericBlock::new(order, table)?;
    let built: Vec<Arc<MomentMatrix>> = (1..=order).map(|a| Arc::new(assemble(a, &block))).collect();
    let mut guard = cache.write().expect("cache lock");
    let added: usize = built.iter().map(|m| m.nnz()).sum();
    if guard.1 + added > MATRIX_CACHE_NNZ {
        guard.0.clear();
        guard.1 = 0;
    }
    for (a, m) in built.iter().enumerate() {
        if guard.0.insert((a + 1, fp), m.clone()).is_none() {
            guard.1 += m.nnz();
        }
    }
    Ok(built)
}

// ---------------------------------------------------------------------------
// moment vectors and recursion

/// `E[x_aug^β]` for all `|β| = α`, graded-lex ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStateVector {
    pub alpha: usize,
    pub values: Vec<f64>,
}

impl MomentStateVector {
    pub fn get(&self, beta: &Monomial) -> f64 {
        assert_eq!(beta.iter().sum::<u32>() as usize, self.alpha);
        self.values[state_index(beta)]
    }
}

fn augmented_point(s: &InitialState) -> [f64; STATE_DIM] {
    let (c, si) = (s.theta.cos(), s.theta.sin());
    [s.x, s.y, s.v * c, s.v * si, c, si]
}

fn point_vector(p: &[f64; STATE_DIM], alpha: usize) -> MomentStateVector {
    let values = state_monomials(alpha)
        .iter()
        .map(|b| b.iter().zip(p).map(|(&e, &v)| v.powi(e as i32)).product())
        .collect();
    MomentStateVector { alpha, values }
}

/// Moments of a known, deterministic initial state.
pub fn initial_augmented_moments(state: &InitialState, alpha: usize) -> Result<MomentStateVector, PropagationError> {
    check_order(alpha)?;
    Ok(point_vector(&augmented_point(state), alpha))
}

/// Position moments after one step: raw moments of `position − center`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedStep {
    pub center: Vector2<f64>,
    pub centered: MomentArray2,
}

impl PropagatedStep {
    /// Raw moments of `position − p`.
    pub fn about(&self, p: &Vector2<f64>) -> MomentArray2 {
        translate_moments(&self.centered, &(p - self.center))
    }
}

/// Recursion `E[x_{t+1}^α] = A_α E[x_t^α]` on uncentred moments. Step `k`
/// of the output is the state after applying `tables[k]`.
pub fn propagate_raw(
    init: &[MomentStateVector],
    tables: &[TrigMomentSet],
    horizon: usize,
) -> Result<Vec<Vec<MomentStateVector>>, PropagationError> {
    if tables.len() < horizon {
        return Err(PropagationError::Horizon {
            needed: horizon,
            have: tables.len(),
        });
    }
    let order = init.iter().map(|v| v.alpha).max().unwrap_or(0);
    let mut cur = init.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for table in &tables[..horizon] {
        let mats = moment_matrices(order, table)?;
        cur = cur
            .iter()
            .map(|v| MomentStateVector {
                alpha: v.alpha,
                values: mats[v.alpha - 1].apply(&v.values),
            })
            .collect();
        out.push(cur.clone());
    }
    Ok(out)
}

/// Moments of every order `0..=order`, position part centred.
struct CenteredStore {
    order: usize,
    levels: Vec<Vec<f64>>,
    monos: Vec<Vec<Monomial>>,
}

impl CenteredStore {
    fn new(point: &[f64; STATE_DIM], order: usize) -> Self {
        let mut p = *point;
        p[0] = 0.0;
        p[1] = 0.0;
        CenteredStore {
            order,
            levels: (0..=order).map(|a| point_vector(&p, a).values).collect(),
            monos: (0..=order).map(state_monomials).collect(),
        }
    }

    fn step(&mut self, mats: &[Arc<MomentMatrix>]) {
        for a in 1..=self.order {
            self.levels[a] = mats[a - 1].apply(&self.levels[a]);
        }
    }

    fn get(&self, b: &Monomial) -> f64 {
        self.levels[b.iter().sum::<u32>() as usize][state_index(b)]
    }

    /// Shifts the position part so that it is centred on its mean again;
    /// returns the shift.
    #[allow(clippy::needless_range_loop)] // `a` indexes both `monos` and `next`
    fn recenter(&mut self) -> Vector2<f64> {
        let d = Vector2::new(self.get(&[1, 0, 0, 0, 0, 0]), self.get(&[0, 1, 0, 0, 0, 0]));
        if d.x == 0.0 && d.y == 0.0 {
            return d;
        }
        let px: Vec<f64> = (0..=self.order).map(|k| (-d.x).powi(k as i32)).collect();
        let py: Vec<f64> = (0..=self.order).map(|k| (-d.y).powi(k as i32)).collect();
        let mut next = self.levels.clone();
        for a in 1..=self.order {
            for (idx, b) in self.monos[a].iter().enumerate() {
                let (bx, by) = (b[0], b[1]);
                if bx == 0 && by == 0 {
                    continue;
                }
                let mut acc = 0.0;
                for i in 0..=bx {
                    let ci = binomial(bx as usize, i as usize) * px[(bx - i) as usize];
                    for j in 0..=by {
                        let mut src = *b;
                        src[0] = i;
                        src[1] = j;
                        acc += ci * binomial(by as usize, j as usize) * py[(by - j) as usize] * self.get(&src);
                    }
                }
                next[a][idx] = acc;
            }
        }
        self.levels = next;
        // the first moments are exactly zero after the shift
        self.levels[1][state_index(&[1, 0, 0, 0, 0, 0])] = 0.0;
        self.levels[1][state_index(&[0, 1, 0, 0, 0, 0])] = 0.0;
        d
    }

    fn position(&self) -> MomentArray2 {
        let mut m = MomentArray2::zeros(self.order);
        for s in 0..=self.order {
            for b in 0..=s as u32 {
                let a = s as u32 - b;
                m.set(a as usize, b as usize, self.get(&[a, b, 0, 0, 0, 0]));
            }
        }
        m
    }

    /// `E[cos²θ] + E[sin²θ]`.
    fn trig_norm(&self) -> Option<f64> {
        (self.order >= 2).then(|| self.get(&[0, 0, 0, 0, 2, 0]) + self.get(&[0, 0, 0, 0, 0, 2]))
    }
}

/// Propagates a known initial state through per-step control tables and
/// returns position moments (orders `0..=order`) for steps `1..=T`.
pub fn propagate(
    init: &InitialState,
    tables: &[TrigMomentSet],
    order: usize,
) -> Result<Vec<PropagatedStep>, PropagationError> {
    Ok(propagate_with_diagnostics(init, tables, order)?.0)
}

/// As [`propagate`], also returning `E[cos²θ_t] + E[sin²θ_t]` per step
/// (when `order ≥ 2`).
pub fn propagate_with_diagnostics(
    init: &InitialState,
    tables: &[TrigMomentSet],
    order: usize,
) -> Result<(Vec<PropagatedStep>, Vec<Option<f64>>), PropagationError> {
    check_order(order)?;
    let point = augmented_point(init);
    let mut store = CenteredStore::new(&point, order);
    let mut center = Vector2::new(init.x, init.y);
    let mut steps = Vec::with_capacity(tables.len());
    let mut norms = Vec::with_capacity(tables.len());
    for table in tables {
        let mats = moment_matrices(order, table)?;
        store.step(&mats);
        center += store.recenter();
        steps.push(PropagatedStep {
            center,
            centered: store.position(),
        });
        norms.push(store.trig_norm());
    }
    Ok((steps, norms))
}

// ---------------------------------------------------------------------------
// control predictions

/// Control tables derived from a control prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlTables {
    /// One mixed table per step.
    PerStep(Vec<TrigMomentSet>),
    /// One table sequence per persistent mode, with its weight.
    PerMode(Vec<(f64, Vec<TrigMomentSet>)>),
}

fn component_table(m: &Mixture2, i: usize, order: usize) -> Result<TrigMomentSet, PropagationError> {
    let (_, c) = &m.components()[i];
    let wv = ScalarDist::gaussian(c.mean.x, c.cov[(0, 0)])?;
    let wt = ScalarDist::gaussian(c.mean.y, c.cov[(1, 1)])?;
    Ok(control_trig_table(&wv, &wt, order, order)?)
}

/// Per-step tables whose entries are weight sums of the component entries,
/// or per-mode sequences for persistent modes.
pub fn control_prediction_to_tables(pred: &AgentPrediction, order: usize) -> Result<ControlTables, PropagationError> {
    if pred.kind() != AgentKind::ControlGmm {
        return Err(PropagationError::Kind(pred.kind().as_str()));
    }
    check_order(order)?;
    match pred.mode_model() {
        ModeModel::PerStep => pred
            .steps()
            .iter()
            .map(|m| {
                let tables = (0..m.len()).map(|i| component_table(m, i, order)).collect::<Result<Vec<_>, _>>()?;
                let parts: Vec<(f64, &TrigMomentSet)> = m.weights().zip(tables.iter()).collect();
                Ok(TrigMomentSet::weighted_sum(&parts).expect("same-shape tables"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(ControlTables::PerStep),
        ModeModel::Constant => {
            let weights = pred
                .constant_weights()
                .ok_or_else(|| PropagationError::Mode("constant-mode weights vary across steps".into()))?;
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let seq = pred
                        .steps()
                        .iter()
                        .map(|m| component_table(m, i, order))
                        .collect::<Result<Vec<_>, _>>()?;
                    Ok((w, seq))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(ControlTables::PerMode)
        }
    }
}

/// Position moments at one step, possibly a mixture over persistent modes.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionMoments {
    pub parts: Vec<(f64, PropagatedStep)>,
}

impl PositionMoments {
    /// Raw moments of `position − p`, mixed over modes.
    pub fn about(&self, p: &Vector2<f64>) -> MomentArray2 {
        let order = self.parts[0].1.centered.order();
        let mut m = MomentArray2::zeros(order);
        for (w, s) in &self.parts {
            m.add_scaled(*w, &s.about(p));
        }
        m
    }

    /// Per-mode raw moments of `position − p`.
    pub fn modes_about(&self, p: &Vector2<f64>) -> Vec<(f64, MomentArray2)> {
        self.parts.iter().map(|(w, s)| (*w, s.about(p))).collect()
    }

    pub fn mean(&self) -> Vector2<f64> {
        self.parts.iter().map(|(w, s)| *w * (s.center + s.centered.mean())).sum()
    }
}

/// Position moments up to `order` for every step of a control prediction.
pub fn propagate_prediction(pred: &AgentPrediction, order: usize) -> Result<Vec<PositionMoments>, PropagationError> {
    let init = pred.initial_state().ok_or(PropagationError::Kind(pred.kind().as_str()))?;
    match control_prediction_to_tables(pred, order)? {
        ControlTables::PerStep(tables) => Ok(propagate(init, &tables, order)?
            .into_iter()
            .map(|s| PositionMoments { parts: vec![(1.0, s)] })
            .collect()),
        ControlTables::PerMode(modes) => {
            let runs = modes
                .iter()
                .map(|(w, t)| Ok((*w, propagate(init, t, order)?)))
                .collect::<Result<Vec<_>, PropagationError>>()?;
            let horizon = pred.horizon();
            Ok((0..horizon)
                .map(|t| PositionMoments {
                    parts: runs.iter().map(|(w, r)| (*w, r[t].clone())).collect(),
                })
                .collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det_table(wv: f64, wt: f64, order: usize) -> TrigMomentSet {
        control_trig_table(&ScalarDist::point(wv), &ScalarDist::point(wt), order, order).unwrap()
    }

    fn state(x: f64, y: f64, v: f64, theta: f64) -> InitialState {
        InitialState { x, y, v, theta }
    }

    #[test]
    fn ranking_matches_enumeration() {
        for d in 0..6 {
            for (i, m) in monomials(d, 4).iter().enumerate() {
                assert_eq!(rank(m), i);
            }
            for (i, m) in state_monomials(d).iter().enumerate() {
                assert_eq!(state_index(m), i);
            }
        }
        assert_eq!(state_monomials(1)[0], [1, 0, 0, 0, 0, 0]);
        assert_eq!(state_dim(2), 21);
        assert_eq!(state_dim(12), 6188);
    }

    #[test]
    fn transition_at_zero_noise() {
        let a = augmented_transition();
        let zero = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let m: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|p| p.eval(&zero)).collect()).collect();
        let want = [
            [1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ];
        for i in 0..6 {
            assert_eq!(m[i], want[i]);
        }
    }

    #[test]
    fn expansion_of_position() {
        let p = expand_monomial(&[1, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.coeff(&[1]), 1.0);
        assert_eq!(p.coeff(&[0, 0, 1]), 1.0);
    }

    #[test]
    fn speed_is_preserved_without_acceleration() {
        // (vc⁺)² + (vs⁺)² with w_v = 0 reduces to vc² + vs² once C² + S² = 1
        let p = expand_monomial(&[0, 0, 2, 0, 0, 0]).unwrap().add(&expand_monomial(&[0, 0, 0, 2, 0, 0]).unwrap());
        let th: f64 = 0.37;
        for &(vc, vs) in &[(0.3, -1.2), (2.0, 0.5)] {
            let x = [0.0, 0.0, vc, vs, 0.6, 0.8, 0.0, th.cos(), th.sin()];
            assert!((p.eval(&x) - (vc * vc + vs * vs)).abs() < 1e-14);
        }
    }

    #[test]
    fn expansions_are_homogeneous() {
        for d in 1..=4 {
            for b in state_monomials(d) {
                let p = expand_monomial(&b).unwrap();
                assert!(p.is_homogeneous_in(0..STATE_DIM), "{b:?}");
                assert_eq!(
                    p.terms().iter().map(|t| (0..6).map(|i| exponent(t.0, i)).sum::<u32>()).max(),
                    Some(d as u32)
                );
            }
        }
        assert!(matches!(expand_monomial(&[17, 0, 0, 0, 0, 0]), Err(PropagationError::Order { .. })));
    }

    #[test]
    fn fast_matrix_matches_direct_expansion() {
        let table = control_trig_table(
            &ScalarDist::gaussian(0.1, 0.01).unwrap(),
            &ScalarDist::gaussian(0.05, 0.04).unwrap(),
            4,
            4,
        )
        .unwrap();
        for alpha in 1..=4 {
            let m = build_moment_matrix(alpha, &table).unwrap();
            for (r, b) in state_monomials(alpha).iter().enumerate() {
                let p = expand_monomial(b).unwrap();
                let mut want = vec![0.0; state_dim(alpha)];
                for &(k, c) in p.terms() {
                    let g: Monomial = std::array::from_fn(|i| exponent(k, i));
                    let e = table
                        .get(exponent(k, W) as usize, exponent(k, CW) as usize, exponent(k, SW) as usize)
                        .unwrap();
                    want[state_index(&g)] += c * e;
                }
                for (c, w) in want.iter().enumerate() {
                    assert!((m.get(r, c) - w).abs() < 1e-14, "α={alpha} row {b:?} col {c}");
                }
            }
        }
    }

    #[test]
    fn first_order_matrix_pattern() {
        let table = control_trig_table(
            &ScalarDist::point(0.1),
            &ScalarDist::gaussian(0.0, 0.04).unwrap(),
            1,
            1,
        )
        .unwrap();
        let m = build_moment_matrix(1, &table).unwrap().to_dense();
        let e = (-0.02f64).exp();
        // row vc: [0 0 E[C] −E[S] E[wC] −E[wS]]
        assert_eq!(m.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, e, 0.0, 0.1 * e, 0.0]);
        assert_eq!(m.row(4).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 0.0, e, 0.0]);
        assert_eq!(build_moment_matrix(2, &table), Err(PropagationError::TableGap { alpha: 2, have_power: 1, have_trig: 1 }));
        let zero = build_moment_matrix(1, &det_table(0.0, 0.0, 1)).unwrap().to_dense();
        assert_eq!(zero[(0, 2)], 1.0);
        assert_eq!(zero[(2, 2)], 1.0);
        assert_eq!(build_moment_matrix(2, &det_table(0.0, 0.0, 2)).unwrap().dim(), 21);
    }

    #[test]
    fn initial_moments() {
        let s = state(0.0, 0.0, 1.0, 0.0);
        assert_eq!(initial_augmented_moments(&s, 1).unwrap().values, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let m2 = initial_augmented_moments(&s, 2).unwrap();
        assert_eq!(m2.get(&[0, 0, 2, 0, 0, 0]), 1.0);
        assert_eq!(m2.get(&[2, 0, 0, 0, 0, 0]), 0.0);
        let s = state(1.5, -2.0, 0.7, 0.4);
        let m1 = initial_augmented_moments(&s, 1).unwrap();
        let m2 = initial_augmented_moments(&s, 2).unwrap();
        for b in state_monomials(2) {
            let prod: f64 = (0..6).map(|i| m1.values[i].powi(b[i] as i32)).product();
            assert!((m2.get(&b) - prod).abs() < 1e-15);
        }
    }

    #[test]
    fn straight_line_without_noise() {
        let tables = vec![det_table(0.0, 0.0, 4); 30];
        let steps = propagate(&state(0.0, 0.0, 1.0, 0.0), &tables, 4).unwrap();
        for (t, s) in steps.iter().enumerate() {
            let m = s.about(&Vector2::zeros());
            assert!((m.get(1, 0) - (t + 1) as f64).abs() < 1e-12);
            assert!(m.get(0, 1).abs() < 1e-12);
            assert!(m.cov().abs().max() < 1e-9);
        }
    }

    #[test]
    fn heading_noise_second_step_mean() {
        let sigma2: f64 = 0.09;
        let t = control_trig_table(&ScalarDist::point(0.0), &ScalarDist::gaussian(0.0, sigma2).unwrap(), 2, 2).unwrap();
        let steps = propagate(&state(0.0, 0.0, 1.0, 0.0), &[t.clone(), t], 2).unwrap();
        let m = steps[1].about(&Vector2::zeros());
        assert!((m.get(1, 0) - (1.0 + (-sigma2 / 2.0).exp())).abs() < 1e-14);
    }

    #[test]
    fn centred_and_raw_recursions_agree() {
        let t = control_trig_table(
            &ScalarDist::gaussian(0.05, 0.0025).unwrap(),
            &ScalarDist::gaussian(0.02, 0.0025).unwrap(),
            4,
            4,
        )
        .unwrap();
        let s = state(1.0, 2.0, 1.2, 0.3);
        let tables = vec![t; 5];
        let init: Vec<_> = (1..=4).map(|a| initial_augmented_moments(&s, a).unwrap()).collect();
        let raw = propagate_raw(&init, &tables, 5).unwrap();
        let cen = propagate(&s, &tables, 4).unwrap();
        for t in 0..5 {
            let m = cen[t].about(&Vector2::zeros());
            for ((a, b), v) in m.iter().skip(1) {
                let r = raw[t][a + b - 1].get(&[a as u32, b as u32, 0, 0, 0, 0]);
                assert!((v - r).abs() < 1e-11 * r.abs().max(1.0), "t={t} ({a},{b}) {v} vs {r}");
            }
        }
    }

    #[test]
    fn pythagorean_closure() {
        let t = control_trig_table(
            &ScalarDist::gaussian(0.0, 0.01).unwrap(),
            &ScalarDist::gaussian(0.1, 0.25).unwrap(),
            2,
            2,
        )
        .unwrap();
        let (_, norms) = propagate_with_diagnostics(&state(0.0, 0.0, 1.0, 0.3), &vec![t; 30], 2).unwrap();
        for n in norms {
            assert!((n.unwrap() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cached_matrices_are_bit_identical() {
        let t = control_trig_table(
            &ScalarDist::gaussian(0.1, 0.01).unwrap(),
            &ScalarDist::gaussian(0.0, 0.01).unwrap(),
            3,
            3,
        )
        .unwrap();
        let a = moment_matrices(3, &t).unwrap();
        let b = moment_matrices(3, &t).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(**x, **y);
            assert_eq!(**x, build_moment_matrix(x.order(), &t).unwrap());
        }
    }

    #[test]
    fn csv_dump_has_labels() {
        let csv = build_moment_matrix(1, &det_table(0.0, 0.0, 1)).unwrap().to_csv();
        let first = csv.lines().next().unwrap();
        assert_eq!(first, "row,x,y,vc,vs,c,s");
        assert_eq!(csv.lines().count(), 7);
    }
}
