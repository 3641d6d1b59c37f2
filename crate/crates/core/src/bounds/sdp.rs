//! Small dense semidefinite programming solver.
//!
//! Solves the standard-form pair
//!
//! ```text
//!   min ⟨C, X⟩  s.t. ⟨A_i, X⟩ = b_i,  X ⪰ 0          (primal)
//!   max bᵀy     s.t. Σ y_i A_i + Z = C,  Z ⪰ 0        (dual)
//! ```
//!
//! where `X` is block diagonal, with an infeasible-start primal-dual
//! path-following method (HKM search direction, Mehrotra predictor–corrector).
//! Problems are tiny, so every block is stored inside one dense matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    /// Maximum number of interior-point iterations.
    pub max_iter: usize,
    /// Relative tolerance on residuals and duality gap.
    pub tol: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Block-diagonal SDP in standard primal form.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    block_sizes: Vec<usize>,
    offsets: Vec<usize>,
    c: DMatrix<f64>,
    a: Vec<DMatrix<f64>>,
    b: Vec<f64>,
}

impl SdpProblem {
    pub fn new(block_sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(block_sizes.len());
        let mut n = 0;
        for s in &block_sizes {
            offsets.push(n);
            n += s;
        }
        SdpProblem {
            block_sizes,
            offsets,
            c: DMatrix::zeros(n, n),
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    fn embed(&self, parts: &[(usize, DMatrix<f64>)]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (blk, part) in parts {
            let (o, s) = (self.offsets[*blk], self.block_sizes[*blk]);
            assert_eq!(part.shape(), (s, s), "block {blk} has size {s}");
            let sym = 0.5 * (part + part.transpose());
            m.view_mut((o, o), (s, s)).copy_from(&sym);
        }
        m
    }

    /// Sets the objective block `blk` (symmetrised).
    pub fn set_objective(&mut self, blk: usize, c: DMatrix<f64>) {
        let (o, s) = (self.offsets[blk], self.block_sizes[blk]);
        let add = self.embed(&[(blk, c)]);
        let view = add.view((o, o), (s, s)).into_owned();
        self.c.view_mut((o, o), (s, s)).copy_from(&view);
    }

    /// Adds `Σ_blocks ⟨A_blk, X_blk⟩ = rhs`.
    pub fn add_constraint(&mut self, parts: &[(usize, DMatrix<f64>)], rhs: f64) {
        let m = self.embed(parts);
        self.a.push(m);
        self.b.push(rhs);
    }

    /// Extracts block `blk` of a full variable matrix.
    pub fn block(&self, x: &DMatrix<f64>, blk: usize) -> DMatrix<f64> {
        let (o, s) = (self.offsets[blk], self.block_sizes[blk]);
        x.view((o, o), (s, s)).into_owned()
    }

    fn op_a(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.a.len(), self.a.iter().map(|a| a.dot(x)))
    }

    fn op_at(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        self.a.iter().zip(y.iter()).fold(DMatrix::zeros(n, n), |acc, (a, yi)| acc + a * *yi)
    }
}

/// Solver output; `x`, `y`, `z` are the final (or best) iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn blocks(&self, p: &SdpProblem) -> Vec<DMatrix<f64>> {
        (0..p.block_sizes.len()).map(|k| p.block(&self.x, k)).collect()
    }
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (&m + m.transpose())
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Largest step `α ≤ 1` keeping `M + α·D` positive definite (with a
/// fraction-to-boundary factor).
fn step_length(m: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let l = match m.clone().cholesky() {
        Some(c) => c.l(),
        None => return 0.0,
    };
    let linv = l.try_inverse().unwrap_or_else(|| DMatrix::identity(m.nrows(), m.nrows()));
    let e = min_eig(&sym(&linv * d * linv.transpose()));
    if e >= 0.0 {
        1.0
    } else {
        (0.95 * (-1.0 / e)).min(1.0)
    }
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

fn solve_spd(m: &DMatrix<f64>, r: &DVector<f64>) -> Option<DVector<f64>> {
    match m.clone().cholesky() {
        Some(c) => Some(c.solve(r)),
        None => m.clone().lu().solve(r),
    }
}

/// Solves the SDP; see the module documentation for the form.
pub fn solve_sdp(p: &SdpProblem, opts: &SdpOptions) -> SdpSolution {
    let n = p.dim();
    let m = p.num_constraints();
    let b = DVector::from_column_slice(&p.b);
    let norm_b = b.norm();
    let norm_c = p.c.norm();
    let max_a = p.a.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let xi = (0..m)
        .map(|i| (1.0 + p.b[i].abs()) / (1.0 + p.a[i].norm()))
        .fold(1.0, f64::max)
        * (n as f64).sqrt();
    let eta = ((1.0 + max_a.max(norm_c)) / (n as f64).sqrt()).max(1.0);
    let mut x = DMatrix::identity(n, n) * xi.max(1.0);
    let mut z = DMatrix::identity(n, n) * eta;
    let mut y = DVector::zeros(m);

    let mut best: Option<SdpSolution> = None;
    let snapshot = |status, x: &DMatrix<f64>, y: &DVector<f64>, z: &DMatrix<f64>, it| {
        let rp = &b - p.op_a(x);
        let rd = &p.c - z - p.op_at(y);
        SdpSolution {
            status,
            x: x.clone(),
            y: y.clone(),
            z: z.clone(),
            primal_objective: p.c.dot(x),
            dual_objective: b.dot(y),
            primal_residual: rp.norm() / (1.0 + norm_b),
            dual_residual: rd.norm() / (1.0 + norm_c),
            iterations: it,
        }
    };
    let merit = |s: &SdpSolution| {
        s.primal_residual.max(s.dual_residual)
            + (s.primal_objective - s.dual_objective).abs() / (1.0 + s.primal_objective.abs() + s.dual_objective.abs())
    };

    for it in 0..opts.max_iter {
        let rp = &b - p.op_a(&x);
        let rd = sym(&p.c - &z - p.op_at(&y));
        let pobj = p.c.dot(&x);
        let dobj = b.dot(&y);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pres = rp.norm() / (1.0 + norm_b);
        let dres = rd.norm() / (1.0 + norm_c);
        let current = snapshot(SdpStatus::MaxIter, &x, &y, &z, it);
        if best.as_ref().is_none_or(|bst| merit(&current) < merit(bst)) {
            best = Some(current);
        }
        if pres <= opts.tol && dres <= opts.tol && gap <= opts.tol {
            return snapshot(SdpStatus::Optimal, &x, &y, &z, it);
        }
        // Farkas certificate of primal infeasibility: bᵀy → ∞ with
        // −Σ y_i A_i ⪰ 0 after normalisation
        if dobj > 1e6 * (1.0 + norm_c) {
            let cert = (&z - &p.c + &rd) / dobj;
            if min_eig(&sym(cert)) >= -1e-8 {
                return snapshot(SdpStatus::Infeasible, &x, &y, &z, it);
            }
        }

        let zinv = match inverse_spd(&z) {
            Some(v) => v,
            None => break,
        };
        let mu = x.dot(&z) / n as f64;
        // Schur complement M_ij = tr(A_i X A_j Z⁻¹)
        let g: Vec<DMatrix<f64>> = p.a.iter().map(|a| &x * a * &zinv).collect();
        let mut schur = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                schur[(i, j)] = p.a[i].dot(&g[j].transpose());
            }
        }
        let schur = sym(schur);
        let x_rd_zinv = &x * &rd * &zinv;

        let direction = |sigma_mu: f64, corr: Option<&DMatrix<f64>>| -> Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
            let mut inner = &zinv * sigma_mu - &x_rd_zinv;
            if let Some(c) = corr {
                inner -= c;
            }
            let rhs = &b - p.op_a(&inner);
            let dy = solve_spd(&schur, &rhs)?;
            let dz = sym(&rd - p.op_at(&dy));
            let mut dx = &zinv * sigma_mu - &x - &x * &dz * &zinv;
            if let Some(c) = corr {
                dx -= c;
            }
            Some((sym(dx), dy, dz))
        };

        // predictor
        let Some((dxa, dya, dza)) = direction(0.0, None) else { break };
        let ap = step_length(&x, &dxa);
        let ad = step_length(&z, &dza);
        let mu_aff = (&x + &dxa * ap).dot(&(&z + &dza * ad)) / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        // corrector
        let corr = &dxa * &dza * &zinv;
        let Some((dx, dy, dz)) = direction(sigma * mu, Some(&corr)) else { break };
        let ap = step_length(&x, &dx);
        let ad = step_length(&z, &dz);
        let _ = dya;
        x = sym(&x + &dx * ap);
        y += &dy * ad;
        z = sym(&z + &dz * ad);
    }
    best.unwrap_or_else(|| snapshot(SdpStatus::MaxIter, &x, &y, &z, opts.max_iter))
}
