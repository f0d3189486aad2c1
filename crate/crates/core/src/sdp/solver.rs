//! Primal-dual interior-point method for PPT-mixer programs.
//!
//! Dual form, one pair of d x d blocks per bipartition `a`:
//!
//! ```text
//! maximize   b^T g
//! subject to S_P(a) = C_P - sum_j g_j F_j - T_a(Q(q_a)) >= 0
//!            S_Q(a) = C_Q - sum_j g_j H_j + Q(q_a)      >= 0
//! ```
//!
//! `g` are global variables shared by every block pair and `q_a` are the
//! Hermitian coordinates of the per-bipartition operator. The Schur complement
//! is arrow shaped (dense in `g`, block diagonal in the `q_a`), and is reduced
//! through the per-bipartition blocks. Search directions use a Mehrotra
//! predictor-corrector under Nesterov-Todd scaling.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use super::basis::{HermBasis, SignedPerm};
use super::SolverTolerances;
use crate::error::{Error, Result};
use crate::tensor::{self, CMatrix};

const STEP_FRACTION: f64 = 0.95;
const REFINE_STEPS: usize = 1;

/// A sparse real column over Hermitian coordinates.
pub(crate) type SparseCol = Vec<(usize, f64)>;

pub(crate) struct PptProgram {
    pub basis: HermBasis,
    pub perms: Vec<SignedPerm>,
    pub c_p: CMatrix,
    pub c_q: CMatrix,
    pub f: Vec<SparseCol>,
    pub h: Vec<SparseCol>,
    pub b: Vec<f64>,
    /// Strictly dual-feasible starting point.
    pub g0: Vec<f64>,
    pub q0: CMatrix,
}

pub(crate) struct PptSolution {
    pub g: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

/// Block-diagonal iterate: index 2a holds the P block, 2a+1 the Q block.
type Blocks = Vec<CMatrix>;

fn sparse_dot(col: &SparseCol, v: &DVector<f64>) -> f64 {
    col.iter().map(|&(i, c)| c * v[i]).sum()
}

fn sparse_axpy(a: f64, col: &SparseCol, v: &mut DVector<f64>) {
    for &(i, c) in col {
        v[i] += a * c;
    }
}

fn inner(a: &Blocks, b: &Blocks) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p.conj() * q).re).sum::<f64>()).sum()
}

fn herm(m: CMatrix) -> CMatrix {
    tensor::hermitian_part(&m)
}

impl PptProgram {
    fn pairs(&self) -> usize {
        self.perms.len()
    }

    fn m(&self) -> usize {
        self.b.len()
    }

    fn total_dim(&self) -> f64 {
        (2 * self.pairs() * self.basis.d()) as f64
    }

    /// Adjoint map: block matrices of sum_i y_i A_i.
    fn adjoint(&self, g: &[f64], q: &[DVector<f64>]) -> Blocks {
        let dim = self.basis.dim();
        let mut fg = DVector::zeros(dim);
        let mut hg = DVector::zeros(dim);
        for (j, &gj) in g.iter().enumerate() {
            sparse_axpy(gj, &self.f[j], &mut fg);
            sparse_axpy(gj, &self.h[j], &mut hg);
        }
        let mut out = Vec::with_capacity(2 * self.pairs());
        for (a, perm) in self.perms.iter().enumerate() {
            out.push(self.basis.matrix(&(&fg + perm.apply(&q[a]))));
            out.push(self.basis.matrix(&(&hg - &q[a])));
        }
        out
    }

    /// Forward map: inner products of every constraint matrix with the blocks.
    fn forward(&self, y: &Blocks) -> (Vec<f64>, Vec<DVector<f64>>) {
        let mut g = vec![0.0; self.m()];
        let mut q = Vec::with_capacity(self.pairs());
        for (a, perm) in self.perms.iter().enumerate() {
            let cp = self.basis.coords(&y[2 * a]);
            let cq = self.basis.coords(&y[2 * a + 1]);
            for j in 0..self.m() {
                g[j] += sparse_dot(&self.f[j], &cp) + sparse_dot(&self.h[j], &cq);
            }
            q.push(perm.apply_adjoint(&cp) - cq);
        }
        (g, q)
    }

    fn c_blocks(&self) -> Blocks {
        (0..self.pairs()).flat_map(|_| [self.c_p.clone(), self.c_q.clone()]).collect()
    }

    pub fn slack(&self, g: &[f64], q: &[DVector<f64>]) -> Blocks {
        let ay = self.adjoint(g, q);
        self.c_blocks().iter().zip(ay).map(|(c, a)| c - a).collect()
    }
}

/// Factored Schur complement of the arrow system.
struct Schur {
    reduced: SpdSolver,
    /// Per pair: Cholesky of D_a and the coupling B_a (m x dim).
    pairs: Vec<(SpdSolver, DMatrix<f64>)>,
}

impl Schur {
    fn build(prog: &PptProgram, w: &Blocks) -> Result<Self> {
        let m = prog.m();
        let dim = prog.basis.dim();
        let parts: Vec<_> = (0..prog.pairs())
            .into_par_iter()
            .map(|a| {
                let lp = prog.basis.sandwich(&w[2 * a], &w[2 * a]);
                let lq = prog.basis.sandwich(&w[2 * a + 1], &w[2 * a + 1]);
                let perm = &prog.perms[a];
                // B_a = F^T L_P P - H^T L_Q
                let mut b = DMatrix::zeros(m, dim);
                for j in 0..m {
                    for k in 0..dim {
                        let pk = perm.perm[k];
                        let mut acc = 0.0;
                        for &(l, c) in &prog.f[j] {
                            acc += c * lp[(l, pk)];
                        }
                        acc *= perm.sign[k];
                        for &(l, c) in &prog.h[j] {
                            acc -= c * lq[(l, k)];
                        }
                        b[(j, k)] = acc;
                    }
                }
                // F^T L_P F + H^T L_Q H
                let mut mgg = DMatrix::zeros(m, m);
                for i in 0..m {
                    for j in i..m {
                        let mut acc = 0.0;
                        for &(k, ci) in &prog.f[i] {
                            for &(l, cj) in &prog.f[j] {
                                acc += ci * cj * lp[(k, l)];
                            }
                        }
                        for &(k, ci) in &prog.h[i] {
                            for &(l, cj) in &prog.h[j] {
                                acc += ci * cj * lq[(k, l)];
                            }
                        }
                        mgg[(i, j)] = acc;
                        mgg[(j, i)] = acc;
                    }
                }
                let chol = SpdSolver::new(perm.conjugate(&lp) + lq)?;
                // B D^{-1} B^T = Y^T Y with Y = L^{-1} B^T
                let y = chol.half_solve_matrix(&b.transpose());
                let corr = y.tr_mul(&y);
                Ok((mgg - corr, chol, b))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut reduced = DMatrix::zeros(m, m);
        let mut pairs = Vec::with_capacity(parts.len());
        for (r, chol, b) in parts {
            reduced += r;
            pairs.push((chol, b));
        }
        let reduced = SpdSolver::new(reduced)?;
        Ok(Self { reduced, pairs })
    }

    fn solve(&self, rg: &[f64], rq: &[DVector<f64>]) -> (Vec<f64>, Vec<DVector<f64>>) {
        let mut rhs = DVector::from_column_slice(rg);
        let dinv_r: Vec<DVector<f64>> = self.pairs.iter().zip(rq).map(|((chol, _), r)| chol.solve(r)).collect();
        for ((_, b), z) in self.pairs.iter().zip(&dinv_r) {
            rhs -= b * z;
        }
        let dg = self.reduced.solve(&rhs);
        let dq = self
            .pairs
            .iter()
            .zip(rq)
            .map(|((chol, b), r)| chol.solve(&(r - b.transpose() * &dg)))
            .collect();
        (dg.as_slice().to_vec(), dq)
    }
}

/// Cholesky of a symmetrically equilibrated SPD matrix, with a growing
/// diagonal shift when the matrix has lost numerical rank.
struct SpdSolver {
    chol: Cholesky<f64, nalgebra::Dyn>,
    scale: DVector<f64>,
}

impl SpdSolver {
    fn new(mut m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let scale = DVector::from_iterator(n, (0..n).map(|i| {
            let d = m[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        }));
        for c in 0..n {
            for r in 0..n {
                m[(r, c)] *= scale[r] * scale[c];
            }
        }
        for shift in [0.0, 1e-14, 1e-12, 1e-10, 1e-8] {
            let mut a = m.clone();
            for i in 0..n {
                a[(i, i)] += shift;
            }
            if let Some(chol) = Cholesky::new(a) {
                return Ok(Self { chol, scale });
            }
        }
        Err(Error::SolverNonConvergence { iterations: 0, gap: f64::NAN, residual: f64::NAN })
    }

    fn solve(&self, r: &DVector<f64>) -> DVector<f64> {
        let z = self.chol.solve(&r.component_mul(&self.scale));
        z.component_mul(&self.scale)
    }

    /// `L^{-1} r` for the Cholesky factor of the unscaled matrix.
    fn half_solve_matrix(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = r.clone();
        for (i, mut row) in z.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        self.chol.l_dirty().solve_lower_triangular_mut(&mut z);
        z
    }
}

/// Largest step keeping `x + t dx` positive semidefinite.
fn max_step(x: &CMatrix, dx: &CMatrix) -> f64 {
    let chol = match Cholesky::new(x.clone()) {
        Some(c) => c,
        None => return 0.0,
    };
    let l = chol.l();
    let y = l.solve_lower_triangular(dx).expect("nonsingular factor");
    let z = l.solve_lower_triangular(&y.adjoint()).expect("nonsingular factor");
    let lmin = tensor::min_eigenvalue(&herm(z));
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn block_step(x: &Blocks, dx: &Blocks) -> f64 {
    x.par_iter().zip(dx.par_iter()).map(|(a, b)| max_step(a, b)).reduce(|| f64::INFINITY, f64::min)
}

/// Nesterov-Todd scaling `W = G G^*` with `G^{-1} X G^{-*} = G^* S G = diag(v)`.
struct NtScaling {
    g: CMatrix,
    g_inv: CMatrix,
    w: CMatrix,
    v: Vec<f64>,
}

impl NtScaling {
    fn new(x: &CMatrix, s: &CMatrix) -> Option<Self> {
        let lx = Cholesky::new(x.clone())?.l();
        let m = herm(lx.adjoint() * s * &lx);
        let (lam, u) = tensor::eigh(&m);
        if lam[0] <= 0.0 {
            return None;
        }
        let d = lam.len();
        let q = DVector::from_iterator(d, lam.iter().map(|l| Complex64::new(l.powf(-0.25), 0.0)));
        let qi = DVector::from_iterator(d, lam.iter().map(|l| Complex64::new(l.powf(0.25), 0.0)));
        let g = &lx * &u * CMatrix::from_diagonal(&q);
        let lx_inv = lx.solve_lower_triangular(&CMatrix::identity(d, d))?;
        let g_inv = CMatrix::from_diagonal(&qi) * u.adjoint() * lx_inv;
        let w = herm(&g * g.adjoint());
        Some(Self { g, g_inv, w, v: lam.iter().map(|l| l.sqrt()).collect() })
    }
}

fn norm_blocks(b: &Blocks) -> f64 {
    b.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt()
}

pub(crate) fn solve(prog: &PptProgram, tol: &SolverTolerances) -> Result<PptSolution> {
    let pairs = prog.pairs();
    let d = prog.basis.d();
    let nblocks = 2 * pairs;
    let mut g = prog.g0.clone();
    let q0 = prog.basis.coords(&prog.q0);
    let mut q: Vec<DVector<f64>> = vec![q0; pairs];
    let mut s = prog.slack(&g, &q);
    let mut x: Blocks = vec![CMatrix::identity(d, d); nblocks];
    let c = prog.c_blocks();
    let b = DVector::from_column_slice(&prog.b);
    let b_norm = b.norm();
    let c_norm = norm_blocks(&c);
    let n_total = prog.total_dim();

    let mut last_gap = f64::INFINITY;
    let mut last_res = f64::INFINITY;
    for iter in 0..tol.max_iter {
        // residuals
        let (ax_g, ax_q) = prog.forward(&x);
        let rp_g: Vec<f64> = prog.b.iter().zip(&ax_g).map(|(bi, ai)| bi - ai).collect();
        let rp_q: Vec<DVector<f64>> = ax_q.iter().map(|v| -v).collect();
        let aty = prog.adjoint(&g, &q);
        let rd: Blocks = (0..nblocks).map(|i| &c[i] - &s[i] - &aty[i]).collect();

        let pobj = inner(&c, &x);
        let dobj = b.dot(&DVector::from_column_slice(&g));
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let rp_norm = (rp_g.iter().map(|v| v * v).sum::<f64>() + rp_q.iter().map(|v| v.norm_squared()).sum::<f64>()).sqrt();
        let pfeas = rp_norm / (1.0 + b_norm);
        let dfeas = norm_blocks(&rd) / (1.0 + c_norm);
        last_gap = gap;
        last_res = pfeas.max(dfeas);
        if gap <= tol.gap && pfeas <= tol.feas && dfeas <= tol.feas {
            return Ok(PptSolution {
                g,
                q,
                primal_objective: pobj,
                dual_objective: dobj,
                iterations: iter,
            });
        }

        let mu = inner(&x, &s) / n_total;
        let nt: Vec<NtScaling> = x
            .iter()
            .zip(&s)
            .map(|(xi, si)| NtScaling::new(xi, si))
            .collect::<Option<_>>()
            .ok_or(Error::SolverNonConvergence { iterations: iter, gap, residual: last_res })?;
        let w: Blocks = nt.iter().map(|t| t.w.clone()).collect();
        let schur = Schur::build(prog, &w).map_err(|_| Error::SolverNonConvergence {
            iterations: iter,
            gap,
            residual: last_res,
        })?;

        // direction for a centering target and an optional Mehrotra correction
        let direction = |sigma: f64, corr: Option<(&Blocks, &Blocks)>| {
            let gz: Blocks = (0..nblocks)
                .map(|i| {
                    let t = &nt[i];
                    let k = t.v.len();
                    let mut r = CMatrix::from_diagonal(&DVector::from_iterator(
                        k,
                        t.v.iter().map(|v| Complex64::new(sigma * mu - v * v, 0.0)),
                    ));
                    if let Some((dx_a, ds_a)) = corr {
                        let sx = &t.g_inv * &dx_a[i] * t.g_inv.adjoint();
                        let ss = t.g.adjoint() * &ds_a[i] * &t.g;
                        r -= herm(sx * ss);
                    }
                    let z = CMatrix::from_fn(k, k, |p, q| r[(p, q)] * (2.0 / (t.v[p] + t.v[q])));
                    &t.g * z * t.g.adjoint()
                })
                .collect();
            let base: Blocks = (0..nblocks).map(|i| herm(&gz[i] - &w[i] * &rd[i] * &w[i])).collect();
            let (ab_g, ab_q) = prog.forward(&base);
            let rhs_g: Vec<f64> = rp_g.iter().zip(&ab_g).map(|(r, a)| r - a).collect();
            let rhs_q: Vec<DVector<f64>> = rp_q.iter().zip(&ab_q).map(|(r, a)| r - a).collect();
            let (mut dg, mut dq) = schur.solve(&rhs_g, &rhs_q);
            for _ in 0..REFINE_STEPS {
                let ad = prog.adjoint(&dg, &dq);
                let wadw: Blocks = (0..nblocks).map(|i| herm(&w[i] * &ad[i] * &w[i])).collect();
                let (mg, mq) = prog.forward(&wadw);
                let eg: Vec<f64> = rhs_g.iter().zip(&mg).map(|(r, m)| r - m).collect();
                let eq: Vec<DVector<f64>> = rhs_q.iter().zip(&mq).map(|(r, m)| r - m).collect();
                let (cg, cq) = schur.solve(&eg, &eq);
                for (a, c) in dg.iter_mut().zip(&cg) {
                    *a += c;
                }
                for (a, c) in dq.iter_mut().zip(&cq) {
                    *a += c;
                }
            }
            let ady = prog.adjoint(&dg, &dq);
            let ds: Blocks = (0..nblocks).map(|i| &rd[i] - &ady[i]).collect();
            let dx: Blocks = (0..nblocks).map(|i| herm(&gz[i] - &w[i] * &ds[i] * &w[i])).collect();
            (dg, dq, dx, ds)
        };

        let (_, _, dx_a, ds_a) = direction(0.0, None);
        let ap = block_step(&x, &dx_a).min(1.0);
        let ad = block_step(&s, &ds_a).min(1.0);
        let x_aff: Blocks = (0..nblocks).map(|i| &x[i] + &dx_a[i] * Complex64::new(ap, 0.0)).collect();
        let s_aff: Blocks = (0..nblocks).map(|i| &s[i] + &ds_a[i] * Complex64::new(ad, 0.0)).collect();
        let mu_aff = inner(&x_aff, &s_aff) / n_total;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let (dg, dq, dx, ds) = direction(sigma, Some((&dx_a, &ds_a)));
        let ap = (STEP_FRACTION * block_step(&x, &dx)).min(1.0);
        let ad = (STEP_FRACTION * block_step(&s, &ds)).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            return Err(Error::SolverNonConvergence { iterations: iter, gap, residual: last_res });
        }
        for i in 0..nblocks {
            x[i] = herm(&x[i] + &dx[i] * Complex64::new(ap, 0.0));
            s[i] = herm(&s[i] + &ds[i] * Complex64::new(ad, 0.0));
        }
        for (gj, dgj) in g.iter_mut().zip(&dg) {
            *gj += ad * dgj;
        }
        for (qa, dqa) in q.iter_mut().zip(&dq) {
            *qa += dqa * ad;
        }
    }
    Err(Error::SolverNonConvergence { iterations: tol.max_iter, gap: last_gap, residual: last_res })
}
