//! Witness synthesis and verification through PPT-mixer semidefinite programs.

mod basis;
mod solver;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::DensityMatrix;
use crate::tensor::{self, Bipartition, CMatrix, PauliString};
use crate::witness::{self, ObservableExpr, SubsetFamily, Witness};
use basis::HermBasis;
use solver::{PptProgram, SparseCol};

/// `alpha` below this value counts as detection.
pub const DETECTION_THRESHOLD: f64 = -1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverTolerances {
    pub gap: f64,
    pub feas: f64,
    pub max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { gap: 1e-7, feas: 1e-8, max_iter: 200 }
    }
}

/// Synthesis data: minimize Tr(W rho) over witnesses supported on the free coordinates.
#[derive(Clone, Debug)]
pub struct SdpProblem {
    pub n: usize,
    pub free_coords: Vec<PauliString>,
    pub target_vector: Vec<f64>,
    pub bipartitions: Vec<Bipartition>,
    pub identity_coeff: f64,
}

/// A PPT-mixer decomposition `W = P + Q^{T_A}` for one bipartition.
#[derive(Clone, Debug)]
pub struct Certificate {
    pub bipartition: Bipartition,
    pub p: CMatrix,
    pub q: CMatrix,
}

impl Certificate {
    /// Frobenius norm of `W - P - Q^{T_A}`.
    pub fn residual(&self, w: &CMatrix) -> f64 {
        let qt = tensor::partial_transpose(&self.q, self.bipartition.part()).expect("matching dimensions");
        (w - &self.p - qt).norm()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        tensor::min_eigenvalue(&self.p).min(tensor::min_eigenvalue(&self.q))
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub witness_expr: ObservableExpr,
    pub alpha: f64,
    pub certificates: Vec<Certificate>,
    pub duality_gap: f64,
    pub iterations: usize,
}

impl SdpSolution {
    pub fn max_residual(&self) -> f64 {
        let w = self.witness_expr.to_matrix();
        self.certificates.iter().map(|c| c.residual(&w)).fold(0.0, f64::max)
    }

    pub fn min_certificate_eigenvalue(&self) -> f64 {
        self.certificates.iter().map(Certificate::min_eigenvalue).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisResult {
    pub solution: SdpSolution,
    pub family: SubsetFamily,
    pub detected: bool,
    pub p_noise: Option<f64>,
}

impl SynthesisResult {
    pub fn witness(&self, label: impl Into<String>) -> Witness {
        let mut w = Witness::new(self.solution.witness_expr.clone(), self.family.clone(), label)
            .expect("solution is supported on its family");
        w.alpha = Some(self.solution.alpha);
        w.p_noise = self.p_noise;
        w
    }

    /// Witness JSON plus a `certificates` block of row-major `[re, im]` pairs.
    pub fn to_json_value(&self, label: &str) -> serde_json::Value {
        let mut v = self.witness(label).to_json_value();
        let w = self.solution.witness_expr.to_matrix();
        let certs: Vec<_> = self
            .solution
            .certificates
            .iter()
            .map(|c| {
                serde_json::json!({
                    "bipartition": c.bipartition.to_string(),
                    "p": matrix_pairs(&c.p),
                    "q": matrix_pairs(&c.q),
                    "residual": c.residual(&w),
                    "min_eigenvalue": c.min_eigenvalue(),
                })
            })
            .collect();
        let obj = v.as_object_mut().expect("witness json is an object");
        obj.insert("detected".into(), self.detected.into());
        obj.insert("duality_gap".into(), self.solution.duality_gap.into());
        obj.insert("iterations".into(), self.solution.iterations.into());
        obj.insert("certificates".into(), certs.into());
        v
    }
}

fn matrix_pairs(m: &CMatrix) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push([m[(r, c)].re, m[(r, c)].im]);
        }
    }
    out
}

fn sparse_coords(basis: &HermBasis, m: &CMatrix, scale: f64) -> SparseCol {
    basis
        .coords(m)
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-15)
        .map(|(i, &v)| (i, scale * v))
        .collect()
}

fn perms(basis: &HermBasis, n: usize, bps: &[Bipartition]) -> Vec<basis::SignedPerm> {
    bps.iter().map(|bp| basis.partial_transpose(bp.part(), n)).collect()
}

impl SdpProblem {
    pub fn new(rho: &DensityMatrix, family: &SubsetFamily) -> Result<Self> {
        let n = rho.n();
        if family.is_empty() {
            return Err(Error::InvalidFamily("family is empty".into()));
        }
        if n < 2 {
            return Err(Error::InvalidInput("at least two qubits are required".into()));
        }
        family.check_range(n)?;
        let free_coords = family.free_paulis(n);
        let target_vector = free_coords.iter().map(|p| p.expectation(rho.matrix()).re).collect();
        Ok(Self {
            n,
            free_coords,
            target_vector,
            bipartitions: Bipartition::all(n),
            identity_coeff: 1.0 / (1usize << n) as f64,
        })
    }

    pub fn solve(&self, tol: &SolverTolerances) -> Result<SdpSolution> {
        let d = 1usize << self.n;
        let basis = HermBasis::new(d);
        // scaled witness W' = I + sum w_j R_j enters the P blocks with a minus sign
        let f: Vec<SparseCol> = self.free_coords.iter().map(|p| sparse_coords(&basis, &p.to_matrix(), -1.0)).collect();
        let prog = PptProgram {
            perms: perms(&basis, self.n, &self.bipartitions),
            c_p: CMatrix::identity(d, d),
            c_q: CMatrix::zeros(d, d),
            h: vec![Vec::new(); f.len()],
            f,
            b: self.target_vector.iter().map(|r| -r).collect(),
            g0: vec![0.0; self.free_coords.len()],
            q0: CMatrix::identity(d, d) * Complex64::new(0.5, 0.0),
            basis,
        };
        let sol = solver::solve(&prog, tol)?;
        let scale = self.identity_coeff;
        let mut expr = ObservableExpr::scaled_identity(self.n, scale);
        for (p, &w) in self.free_coords.iter().zip(&sol.g) {
            expr.add_term(p.clone(), scale * w);
        }
        let alpha = scale * (1.0 + self.target_vector.iter().zip(&sol.g).map(|(r, w)| r * w).sum::<f64>());
        let certificates = certificates_from(&prog, &sol.g, &sol.q, &self.bipartitions, scale, 0.0);
        Ok(SdpSolution {
            witness_expr: expr,
            alpha,
            certificates,
            duality_gap: scale * (sol.primal_objective - sol.dual_objective).abs(),
            iterations: sol.iterations,
        })
    }
}

fn certificates_from(
    prog: &PptProgram,
    g: &[f64],
    q: &[DVector<f64>],
    bps: &[Bipartition],
    scale: f64,
    shift: f64,
) -> Vec<Certificate> {
    let s = prog.slack(g, q);
    let d = prog.basis.d();
    let shift = CMatrix::identity(d, d) * Complex64::new(shift, 0.0);
    bps.iter()
        .enumerate()
        .map(|(a, bp)| Certificate {
            bipartition: bp.clone(),
            p: tensor::hermitian_part(&(&s[2 * a] + &shift)) * Complex64::new(scale, 0.0),
            q: tensor::hermitian_part(&(&s[2 * a + 1] + &shift)) * Complex64::new(scale, 0.0),
        })
        .collect()
}

/// Optimal PPT-mixer witness for `rho` supported on `family`.
pub fn synthesize(rho: &DensityMatrix, family: &SubsetFamily, tol: &SolverTolerances) -> Result<SynthesisResult> {
    let solution = SdpProblem::new(rho, family)?.solve(tol)?;
    let detected = solution.alpha < DETECTION_THRESHOLD;
    let p_noise = if detected { witness::tolerance_from(solution.alpha, solution.witness_expr.identity_coeff()) } else { None };
    Ok(SynthesisResult { solution, family: family.clone(), detected, p_noise })
}

/// Searches a PPT-mixer decomposition of `expr` for every bipartition.
///
/// Returns `None` when the best uniform margin is negative beyond the feasibility tolerance.
pub fn verify_witness(expr: &ObservableExpr, tol: &SolverTolerances) -> Result<Option<Vec<Certificate>>> {
    let n = expr.n();
    if n < 2 {
        return Err(Error::InvalidInput("at least two qubits are required".into()));
    }
    let trace = expr.trace();
    if trace <= 0.0 {
        return Err(Error::InvalidInput(format!("witness trace {trace} must be positive")));
    }
    let d = 1usize << n;
    let basis = HermBasis::new(d);
    let bps = Bipartition::all(n);
    // normalize to Tr = d for conditioning
    let scale = d as f64 / trace;
    let w = expr.to_matrix() * Complex64::new(scale, 0.0);
    let lmin = tensor::min_eigenvalue(&w);
    let t0 = (lmin - 0.5).min(0.5) - 1.0;
    let ident = sparse_coords(&basis, &CMatrix::identity(d, d), 1.0);
    let prog = PptProgram {
        perms: perms(&basis, n, &bps),
        c_p: w,
        c_q: CMatrix::zeros(d, d),
        f: vec![ident.clone()],
        h: vec![ident],
        b: vec![1.0],
        g0: vec![t0],
        q0: CMatrix::identity(d, d) * Complex64::new(0.5, 0.0),
        basis,
    };
    let sol = solver::solve(&prog, tol)?;
    let t = sol.g[0];
    if t / scale < -tol.feas {
        return Ok(None);
    }
    Ok(Some(certificates_from(&prog, &sol.g, &sol.q, &bps, 1.0 / scale, t)))
}

/// Smallest k for which the all-k-subsets family detects `rho`; `n + 1` if none does.
pub fn edl_search(rho: &DensityMatrix, tol: &SolverTolerances) -> Result<usize> {
    let n = rho.n();
    for k in 1..=n {
        if synthesize(rho, &SubsetFamily::all_k_subsets(n, k), tol)?.detected {
            return Ok(k);
        }
    }
    Ok(n + 1)
}
