//! Orthonormal real coordinates on d x d Hermitian matrices.
//!
//! Element order: all diagonal units `E_pp`, then for each `p < q` the symmetric
//! `(E_pq + E_qp)/sqrt2` followed by the antisymmetric `i(E_pq - E_qp)/sqrt2`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::tensor::{CMatrix, QubitSubset};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Kind {
    Diag,
    Sym,
    Anti,
}

#[derive(Clone, Debug)]
pub(crate) struct HermBasis {
    d: usize,
    elems: Vec<(Kind, usize, usize)>,
    sym_index: Vec<usize>,
}

/// `T(E_k) = sign[k] * E_{perm[k]}` for a partial transpose.
#[derive(Clone, Debug)]
pub(crate) struct SignedPerm {
    pub perm: Vec<usize>,
    pub sign: Vec<f64>,
}

impl HermBasis {
    pub fn new(d: usize) -> Self {
        let mut elems: Vec<_> = (0..d).map(|p| (Kind::Diag, p, p)).collect();
        let mut sym_index = vec![usize::MAX; d * d];
        for p in 0..d {
            for q in p + 1..d {
                sym_index[p * d + q] = elems.len();
                elems.push((Kind::Sym, p, q));
                elems.push((Kind::Anti, p, q));
            }
        }
        Self { d, elems, sym_index }
    }

    pub fn dim(&self) -> usize {
        self.elems.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Matrix-unit expansion of element `k` as (row, col, weight) triples.
    fn units(&self, k: usize) -> ([(usize, usize, Complex64); 2], usize) {
        let (kind, p, q) = self.elems[k];
        let h = Complex64::new(SQRT_HALF, 0.0);
        let ih = Complex64::new(0.0, SQRT_HALF);
        match kind {
            Kind::Diag => ([(p, p, Complex64::new(1.0, 0.0)), (p, p, Complex64::new(0.0, 0.0))], 1),
            Kind::Sym => ([(p, q, h), (q, p, h)], 2),
            Kind::Anti => ([(p, q, ih), (q, p, -ih)], 2),
        }
    }

    pub fn coords(&self, m: &CMatrix) -> DVector<f64> {
        let s2 = std::f64::consts::SQRT_2;
        DVector::from_iterator(
            self.dim(),
            self.elems.iter().map(|&(kind, p, q)| match kind {
                Kind::Diag => m[(p, p)].re,
                // average both triangles so non-Hermitian input maps to its Hermitian part
                Kind::Sym => s2 * 0.5 * (m[(p, q)].re + m[(q, p)].re),
                Kind::Anti => s2 * 0.5 * (m[(p, q)].im - m[(q, p)].im),
            }),
        )
    }

    pub fn matrix(&self, v: &DVector<f64>) -> CMatrix {
        let mut m = CMatrix::zeros(self.d, self.d);
        for (k, &(kind, p, q)) in self.elems.iter().enumerate() {
            match kind {
                Kind::Diag => m[(p, p)] = Complex64::new(v[k], 0.0),
                Kind::Sym => {
                    m[(p, q)].re = v[k] * SQRT_HALF;
                    m[(q, p)].re = v[k] * SQRT_HALF;
                }
                Kind::Anti => {
                    m[(p, q)].im = v[k] * SQRT_HALF;
                    m[(q, p)].im = -v[k] * SQRT_HALF;
                }
            }
        }
        m
    }

    pub fn partial_transpose(&self, subset: &QubitSubset, n: usize) -> SignedPerm {
        let mask = subset.bit_mask(n);
        let d = self.d;
        let mut perm = Vec::with_capacity(self.dim());
        let mut sign = Vec::with_capacity(self.dim());
        for &(kind, p, q) in &self.elems {
            let sw = (p ^ q) & mask;
            let (pp, qq) = (p ^ sw, q ^ sw);
            match kind {
                Kind::Diag => {
                    perm.push(p);
                    sign.push(1.0);
                }
                Kind::Sym => {
                    perm.push(self.sym_index[pp.min(qq) * d + pp.max(qq)]);
                    sign.push(1.0);
                }
                Kind::Anti => {
                    perm.push(self.sym_index[pp.min(qq) * d + pp.max(qq)] + 1);
                    sign.push(if pp < qq { 1.0 } else { -1.0 });
                }
            }
        }
        SignedPerm { perm, sign }
    }

    /// `L[k, l] = Re Tr(E_k X E_l G)`, symmetric for Hermitian X and G.
    pub fn sandwich(&self, x: &CMatrix, g: &CMatrix) -> DMatrix<f64> {
        let dim = self.dim();
        let units: Vec<_> = (0..dim).map(|k| self.units(k)).collect();
        let mut out = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let (uk, nk) = &units[k];
            for l in k..dim {
                let (ul, nl) = &units[l];
                let mut acc = Complex64::new(0.0, 0.0);
                for &(p, q, a) in &uk[..*nk] {
                    for &(r, s, b) in &ul[..*nl] {
                        acc += a * b * x[(q, r)] * g[(s, p)];
                    }
                }
                out[(k, l)] = acc.re;
                out[(l, k)] = acc.re;
            }
        }
        out
    }
}

impl SignedPerm {
    /// Coordinates of T(Y) from those of Y.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for k in 0..v.len() {
            out[self.perm[k]] = self.sign[k] * v[k];
        }
        out
    }

    /// Adjoint action: coordinates c with c[k] = sign[k] * v[perm[k]].
    pub fn apply_adjoint(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(v.len(), (0..v.len()).map(|k| self.sign[k] * v[self.perm[k]]))
    }

    /// `P^T L P` for the signed permutation matrix P with columns `sign[k] e_{perm[k]}`.
    pub fn conjugate(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        let dim = self.perm.len();
        DMatrix::from_fn(dim, dim, |k, j| self.sign[k] * self.sign[j] * l[(self.perm[k], self.perm[j])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{self, Bipartition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian(d: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let g = CMatrix::from_fn(d, d, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        tensor::hermitian_part(&g)
    }

    #[test]
    fn coords_round_trip_and_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = HermBasis::new(8);
        assert_eq!(b.dim(), 64);
        let a = random_hermitian(8, &mut rng);
        let c = random_hermitian(8, &mut rng);
        assert!((b.matrix(&b.coords(&a)) - &a).norm() < 1e-14);
        let hs = (&a * &c).trace().re;
        assert!((b.coords(&a).dot(&b.coords(&c)) - hs).abs() < 1e-12);
    }

    #[test]
    fn partial_transpose_matches_matrix_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = HermBasis::new(16);
        for bp in Bipartition::all(4) {
            let pt = b.partial_transpose(bp.part(), 4);
            let a = random_hermitian(16, &mut rng);
            let expected = tensor::partial_transpose(&a, bp.part()).unwrap();
            assert!((b.matrix(&pt.apply(&b.coords(&a))) - &expected).norm() < 1e-13, "{bp}");
            // adjoint equals inverse for an involutive signed permutation
            assert!((pt.apply_adjoint(&b.coords(&a)) - b.coords(&expected)).norm() < 1e-13);
        }
    }

    #[test]
    fn sandwich_matches_dense_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = HermBasis::new(4);
        let x = random_hermitian(4, &mut rng);
        let g = random_hermitian(4, &mut rng);
        let l = b.sandwich(&x, &g);
        for k in 0..16 {
            let mut ek = DVector::zeros(16);
            ek[k] = 1.0;
            let ek = b.matrix(&ek);
            for j in 0..16 {
                let mut el = DVector::zeros(16);
                el[j] = 1.0;
                let el = b.matrix(&el);
                let t = (&ek * &x * &el * &g).trace().re;
                assert!((l[(k, j)] - t).abs() < 1e-12);
            }
        }
    }
}
