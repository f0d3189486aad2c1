//! Named multiqubit states, the white-noise channel, fidelity and Schmidt quantities.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Bipartition, CMatrix, CVector, QubitSubset};

const NORM_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// The four target states studied throughout the toolkit.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NamedState {
    W3,
    W4,
    D4,
    C4,
}

impl NamedState {
    pub const ALL: [NamedState; 4] = [NamedState::W3, NamedState::W4, NamedState::D4, NamedState::C4];

    pub fn qubits(self) -> usize {
        match self {
            NamedState::W3 => 3,
            _ => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NamedState::W3 => "W3",
            NamedState::W4 => "W4",
            NamedState::D4 => "D4",
            NamedState::C4 => "C4",
        }
    }
}

impl fmt::Display for NamedState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for NamedState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W3" => Ok(NamedState::W3),
            "W4" => Ok(NamedState::W4),
            "D4" => Ok(NamedState::D4),
            "C4" => Ok(NamedState::C4),
            _ => Err(Error::UnknownState(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PureState {
    n: usize,
    amplitudes: CVector,
}

impl PureState {
    pub fn new(amplitudes: CVector) -> Result<Self> {
        let d = amplitudes.len();
        if d < 2 || !d.is_power_of_two() {
            return Err(Error::InvalidState(format!("dimension {d} is not a power of two")));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("norm {norm} differs from 1")));
        }
        Ok(Self { n: d.trailing_zeros() as usize, amplitudes })
    }

    /// Normalizes before validating.
    pub fn normalized(amplitudes: CVector) -> Result<Self> {
        let norm = amplitudes.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        Self::new(amplitudes / Complex64::new(norm, 0.0))
    }

    /// Computational basis state from a bit string like "0110".
    pub fn basis(bits: &str) -> Result<Self> {
        let n = bits.len();
        let idx = usize::from_str_radix(bits, 2).map_err(|_| Error::InvalidState(format!("bad bit string {bits:?}")))?;
        let mut v = CVector::zeros(1 << n);
        v[idx] = tensor::ONE;
        Self::new(v)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, bits: &str) -> Complex64 {
        self.amplitudes[usize::from_str_radix(bits, 2).expect("bit string")]
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix { n: self.n, matrix: &self.amplitudes * self.amplitudes.adjoint() }
    }

    pub fn projector(&self) -> CMatrix {
        &self.amplitudes * self.amplitudes.adjoint()
    }

    /// Haar-random pure state: normalized standard complex Gaussian vector.
    pub fn haar_random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let v = CVector::from_fn(1 << n, |_, _| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        Self::normalized(v).expect("gaussian vector is nonzero")
    }

    /// Places `a` on the qubits of `bp.part()` and `b` on its complement.
    pub fn product(bp: &Bipartition, a: &PureState, b: &PureState) -> Result<Self> {
        let n = bp.n();
        if a.n != bp.part().len() || b.n != bp.complement().len() {
            return Err(Error::DimensionMismatch { expected: bp.part().len(), got: a.n });
        }
        let gather = |idx: usize, subset: &QubitSubset| -> usize {
            subset.iter().fold(0, |acc, q| (acc << 1) | ((idx >> (n - q)) & 1))
        };
        let v = CVector::from_fn(1 << n, |idx, _| {
            a.amplitudes[gather(idx, bp.part())] * b.amplitudes[gather(idx, bp.complement())]
        });
        Self::new(v)
    }
}

pub fn make_state(name: NamedState) -> PureState {
    let kets: &[(&str, f64)] = match name {
        NamedState::W3 => &[("001", 1.0), ("010", 1.0), ("100", 1.0)],
        NamedState::W4 => &[("0001", 1.0), ("0010", 1.0), ("0100", 1.0), ("1000", 1.0)],
        NamedState::D4 => &[
            ("0011", 1.0),
            ("0101", 1.0),
            ("0110", 1.0),
            ("1001", 1.0),
            ("1010", 1.0),
            ("1100", 1.0),
        ],
        NamedState::C4 => &[("0000", 1.0), ("0011", 1.0), ("1100", 1.0), ("1111", -1.0)],
    };
    let n = name.qubits();
    let mut v = CVector::zeros(1 << n);
    for (bits, sign) in kets {
        v[usize::from_str_radix(bits, 2).unwrap()] = Complex64::new(*sign, 0.0);
    }
    PureState::normalized(v).expect("named states are nonzero")
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n: usize,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates Hermiticity, unit trace and positivity.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let n = tensor::qubit_count(&matrix)?;
        let dev = tensor::hermitian_deviation(&matrix);
        if dev > tensor::HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let matrix = tensor::hermitian_part(&matrix);
        let tr = tensor::real_trace(&matrix);
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = tensor::min_eigenvalue(&matrix);
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!("minimum eigenvalue {min:.3e} is negative")));
        }
        Ok(Self { n, matrix })
    }

    pub fn maximally_mixed(n: usize) -> Self {
        let d = 1usize << n;
        Self { n, matrix: CMatrix::identity(d, d) * Complex64::new(1.0 / d as f64, 0.0) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    /// Convex combination `w*self + (1-w)*other`.
    pub fn mix(&self, other: &DensityMatrix, w: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(Self {
            n: self.n,
            matrix: &self.matrix * Complex64::new(w, 0.0) + &other.matrix * Complex64::new(1.0 - w, 0.0),
        })
    }
}

impl From<&PureState> for DensityMatrix {
    fn from(psi: &PureState) -> Self {
        psi.density()
    }
}

/// State file body: either `{"amplitudes": [[re, im], ...]}` or a row-major
/// `{"density": [[[re, im], ...], ...]}`.
#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum StateJson {
    Amplitudes(Vec<[f64; 2]>),
    Density(Vec<Vec<[f64; 2]>>),
}

pub fn state_from_json(text: &str) -> Result<DensityMatrix> {
    let c = |[re, im]: [f64; 2]| Complex64::new(re, im);
    match serde_json::from_str(text)? {
        StateJson::Amplitudes(a) => Ok(PureState::new(CVector::from_iterator(a.len(), a.into_iter().map(c)))?.density()),
        StateJson::Density(rows) => {
            let d = rows.len();
            if let Some(r) = rows.iter().find(|r| r.len() != d) {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            DensityMatrix::new(CMatrix::from_fn(d, d, |i, j| c(rows[i][j])))
        }
    }
}

/// (1-p) rho + p I / 2^n.
pub fn white_noise(rho: &DensityMatrix, p: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::NoiseOutOfRange(p));
    }
    rho.mix(&DensityMatrix::maximally_mixed(rho.n), 1.0 - p)
}

/// <psi| rho |psi>.
pub fn fidelity(rho: &DensityMatrix, psi: &PureState) -> Result<f64> {
    if rho.n != psi.n {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: 1 << psi.n });
    }
    let v = psi.amplitudes();
    Ok((v.adjoint() * rho.matrix() * v)[(0, 0)].re)
}

/// Largest squared Schmidt coefficient across a single bipartition.
pub fn schmidt_lambda(psi: &PureState, bp: &Bipartition) -> Result<f64> {
    let reduced = tensor::partial_trace(&psi.projector(), bp.part())?;
    let (vals, _) = tensor::hermitian_eigen(&reduced)?;
    Ok(*vals.last().expect("nonempty spectrum"))
}

/// Maximal squared Schmidt coefficient over all canonical bipartitions.
pub fn schmidt_lambda_max(psi: &PureState) -> Result<f64> {
    if psi.n < 2 {
        return Err(Error::InvalidState("Schmidt decomposition needs at least two qubits".into()));
    }
    Bipartition::all(psi.n)
        .iter()
        .map(|bp| schmidt_lambda(psi, bp))
        .try_fold(f64::NEG_INFINITY, |acc, v| v.map(|v| acc.max(v)))
}
