//! Dense complex linear algebra and Pauli-string algebra for small qubit registers.
//!
//! Qubit 1 is the leftmost (most significant) tensor factor: basis index `b`
//! reads as the bit string `q1 q2 ... qn`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const HERMITIAN_TOL: f64 = 1e-10;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub(crate) const I_UNIT: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PauliLetter {
    I,
    X,
    Y,
    Z,
}

impl PauliLetter {
    pub const ALL: [PauliLetter; 4] = [PauliLetter::I, PauliLetter::X, PauliLetter::Y, PauliLetter::Z];

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(PauliLetter::I),
            'X' => Some(PauliLetter::X),
            'Y' => Some(PauliLetter::Y),
            'Z' => Some(PauliLetter::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            PauliLetter::I => 'I',
            PauliLetter::X => 'X',
            PauliLetter::Y => 'Y',
            PauliLetter::Z => 'Z',
        }
    }

    /// 2x2 matrix realization.
    pub fn matrix(self) -> CMatrix {
        let (a, b, c, d) = match self {
            PauliLetter::I => (ONE, ZERO, ZERO, ONE),
            PauliLetter::X => (ZERO, ONE, ONE, ZERO),
            PauliLetter::Y => (ZERO, -I_UNIT, I_UNIT, ZERO),
            PauliLetter::Z => (ONE, ZERO, ZERO, -ONE),
        };
        CMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    /// Bloch direction of the letter, `None` for the identity.
    pub fn axis(self) -> Option<[f64; 3]> {
        match self {
            PauliLetter::I => None,
            PauliLetter::X => Some([1.0, 0.0, 0.0]),
            PauliLetter::Y => Some([0.0, 1.0, 0.0]),
            PauliLetter::Z => Some([0.0, 0.0, 1.0]),
        }
    }

    /// Product `self * other` as (phase, letter).
    pub fn mul(self, other: PauliLetter) -> (Complex64, PauliLetter) {
        use PauliLetter::*;
        match (self, other) {
            (I, p) | (p, I) => (ONE, p),
            (a, b) if a == b => (ONE, I),
            (X, Y) => (I_UNIT, Z),
            (Y, X) => (-I_UNIT, Z),
            (Y, Z) => (I_UNIT, X),
            (Z, Y) => (-I_UNIT, X),
            (Z, X) => (I_UNIT, Y),
            (X, Z) => (-I_UNIT, Y),
            _ => unreachable!(),
        }
    }
}

/// An n-qubit tensor product of Pauli letters, qubit 1 first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    letters: Vec<PauliLetter>,
}

impl PauliString {
    pub fn new(letters: Vec<PauliLetter>) -> Self {
        Self { letters }
    }

    pub fn identity(n: usize) -> Self {
        Self { letters: vec![PauliLetter::I; n] }
    }

    /// Letter `letter` on the listed 1-based qubits, identity elsewhere.
    pub fn from_sparse(n: usize, factors: &[(usize, PauliLetter)]) -> Result<Self> {
        let mut letters = vec![PauliLetter::I; n];
        for &(q, l) in factors {
            if q == 0 || q > n {
                return Err(Error::QubitOutOfRange { index: q, n });
            }
            letters[q - 1] = l;
        }
        Ok(Self { letters })
    }

    /// Decode a base-4 index (qubit 1 most significant digit, I=0,X=1,Y=2,Z=3).
    pub fn from_index(n: usize, mut index: usize) -> Self {
        let mut letters = vec![PauliLetter::I; n];
        for q in (0..n).rev() {
            letters[q] = PauliLetter::ALL[index & 3];
            index >>= 2;
        }
        Self { letters }
    }

    pub fn index(&self) -> usize {
        self.letters.iter().fold(0, |acc, &l| (acc << 2) | l as usize)
    }

    /// All 4^n strings in index order.
    pub fn all(n: usize) -> impl Iterator<Item = PauliString> {
        (0..1usize << (2 * n)).map(move |i| PauliString::from_index(n, i))
    }

    pub fn n(&self) -> usize {
        self.letters.len()
    }

    pub fn letters(&self) -> &[PauliLetter] {
        &self.letters
    }

    pub fn letter(&self, qubit: usize) -> PauliLetter {
        self.letters[qubit - 1]
    }

    pub fn is_identity(&self) -> bool {
        self.letters.iter().all(|&l| l == PauliLetter::I)
    }

    pub fn weight(&self) -> usize {
        self.letters.iter().filter(|&&l| l != PauliLetter::I).count()
    }

    /// Qubits carrying a non-identity letter.
    pub fn support(&self) -> QubitSubset {
        QubitSubset::from_sorted(
            self.letters
                .iter()
                .enumerate()
                .filter(|(_, &l)| l != PauliLetter::I)
                .map(|(i, _)| i + 1)
                .collect(),
        )
    }

    pub fn y_count_in(&self, subset: &QubitSubset) -> usize {
        subset
            .iter()
            .filter(|&q| q <= self.n() && self.letters[q - 1] == PauliLetter::Y)
            .count()
    }

    /// Bit masks over basis indices: X-type flips and Z-type phases.
    fn masks(&self) -> (usize, usize, usize) {
        let n = self.n();
        let (mut x, mut z, mut ny) = (0usize, 0usize, 0usize);
        for (i, &l) in self.letters.iter().enumerate() {
            let bit = 1usize << (n - 1 - i);
            match l {
                PauliLetter::I => {}
                PauliLetter::X => x |= bit,
                PauliLetter::Y => {
                    x |= bit;
                    z |= bit;
                    ny += 1;
                }
                PauliLetter::Z => z |= bit,
            }
        }
        (x, z, ny)
    }

    /// Monomial action: column `s` has its single nonzero at row `s ^ flip` with value `phase(s)`.
    pub(crate) fn monomial(&self) -> (usize, impl Fn(usize) -> Complex64) {
        let (x, z, ny) = self.masks();
        // Y = i X Z, so P = i^{ny} X_mask Z_mask; Z acts first on |s>.
        let base = match ny % 4 {
            0 => ONE,
            1 => I_UNIT,
            2 => -ONE,
            _ => -I_UNIT,
        };
        (x, move |s: usize| {
            if (s & z).count_ones() % 2 == 0 {
                base
            } else {
                -base
            }
        })
    }

    pub fn to_matrix(&self) -> CMatrix {
        let d = 1usize << self.n();
        let (flip, phase) = self.monomial();
        let mut m = CMatrix::zeros(d, d);
        for s in 0..d {
            m[(s ^ flip, s)] = phase(s);
        }
        m
    }

    /// Tr(P · m) in O(2^n).
    pub fn expectation(&self, m: &CMatrix) -> Complex64 {
        let d = m.nrows();
        let (flip, phase) = self.monomial();
        (0..d).map(|s| phase(s) * m[(s, s ^ flip)]).sum()
    }

    /// Product `self * other` as (phase, string).
    pub fn mul(&self, other: &PauliString) -> (Complex64, PauliString) {
        let mut phase = ONE;
        let letters = self
            .letters
            .iter()
            .zip(&other.letters)
            .map(|(&a, &b)| {
                let (p, l) = a.mul(b);
                phase *= p;
                l
            })
            .collect();
        (phase, PauliString { letters })
    }

    /// Indexed form such as `X1X2Z4`; `I` for the identity.
    pub fn indexed(&self) -> String {
        if self.is_identity() {
            return "I".to_string();
        }
        self.letters
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != PauliLetter::I)
            .map(|(i, l)| format!("{}{}", l.as_char(), i + 1))
            .collect()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.letters {
            write!(f, "{}", l.as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Option<Vec<_>> = s.trim().chars().map(PauliLetter::from_char).collect();
        match letters {
            Some(l) if !l.is_empty() => Ok(Self { letters: l }),
            _ => Err(Error::InvalidPauli(s.to_string())),
        }
    }
}

/// A sorted set of 1-based qubit indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct QubitSubset(Vec<usize>);

impl QubitSubset {
    pub fn new(mut qubits: Vec<usize>) -> Self {
        qubits.sort_unstable();
        qubits.dedup();
        Self(qubits)
    }

    fn from_sorted(qubits: Vec<usize>) -> Self {
        Self(qubits)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, q: usize) -> bool {
        self.0.binary_search(&q).is_ok()
    }

    pub fn is_subset_of(&self, other: &QubitSubset) -> bool {
        self.0.iter().all(|&q| other.contains(q))
    }

    pub fn complement(&self, n: usize) -> QubitSubset {
        QubitSubset((1..=n).filter(|&q| !self.contains(q)).collect())
    }

    pub fn check_range(&self, n: usize) -> Result<()> {
        match self.0.iter().find(|&&q| q == 0 || q > n) {
            Some(&q) => Err(Error::QubitOutOfRange { index: q, n }),
            None => Ok(()),
        }
    }

    /// Mask over basis-index bits (qubit 1 is bit n-1).
    pub fn bit_mask(&self, n: usize) -> usize {
        self.0.iter().fold(0, |m, &q| m | (1usize << (n - q)))
    }

    /// Compact digit form used on the command line, e.g. `124`.
    pub fn digits(&self) -> String {
        self.0.iter().map(|q| q.to_string()).collect()
    }
}

impl fmt::Display for QubitSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, q) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{q}")?;
        }
        write!(f, "}}")
    }
}

/// A bipartition A|A^c of n qubits in canonical form (qubit 1 in A).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bipartition {
    n: usize,
    part: QubitSubset,
    rest: QubitSubset,
}

impl Bipartition {
    pub fn new(n: usize, part: QubitSubset) -> Result<Self> {
        part.check_range(n)?;
        if part.is_empty() || part.len() == n {
            return Err(Error::InvalidBipartition(format!("{part} is not a proper nonempty subset")));
        }
        let rest = part.complement(n);
        let (part, rest) = if part.contains(1) { (part, rest) } else { (rest, part) };
        Ok(Self { n, part, rest })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn part(&self) -> &QubitSubset {
        &self.part
    }

    pub fn complement(&self) -> &QubitSubset {
        &self.rest
    }

    /// All 2^(n-1) - 1 canonical bipartitions, ordered by the bit pattern of qubits 2..n.
    pub fn all(n: usize) -> Vec<Bipartition> {
        if n < 2 {
            return Vec::new();
        }
        (0..(1usize << (n - 1)) - 1)
            .map(|pattern| {
                let part = std::iter::once(1)
                    .chain((2..=n).filter(|&q| pattern >> (q - 2) & 1 == 1))
                    .collect();
                let part = QubitSubset::new(part);
                let rest = part.complement(n);
                Bipartition { n, part, rest }
            })
            .collect()
    }
}

impl fmt::Display for Bipartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.part.digits(), self.rest.digits())
    }
}

/// Number of qubits for a square matrix of dimension 2^n.
pub fn qubit_count(m: &CMatrix) -> Result<usize> {
    let d = m.nrows();
    if m.ncols() != d || d == 0 || !d.is_power_of_two() {
        return Err(Error::DimensionMismatch { expected: d.next_power_of_two(), got: m.ncols() });
    }
    Ok(d.trailing_zeros() as usize)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn pauli_to_matrix(p: &PauliString) -> CMatrix {
    p.to_matrix()
}

/// Transposes the tensor indices of the qubits in `subset`.
pub fn partial_transpose(m: &CMatrix, subset: &QubitSubset) -> Result<CMatrix> {
    let n = qubit_count(m)?;
    subset.check_range(n)?;
    let mask = subset.bit_mask(n);
    let d = m.nrows();
    Ok(CMatrix::from_fn(d, d, |r, c| {
        let swap = (r ^ c) & mask;
        m[(r ^ swap, c ^ swap)]
    }))
}

/// Reduced operator on `keep`, tracing out every other qubit.
pub fn partial_trace(m: &CMatrix, keep: &QubitSubset) -> Result<CMatrix> {
    let n = qubit_count(m)?;
    keep.check_range(n)?;
    if keep.is_empty() {
        return Err(Error::EmptySubset);
    }
    let k = keep.len();
    let traced = keep.complement(n);
    let expand = |kept_bits: usize, traced_bits: usize| -> usize {
        let mut idx = 0usize;
        for (j, q) in keep.iter().enumerate() {
            if kept_bits >> (k - 1 - j) & 1 == 1 {
                idx |= 1 << (n - q);
            }
        }
        for (j, q) in traced.iter().enumerate() {
            if traced_bits >> (traced.len() - 1 - j) & 1 == 1 {
                idx |= 1 << (n - q);
            }
        }
        idx
    };
    let dk = 1usize << k;
    let dt = 1usize << traced.len();
    let mut out = CMatrix::zeros(dk, dk);
    for r in 0..dk {
        for c in 0..dk {
            out[(r, c)] = (0..dt).map(|t| m[(expand(r, t), expand(c, t))]).sum();
        }
    }
    Ok(out)
}

/// Largest entrywise |m - m^dagger|.
pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    let d = m.nrows();
    let mut dev = 0.0f64;
    for r in 0..d {
        for c in r..d {
            dev = dev.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    dev
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending, eigenvectors as columns.
pub fn hermitian_eigen(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch { expected: m.nrows(), got: m.ncols() });
    }
    let dev = hermitian_deviation(m);
    if dev > HERMITIAN_TOL * (1.0 + m.norm()) {
        return Err(Error::NotHermitian { deviation: dev });
    }
    Ok(eigh(&hermitian_part(m)))
}

/// Unchecked variant used on matrices known to be Hermitian.
pub(crate) fn eigh(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let d = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub(crate) fn min_eigenvalue(m: &CMatrix) -> f64 {
    m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub(crate) fn real_trace(m: &CMatrix) -> f64 {
    m.trace().re
}
