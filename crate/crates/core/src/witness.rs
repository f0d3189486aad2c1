//! Witness operators as real combinations of Pauli strings, their evaluation,
//! noise tolerances and the bundled catalog.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::{self, DensityMatrix, NamedState, PureState};
use crate::tensor::{self, Bipartition, CMatrix, CVector, PauliLetter, PauliString, QubitSubset};

/// Coefficients at or below this magnitude are dropped.
pub const COEFF_EPS: f64 = 1e-14;

/// A real linear combination of n-qubit Pauli strings.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableExpr {
    n: usize,
    terms: BTreeMap<PauliString, f64>,
}

impl ObservableExpr {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: BTreeMap::new() }
    }

    /// c * I.
    pub fn scaled_identity(n: usize, c: f64) -> Self {
        let mut e = Self::zero(n);
        e.add_term(PauliString::identity(n), c);
        e
    }

    pub fn from_terms<I: IntoIterator<Item = (PauliString, f64)>>(n: usize, terms: I) -> Result<Self> {
        let mut e = Self::zero(n);
        for (p, c) in terms {
            if p.n() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.n() });
            }
            e.add_term(p, c);
        }
        Ok(e)
    }

    /// Pauli-basis expansion of a Hermitian matrix: c_P = Tr(P m) / 2^n.
    pub fn from_matrix(m: &CMatrix) -> Result<Self> {
        let n = tensor::qubit_count(m)?;
        let dev = tensor::hermitian_deviation(m);
        if dev > tensor::HERMITIAN_TOL * (1.0 + m.norm()) {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let d = (1usize << n) as f64;
        let mut e = Self::zero(n);
        for p in PauliString::all(n) {
            let c = p.expectation(m).re / d;
            e.add_term(p, c);
        }
        Ok(e)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Adds `c` to the coefficient of `p`, removing the term if it cancels.
    pub fn add_term(&mut self, p: PauliString, c: f64) {
        debug_assert_eq!(p.n(), self.n);
        let total = self.coeff(&p) + c;
        if total.abs() <= COEFF_EPS {
            self.terms.remove(&p);
        } else {
            self.terms.insert(p, total);
        }
    }

    pub fn coeff(&self, p: &PauliString) -> f64 {
        self.terms.get(p).copied().unwrap_or(0.0)
    }

    pub fn identity_coeff(&self) -> f64 {
        self.coeff(&PauliString::identity(self.n))
    }

    pub fn terms(&self) -> impl Iterator<Item = (&PauliString, f64)> {
        self.terms.iter().map(|(p, &c)| (p, c))
    }

    /// Non-identity terms only.
    pub fn nontrivial_terms(&self) -> impl Iterator<Item = (&PauliString, f64)> {
        self.terms().filter(|(p, _)| !p.is_identity())
    }

    /// Tr of the matrix realization.
    pub fn trace(&self) -> f64 {
        self.identity_coeff() * (1usize << self.n) as f64
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut e = Self::zero(self.n);
        for (p, c) in self.terms() {
            e.add_term(p.clone(), a * c);
        }
        e
    }

    /// a * self + other.
    pub fn axpy(&self, a: f64, other: &ObservableExpr) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: other.n });
        }
        let mut e = other.clone();
        for (p, c) in self.terms() {
            e.add_term(p.clone(), a * c);
        }
        Ok(e)
    }

    pub fn to_matrix(&self) -> CMatrix {
        let d = 1usize << self.n;
        let mut m = CMatrix::zeros(d, d);
        for (p, c) in self.terms() {
            let (flip, phase) = p.monomial();
            for s in 0..d {
                m[(s ^ flip, s)] += phase(s) * c;
            }
        }
        m
    }

    /// Largest absolute coefficient difference against `other`.
    pub fn max_abs_diff(&self, other: &ObservableExpr) -> f64 {
        let keys: std::collections::BTreeSet<_> = self.terms.keys().chain(other.terms.keys()).collect();
        keys.into_iter().map(|p| (self.coeff(p) - other.coeff(p)).abs()).fold(0.0, f64::max)
    }
}

/// Sum of c_P Tr(P rho).
pub fn evaluate(expr: &ObservableExpr, rho: &DensityMatrix) -> Result<f64> {
    if expr.n != rho.n() {
        return Err(Error::DimensionMismatch { expected: 1 << expr.n, got: rho.dim() });
    }
    let v: Complex64 = expr.terms().map(|(p, c)| p.expectation(rho.matrix()) * c).sum();
    debug_assert!(v.im.abs() < 1e-10);
    Ok(v.re)
}

/// Expectation on a pure state given as amplitudes.
pub fn evaluate_pure(expr: &ObservableExpr, psi: &PureState) -> Result<f64> {
    if expr.n != psi.n() {
        return Err(Error::DimensionMismatch { expected: 1 << expr.n, got: 1 << psi.n() });
    }
    Ok(pure_expectation(&expr.to_matrix(), psi.amplitudes()))
}

fn pure_expectation(m: &CMatrix, v: &CVector) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for c in 0..d {
        let mut col = Complex64::new(0.0, 0.0);
        for r in 0..d {
            col += v[r].conj() * m[(r, c)];
        }
        acc += (col * v[c]).re;
    }
    acc
}

/// A collection of qubit subsets on which a witness may act.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SubsetFamily {
    subsets: Vec<QubitSubset>,
    uniform_size: Option<usize>,
}

impl SubsetFamily {
    pub fn new(subsets: Vec<QubitSubset>) -> Result<Self> {
        for (i, s) in subsets.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::EmptySubset);
            }
            if subsets[..i].contains(s) {
                return Err(Error::InvalidFamily(format!("duplicate subset {s}")));
            }
        }
        let uniform_size = match subsets.first() {
            Some(first) if subsets.iter().all(|s| s.len() == first.len()) => Some(first.len()),
            _ => None,
        };
        Ok(Self { subsets, uniform_size })
    }

    /// Every k-element subset of {1..n}, in lexicographic order.
    pub fn all_k_subsets(n: usize, k: usize) -> Self {
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(k);
        fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<QubitSubset>) {
            if cur.len() == k {
                out.push(QubitSubset::new(cur.clone()));
                return;
            }
            for q in start..=n {
                cur.push(q);
                rec(q + 1, n, k, cur, out);
                cur.pop();
            }
        }
        if k > 0 {
            rec(1, n, k, &mut cur, &mut out);
        }
        let uniform_size = (!out.is_empty()).then_some(k);
        Self { subsets: out, uniform_size }
    }

    pub fn subsets(&self) -> &[QubitSubset] {
        &self.subsets
    }

    pub fn uniform_size(&self) -> Option<usize> {
        self.uniform_size
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn check_range(&self, n: usize) -> Result<()> {
        self.subsets.iter().try_for_each(|s| s.check_range(n))
    }

    /// True if `s` lies inside some member.
    pub fn covers(&self, s: &QubitSubset) -> bool {
        s.is_empty() || self.subsets.iter().any(|m| s.is_subset_of(m))
    }

    pub fn covers_family(&self, other: &SubsetFamily) -> bool {
        other.subsets.iter().all(|s| self.covers(s))
    }

    /// Non-identity Pauli strings supported inside some member, in index order.
    pub fn free_paulis(&self, n: usize) -> Vec<PauliString> {
        PauliString::all(n)
            .filter(|p| !p.is_identity() && self.covers(&p.support()))
            .collect()
    }
}

impl fmt::Display for SubsetFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.subsets.iter().map(|s| s.digits()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses comma-separated digit strings such as `12,23,34`.
impl FromStr for SubsetFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut subsets = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            if part.is_empty() {
                return Err(Error::InvalidFamily(format!("empty subset in {s:?}")));
            }
            let qubits: Option<Vec<usize>> = part.chars().map(|c| c.to_digit(10).map(|d| d as usize)).collect();
            match qubits {
                Some(q) if !q.contains(&0) => subsets.push(QubitSubset::new(q)),
                _ => return Err(Error::InvalidFamily(format!("bad subset {part:?}"))),
            }
        }
        Self::new(subsets)
    }
}

impl Serialize for SubsetFamily {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<&[usize]> = self.subsets.iter().map(|s| s.as_slice()).collect();
        v.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for SubsetFamily {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<Vec<usize>> = Vec::deserialize(de)?;
        SubsetFamily::new(v.into_iter().map(QubitSubset::new).collect()).map_err(serde::de::Error::custom)
    }
}

/// Maximal supports of the non-identity terms.
pub fn support(expr: &ObservableExpr) -> SubsetFamily {
    let mut supports: Vec<QubitSubset> = expr.nontrivial_terms().map(|(p, _)| p.support()).collect();
    supports.sort();
    supports.dedup();
    let maximal: Vec<QubitSubset> = supports
        .iter()
        .filter(|s| !supports.iter().any(|t| t != *s && s.is_subset_of(t)))
        .cloned()
        .collect();
    SubsetFamily::new(maximal).expect("distinct nonempty supports")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub expr: ObservableExpr,
    pub target_state: Option<NamedState>,
    pub family: SubsetFamily,
    pub alpha: Option<f64>,
    pub p_noise: Option<f64>,
    pub label: String,
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    pauli: String,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct WitnessJson {
    n: usize,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state: Option<NamedState>,
    terms: Vec<TermJson>,
    family: SubsetFamily,
    alpha: Option<f64>,
    p_noise: Option<f64>,
}

impl Witness {
    /// Checks that every term is covered by `family`.
    pub fn new(expr: ObservableExpr, family: SubsetFamily, label: impl Into<String>) -> Result<Self> {
        family.check_range(expr.n())?;
        if let Some((p, _)) = expr.nontrivial_terms().find(|(p, _)| !family.covers(&p.support())) {
            return Err(Error::InvalidFamily(format!("term {p} is not covered by {family}")));
        }
        Ok(Self { expr, target_state: None, family, alpha: None, p_noise: None, label: label.into() })
    }

    pub fn n(&self) -> usize {
        self.expr.n()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_json()).expect("witness serializes")
    }

    fn to_json(&self) -> WitnessJson {
        WitnessJson {
            n: self.n(),
            label: self.label.clone(),
            state: self.target_state,
            terms: self.expr.terms().map(|(p, c)| TermJson { pauli: p.to_string(), coeff: c }).collect(),
            family: self.family.clone(),
            alpha: self.alpha,
            p_noise: self.p_noise,
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("witness serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: WitnessJson = serde_json::from_str(s)?;
        let mut expr = ObservableExpr::zero(j.n);
        for t in j.terms {
            let p: PauliString = t.pauli.parse()?;
            if p.n() != j.n {
                return Err(Error::InvalidPauli(format!("{} has length {}, expected {}", t.pauli, p.n(), j.n)));
            }
            expr.add_term(p, t.coeff);
        }
        let mut w = Witness::new(expr, j.family, j.label)?;
        w.target_state = j.state;
        w.alpha = j.alpha;
        w.p_noise = j.p_noise;
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string() + "\n")?;
        Ok(())
    }
}

/// t / (t - m) for t = Tr(W rho) < 0 and m = Tr(W) / 2^n > 0.
pub fn tolerance_from(t: f64, m: f64) -> Option<f64> {
    (t < 0.0 && m > 0.0).then(|| t / (t - m))
}

/// Tolerance of `expr` on `rho` against white noise.
pub fn noise_tolerance(expr: &ObservableExpr, rho: &DensityMatrix) -> Result<Option<f64>> {
    let t = evaluate(expr, rho)?;
    Ok(tolerance_from(t, expr.identity_coeff()))
}

pub fn p_noise(w: &Witness, rho: &DensityMatrix) -> Result<Option<f64>> {
    noise_tolerance(&w.expr, rho)
}

/// lambda I - |psi><psi| with lambda the largest squared Schmidt coefficient.
pub fn projector_witness(psi: &PureState) -> Result<Witness> {
    let lambda = states::schmidt_lambda_max(psi)?;
    let d = 1usize << psi.n();
    let m = CMatrix::identity(d, d) * Complex64::new(lambda, 0.0) - psi.projector();
    let expr = ObservableExpr::from_matrix(&m)?;
    let family = SubsetFamily::new(vec![QubitSubset::new((1..=psi.n()).collect())])?;
    let mut w = Witness::new(expr, family, "projector")?;
    let rho = psi.density();
    w.alpha = Some(evaluate(&w.expr, &rho)?);
    w.p_noise = p_noise(&w, &rho)?;
    Ok(w)
}

macro_rules! catalog_entry {
    ($state:literal, $id:literal) => {
        include_str!(concat!("../catalog/", $state, "_w", $id, ".json"))
    };
}

const CATALOG: &[(NamedState, usize, &str)] = &[
    (NamedState::W3, 1, catalog_entry!("w3", "1")),
    (NamedState::W3, 2, catalog_entry!("w3", "2")),
    (NamedState::W4, 1, catalog_entry!("w4", "1")),
    (NamedState::W4, 2, catalog_entry!("w4", "2")),
    (NamedState::W4, 3, catalog_entry!("w4", "3")),
    (NamedState::W4, 4, catalog_entry!("w4", "4")),
    (NamedState::W4, 5, catalog_entry!("w4", "5")),
    (NamedState::D4, 1, catalog_entry!("d4", "1")),
    (NamedState::D4, 2, catalog_entry!("d4", "2")),
    (NamedState::D4, 3, catalog_entry!("d4", "3")),
    (NamedState::D4, 4, catalog_entry!("d4", "4")),
    (NamedState::D4, 5, catalog_entry!("d4", "5")),
    (NamedState::C4, 1, catalog_entry!("c4", "1")),
    (NamedState::C4, 2, catalog_entry!("c4", "2")),
    (NamedState::C4, 3, catalog_entry!("c4", "3")),
    (NamedState::C4, 4, catalog_entry!("c4", "4")),
];

/// (state, id) pairs available from the bundled catalog.
pub fn catalog_ids() -> Vec<(NamedState, usize)> {
    CATALOG.iter().map(|&(s, i, _)| (s, i)).collect()
}

pub fn load_catalog_witness(state: NamedState, id: usize) -> Result<Witness> {
    let (_, _, text) = CATALOG
        .iter()
        .find(|&&(s, i, _)| s == state && i == id)
        .ok_or(Error::UnknownWitness { state: state.to_string(), id })?;
    Witness::from_json_str(text)
}

/// Minimum of the expectation over seeded random pure biseparable states.
///
/// Each draw picks a canonical bipartition uniformly and Haar-random factors on both sides.
/// Trials are split into fixed chunks with per-chunk streams, so the result does not depend
/// on the thread count.
pub fn sample_biseparable_min(expr: &ObservableExpr, trials: usize, seed: u64) -> Result<f64> {
    let n = expr.n();
    if trials == 0 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("biseparable sampling needs at least two qubits".into()));
    }
    const CHUNK: usize = 4096;
    let m = expr.to_matrix();
    let bps = Bipartition::all(n);
    let chunks = trials.div_ceil(CHUNK);
    let min = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = CHUNK.min(trials - chunk * CHUNK);
            let mut best = f64::INFINITY;
            for _ in 0..count {
                let bp = &bps[rng.random_range(0..bps.len())];
                let v = random_product(bp, &mut rng);
                best = best.min(pure_expectation(&m, &v));
            }
            best
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(min)
}

fn random_product<R: Rng>(bp: &Bipartition, rng: &mut R) -> CVector {
    let a = PureState::haar_random(bp.part().len(), rng);
    let b = PureState::haar_random(bp.complement().len(), rng);
    PureState::product(bp, &a, &b).expect("sizes match the bipartition").amplitudes().clone()
}

/// Conjugation by X on every qubit: Y and Z letters pick up a sign.
pub fn bit_flip_frame(expr: &ObservableExpr) -> ObservableExpr {
    let mut e = ObservableExpr::zero(expr.n());
    for (p, c) in expr.terms() {
        let odd = p.letters().iter().filter(|&&l| matches!(l, PauliLetter::Y | PauliLetter::Z)).count() % 2 == 1;
        e.add_term(p.clone(), if odd { -c } else { c });
    }
    e
}
