//! Local measurement settings, count simulation and expectation-table ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::{DensityMatrix, NamedState};
use crate::tensor::{self, CMatrix, PauliLetter, PauliString};
use crate::witness::ObservableExpr;

const UNIT_TOL: f64 = 1e-10;
const KEY_SCALE: f64 = 1e9;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Name of the generator behind every simulated count table.
pub const GENERATOR: &str = "ChaCha8Rng";

/// Unit Bloch direction of a ±1-valued single-qubit observable.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Axis([f64; 3]);

impl Axis {
    pub fn new(v: [f64; 3]) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitAxis { norm });
        }
        Ok(Self(v))
    }

    /// Axis of a non-identity Pauli letter.
    pub fn pauli(letter: PauliLetter) -> Option<Self> {
        letter.axis().map(Self)
    }

    /// `(A + sign B)/sqrt2` for two distinct Pauli letters.
    pub fn composite(a: PauliLetter, b: PauliLetter, sign: f64) -> Result<Self> {
        let (Some(va), Some(vb)) = (a.axis(), b.axis()) else {
            return Err(Error::NonUnitAxis { norm: f64::NAN });
        };
        Self::new([0, 1, 2].map(|i| (va[i] + sign * vb[i]) * FRAC_1_SQRT_2))
    }

    pub fn components(&self) -> [f64; 3] {
        self.0
    }

    pub fn as_pauli(&self) -> Option<PauliLetter> {
        [PauliLetter::X, PauliLetter::Y, PauliLetter::Z]
            .into_iter()
            .find(|l| l.axis().is_some_and(|a| a.iter().zip(&self.0).all(|(p, q)| (p - q).abs() < 1e-12)))
    }

    pub fn matrix(&self) -> CMatrix {
        let [x, y, z] = self.0;
        PauliLetter::X.matrix() * Complex64::new(x, 0.0)
            + PauliLetter::Y.matrix() * Complex64::new(y, 0.0)
            + PauliLetter::Z.matrix() * Complex64::new(z, 0.0)
    }

    /// Orientation with the first nonzero component positive, and the sign relating the two.
    pub fn canonical(&self) -> (f64, Axis) {
        let first = self.0.iter().copied().find(|c| c.abs() > 1e-12).unwrap_or(1.0);
        if first < 0.0 {
            (-1.0, Axis(self.0.map(|c| -c)))
        } else {
            (1.0, *self)
        }
    }

    fn key(&self) -> [i64; 3] {
        self.0.map(|c| (c * KEY_SCALE).round() as i64)
    }

    /// Image under conjugation by X: the Y and Z components flip.
    pub fn bit_flipped(&self) -> Axis {
        let [x, y, z] = self.0;
        Axis([x, -y, -z])
    }

    fn label(&self) -> String {
        if let Some(l) = self.as_pauli() {
            return l.as_char().to_string();
        }
        let nonzero: Vec<(usize, f64)> = self.0.iter().copied().enumerate().filter(|(_, c)| c.abs() > 1e-12).collect();
        let names = ['X', 'Y', 'Z'];
        if let [(i, a), (j, b)] = nonzero[..] {
            if (a.abs() - FRAC_1_SQRT_2).abs() < 1e-12 && (b.abs() - FRAC_1_SQRT_2).abs() < 1e-12 {
                let (lead, lead_sign, other, other_sign) = if a > 0.0 || b < 0.0 { (i, a, j, b) } else { (j, b, i, a) };
                if lead_sign > 0.0 {
                    let op = if other_sign > 0.0 { '+' } else { '-' };
                    return format!("[({}{op}{})/r2]", names[lead], names[other]);
                }
            }
        }
        format!("[{:.6},{:.6},{:.6}]", self.0[0], self.0[1], self.0[2])
    }
}

impl TryFrom<[f64; 3]> for Axis {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        Axis::new(v)
    }
}

impl From<Axis> for [f64; 3] {
    fn from(a: Axis) -> Self {
        a.0
    }
}

/// Signed tensor product of single-qubit ±1 observables, `None` meaning identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductOperator {
    pub sign: f64,
    pub factors: Vec<Option<Axis>>,
}

type OperatorKey = Vec<Option<[i64; 3]>>;

impl ProductOperator {
    pub fn identity(n: usize) -> Self {
        Self { sign: 1.0, factors: vec![None; n] }
    }

    pub fn from_pauli(p: &PauliString) -> Self {
        Self { sign: 1.0, factors: p.letters().iter().map(|&l| Axis::pauli(l)).collect() }
    }

    /// `axis` on every qubit of `qubits` (1-based), identity elsewhere.
    pub fn on(n: usize, axis: Axis, qubits: &[usize]) -> Result<Self> {
        let mut factors = vec![None; n];
        for &q in qubits {
            if q == 0 || q > n {
                return Err(Error::QubitOutOfRange { index: q, n });
            }
            factors[q - 1] = Some(axis);
        }
        Ok(Self { sign: 1.0, factors })
    }

    pub fn n(&self) -> usize {
        self.factors.len()
    }

    pub fn is_identity(&self) -> bool {
        self.factors.iter().all(Option::is_none)
    }

    pub fn negated(&self) -> Self {
        Self { sign: -self.sign, factors: self.factors.clone() }
    }

    /// Every axis in canonical orientation, with the accumulated sign.
    pub fn canonical(&self) -> ProductOperator {
        let mut sign = self.sign;
        let factors = self
            .factors
            .iter()
            .map(|f| {
                f.map(|a| {
                    let (s, c) = a.canonical();
                    sign *= s;
                    c
                })
            })
            .collect();
        ProductOperator { sign, factors }
    }

    /// Sign-free identity of the observable up to orientation.
    fn key(&self) -> (f64, OperatorKey) {
        let c = self.canonical();
        (c.sign, c.factors.iter().map(|f| f.map(|a| a.key())).collect())
    }

    pub fn bit_flipped(&self) -> Self {
        Self { sign: self.sign, factors: self.factors.iter().map(|f| f.map(|a| a.bit_flipped())).collect() }
    }

    /// Pauli expansion of the operator.
    pub fn to_expr(&self) -> ObservableExpr {
        let n = self.n();
        let mut partial: Vec<(f64, Vec<PauliLetter>)> = vec![(self.sign, Vec::with_capacity(n))];
        for f in &self.factors {
            let image: Vec<(f64, PauliLetter)> = match f {
                None => vec![(1.0, PauliLetter::I)],
                Some(a) => [PauliLetter::X, PauliLetter::Y, PauliLetter::Z]
                    .into_iter()
                    .zip(a.components())
                    .filter(|(_, c)| *c != 0.0)
                    .map(|(l, c)| (c, l))
                    .collect(),
            };
            partial = partial
                .into_iter()
                .flat_map(|(c, letters)| {
                    image.iter().map(move |&(a, l)| {
                        let mut next = letters.clone();
                        next.push(l);
                        (c * a, next)
                    })
                })
                .collect();
        }
        let mut e = ObservableExpr::zero(n);
        for (c, letters) in partial {
            e.add_term(PauliString::new(letters), c);
        }
        e
    }

    pub fn to_matrix(&self) -> CMatrix {
        let mut m = CMatrix::from_element(1, 1, Complex64::new(self.sign, 0.0));
        for f in &self.factors {
            let local = f.map(|a| a.matrix()).unwrap_or_else(|| CMatrix::identity(2, 2));
            m = tensor::kron(&m, &local);
        }
        m
    }
}

impl fmt::Display for ProductOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sign < 0.0 {
            f.write_str("-")?;
        }
        if self.is_identity() {
            return f.write_str(&"I".repeat(self.n().max(1)));
        }
        if self.factors.iter().all(|x| x.is_none_or(|a| a.as_pauli().is_some())) {
            for x in &self.factors {
                write!(f, "{}", x.and_then(|a| a.as_pauli()).unwrap_or(PauliLetter::I).as_char())?;
            }
            return Ok(());
        }
        if let Some(first) = self.factors[0] {
            if self.factors.iter().all(|x| *x == Some(first)) {
                return write!(f, "{}x{}", first.label(), self.n());
            }
        }
        // group equal axes, in order of first appearance
        let mut groups: Vec<(Axis, Vec<usize>)> = Vec::new();
        for (i, x) in self.factors.iter().enumerate() {
            if let Some(a) = x {
                match groups.iter_mut().find(|(b, _)| b == a) {
                    Some((_, qs)) => qs.push(i + 1),
                    None => groups.push((*a, vec![i + 1])),
                }
            }
        }
        for (a, qs) in groups {
            let label = a.label();
            if label.len() == 1 {
                for q in qs {
                    write!(f, "{label}{q}")?;
                }
            } else {
                let list: Vec<String> = qs.iter().map(|q| q.to_string()).collect();
                write!(f, "{label}_{}", list.join(","))?;
            }
        }
        Ok(())
    }
}

/// Identity coefficient plus a combination of product operators.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasuredExpr {
    pub n: usize,
    pub identity: f64,
    pub terms: Vec<(f64, ProductOperator)>,
}

impl MeasuredExpr {
    pub fn new(n: usize) -> Self {
        Self { n, identity: 0.0, terms: Vec::new() }
    }

    pub fn push(&mut self, c: f64, op: ProductOperator) {
        if op.is_identity() {
            self.identity += c * op.sign;
        } else {
            let (s, key) = op.key();
            match self.terms.iter().position(|(_, o)| o.key().1 == key) {
                Some(i) => {
                    let (c0, o) = &self.terms[i];
                    let merged = c0 + c * s * o.key().0;
                    if merged.abs() < 1e-15 {
                        self.terms.remove(i);
                    } else {
                        self.terms[i].0 = merged;
                    }
                }
                None => self.terms.push((c, op)),
            }
        }
    }

    /// Adds `(c0 I + scale A)^{x n}` expanded into the marginals of `A^{x n}`.
    fn push_power(&mut self, weight: f64, c0: f64, scale: f64, axis: Axis) {
        let n = self.n;
        for mask in 0usize..1 << n {
            let k = mask.count_ones() as i32;
            let c = weight * c0.powi(n as i32 - k) * scale.powi(k);
            if c == 0.0 {
                continue;
            }
            let qubits: Vec<usize> = (0..n).filter(|i| mask >> (n - 1 - i) & 1 == 1).map(|i| i + 1).collect();
            self.push(c, ProductOperator::on(n, axis, &qubits).expect("qubits in range"));
        }
    }

    pub fn to_observable(&self) -> ObservableExpr {
        let mut e = ObservableExpr::scaled_identity(self.n, self.identity);
        for (c, op) in &self.terms {
            e = op.to_expr().axpy(*c, &e).expect("same qubit count");
        }
        e
    }
}

impl From<&ObservableExpr> for MeasuredExpr {
    fn from(expr: &ObservableExpr) -> Self {
        let mut m = MeasuredExpr::new(expr.n());
        m.identity = expr.identity_coeff();
        for (p, c) in expr.nontrivial_terms() {
            m.terms.push((c, ProductOperator::from_pauli(p)));
        }
        m
    }
}

/// One axis per qubit measured jointly; `None` marks an unmeasured qubit whose outcome is always `+`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub axes: Vec<Option<Axis>>,
}

impl MeasurementSetting {
    pub fn new(axes: Vec<Option<Axis>>) -> Self {
        Self { axes }
    }

    pub fn uniform(n: usize, axis: Axis) -> Self {
        Self { axes: vec![Some(axis); n] }
    }

    pub fn pauli(word: &str) -> Result<Self> {
        let p: PauliString = word.parse()?;
        Ok(Self { axes: p.letters().iter().map(|&l| Axis::pauli(l)).collect() })
    }

    pub fn n(&self) -> usize {
        self.axes.len()
    }

    /// Sign `s` with `op = s * (product of this setting's axes on op's support)`, if measurable here.
    pub fn covers(&self, op: &ProductOperator) -> Option<f64> {
        if op.n() != self.n() {
            return None;
        }
        let mut sign = op.sign;
        for (f, a) in op.factors.iter().zip(&self.axes) {
            match (f, a) {
                (None, _) => {}
                (Some(_), None) => return None,
                (Some(f), Some(a)) => {
                    let (sf, cf) = f.canonical();
                    let (sa, ca) = a.canonical();
                    if cf.key() != ca.key() {
                        return None;
                    }
                    sign *= sf * sa;
                }
            }
        }
        Some(sign)
    }

    fn as_operator(&self) -> ProductOperator {
        ProductOperator { sign: 1.0, factors: self.axes.clone() }
    }
}

impl fmt::Display for MeasurementSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_operator())
    }
}

/// Greedy first-fit grouping of the terms, visited in lexicographic order of their labels.
pub fn plan_settings(expr: &MeasuredExpr) -> Vec<(MeasurementSetting, Vec<ProductOperator>)> {
    let mut ops: Vec<(String, ProductOperator)> =
        expr.terms.iter().map(|(_, op)| op.canonical()).map(|op| (op.to_string(), op)).collect();
    ops.sort_by(|a, b| a.0.cmp(&b.0));
    ops.dedup_by(|a, b| a.0 == b.0);
    let mut groups: Vec<(Vec<Option<[i64; 3]>>, MeasurementSetting, Vec<ProductOperator>)> = Vec::new();
    for (_, op) in ops {
        let (_, key) = op.key();
        let slot = groups.iter().position(|(gk, _, _)| gk.iter().zip(&key).all(|(a, b)| a.is_none() || b.is_none() || a == b));
        let i = slot.unwrap_or_else(|| {
            groups.push((vec![None; expr.n], MeasurementSetting::new(vec![None; expr.n]), Vec::new()));
            groups.len() - 1
        });
        let (gk, setting, members) = &mut groups[i];
        for (q, f) in op.factors.iter().enumerate() {
            if let Some(a) = f {
                gk[q] = Some(a.key());
                setting.axes[q] = Some(*a);
            }
        }
        members.push(op);
    }
    groups.into_iter().map(|(_, s, m)| (s, m)).collect()
}

/// Settings and exact reconstruction of the target projector from their outcomes.
pub fn fidelity_settings(state: NamedState) -> (Vec<MeasurementSetting>, MeasuredExpr) {
    use PauliLetter::*;
    let ax = |l| Axis::pauli(l).expect("non-identity");
    let comp = |a, b, s| Axis::composite(a, b, s).expect("distinct letters");
    let n = state.qubits();
    let r2 = std::f64::consts::SQRT_2;
    let mut e = MeasuredExpr::new(n);
    let settings;
    match state {
        NamedState::W3 | NamedState::W4 => {
            // Z-only marginals, then (I + Z ± A)^{xn} = (I + sqrt2 (Z ± A)/sqrt2)^{xn}
            let (norm, step) = if n == 3 { (24.0, [-1.0, -3.0, -5.0, -7.0]) } else { (64.0, [0.0, -2.0, -4.0, -6.0]) };
            let mut z_weights = step.to_vec();
            if n == 4 {
                z_weights.push(-8.0);
            }
            for mask in 0usize..1 << n {
                let k = mask.count_ones() as usize;
                let qubits: Vec<usize> = (0..n).filter(|i| mask >> (n - 1 - i) & 1 == 1).map(|i| i + 1).collect();
                e.push(z_weights[k] / norm, ProductOperator::on(n, ax(Z), &qubits).unwrap());
            }
            if n == 4 {
                e.push(-2.0 / norm, ProductOperator::on(n, ax(X), &[1, 2, 3, 4]).unwrap());
                e.push(-2.0 / norm, ProductOperator::on(n, ax(Y), &[1, 2, 3, 4]).unwrap());
            }
            let composites = [comp(Z, X, 1.0), comp(Z, X, -1.0), comp(Z, Y, 1.0), comp(Z, Y, -1.0)];
            for a in composites {
                e.push_power(1.0 / norm, 1.0, r2, a);
            }
            let mut s = vec![MeasurementSetting::uniform(n, ax(Z))];
            if n == 4 {
                s.splice(0..0, [MeasurementSetting::uniform(n, ax(X)), MeasurementSetting::uniform(n, ax(Y))]);
            }
            s.extend(composites.map(|a| MeasurementSetting::uniform(n, a)));
            settings = s;
        }
        NamedState::D4 => {
            let norm = 96.0;
            for (l, full, marg) in [(X, 4.0, 2.0), (Y, 4.0, 2.0), (Z, 16.0, -1.0)] {
                e.push(full / norm, ProductOperator::on(n, ax(l), &[1, 2, 3, 4]).unwrap());
                e.push_power(marg / norm, 1.0, 1.0, ax(l));
                e.push_power(marg / norm, -1.0, 1.0, ax(l));
            }
            let pairs = [(X, Y, 1.0), (X, Y, -1.0), (X, Z, 1.0), (X, Z, -1.0), (Y, Z, 1.0), (Y, Z, -1.0)];
            for (a, b, s) in pairs {
                let w = if a == X && b == Y { 1.0 } else { -2.0 };
                e.push_power(w / norm, 0.0, r2, comp(a, b, s));
            }
            let mut s: Vec<MeasurementSetting> = [X, Y, Z].map(|l| MeasurementSetting::uniform(n, ax(l))).to_vec();
            s.extend(pairs.map(|(a, b, sg)| MeasurementSetting::uniform(n, comp(a, b, sg))));
            settings = s;
        }
        NamedState::C4 => {
            let terms = [
                ("IIII", 1.0),
                ("ZZII", 1.0),
                ("XXZI", 1.0),
                ("IZXX", 1.0),
                ("IIZZ", 1.0),
                ("YYZI", -1.0),
                ("ZIXX", 1.0),
                ("ZZZZ", 1.0),
                ("XYYX", 1.0),
                ("XXIZ", 1.0),
                ("IZYY", -1.0),
                ("YXYX", 1.0),
                ("YYIZ", -1.0),
                ("ZIYY", -1.0),
                ("XYXY", 1.0),
                ("YXXY", 1.0),
            ];
            for (w, c) in terms {
                e.push(c / 16.0, ProductOperator::from_pauli(&w.parse().unwrap()));
            }
            settings = ["ZZZZ", "ZZXX", "XXZZ", "YYZZ", "ZZYY", "XYYX", "YXXY", "XYXY", "YXYX"]
                .map(|w| MeasurementSetting::pauli(w).unwrap())
                .to_vec();
        }
    }
    (settings, e)
}

fn local_projector(axis: Option<Axis>, plus: bool) -> CMatrix {
    match axis {
        None if plus => CMatrix::identity(2, 2),
        None => CMatrix::zeros(2, 2),
        Some(a) => {
            let s = if plus { 0.5 } else { -0.5 };
            CMatrix::identity(2, 2) * Complex64::new(0.5, 0.0) + a.matrix() * Complex64::new(s, 0.0)
        }
    }
}

/// Outcome string of index `o`: qubit 1 is the most significant bit, 0 is `+`.
pub fn outcome_label(n: usize, o: usize) -> String {
    (0..n).map(|i| if o >> (n - 1 - i) & 1 == 0 { '+' } else { '-' }).collect()
}

pub fn parse_outcome(s: &str) -> Result<usize> {
    s.chars().enumerate().try_fold(0usize, |acc, (pos, c)| match c {
        '+' => Ok(acc << 1),
        '-' => Ok(acc << 1 | 1),
        _ => Err(Error::Parse { pos, msg: format!("unexpected {c:?} in outcome") }),
    })
}

/// Born probabilities of the 2^n joint outcomes, clamped at zero.
pub fn outcome_probabilities(rho: &DensityMatrix, s: &MeasurementSetting) -> Result<Vec<f64>> {
    let n = s.n();
    if rho.n() != n {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: 1 << n });
    }
    let locals: Vec<[CMatrix; 2]> = s.axes.iter().map(|&a| [local_projector(a, true), local_projector(a, false)]).collect();
    let m = rho.matrix();
    Ok((0..1usize << n)
        .map(|o| {
            let mut proj = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
            for (i, l) in locals.iter().enumerate() {
                proj = tensor::kron(&proj, &l[o >> (n - 1 - i) & 1]);
            }
            let p: f64 = proj.iter().zip(m.transpose().iter()).map(|(a, b)| (a * b).re).sum();
            p.max(0.0)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountTable {
    pub setting: MeasurementSetting,
    pub counts: Vec<u64>,
    pub shots: u64,
}

impl CountTable {
    pub fn new(setting: MeasurementSetting, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != 1 << setting.n() {
            return Err(Error::DimensionMismatch { expected: 1 << setting.n(), got: counts.len() });
        }
        let shots = counts.iter().sum();
        if shots == 0 {
            return Err(Error::InvalidInput("count table is empty".into()));
        }
        Ok(Self { setting, counts, shots })
    }

    /// Empirical mean of a covered operator.
    pub fn mean(&self, op: &ProductOperator) -> Option<f64> {
        let sign = self.setting.covers(op)?;
        let mask = support_mask(op);
        let total: i64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(o, &c)| if (o & mask).count_ones() % 2 == 0 { c as i64 } else { -(c as i64) })
            .sum();
        Some(sign * total as f64 / self.shots as f64)
    }
}

fn support_mask(op: &ProductOperator) -> usize {
    let n = op.n();
    op.factors.iter().enumerate().fold(0usize, |m, (i, f)| if f.is_some() { m | 1 << (n - 1 - i) } else { m })
}

/// Multinomial draw as a chain of conditional binomials over the outcome probabilities.
fn multinomial(probs: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut left = shots;
    let mut mass: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = left;
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        counts[i] = k;
        left -= k;
        mass -= p;
    }
    counts
}

fn sample_on_stream(rho: &DensityMatrix, s: &MeasurementSetting, shots: u64, seed: u64, stream: u64) -> Result<CountTable> {
    if shots == 0 {
        return Err(Error::InvalidInput("shots must be at least 1".into()));
    }
    let probs = outcome_probabilities(rho, s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let counts = multinomial(&probs, shots, &mut rng);
    Ok(CountTable { setting: s.clone(), counts, shots })
}

pub fn sample_counts(rho: &DensityMatrix, s: &MeasurementSetting, shots: u64, seed: u64) -> Result<CountTable> {
    sample_on_stream(rho, s, shots, seed, 0)
}

/// Simulates every setting, setting `i` drawing from stream `i` of the seeded generator.
pub fn simulate_settings(rho: &DensityMatrix, settings: &[MeasurementSetting], shots: u64, seed: u64) -> Result<Vec<CountTable>> {
    settings
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_on_stream(rho, s, shots, seed, i as u64))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationRecord {
    pub operator: ProductOperator,
    pub value: f64,
    pub sigma: f64,
}

impl ExpectationRecord {
    pub fn bit_flipped(&self) -> Self {
        Self { operator: self.operator.bit_flipped(), ..self.clone() }
    }
}

/// Means and binomial standard errors, each operator read from the first table that covers it.
pub fn estimate_expectations(tables: &[CountTable], operators: &[ProductOperator]) -> Result<Vec<ExpectationRecord>> {
    operators
        .iter()
        .map(|op| {
            if op.is_identity() {
                return Ok(ExpectationRecord { operator: op.clone(), value: op.sign, sigma: 0.0 });
            }
            let (value, shots) = tables
                .iter()
                .find_map(|t| t.mean(op).map(|v| (v, t.shots)))
                .ok_or_else(|| Error::UncoveredOperator(op.to_string()))?;
            let sigma = ((1.0 - value * value).max(0.0) / shots as f64).sqrt();
            Ok(ExpectationRecord { operator: op.clone(), value, sigma })
        })
        .collect()
}

/// `(value, sigma)` of an expression straight from count tables.
///
/// Each term is read from the first table covering it. Per table, the terms it carries
/// are summed outcome by outcome, so correlations between operators sharing a setting
/// enter the variance; the per-setting variances then add in quadrature. For a single
/// ±1 observable this is the binomial (1 - E^2) / N.
pub fn estimate_from_counts(tables: &[CountTable], expr: &MeasuredExpr) -> Result<(f64, f64)> {
    let mut per_outcome: Vec<Option<Vec<f64>>> = vec![None; tables.len()];
    for (c, op) in &expr.terms {
        let (i, sign) = tables
            .iter()
            .enumerate()
            .find_map(|(i, t)| t.setting.covers(op).map(|s| (i, s)))
            .ok_or_else(|| Error::UncoveredOperator(op.to_string()))?;
        let mask = support_mask(op);
        let a = per_outcome[i].get_or_insert_with(|| vec![0.0; tables[i].counts.len()]);
        for (o, v) in a.iter_mut().enumerate() {
            let parity = if (o & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            *v += c * sign * parity;
        }
    }
    let mut value = expr.identity;
    let mut var = 0.0;
    for (t, a) in tables.iter().zip(&per_outcome) {
        let Some(a) = a else { continue };
        let n = t.shots as f64;
        let (m1, m2) = t.counts.iter().zip(a).fold((0.0, 0.0), |(m1, m2), (&k, &v)| {
            let w = k as f64 / n;
            (m1 + w * v, m2 + w * v * v)
        });
        value += m1;
        var += (m2 - m1 * m1).max(0.0) / n;
    }
    Ok((value, var.sqrt()))
}

/// `(value, sigma)` of an expression from records matched by operator up to orientation.
pub fn combine(records: &[ExpectationRecord], expr: &MeasuredExpr) -> Result<(f64, f64)> {
    let mut index: BTreeMap<OperatorKey, Vec<(f64, &ExpectationRecord)>> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.operator.is_identity()) {
        let (s, key) = r.operator.key();
        index.entry(key).or_default().push((s, r));
    }
    let mut value = expr.identity;
    let mut var = 0.0;
    for (c, op) in &expr.terms {
        let (s, key) = op.key();
        match index.get(&key).map(Vec::as_slice) {
            None | Some([]) => return Err(Error::MissingRecord(op.to_string())),
            Some([(sr, r)]) => {
                value += c * s * sr * r.value;
                var += (c * r.sigma).powi(2);
            }
            Some(_) => return Err(Error::DuplicateRecord(op.to_string())),
        }
    }
    Ok((value, var.sqrt()))
}

struct Cursor {
    chars: Vec<(usize, char)>,
    at: usize,
}

impl Cursor {
    fn new(src: &str) -> Self {
        let chars = src.chars().enumerate().filter(|(_, c)| !c.is_whitespace()).collect();
        Self { chars, at: 0 }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.at).map(|&(_, c)| c)
    }

    fn pos(&self) -> usize {
        self.chars.get(self.at).map(|&(p, _)| p).unwrap_or_else(|| self.chars.last().map(|&(p, _)| p + 1).unwrap_or(0))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.pos(), msg: msg.into() })
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        self.at += 1;
        c
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        for want in lit.chars() {
            if self.peek() != Some(want) {
                return self.err(format!("expected {lit:?}"));
            }
            self.at += 1;
        }
        Ok(())
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.at;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.at += 1;
        }
        if start == self.at {
            return self.err("expected a qubit number");
        }
        let s: String = self.chars[start..self.at].iter().map(|&(_, c)| c).collect();
        s.parse().map_err(|_| Error::Parse { pos: self.chars[start].0, msg: "number too large".into() })
    }

    fn letter(&mut self) -> Result<PauliLetter> {
        match self.peek().and_then(PauliLetter::from_char) {
            Some(l) if l != PauliLetter::I => {
                self.at += 1;
                Ok(l)
            }
            _ => self.err("expected X, Y or Z"),
        }
    }
}

/// Parses one product operator on `n` qubits.
///
/// Accepted forms, optionally prefixed by `-`: an `n`-letter word (`ZZXX`); indexed
/// factors (`X1X2`, `Z1Y3Y4`); `[(A±B)/r2]x<n>`; `[(A±B)/r2]_<i,j,...>` mixed with
/// indexed factors. `I` alone is the identity. Whitespace is ignored.
pub fn parse_operator(text: &str, n: usize) -> Result<ProductOperator> {
    let mut cur = Cursor::new(text);
    let mut sign = 1.0;
    if cur.peek() == Some('-') {
        sign = -1.0;
        cur.bump();
    }
    if cur.peek().is_none() {
        return cur.err("empty operator");
    }
    let rest: String = cur.chars[cur.at..].iter().map(|&(_, c)| c).collect();
    if rest == "I" {
        return Ok(ProductOperator { sign, ..ProductOperator::identity(n) });
    }
    if rest.chars().all(|c| "IXYZ".contains(c)) {
        if rest.len() != n {
            return cur.err(format!("word of length {} on {n} qubits", rest.len()));
        }
        let p: PauliString = rest.parse()?;
        return Ok(ProductOperator { sign, ..ProductOperator::from_pauli(&p) });
    }
    let mut factors: Vec<Option<Axis>> = vec![None; n];
    let place = |cur: &Cursor, q: usize, a: Axis, factors: &mut Vec<Option<Axis>>| -> Result<()> {
        if q == 0 || q > n {
            return cur.err(format!("qubit {q} out of range 1..={n}"));
        }
        if factors[q - 1].is_some() {
            return cur.err(format!("qubit {q} appears twice"));
        }
        factors[q - 1] = Some(a);
        Ok(())
    };
    let mut uniform = false;
    while let Some(c) = cur.peek() {
        if uniform {
            return cur.err("nothing may follow a uniform composite");
        }
        if c == '[' {
            cur.bump();
            cur.expect("(")?;
            let a = cur.letter()?;
            let s = match cur.bump() {
                Some('+') => 1.0,
                Some('-') => -1.0,
                _ => {
                    cur.at -= 1;
                    return cur.err("expected + or -");
                }
            };
            let b = cur.letter()?;
            cur.expect(")/")?;
            if cur.peek() == Some('√') {
                cur.expect("√2")?;
            } else {
                cur.expect("r2")?;
            }
            cur.expect("]")?;
            let axis = Axis::composite(a, b, s)?;
            match cur.bump() {
                Some('x') => {
                    let at = cur.pos();
                    let k = cur.number()?;
                    if k != n || factors.iter().any(Option::is_some) {
                        return Err(Error::Parse { pos: at, msg: format!("uniform composite must cover all {n} qubits") });
                    }
                    for q in 1..=n {
                        place(&cur, q, axis, &mut factors)?;
                    }
                    uniform = true;
                }
                Some('_') => loop {
                    let q = cur.number()?;
                    place(&cur, q, axis, &mut factors)?;
                    if cur.peek() == Some(',') {
                        cur.bump();
                    } else {
                        break;
                    }
                },
                _ => {
                    cur.at -= 1;
                    return cur.err("expected x<n> or _<qubits>");
                }
            }
        } else {
            let l = cur.letter()?;
            let q = cur.number()?;
            place(&cur, q, Axis::pauli(l).expect("non-identity"), &mut factors)?;
        }
    }
    Ok(ProductOperator { sign, factors })
}

/// Reads `operator,value,sigma` rows; an empty sigma reads as 0.
pub fn read_records_csv<R: Read>(input: R, n: usize) -> Result<Vec<ExpectationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["operator", "value", "sigma"] {
        return Err(Error::InvalidInput(format!("expected header operator,value,sigma, got {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::InvalidInput(format!("line {line}: bad {what} {s:?}")))
        };
        let operator = parse_operator(&row[0], n)?;
        let value = num(&row[1], "value")?;
        let sigma = if row[2].is_empty() { 0.0 } else { num(&row[2], "sigma")? };
        if sigma < 0.0 {
            return Err(Error::InvalidInput(format!("line {line}: negative sigma")));
        }
        out.push(ExpectationRecord { operator, value, sigma });
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>, n: usize) -> Result<Vec<ExpectationRecord>> {
    read_records_csv(std::fs::File::open(path)?, n)
}

pub fn write_records_csv<W: Write>(out: W, records: &[ExpectationRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["operator", "value", "sigma"])?;
    for r in records {
        wtr.write_record([r.operator.to_string(), format!("{}", r.value), format!("{}", r.sigma)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_counts_csv<W: Write>(out: W, table: &CountTable) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["outcome", "count"])?;
    for (o, c) in table.counts.iter().enumerate() {
        wtr.write_record([outcome_label(table.setting.n(), o), c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Outcomes missing from the file count as zero.
pub fn read_counts_csv<R: Read>(input: R, setting: MeasurementSetting) -> Result<CountTable> {
    let n = setting.n();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["outcome", "count"] {
        return Err(Error::InvalidInput("expected header outcome,count".into()));
    }
    let mut counts = vec![0u64; 1 << n];
    for row in rdr.records() {
        let row = row?;
        if row[0].chars().count() != n {
            return Err(Error::InvalidInput(format!("outcome {:?} does not have {n} signs", &row[0])));
        }
        let o = parse_outcome(&row[0])?;
        counts[o] += row[1].parse::<u64>().map_err(|_| Error::InvalidInput(format!("bad count {:?}", &row[1])))?;
    }
    CountTable::new(setting, counts)
}

/// Index of a simulation run: one count file per setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountManifest {
    pub n: usize,
    pub generator: String,
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub settings: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: String,
    pub file: String,
    pub axes: Vec<Option<Axis>>,
}

/// Writes `setting_<i>.csv` per table plus `manifest.json` into `dir`.
pub fn save_counts(dir: impl AsRef<Path>, tables: &[CountTable], seed: Option<u64>) -> Result<CountManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let n = tables.first().map(|t| t.setting.n()).unwrap_or(0);
    let mut entries = Vec::with_capacity(tables.len());
    for (i, t) in tables.iter().enumerate() {
        let file = format!("setting_{i}.csv");
        write_counts_csv(std::fs::File::create(dir.join(&file))?, t)?;
        entries.push(ManifestEntry { label: t.setting.to_string(), file, axes: t.setting.axes.clone() });
    }
    let shots = tables.first().map(|t| t.shots).filter(|&s| tables.iter().all(|t| t.shots == s));
    let manifest = CountManifest { n, generator: GENERATOR.into(), seed, shots, settings: entries };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads the count tables listed in a manifest; file paths are relative to it.
pub fn load_counts(manifest_path: impl AsRef<Path>) -> Result<Vec<CountTable>> {
    let path = manifest_path.as_ref();
    let manifest: CountManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest
        .settings
        .iter()
        .map(|e| {
            if e.axes.len() != manifest.n {
                return Err(Error::DimensionMismatch { expected: manifest.n, got: e.axes.len() });
            }
            read_counts_csv(std::fs::File::open(base.join(&e.file))?, MeasurementSetting::new(e.axes.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{make_state, PureState};
    use crate::witness;
    use proptest::prelude::*;

    fn op(s: &str, n: usize) -> ProductOperator {
        parse_operator(s, n).unwrap()
    }

    #[test]
    fn parse_forms() {
        assert_eq!(op("X1X2", 4).to_expr(), ObservableExpr::from_terms(4, [("XXII".parse().unwrap(), 1.0)]).unwrap());
        assert_eq!(op("ZZZZ", 4), ProductOperator::from_pauli(&"ZZZZ".parse().unwrap()));
        assert_eq!(op(" Z1 Y3Y4 ", 4), op("ZIYY", 4));
        assert!(op("I", 3).is_identity());
        assert_eq!(op("-Y1Y2Z3", 4).sign, -1.0);

        let a = Axis::composite(PauliLetter::X, PauliLetter::Z, 1.0).unwrap();
        assert_eq!(op("[(X+Z)/r2]x4", 4), ProductOperator::on(4, a, &[1, 2, 3, 4]).unwrap());
        assert_eq!(op("[(X + Z)/√2]x4", 4), op("[(X+Z)/r2]x4", 4));
        let b = Axis::composite(PauliLetter::Z, PauliLetter::Y, -1.0).unwrap();
        assert_eq!(op("[(Z-Y)/r2]_1,3", 3), ProductOperator::on(3, b, &[1, 3]).unwrap());
        assert_eq!(op("X2[(Z-Y)/r2]_1", 3).factors[1], Axis::pauli(PauliLetter::X));

        // ((X+Z)/sqrt2)^{x4} expands with coefficient 1/4 on each of the 16 XZ words
        let e = op("[(X+Z)/r2]x4", 4).to_expr();
        assert_eq!(e.len(), 16);
        assert!(e.terms().all(|(_, c)| (c - 0.25).abs() < 1e-12));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let pos = |s: &str, n| match parse_operator(s, n) {
            Err(Error::Parse { pos, .. }) => pos,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(pos("X1Q2", 4), 2);
        assert_eq!(pos("X5", 4), 2);
        assert_eq!(pos("X1X1", 4), 4);
        assert_eq!(pos("[(X+Z)/r3]x4", 4), 8);
        assert_eq!(pos("[(X+Z)/r2]x3", 4), 11);
        assert_eq!(pos("XYZ", 4), 0);
        assert_eq!(pos("", 2), 0);
        assert!(matches!(parse_operator("[(X+X)/r2]x2", 2), Err(Error::NonUnitAxis { .. })));
        assert!(matches!(parse_operator("[(Y-Y)/r2]_1", 2), Err(Error::NonUnitAxis { .. })));
    }

    #[test]
    fn display_round_trips() {
        for s in ["XXII", "-ZIYY", "[(X+Z)/r2]x4", "[(Z-Y)/r2]_1,3", "[(Y-Z)/r2]_2", "IIII"] {
            let o = op(s, if s.contains("_1,3") { 3 } else { 4 });
            assert_eq!(parse_operator(&o.to_string(), o.n()).unwrap(), o, "{s}");
        }
        // canonical orientation folds the sign of (Z-X) into (X-Z)
        let c = op("[(Z-X)/r2]_1", 1).canonical();
        assert_eq!(c.sign, -1.0);
        assert_eq!(c.factors[0].unwrap().label(), "[(X-Z)/r2]");
    }

    #[test]
    fn plans_for_w3_and_d4() {
        let w1 = witness::load_catalog_witness(NamedState::W3, 1).unwrap();
        let plan = plan_settings(&MeasuredExpr::from(&w1.expr));
        let labels: Vec<String> = plan.iter().map(|(s, _)| s.to_string()).collect();
        assert_eq!(labels, ["ZZZ", "XXX", "YYY"]);
        let zzz: Vec<String> = plan[0].1.iter().map(|o| o.to_string()).collect();
        assert_eq!(zzz, ["IIZ", "IZI", "IZZ", "ZII", "ZZI"]);
        assert_eq!(plan[1].1.len(), 2);

        let w5 = witness::load_catalog_witness(NamedState::D4, 5).unwrap();
        let plan = plan_settings(&MeasuredExpr::from(&w5.expr));
        let mut labels: Vec<String> = plan.iter().map(|(s, _)| s.to_string()).collect();
        labels.sort();
        assert_eq!(labels, ["XXXX", "YYYY", "ZZZZ"]);

        let single = MeasuredExpr::from(&ObservableExpr::from_terms(2, [("XY".parse().unwrap(), 0.5)]).unwrap());
        assert_eq!(plan_settings(&single).len(), 1);
    }

    #[test]
    fn fidelity_reconstructions_are_exact() {
        for (state, count) in [(NamedState::W3, 5), (NamedState::W4, 7), (NamedState::D4, 9), (NamedState::C4, 9)] {
            let (settings, rec) = fidelity_settings(state);
            assert_eq!(settings.len(), count, "{state}");
            let psi = make_state(state);
            let diff = (rec.to_observable().to_matrix() - psi.projector()).norm();
            assert!(diff < 1e-10, "{state}: {diff}");
            for (_, o) in &rec.terms {
                assert!(settings.iter().any(|s| s.covers(o).is_some()), "{state}: {o} unmeasured");
            }
        }
        assert_eq!(fidelity_settings(NamedState::C4).0[5].to_string(), "XYYX");
    }

    #[test]
    fn probabilities_examples() {
        let mixed = DensityMatrix::maximally_mixed(3);
        let p = outcome_probabilities(&mixed, &MeasurementSetting::pauli("XYZ").unwrap()).unwrap();
        assert!(p.iter().all(|&x| (x - 0.125).abs() < 1e-12));

        let d4 = make_state(NamedState::D4).density();
        let p = outcome_probabilities(&d4, &MeasurementSetting::pauli("ZZZZ").unwrap()).unwrap();
        for (o, x) in p.iter().enumerate() {
            let want = if o.count_ones() == 2 { 1.0 / 6.0 } else { 0.0 };
            assert!((x - want).abs() < 1e-12);
        }
        // unmeasured qubits always read +
        let p = outcome_probabilities(&d4, &MeasurementSetting::new(vec![Axis::pauli(PauliLetter::Z), None, None, None])).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[8] - 0.5).abs() < 1e-12);
        assert!(outcome_probabilities(&d4, &MeasurementSetting::pauli("ZZZ").unwrap()).is_err());
    }

    #[test]
    fn counts_sum_and_deterministic_outcome() {
        let zero = PureState::basis("0000").unwrap().density();
        let t = sample_counts(&zero, &MeasurementSetting::pauli("ZZZZ").unwrap(), 1234, 9).unwrap();
        assert_eq!(t.counts[0], 1234);
        assert_eq!(t.shots, 1234);
        let d4 = make_state(NamedState::D4).density();
        let s = MeasurementSetting::pauli("XXZZ").unwrap();
        let a = sample_counts(&d4, &s, 5000, 3).unwrap();
        assert_eq!(a.counts.iter().sum::<u64>(), 5000);
        assert_eq!(a, sample_counts(&d4, &s, 5000, 3).unwrap());
        assert_ne!(a, sample_counts(&d4, &s, 5000, 4).unwrap());

        let recs = estimate_expectations(&[t], &[op("Z1Z2", 4), op("I", 4)]).unwrap();
        assert_eq!((recs[0].value, recs[0].sigma), (1.0, 0.0));
        assert_eq!((recs[1].value, recs[1].sigma), (1.0, 0.0));
    }

    #[test]
    fn frequencies_converge() {
        let d4 = make_state(NamedState::D4).density();
        let s = MeasurementSetting::uniform(4, Axis::composite(PauliLetter::X, PauliLetter::Z, 1.0).unwrap());
        let probs = outcome_probabilities(&d4, &s).unwrap();
        let shots = 1_000_000u64;
        let t = sample_counts(&d4, &s, shots, 11).unwrap();
        for (p, &c) in probs.iter().zip(&t.counts) {
            let se = (p * (1.0 - p) / shots as f64).sqrt();
            assert!((c as f64 / shots as f64 - p).abs() <= 5.0 * se + 1e-12, "{p} {c}");
        }
    }

    #[test]
    fn dicke_pair_estimate() {
        let d4 = make_state(NamedState::D4).density();
        let t = sample_counts(&d4, &MeasurementSetting::pauli("ZZZZ").unwrap(), 3000, 21).unwrap();
        let r = &estimate_expectations(&[t], &[op("Z1Z2", 4)]).unwrap()[0];
        assert!((r.value + 1.0 / 3.0).abs() < 4.0 * r.sigma);
        let missing = estimate_expectations(&[], &[op("X1", 4)]);
        assert!(matches!(missing, Err(Error::UncoveredOperator(_))));
    }

    #[test]
    fn infinite_shot_limit_matches_evaluate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let psi = PureState::haar_random(3, &mut rng);
        let rho = psi.density();
        for p in PauliString::all(3).filter(|p| !p.is_identity()) {
            let o = ProductOperator::from_pauli(&p);
            let setting = MeasurementSetting::new(o.factors.iter().map(|f| f.or(Axis::pauli(PauliLetter::Z))).collect());
            let probs = outcome_probabilities(&rho, &setting).unwrap();
            let n = 3;
            let mask = o.factors.iter().enumerate().fold(0usize, |m, (i, f)| if f.is_some() { m | 1 << (n - 1 - i) } else { m });
            let v: f64 = probs.iter().enumerate().map(|(k, q)| if (k & mask).count_ones() % 2 == 0 { *q } else { -q }).sum();
            let exact = witness::evaluate(&o.to_expr(), &rho).unwrap();
            assert!((v - exact).abs() < 1e-12, "{p}");
        }
    }

    #[test]
    fn count_estimates_keep_setting_correlations() {
        let zz = MeasurementSetting::pauli("ZZ").unwrap();
        let table = CountTable::new(zz, vec![500, 0, 0, 500]).unwrap();
        let mut e = MeasuredExpr::new(2);
        e.push(1.0, op("Z1", 2));
        e.push(1.0, op("Z2", 2));
        let (v, s) = estimate_from_counts(std::slice::from_ref(&table), &e).unwrap();
        assert!(v.abs() < 1e-15);
        assert!((s - 2.0 / 1000f64.sqrt()).abs() < 1e-12);
        let recs = estimate_expectations(std::slice::from_ref(&table), &[op("Z1", 2), op("Z2", 2)]).unwrap();
        assert!((combine(&recs, &e).unwrap().1 - (2.0f64 / 1000.0).sqrt()).abs() < 1e-12);

        let mut single = MeasuredExpr::new(2);
        single.push(0.5, op("Z1Z2", 2));
        let table = CountTable::new(MeasurementSetting::pauli("ZZ").unwrap(), vec![300, 100, 100, 500]).unwrap();
        let (v, s) = estimate_from_counts(&[table], &single).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
        assert!((s - 0.5 * ((1.0 - 0.36) / 1000.0f64).sqrt()).abs() < 1e-12);

        let mut uncovered = MeasuredExpr::new(2);
        uncovered.push(1.0, op("X1", 2));
        let table = CountTable::new(MeasurementSetting::pauli("ZZ").unwrap(), vec![1, 0, 0, 0]).unwrap();
        assert!(matches!(estimate_from_counts(&[table], &uncovered), Err(Error::UncoveredOperator(_))));
    }

    #[test]
    fn combine_matching_and_errors() {
        let recs = vec![
            ExpectationRecord { operator: op("X1X2", 2), value: 0.5, sigma: 0.1 },
            ExpectationRecord { operator: op("-ZZ", 2), value: 0.25, sigma: 0.2 },
            ExpectationRecord { operator: op("I", 2), value: 1.0, sigma: 0.0 },
        ];
        let e = ObservableExpr::from_terms(2, [("II".parse().unwrap(), 0.25), ("XX".parse().unwrap(), 2.0), ("ZZ".parse().unwrap(), 1.0)]).unwrap();
        let (v, s) = combine(&recs, &MeasuredExpr::from(&e)).unwrap();
        assert!((v - (0.25 + 1.0 - 0.25)).abs() < 1e-15);
        assert!((s - (0.2f64.powi(2) + 0.2f64.powi(2)).sqrt()).abs() < 1e-15);

        let doubled: Vec<_> = recs.iter().map(|r| ExpectationRecord { sigma: 2.0 * r.sigma, ..r.clone() }).collect();
        assert!((combine(&doubled, &MeasuredExpr::from(&e)).unwrap().1 - 2.0 * s).abs() < 1e-15);

        let zeros: Vec<_> = recs.iter().map(|r| ExpectationRecord { value: 0.0, ..r.clone() }).collect();
        assert!((combine(&zeros, &MeasuredExpr::from(&e)).unwrap().0 - 0.25).abs() < 1e-15);

        let e2 = ObservableExpr::from_terms(2, [("YY".parse().unwrap(), 1.0)]).unwrap();
        assert!(matches!(combine(&recs, &MeasuredExpr::from(&e2)), Err(Error::MissingRecord(_))));
        let mut dup = recs.clone();
        dup.push(ExpectationRecord { operator: op("XX", 2), value: 0.4, sigma: 0.1 });
        assert!(matches!(combine(&dup, &MeasuredExpr::from(&e)), Err(Error::DuplicateRecord(_))));
    }

    #[test]
    fn record_and_count_io() {
        let text = "operator,value,sigma\nX1X2,0.656,0.014\n[(X+Z)/r2]x4,-0.475,0.016\nI,1,\n";
        let recs = read_records_csv(text.as_bytes(), 4).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[2].sigma, 0.0);
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs).unwrap();
        assert_eq!(read_records_csv(buf.as_slice(), 4).unwrap(), recs);
        assert!(read_records_csv("op,value,sigma\n".as_bytes(), 4).is_err());

        let d4 = make_state(NamedState::D4).density();
        let (settings, _) = fidelity_settings(NamedState::D4);
        let tables = simulate_settings(&d4, &settings[..4], 200, 8).unwrap();
        let dir = std::env::temp_dir().join(format!("edl-counts-{}", std::process::id()));
        let m = save_counts(&dir, &tables, Some(8)).unwrap();
        assert_eq!(m.generator, GENERATOR);
        assert_eq!(m.settings[3].label, "[(X+Y)/r2]x4");
        assert_eq!(load_counts(dir.join("manifest.json")).unwrap(), tables);
        std::fs::remove_dir_all(dir).unwrap();
    }

    proptest! {
        #[test]
        fn plan_covers_each_term_once(mask in prop::collection::vec(any::<bool>(), 63)) {
            let terms: Vec<(PauliString, f64)> = PauliString::all(3)
                .skip(1)
                .zip(mask)
                .filter(|(_, keep)| *keep)
                .map(|(p, _)| (p, 1.0))
                .collect();
            prop_assume!(!terms.is_empty());
            let e = MeasuredExpr::from(&ObservableExpr::from_terms(3, terms.clone()).unwrap());
            let plan = plan_settings(&e);
            prop_assert!(plan.len() <= terms.len());
            let covered: usize = plan.iter().map(|(_, m)| m.len()).sum();
            prop_assert_eq!(covered, terms.len());
            for (s, members) in &plan {
                for m in members {
                    prop_assert!(s.covers(m).is_some());
                }
            }
        }

        #[test]
        fn probabilities_sum_to_one(seed in any::<u64>(), ax in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 3)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = PureState::haar_random(3, &mut rng).density();
            let axes = ax
                .into_iter()
                .map(|(x, y, z)| {
                    let norm = (x * x + y * y + z * z).sqrt();
                    if norm < 1e-3 { None } else { Some(Axis::new([x / norm, y / norm, z / norm]).unwrap()) }
                })
                .collect();
            let p = outcome_probabilities(&rho, &MeasurementSetting::new(axes)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
