//! Measurement-axis misalignment and white-noise tolerance curves.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::DensityMatrix;
use crate::tensor::{PauliLetter, PauliString};
use crate::witness::{self, ObservableExpr, Witness};

/// Upper end of the interval a crossover is searched in.
pub const CROSSOVER_BRACKET: f64 = std::f64::consts::FRAC_PI_4;
pub const CROSSOVER_TOL: f64 = 1e-4;
const CROSSOVER_SCAN_STEP: f64 = 0.005;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MisalignmentMode {
    #[default]
    AllAxes,
    YOnly,
}

impl fmt::Display for MisalignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MisalignmentMode::AllAxes => "all_axes",
            MisalignmentMode::YOnly => "y_only",
        })
    }
}

impl FromStr for MisalignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_axes" => Ok(MisalignmentMode::AllAxes),
            "y_only" => Ok(MisalignmentMode::YOnly),
            _ => Err(Error::InvalidInput(format!("unknown misalignment mode {s:?}"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisalignmentSpec {
    pub theta: f64,
    pub mode: MisalignmentMode,
}

impl MisalignmentSpec {
    pub fn new(theta: f64, mode: MisalignmentMode) -> Self {
        Self { theta, mode }
    }

    /// Sweeps are meant to stay within [0, pi/2]; other angles still work.
    pub fn in_sweep_range(&self) -> bool {
        (0.0..=std::f64::consts::FRAC_PI_2).contains(&self.theta)
    }

    /// Image of a single letter as a combination of Pauli letters.
    pub fn letter_image(&self, letter: PauliLetter) -> Vec<(f64, PauliLetter)> {
        use PauliLetter::*;
        let (c, s) = (self.theta.cos(), self.theta.sin());
        match (self.mode, letter) {
            (_, I) => vec![(1.0, I)],
            (MisalignmentMode::AllAxes, X) => vec![(c, X), (s, Y)],
            (_, Y) => vec![(c, Y), (s, Z)],
            (MisalignmentMode::AllAxes, Z) => vec![(c, Z), (s, X)],
            (MisalignmentMode::YOnly, l) => vec![(1.0, l)],
        }
    }
}

/// Substitutes every non-identity letter of every term and recollects the products.
pub fn misalign_expr(expr: &ObservableExpr, spec: &MisalignmentSpec) -> ObservableExpr {
    let n = expr.n();
    let images: Vec<Vec<(f64, PauliLetter)>> = PauliLetter::ALL.iter().map(|&l| spec.letter_image(l)).collect();
    let mut out = ObservableExpr::zero(n);
    for (p, coeff) in expr.terms() {
        let mut partial: Vec<(f64, Vec<PauliLetter>)> = vec![(coeff, Vec::with_capacity(n))];
        for &letter in p.letters() {
            let image = &images[letter as usize];
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
        for (c, letters) in partial {
            out.add_term(PauliString::new(letters), c);
        }
    }
    out
}

/// Tolerances ∈ [0, 1) of a witness along a θ grid; `None` where it no longer detects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceCurve {
    pub thetas: Vec<f64>,
    pub tolerances: Vec<Option<f64>>,
    pub witness_label: String,
}

impl ToleranceCurve {
    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

pub fn default_grid() -> Vec<f64> {
    (0..=120).map(|i| i as f64 * 0.005).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("theta grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("theta grid must be finite and strictly ascending".into()));
    }
    Ok(())
}

pub fn tolerance_at(expr: &ObservableExpr, rho: &DensityMatrix, spec: &MisalignmentSpec) -> Result<Option<f64>> {
    witness::noise_tolerance(&misalign_expr(expr, spec), rho)
}

pub fn tolerance_curve(w: &Witness, rho: &DensityMatrix, grid: &[f64], mode: MisalignmentMode) -> Result<ToleranceCurve> {
    check_grid(grid)?;
    let tolerances = grid
        .par_iter()
        .map(|&theta| tolerance_at(&w.expr, rho, &MisalignmentSpec::new(theta, mode)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToleranceCurve { thetas: grid.to_vec(), tolerances, witness_label: w.label.clone() })
}

/// θ where the tolerance of `a` overtakes (or falls below) that of `b`.
///
/// The first sign change of the difference on a 0.005 scan of (0, π/4) is
/// refined by bisection to [`CROSSOVER_TOL`]. A lost detection counts as
/// tolerance 0.
pub fn crossover(a: &Witness, b: &Witness, rho: &DensityMatrix, mode: MisalignmentMode) -> Result<f64> {
    let diff = |theta: f64| -> Result<f64> {
        let spec = MisalignmentSpec::new(theta, mode);
        let ta = tolerance_at(&a.expr, rho, &spec)?.unwrap_or(0.0);
        let tb = tolerance_at(&b.expr, rho, &spec)?.unwrap_or(0.0);
        Ok(ta - tb)
    };
    let steps = (CROSSOVER_BRACKET / CROSSOVER_SCAN_STEP).ceil() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| (i as f64 * CROSSOVER_SCAN_STEP).min(CROSSOVER_BRACKET)).collect();
    let values = grid.par_iter().map(|&t| diff(t)).collect::<Result<Vec<_>>>()?;
    let bracket = (1..grid.len()).find(|&i| values[i - 1] * values[i] < 0.0);
    let Some(i) = bracket else {
        return Err(Error::NoCrossover { lo: 0.0, hi: CROSSOVER_BRACKET });
    };
    let (mut lo, mut hi) = (grid[i - 1], grid[i]);
    let mut f_lo = values[i - 1];
    while hi - lo > CROSSOVER_TOL {
        let mid = 0.5 * (lo + hi);
        let f_mid = diff(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_lo * f_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two curves on a common grid as `theta,tolerance_a,tolerance_b`, empty where absent.
pub fn write_curves_csv<W: Write>(out: W, a: &ToleranceCurve, b: &ToleranceCurve) -> Result<()> {
    if a.thetas != b.thetas {
        return Err(Error::InvalidInput("curves are on different grids".into()));
    }
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["theta", "tolerance_a", "tolerance_b"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for ((theta, ta), tb) in a.thetas.iter().zip(&a.tolerances).zip(&b.tolerances) {
        wtr.write_record([format!("{theta}"), fmt(*ta), fmt(*tb)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{make_state, NamedState};
    use crate::tensor::CMatrix;
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn expr(n: usize, terms: &[(&str, f64)]) -> ObservableExpr {
        ObservableExpr::from_terms(n, terms.iter().map(|(p, c)| (p.parse().unwrap(), *c))).unwrap()
    }

    #[test]
    fn zero_angle_is_identity_map() {
        let w = witness::load_catalog_witness(NamedState::D4, 5).unwrap();
        for mode in [MisalignmentMode::AllAxes, MisalignmentMode::YOnly] {
            let m = misalign_expr(&w.expr, &MisalignmentSpec::new(0.0, mode));
            assert!(m.max_abs_diff(&w.expr) < 1e-15);
        }
    }

    #[test]
    fn single_letter_and_bilinear_expansion() {
        let th = 0.3_f64;
        let (c, s) = (th.cos(), th.sin());
        let spec = MisalignmentSpec::new(th, MisalignmentMode::AllAxes);
        let m = misalign_expr(&expr(1, &[("X", 1.0)]), &spec);
        assert!(m.max_abs_diff(&expr(1, &[("X", c), ("Y", s)])) < 1e-15);

        let m = misalign_expr(&expr(2, &[("XX", 1.0)]), &spec);
        let want = expr(2, &[("XX", c * c), ("XY", c * s), ("YX", c * s), ("YY", s * s)]);
        assert!(m.max_abs_diff(&want) < 1e-15);

        let m = misalign_expr(&expr(2, &[("ZY", 1.0)]), &spec);
        let want = expr(2, &[("ZY", c * c), ("ZZ", c * s), ("XY", s * c), ("XZ", s * s)]);
        assert!(m.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn y_only_leaves_x_and_z() {
        let th = 0.4_f64;
        let spec = MisalignmentSpec::new(th, MisalignmentMode::YOnly);
        let m = misalign_expr(&expr(3, &[("XIZ", 2.0), ("IYI", 1.0), ("III", 0.5)]), &spec);
        let want = expr(3, &[("XIZ", 2.0), ("IYI", th.cos()), ("IZI", th.sin()), ("III", 0.5)]);
        assert!(m.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn misaligned_letters_have_unit_bloch_norm() {
        for mode in [MisalignmentMode::AllAxes, MisalignmentMode::YOnly] {
            for th in [0.0, 0.1, 0.26, 0.7, 1.5] {
                let spec = MisalignmentSpec::new(th, mode);
                for l in [PauliLetter::X, PauliLetter::Y, PauliLetter::Z] {
                    let mut m = CMatrix::zeros(2, 2);
                    for (a, p) in spec.letter_image(l) {
                        m += p.matrix() * Complex64::new(a, 0.0);
                    }
                    let (ev, _) = crate::tensor::hermitian_eigen(&m).unwrap();
                    assert!((ev[0] + 1.0).abs() < 1e-12 && (ev[1] - 1.0).abs() < 1e-12, "{l:?} {th}");
                }
            }
        }
    }

    #[test]
    fn zero_angle_tolerances() {
        let rho = make_state(NamedState::D4).density();
        let w5 = witness::load_catalog_witness(NamedState::D4, 5).unwrap();
        let proj = witness::projector_witness(&make_state(NamedState::D4)).unwrap();
        let c = tolerance_curve(&w5, &rho, &[0.0, 0.1], MisalignmentMode::AllAxes).unwrap();
        assert!((c.tolerances[0].unwrap() - 0.3131).abs() < 2e-3);
        let c = tolerance_curve(&proj, &rho, &[0.0], MisalignmentMode::YOnly).unwrap();
        assert!((c.tolerances[0].unwrap() - 16.0 / 45.0).abs() < 1e-12);
    }

    #[test]
    fn curves_decrease_on_first_half_radian() {
        let rho = make_state(NamedState::D4).density();
        let w5 = witness::load_catalog_witness(NamedState::D4, 5).unwrap();
        let proj = witness::projector_witness(&make_state(NamedState::D4)).unwrap();
        let grid: Vec<f64> = (0..=50).map(|i| i as f64 * 0.01).collect();
        for mode in [MisalignmentMode::AllAxes, MisalignmentMode::YOnly] {
            for w in [&w5, &proj] {
                let c = tolerance_curve(w, &rho, &grid, mode).unwrap();
                let v: Vec<f64> = c.tolerances.iter().map(|t| t.unwrap_or(0.0)).collect();
                for pair in v.windows(2) {
                    assert!(pair[1] < pair[0] || pair[0] == 0.0, "{mode} {} {pair:?}", w.label);
                }
            }
        }
    }

    #[test]
    fn identical_witnesses_have_no_crossover() {
        let rho = make_state(NamedState::D4).density();
        let w = witness::load_catalog_witness(NamedState::D4, 5).unwrap();
        assert!(matches!(crossover(&w, &w, &rho, MisalignmentMode::AllAxes), Err(Error::NoCrossover { .. })));
    }

    #[test]
    fn grid_validation_and_csv() {
        let rho = make_state(NamedState::W3).density();
        let w = witness::load_catalog_witness(NamedState::W3, 1).unwrap();
        assert!(tolerance_curve(&w, &rho, &[], MisalignmentMode::AllAxes).is_err());
        assert!(tolerance_curve(&w, &rho, &[0.2, 0.1], MisalignmentMode::AllAxes).is_err());
        let a = ToleranceCurve { thetas: vec![0.0, 0.5], tolerances: vec![Some(0.25), None], witness_label: "a".into() };
        let b = ToleranceCurve { thetas: vec![0.0, 0.5], tolerances: vec![Some(0.5), Some(0.125)], witness_label: "b".into() };
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &a, &b).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "theta,tolerance_a,tolerance_b\n0,0.25,0.5\n0.5,,0.125\n");
        assert_eq!(default_grid().len(), 121);
        assert!((default_grid()[120] - 0.6).abs() < 1e-12);
    }

    fn arb_expr(n: usize) -> impl Strategy<Value = ObservableExpr> {
        prop::collection::vec(-1.0f64..1.0, 1usize << (2 * n)).prop_map(move |cs| {
            ObservableExpr::from_terms(n, cs.into_iter().enumerate().map(|(i, c)| (PauliString::from_index(n, i), c))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn trace_is_invariant(e in arb_expr(2), th in -3.0f64..3.0, y in any::<bool>()) {
            let mode = if y { MisalignmentMode::YOnly } else { MisalignmentMode::AllAxes };
            let m = misalign_expr(&e, &MisalignmentSpec::new(th, mode));
            prop_assert!((m.trace() - e.trace()).abs() < 1e-12);
        }

        #[test]
        fn map_is_linear(e1 in arb_expr(2), e2 in arb_expr(2), a in -2.0f64..2.0, th in 0.0f64..1.6) {
            let spec = MisalignmentSpec::new(th, MisalignmentMode::AllAxes);
            let lhs = misalign_expr(&e1.axpy(a, &e2).unwrap(), &spec);
            let rhs = misalign_expr(&e1, &spec).axpy(a, &misalign_expr(&e2, &spec)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }
}
