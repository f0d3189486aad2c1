use edl_core::measure::{combine, fidelity_settings, load_records, ExpectationRecord, MeasuredExpr};
use edl_core::states::NamedState;
use edl_core::witness::load_catalog_witness;

const F_TOL: f64 = 0.002;
const W_TOL: f64 = 1.5e-3;

struct Table {
    name: &'static str,
    state: NamedState,
    fidelity: f64,
    witnesses: &'static [f64],
}

const TABLES: &[Table] = &[
    Table { name: "d4a", state: NamedState::D4, fidelity: 0.974, witnesses: &[-0.00582, -0.00850, -0.0107, -0.0192, -0.0274] },
    Table { name: "d4b", state: NamedState::D4, fidelity: 0.951, witnesses: &[-0.00517, -0.00659, -0.00977, -0.0169, -0.0253] },
    Table { name: "d4c", state: NamedState::D4, fidelity: 0.791, witnesses: &[0.00610, 0.00371, 0.00330, -0.00767, -0.0149] },
    Table { name: "d4d", state: NamedState::D4, fidelity: 0.510, witnesses: &[0.0202, 0.0176, 0.0160, 0.00729, 0.00219] },
    Table { name: "w3a", state: NamedState::W3, fidelity: 0.982, witnesses: &[-0.027, -0.051] },
    Table { name: "w3b", state: NamedState::W3, fidelity: 0.777, witnesses: &[0.011, -0.013] },
    Table { name: "w3c", state: NamedState::W3, fidelity: 0.337, witnesses: &[0.040, 0.035] },
    Table { name: "w4a", state: NamedState::W4, fidelity: 0.971, witnesses: &[-0.00349, -0.00522, -0.00751, -0.00823, -0.00987] },
    Table { name: "w4b", state: NamedState::W4, fidelity: 0.919, witnesses: &[0.000184, -0.00153, -0.00351, -0.00416, -0.00619] },
    Table { name: "w4c", state: NamedState::W4, fidelity: 0.720, witnesses: &[0.00830, 0.00547, 0.00759, 0.00698, 0.00379] },
    Table { name: "c4a", state: NamedState::C4, fidelity: 0.968, witnesses: &[-0.0132, -0.0287, -0.0378, -0.0573] },
    Table { name: "c4b", state: NamedState::C4, fidelity: 0.880, witnesses: &[-0.0056, -0.0207, -0.0268, -0.0419] },
];

fn records(t: &Table) -> Vec<ExpectationRecord> {
    let path = format!("{}/fixtures/{}.csv", env!("CARGO_MANIFEST_DIR"), t.name);
    let recs = load_records(&path, t.state.qubits()).unwrap();
    // W3 tables are reported for the bit-flipped state.
    if t.state == NamedState::W3 {
        recs.iter().map(ExpectationRecord::bit_flipped).collect()
    } else {
        recs
    }
}

#[test]
fn fidelities_match_tables() {
    for t in TABLES {
        let (f, sigma) = combine(&records(t), &fidelity_settings(t.state).1).unwrap();
        assert!((f - t.fidelity).abs() <= F_TOL, "{}: F = {f}", t.name);
        assert!(sigma > 0.0 && sigma < 0.01, "{}: sigma = {sigma}", t.name);
    }
}

#[test]
fn witness_values_match_tables() {
    for t in TABLES {
        let recs = records(t);
        for (i, &expected) in t.witnesses.iter().enumerate() {
            let w = load_catalog_witness(t.state, i + 1).unwrap();
            let (v, _) = combine(&recs, &MeasuredExpr::from(&w.expr)).unwrap();
            assert!((v - expected).abs() <= W_TOL, "{} W{}: {v} vs {expected}", t.name, i + 1);
        }
    }
}

#[test]
fn detection_follows_sign() {
    // d4d is not detected by any witness; d4a by all of them.
    let d = &TABLES[3];
    let recs = records(d);
    for i in 1..=5 {
        let w = load_catalog_witness(NamedState::D4, i).unwrap();
        assert!(combine(&recs, &MeasuredExpr::from(&w.expr)).unwrap().0 > 0.0);
    }
    let a = &TABLES[0];
    let recs = records(a);
    for i in 1..=5 {
        let w = load_catalog_witness(NamedState::D4, i).unwrap();
        assert!(combine(&recs, &MeasuredExpr::from(&w.expr)).unwrap().0 < 0.0);
    }
}

#[test]
fn unflipped_w3_table_misses() {
    let t = &TABLES[4];
    let path = format!("{}/fixtures/{}.csv", env!("CARGO_MANIFEST_DIR"), t.name);
    let raw = load_records(&path, 3).unwrap();
    let (f, _) = combine(&raw, &fidelity_settings(NamedState::W3).1).unwrap();
    assert!(f < 0.5, "{f}");
}
