//! `edlkit`: batch front end for witness synthesis, evaluation, robustness sweeps,
//! EDL search, shot-noise simulation and expectation-table estimation.
//!
//! Exit codes: 0 success, 2 input error, 3 not detected, 4 solver failure.

mod config;
mod output;

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edl_core::measure::{self, ExpectationRecord, MeasuredExpr};
use edl_core::robustness::{self, MisalignmentMode};
use edl_core::sdp;
use edl_core::states::{self, DensityMatrix, NamedState};
use edl_core::witness::{self, SubsetFamily, Witness};

use config::{Overrides, RunConfig};
use output::{Cell, Format, Table};

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_DETECTED: u8 = 3;
const EXIT_SOLVER: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, msg: msg.into() }
    }
}

impl From<edl_core::Error> for CliError {
    fn from(e: edl_core::Error) -> Self {
        let code = match e {
            edl_core::Error::SolverNonConvergence { .. } => EXIT_SOLVER,
            _ => EXIT_INPUT,
        };
        Self { code, msg: e.to_string() }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::input(e.to_string())
    }
}

type CliResult = Result<u8, CliError>;

#[derive(Parser)]
#[command(name = "edlkit", version, about = "Entanglement witnesses on minimal-size particle subsets")]
struct Cli {
    /// key=value file with defaults (gap, feas, max_iter, theta, shots, seed, format).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Relative duality-gap tolerance.
    #[arg(long, global = true)]
    gap: Option<f64>,
    /// Primal/dual feasibility tolerance.
    #[arg(long, global = true)]
    feas: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the witness SDP for a state and subset family.
    Synth {
        #[command(flatten)]
        state: StateArgs,
        /// Comma-separated digit subsets, e.g. 12,23,34.
        #[arg(long)]
        family: String,
        /// Where to write the witness JSON with certificates.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "synthesized")]
        label: String,
    },
    /// Evaluate a witness on a (noisy) state.
    Eval {
        #[arg(long)]
        witness: String,
        #[command(flatten)]
        state: StateArgs,
    },
    /// Noise tolerance of two witnesses under measurement misalignment.
    Robustness {
        #[arg(long)]
        witness: String,
        #[arg(long)]
        compare: String,
        #[command(flatten)]
        state: StateArgs,
        /// all (all_axes) or y (y_only).
        #[arg(long, default_value = "all_axes")]
        mode: String,
        /// start:stop:step grid of misalignment angles.
        #[arg(long)]
        theta: Option<String>,
        /// Where to write the tolerance curves.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Smallest subset size whose all-subsets family detects the state.
    Edl {
        #[command(flatten)]
        state: StateArgs,
    },
    /// Sample measurement settings and estimate a witness or fidelity.
    Simulate {
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        state: StateArgs,
        #[arg(long)]
        shots: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for per-setting count files and their manifest.
        #[arg(long)]
        counts_dir: Option<PathBuf>,
        /// Where to write the estimated expectation records.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Estimate a witness or fidelity from expectation records or count files.
    Estimate {
        #[command(flatten)]
        target: TargetArgs,
        /// CSV with operator,value,sigma rows.
        #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
        expectations: Option<PathBuf>,
        /// Count manifest written by `simulate --counts-dir`.
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Records refer to the state with every qubit flipped.
        #[arg(long)]
        bit_flip: bool,
    },
}

#[derive(Args, Clone, Debug)]
struct StateArgs {
    /// w3, w4, d4 or c4.
    #[arg(long, conflicts_with = "state_file")]
    state: Option<String>,
    /// JSON with "amplitudes" or "density" as [re, im] pairs.
    #[arg(long)]
    state_file: Option<PathBuf>,
    /// White-noise weight p in (1-p) rho + p I/2^n.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args, Clone, Debug)]
#[group(required = true, multiple = false)]
struct TargetArgs {
    /// Witness file, catalog entry such as d4:w5, or `projector`.
    #[arg(long)]
    witness: Option<String>,
    /// Fidelity with the named state.
    #[arg(long)]
    fidelity: Option<String>,
}

struct LoadedState {
    name: Option<NamedState>,
    label: String,
    rho: DensityMatrix,
}

fn load_state(args: &StateArgs, fallback: Option<NamedState>) -> Result<LoadedState, CliError> {
    let (name, label, rho) = match (&args.state, &args.state_file) {
        (Some(s), _) => {
            let name: NamedState = s.parse()?;
            (Some(name), name.to_string(), states::make_state(name).density())
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            (None, path.display().to_string(), states::state_from_json(&text)?)
        }
        (None, None) => match fallback {
            Some(name) => (Some(name), name.to_string(), states::make_state(name).density()),
            None => return Err(CliError::input("a state is required (--state or --state-file)")),
        },
    };
    let rho = states::white_noise(&rho, args.noise)?;
    Ok(LoadedState { name, label, rho })
}

/// A witness from a file, a catalog reference `<state>:w<id>`, or `projector` of `state`.
fn load_witness(spec: &str, state: Option<NamedState>) -> Result<Witness, CliError> {
    if Path::new(spec).is_file() {
        return Ok(Witness::load(spec)?);
    }
    if spec == "projector" {
        let name = state.ok_or_else(|| CliError::input("projector witness needs a named --state"))?;
        let mut w = witness::projector_witness(&states::make_state(name))?;
        w.target_state = Some(name);
        return Ok(w);
    }
    if let Some((s, id)) = spec.split_once(':') {
        let name: NamedState = s.parse()?;
        if let Some(id) = id.strip_prefix(['w', 'W']).and_then(|i| i.parse().ok()) {
            return Ok(witness::load_catalog_witness(name, id)?);
        }
    }
    Err(CliError::input(format!("{spec:?} is neither a witness file, a catalog entry like d4:w5, nor `projector`")))
}

fn parse_mode(s: &str) -> Result<MisalignmentMode, CliError> {
    match s {
        "all" => Ok(MisalignmentMode::AllAxes),
        "y" => Ok(MisalignmentMode::YOnly),
        _ => Ok(s.parse()?),
    }
}

fn emit(table: &Table, format: Format) -> Result<(), CliError> {
    table.write(io::stdout().lock(), format)?;
    Ok(())
}

fn write_file(path: &Path, table: &Table, format: Format) -> Result<(), CliError> {
    let f = File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    table.write(BufWriter::new(f), format)?;
    Ok(())
}

fn detected_code(value: f64) -> u8 {
    if value < 0.0 {
        0
    } else {
        EXIT_NOT_DETECTED
    }
}

fn cmd_synth(cfg: &RunConfig, state: &StateArgs, family: &str, out: Option<&Path>, label: &str) -> CliResult {
    let s = load_state(state, None)?;
    let family: SubsetFamily = family.parse()?;
    let r = sdp::synthesize(&s.rho, &family, &cfg.tolerances)?;
    if let Some(path) = out {
        let mut v = r.to_json_value(label);
        if let Some(name) = s.name {
            v["state"] = serde_json::to_value(name).expect("state serializes");
        }
        std::fs::write(path, serde_json::to_string_pretty(&v).expect("json") + "\n")
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    }
    let mut t = Table::new(&[
        "state",
        "noise",
        "family",
        "alpha",
        "p_noise",
        "detected",
        "duality_gap",
        "iterations",
        "max_residual",
        "min_certificate_eigenvalue",
    ]);
    t.push(vec![
        s.label.into(),
        state.noise.into(),
        family.to_string().into(),
        r.solution.alpha.into(),
        r.p_noise.into(),
        r.detected.into(),
        r.solution.duality_gap.into(),
        r.solution.iterations.into(),
        r.solution.max_residual().into(),
        r.solution.min_certificate_eigenvalue().into(),
    ]);
    emit(&t, cfg.format)?;
    Ok(if r.detected { 0 } else { EXIT_NOT_DETECTED })
}

fn cmd_eval(cfg: &RunConfig, spec: &str, state: &StateArgs) -> CliResult {
    let hint = state.state.as_deref().map(str::parse).transpose()?;
    let w = load_witness(spec, hint)?;
    let s = load_state(state, w.target_state)?;
    let value = witness::evaluate(&w.expr, &s.rho)?;
    let mut t = Table::new(&["witness", "state", "noise", "value", "trace", "p_noise"]);
    t.push(vec![
        w.label.clone().into(),
        s.label.into(),
        state.noise.into(),
        value.into(),
        w.expr.trace().into(),
        witness::p_noise(&w, &s.rho)?.into(),
    ]);
    emit(&t, cfg.format)?;
    Ok(detected_code(value))
}

fn cmd_robustness(
    cfg: &RunConfig,
    specs: [&str; 2],
    state: &StateArgs,
    mode: &str,
    curves: Option<&Path>,
) -> CliResult {
    let mode = parse_mode(mode)?;
    let hint = state.state.as_deref().map(str::parse).transpose()?;
    let a = load_witness(specs[0], hint)?;
    let s = load_state(state, hint.or(a.target_state))?;
    let b = load_witness(specs[1], s.name)?;
    let grid = match &cfg.theta {
        Some(g) => config::parse_grid(g)?,
        None => robustness::default_grid(),
    };
    if let Some(path) = curves {
        let ca = robustness::tolerance_curve(&a, &s.rho, &grid, mode)?;
        let cb = robustness::tolerance_curve(&b, &s.rho, &grid, mode)?;
        let mut t = Table::new(&["theta", "tolerance_a", "tolerance_b"]);
        for ((&theta, &ta), &tb) in ca.thetas.iter().zip(&ca.tolerances).zip(&cb.tolerances) {
            t.push(vec![theta.into(), ta.into(), tb.into()]);
        }
        write_file(path, &t, cfg.format)?;
    }
    let cross = match robustness::crossover(&a, &b, &s.rho, mode) {
        Ok(x) => Some(x),
        Err(edl_core::Error::NoCrossover { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let mut t = Table::new(&["witness_a", "witness_b", "state", "mode", "points", "crossover"]);
    t.push(vec![
        a.label.clone().into(),
        b.label.clone().into(),
        s.label.into(),
        mode.to_string().into(),
        grid.len().into(),
        cross.into(),
    ]);
    emit(&t, cfg.format)?;
    Ok(0)
}

fn cmd_edl(cfg: &RunConfig, state: &StateArgs) -> CliResult {
    let s = load_state(state, None)?;
    let k = sdp::edl_search(&s.rho, &cfg.tolerances)?;
    let found = k <= s.rho.n();
    let mut t = Table::new(&["state", "noise", "edl"]);
    t.push(vec![s.label.into(), state.noise.into(), if found { Cell::from(k) } else { Cell::Empty }]);
    emit(&t, cfg.format)?;
    Ok(if found { 0 } else { EXIT_NOT_DETECTED })
}

/// The quantity to estimate with its label, and the measurement settings it needs.
struct Target {
    label: String,
    expr: MeasuredExpr,
    settings: Vec<measure::MeasurementSetting>,
    witness: bool,
    state: Option<NamedState>,
}

fn load_target(target: &TargetArgs, hint: Option<NamedState>) -> Result<Target, CliError> {
    if let Some(name) = &target.fidelity {
        let name: NamedState = name.parse()?;
        let (settings, expr) = measure::fidelity_settings(name);
        return Ok(Target { label: format!("fidelity_{name}"), expr, settings, witness: false, state: Some(name) });
    }
    let spec = target.witness.as_deref().expect("clap enforces one target");
    let w = load_witness(spec, hint)?;
    let expr = MeasuredExpr::from(&w.expr);
    let settings = measure::plan_settings(&expr).into_iter().map(|(s, _)| s).collect();
    Ok(Target { label: w.label.clone(), expr, settings, witness: true, state: w.target_state })
}

fn operators(expr: &MeasuredExpr) -> Vec<measure::ProductOperator> {
    expr.terms.iter().map(|(_, op)| op.clone()).collect()
}

fn cmd_simulate(
    cfg: &RunConfig,
    target: &TargetArgs,
    state: &StateArgs,
    counts_dir: Option<&Path>,
    records_path: Option<&Path>,
) -> CliResult {
    let hint = state.state.as_deref().map(str::parse).transpose()?;
    let tg = load_target(target, hint)?;
    let s = load_state(state, tg.state)?;
    if s.rho.n() != tg.expr.n {
        return Err(CliError::input(format!("state has {} qubits, target needs {}", s.rho.n(), tg.expr.n)));
    }
    let tables = measure::simulate_settings(&s.rho, &tg.settings, cfg.shots, cfg.seed)?;
    if let Some(dir) = counts_dir {
        measure::save_counts(dir, &tables, Some(cfg.seed))?;
    }
    if let Some(path) = records_path {
        let records = measure::estimate_expectations(&tables, &operators(&tg.expr))?;
        let f = File::create(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        measure::write_records_csv(BufWriter::new(f), &records)?;
    }
    let (value, sigma) = measure::estimate_from_counts(&tables, &tg.expr)?;
    let exact = witness::evaluate(&tg.expr.to_observable(), &s.rho)?;
    let mut t = Table::new(&[
        "quantity", "state", "noise", "exact", "value", "sigma", "settings", "shots", "seed", "generator",
    ]);
    t.push(vec![
        tg.label.into(),
        s.label.into(),
        state.noise.into(),
        exact.into(),
        value.into(),
        sigma.into(),
        tg.settings.len().into(),
        cfg.shots.into(),
        cfg.seed.into(),
        measure::GENERATOR.into(),
    ]);
    emit(&t, cfg.format)?;
    Ok(0)
}

fn cmd_estimate(
    cfg: &RunConfig,
    target: &TargetArgs,
    expectations: Option<&Path>,
    counts: Option<&Path>,
    bit_flip: bool,
) -> CliResult {
    let tg = load_target(target, None)?;
    let n = tg.expr.n;
    let (source, used, (value, sigma)) = match (expectations, counts) {
        (Some(path), _) => {
            let mut records = measure::load_records(path, n)?;
            if bit_flip {
                records = records.iter().map(ExpectationRecord::bit_flipped).collect();
            }
            (path, records.len(), measure::combine(&records, &tg.expr)?)
        }
        (None, Some(manifest)) => {
            if bit_flip {
                return Err(CliError::input("--bit-flip applies to expectation tables only"));
            }
            let tables = measure::load_counts(manifest)?;
            if let Some(t) = tables.iter().find(|t| t.setting.n() != n) {
                return Err(CliError::input(format!("count table has {} qubits, target needs {n}", t.setting.n())));
            }
            (manifest, tables.len(), measure::estimate_from_counts(&tables, &tg.expr)?)
        }
        (None, None) => return Err(CliError::input("--expectations or --counts is required")),
    };
    let mut t = Table::new(&["quantity", "source", "inputs", "value", "sigma"]);
    t.push(vec![
        tg.label.into(),
        source.display().to_string().into(),
        used.into(),
        value.into(),
        sigma.into(),
    ]);
    emit(&t, cfg.format)?;
    Ok(if tg.witness { detected_code(value) } else { 0 })
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("EDLKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("EDLKIT_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(e.to_string()))
}

fn run(cli: Cli) -> CliResult {
    init_threads()?;
    let (theta, shots, seed) = match &cli.command {
        Command::Robustness { theta, .. } => (theta.clone(), None, None),
        Command::Simulate { shots, seed, .. } => (None, *shots, *seed),
        _ => (None, None, None),
    };
    let flags = Overrides {
        gap: cli.gap,
        feas: cli.feas,
        max_iter: cli.max_iter,
        theta,
        shots,
        seed,
        format: cli.format,
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), flags)?;
    match &cli.command {
        Command::Synth { state, family, out, label } => cmd_synth(&cfg, state, family, out.as_deref(), label),
        Command::Eval { witness, state } => cmd_eval(&cfg, witness, state),
        Command::Robustness { witness, compare, state, mode, curves, .. } => {
            cmd_robustness(&cfg, [witness, compare], state, mode, curves.as_deref())
        }
        Command::Edl { state } => cmd_edl(&cfg, state),
        Command::Simulate { target, state, counts_dir, records, .. } => {
            cmd_simulate(&cfg, target, state, counts_dir.as_deref(), records.as_deref())
        }
        Command::Estimate { target, expectations, counts, bit_flip } => {
            cmd_estimate(&cfg, target, expectations.as_deref(), counts.as_deref(), *bit_flip)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("edlkit: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
