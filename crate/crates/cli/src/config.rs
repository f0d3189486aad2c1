//! Run configuration: defaults, overridden by a `key=value` file, overridden by flags.

use std::collections::BTreeMap;
use std::path::Path;

use edl_core::sdp::SolverTolerances;

use crate::output::Format;
use crate::CliError;

pub const DEFAULT_SHOTS: u64 = 10_000;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub tolerances: SolverTolerances,
    pub theta: Option<String>,
    pub shots: u64,
    pub seed: u64,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tolerances: SolverTolerances::default(),
            theta: None,
            shots: DEFAULT_SHOTS,
            seed: DEFAULT_SEED,
            format: Format::Csv,
        }
    }
}

/// Flag values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub gap: Option<f64>,
    pub feas: Option<f64>,
    pub max_iter: Option<usize>,
    pub theta: Option<String>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_file(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::input(format!("config line {}: expected key=value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::input(format!("config key {key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, flags: Overrides) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            for (k, v) in parse_file(&text)? {
                match k.as_str() {
                    "gap" => cfg.tolerances.gap = value(&k, &v)?,
                    "feas" => cfg.tolerances.feas = value(&k, &v)?,
                    "max_iter" => cfg.tolerances.max_iter = value(&k, &v)?,
                    "theta" => cfg.theta = Some(v),
                    "shots" => cfg.shots = value(&k, &v)?,
                    "seed" => cfg.seed = value(&k, &v)?,
                    "format" => cfg.format = value(&k, &v)?,
                    _ => return Err(CliError::input(format!("unknown config key {k:?}"))),
                }
            }
        }
        if let Some(g) = flags.gap {
            cfg.tolerances.gap = g;
        }
        if let Some(f) = flags.feas {
            cfg.tolerances.feas = f;
        }
        if let Some(m) = flags.max_iter {
            cfg.tolerances.max_iter = m;
        }
        if flags.theta.is_some() {
            cfg.theta = flags.theta;
        }
        if let Some(s) = flags.shots {
            cfg.shots = s;
        }
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(f) = flags.format {
            cfg.format = f;
        }
        if !(cfg.tolerances.gap > 0.0 && cfg.tolerances.feas > 0.0 && cfg.tolerances.max_iter > 0) {
            return Err(CliError::input("solver tolerances must be positive"));
        }
        if cfg.shots == 0 {
            return Err(CliError::input("shots must be positive"));
        }
        Ok(cfg)
    }
}

/// `start:stop:step`, inclusive of `stop` up to rounding.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || CliError::input(format!("bad theta grid {spec:?}, expected start:stop:step"));
    let [a, b, h] = parts.as_slice() else {
        return Err(bad());
    };
    let (a, b, h): (f64, f64, f64) = (
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
        h.trim().parse().map_err(|_| bad())?,
    );
    if !(h > 0.0 && b >= a && a.is_finite() && b.is_finite()) {
        return Err(bad());
    }
    let steps = ((b - a) / h + 1e-9).floor() as usize;
    Ok((0..=steps).map(|i| a + i as f64 * h).collect())
}
