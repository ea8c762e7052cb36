//! Scripted reproductions with machine-checkable verdicts.
//!
//! Every experiment returns an [`ExperimentReport`] holding its parameters,
//! scalar metrics and threshold checks. With an output directory set, CSVs
//! and `report.json` land in `<out>/<experiment>_<seed>/`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liegroup::{sample_rotation, sample_skew, Rotation};

mod examples;
mod figures;
mod refine;
mod sweep;
mod two_agent;

pub use examples::{
    nocon_network, nocon_states, notglobal_network, notglobal_states, rn_family_network, rn_family_states,
    verify_example_nocon, verify_example_notglobal, verify_example_rn_family, NOTGLOBAL_ALPHA, NOTGLOBAL_BETA,
};
pub use figures::{reproduce_figure, FigureId};
pub use refine::{levenberg_marquardt, refine_equilibrium, LmOutcome};
pub use sweep::{default_eps_list, output_residuals, robustness_sweep, SweepCase, SweepTrial};
pub use two_agent::two_agent_suite;

/// Names accepted by [`run_experiment`].
pub const EXPERIMENTS: &[&str] =
    &["nocon", "notglobal", "rn_family", "fig3_clean", "fig3_noisy", "fig4", "fig5", "sweep", "two_agent"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable threshold, e.g. `< 1e-12`.
    pub threshold: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub csv_paths: Vec<PathBuf>,
    #[serde(skip)]
    dir: Option<PathBuf>,
}

impl ExperimentReport {
    pub fn new(name: &str, seed: u64, out: Option<&Path>) -> Self {
        ExperimentReport {
            name: name.to_string(),
            seed,
            parameters: BTreeMap::new(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            passed: true,
            csv_paths: Vec::new(),
            dir: out.map(|o| o.join(format!("{name}_{seed}"))),
        }
    }

    /// Directory receiving this report's artifacts, if any.
    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.parameters.insert(key.to_string(), v);
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied()
    }

    fn push(&mut self, name: &str, value: f64, threshold: String, passed: bool) {
        self.passed &= passed;
        self.checks.push(Check { name: name.to_string(), value, threshold, passed });
    }

    pub fn check_lt(&mut self, name: &str, value: f64, bound: f64) {
        self.push(name, value, format!("< {bound:e}"), value < bound);
    }

    pub fn check_gt(&mut self, name: &str, value: f64, bound: f64) {
        self.push(name, value, format!("> {bound:e}"), value > bound);
    }

    pub fn check_within(&mut self, name: &str, value: f64, lo: f64, hi: f64) {
        self.push(name, value, format!("in [{lo:e}, {hi:e}]"), (lo..=hi).contains(&value));
    }

    pub fn check_eq(&mut self, name: &str, value: f64, expected: f64) {
        self.push(name, value, format!("= {expected}"), value == expected);
    }

    pub fn check_true(&mut self, name: &str, holds: bool) {
        self.push(name, if holds { 1.0 } else { 0.0 }, "true".into(), holds);
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes `contents` to `<dir>/<file>` when an output directory is set.
    pub fn emit_csv(&mut self, file: &str, contents: &str) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir)?;
            let path = dir.join(file);
            fs::write(&path, contents)?;
            self.csv_paths.push(path);
        }
        Ok(())
    }

    /// Writes `report.json` when an output directory is set.
    pub fn persist(&self) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        fs::create_dir_all(dir)?;
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(Some(path))
    }
}

impl fmt::Display for ExperimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (seed {}): {}", self.name, self.seed, if self.passed { "PASS" } else { "FAIL" })?;
        for c in &self.checks {
            writeln!(f, "  [{}] {} = {:.6e} {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.value, c.threshold)?;
        }
        Ok(())
    }
}

/// Overrides shared by all experiments.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Replaces the primary horizon of the scenario.
    pub horizon: Option<f64>,
    /// Replaces the primary step of the scenario.
    pub step: Option<f64>,
    /// Reference family for `sweep`; defaults to case B.
    pub case: Option<SweepCase>,
}

impl RunOptions {
    pub fn with_out_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    fn horizon_or(&self, default: f64) -> f64 {
        self.horizon.unwrap_or(default)
    }

    fn step_or(&self, default: f64) -> f64 {
        self.step.unwrap_or(default)
    }
}

/// Runs a registered experiment and persists its report.
pub fn run_experiment(name: &str, seed: u64, opts: &RunOptions) -> Result<ExperimentReport> {
    let report = match name {
        "nocon" => verify_example_nocon(seed, opts)?,
        "notglobal" => verify_example_notglobal(true, seed, opts)?,
        "rn_family" => {
            verify_example_rn_family((0.0, 0.0, 1.0, 1.0), std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4, seed, opts)?
        }
        "sweep" => robustness_sweep(opts.case.unwrap_or(SweepCase::B), &default_eps_list(), 20, seed, opts)?,
        "two_agent" => two_agent_suite(seed, opts)?,
        other => reproduce_figure(FigureId::from_str(other)?, seed, opts)?,
    };
    report.persist()?;
    Ok(report)
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig3_clean" => Ok(FigureId::Fig3Clean),
            "fig3_noisy" => Ok(FigureId::Fig3Noisy),
            "fig4" => Ok(FigureId::Fig4),
            "fig5" => Ok(FigureId::Fig5),
            _ => Err(Error::config(format!("unknown experiment '{s}'; known: {}", EXPERIMENTS.join(", ")))),
        }
    }
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `k` independent Haar-random rotations.
pub fn haar_states(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Rotation> {
    (0..k).map(|_| sample_rotation(n, rng)).collect()
}

/// A common Haar rotation composed with per-agent `exp(X_i)`, where each
/// `X_i` has Frobenius norm `spread` and a uniformly random direction.
pub fn near_consensus(n: usize, k: usize, spread: f64, rng: &mut ChaCha8Rng) -> Vec<Rotation> {
    let base = sample_rotation(n, rng);
    (0..k)
        .map(|_| {
            let x = sample_skew(n, rng);
            let norm = x.norm();
            if norm == 0.0 {
                base.clone()
            } else {
                base.step(&x.scale(spread / norm))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Plateau {
    /// Last value of the series.
    pub value: f64,
    /// `(max - min) / |last|` over the trailing window.
    pub relative_change: f64,
    pub reached: bool,
}

/// Relative change below `1e-4` over the trailing 10% of the time span.
pub fn detect_plateau(ts: &[f64], vs: &[f64]) -> Plateau {
    let (Some(&t_end), Some(&last)) = (ts.last(), vs.last()) else {
        return Plateau { value: f64::NAN, relative_change: f64::INFINITY, reached: false };
    };
    let t_start = ts[0] + 0.9 * (t_end - ts[0]);
    let window: Vec<f64> = ts.iter().zip(vs).filter(|(&t, _)| t >= t_start).map(|(_, &v)| v).collect();
    let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let relative_change = if window.len() < 2 || last == 0.0 { f64::INFINITY } else { (hi - lo) / last.abs() };
    Plateau { value: last, relative_change, reached: relative_change < 1e-4 }
}
