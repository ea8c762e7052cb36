use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use outsync_core::dynamics::{estimate_decay_rate, integrate, integrate_rn, CostField, Trajectory};
use outsync_core::experiments::{run_experiment, RunOptions, SweepCase, EXPERIMENTS};
use outsync_core::graph::{collapse_analysis, CollapseReport};
use outsync_core::{Error, Graph};
use serde_json::{json, Value};

mod analyze;
mod gnuplot;
mod scenario;

use scenario::{InitialStates, Overrides, Scenario};

/// Synchronization on SO(n) and R^n from partial-state outputs.
#[derive(Debug, Parser)]
#[command(name = "outsync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synchronization conditions of a fixed-reference network.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Directory receiving `analysis.json`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Integrates a scenario and writes `trajectory.csv` and `summary.json`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the initialization and measurement-error seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the scenario's `out`, then `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Also write a gnuplot script next to the CSV.
        #[arg(long)]
        emit_gnuplot: bool,
    },
    /// Runs a registered reproduction and exits non-zero if a check fails.
    Experiment {
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Reference family for `sweep` (A or B).
        #[arg(long)]
        case: Option<SweepCase>,
        #[arg(long)]
        emit_gnuplot: bool,
    },
    /// Runs the collapse procedure on a graph.
    Collapse {
        /// Graph JSON, or a network or scenario containing one.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Process exit statuses.
mod code {
    pub const THRESHOLD: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const CAPACITY: u8 = 3;
    pub const NUMERICAL: u8 = 4;
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Capacity(_) => code::CAPACITY,
            Error::Integration { .. } | Error::Singular(_) => code::NUMERICAL,
            _ => code::CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure { code: code::CONFIG, message: format!("cannot read {}: {e}", path.display()) })?;
    serde_json::from_str(&text)
        .map_err(|e| Failure { code: code::CONFIG, message: format!("{}: invalid JSON: {e}", path.display()) })
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    fs::write(path, serde_json::to_string_pretty(value).map_err(Error::from)?).map_err(Error::from)?;
    Ok(())
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn decay_json(traj: &Trajectory, field: CostField, horizon: f64) -> Value {
    match estimate_decay_rate(traj, field, (0.0, horizon)) {
        Ok(fit) => json!({ "slope": fit.slope, "r2": fit.r2, "points": fit.points }),
        Err(_) => Value::Null,
    }
}

fn final_states_json(traj: &Trajectory) -> Value {
    if let Some(q) = traj.final_rotations() {
        json!(q
            .iter()
            .map(|r| r.matrix().transpose().iter().copied().collect::<Vec<f64>>())
            .collect::<Vec<_>>())
    } else if let Some(x) = traj.final_vectors() {
        json!(x.iter().map(|v| v.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
    } else {
        Value::Null
    }
}

fn simulate(config: &Path, ov: &Overrides, out: Option<PathBuf>, emit_gnuplot: bool) -> CliResult<()> {
    let sc = Scenario::from_value(&read_json(config)?, ov)?;
    let out = out.or(sc.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(Error::from)?;
    let csv = out.join("trajectory.csv");
    let result = match &sc.init {
        InitialStates::Rotations(q) => integrate(q, &sc.network, &sc.spec),
        InitialStates::Vectors(x) => integrate_rn(x, &sc.network, &sc.spec),
    };
    let traj = match result {
        Ok(t) => t,
        Err(Error::Integration { time, reason, partial }) => {
            if let Some(p) = &partial {
                p.write_csv(&csv)?;
                eprintln!("partial trajectory kept in {}", csv.display());
            }
            return Err(Error::Integration { time, reason, partial }.into());
        }
        Err(e) => return Err(e.into()),
    };
    traj.write_csv(&csv)?;
    let last = traj.last();
    let summary = json!({
        "seed": sc.seed,
        "kind": sc.spec.kind,
        "step": sc.spec.step,
        "horizon": sc.spec.horizon,
        "samples": traj.samples.len(),
        "converged": traj.converged,
        "final": {
            "t": last.t,
            "f_s": last.f_s,
            "f_o": last.f_o,
            "f_oe": last.f_oe,
            "dist_cs": last.dist_cs,
            "gradient_norm": last.gradient_norm,
        },
        "max_ortho_err": finite_or_null(traj.max_ortho_err()),
        "decay": {
            "f_o": decay_json(&traj, CostField::FO, sc.spec.horizon),
            "f_s": decay_json(&traj, CostField::FS, sc.spec.horizon),
        },
        "final_states": final_states_json(&traj),
    });
    write_json(&out.join("summary.json"), &summary)?;
    if emit_gnuplot {
        gnuplot::write_script(&csv)?;
    }
    println!(
        "t = {:.6e}  f_o = {:.6e}  f_s = {:.6e}  dist_cs = {:.6e}",
        last.t, last.f_o, last.f_s, last.dist_cs
    );
    println!("wrote {}", csv.display());
    Ok(())
}

fn experiment(name: &str, seed: u64, opts: &RunOptions, emit_gnuplot: bool) -> CliResult<()> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Failure {
            code: code::CONFIG,
            message: format!("unknown experiment '{name}'; known: {}", EXPERIMENTS.join(", ")),
        });
    }
    let report = run_experiment(name, seed, opts)?;
    print!("{report}");
    if emit_gnuplot {
        for csv in &report.csv_paths {
            gnuplot::write_script(csv)?;
        }
    }
    if let Some(dir) = report.dir() {
        println!("wrote {}", dir.join("report.json").display());
    }
    if report.passed {
        Ok(())
    } else {
        Err(Failure { code: code::THRESHOLD, message: format!("{name}: one or more checks failed") })
    }
}

fn graph_from_value(v: &Value) -> CliResult<Graph> {
    let g = if v.get("k").is_some() {
        v
    } else if let Some(g) = v.get("graph") {
        g
    } else if let Some(g) = v.get("network").and_then(|n| n.get("graph")) {
        g
    } else {
        return Err(Failure { code: code::CONFIG, message: "no graph found in config".into() });
    };
    Ok(Graph::from_json_value(g).map_err(|e| Failure { code: code::CONFIG, message: format!("graph: {e}") })?)
}

fn print_collapse(r: &CollapseReport) {
    println!("collapse: {}", if r.reducible { "single vertex" } else { "irreducible" });
    println!("steps: {}", r.trace.len());
    if !r.reducible {
        let v: Vec<String> = r.final_vertices.iter().map(|v| (v + 1).to_string()).collect();
        println!("remaining vertices: {}", v.join(" "));
    }
}

fn collapse(config: &Path, out: &Path) -> CliResult<()> {
    let g = graph_from_value(&read_json(config)?)?;
    let r = collapse_analysis(&g);
    print_collapse(&r);
    write_json(&out.join("collapse.json"), &serde_json::to_value(&r).map_err(Error::from)?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze { config, out } => analyze::run(&read_json(&config)?, &out),
        Command::Simulate { config, seed, out, horizon, step, emit_gnuplot } => {
            simulate(&config, &Overrides { seed, horizon, step }, out, emit_gnuplot)
        }
        Command::Experiment { name, seed, out, horizon, step, case, emit_gnuplot } => {
            let opts = RunOptions { out_dir: Some(out), horizon, step, case };
            experiment(&name, seed, &opts, emit_gnuplot)
        }
        Command::Collapse { config, out } => collapse(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
