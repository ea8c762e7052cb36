//! Simulation scenario files.
//!
//! ```json
//! {
//!   "network": { "n": 3, "space": "SOn", "graph": {...}, "refs": {...} },
//!   "flow": { "kind": "PartialState", "step": 0.05, "horizon": 200 },
//!   "init": { "mode": "haar", "seed": 0 },
//!   "out": "out/run",
//!   "record_every": 10
//! }
//! ```

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use outsync_core::dynamics::{FlowKind, FlowSpec, Scheme};
use outsync_core::experiments::{haar_states, near_consensus};
use outsync_core::network::PerturbationSet;
use outsync_core::{Error, NetworkConfig, Result, Rotation, Space};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioJson {
    network: Value,
    flow: FlowJson,
    #[serde(default)]
    init: InitJson,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "one")]
    record_every: usize,
}

fn one() -> usize {
    1
}

fn unit_gain() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowJson {
    kind: FlowKind,
    step: f64,
    horizon: f64,
    #[serde(default = "unit_gain")]
    epsilon: f64,
    #[serde(default)]
    scheme: Scheme,
    #[serde(default)]
    gradient_tol: Option<f64>,
    /// 1-based agents held fixed.
    #[serde(default)]
    held: Vec<usize>,
    #[serde(default)]
    perturbations: Option<PerturbationJson>,
}

/// Errors with `|E_ij - I|_F` uniform in `[min, max)`, drawn from the
/// scenario seed.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PerturbationJson {
    min: f64,
    max: f64,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitJson {
    /// Haar rotations, or standard normal vectors on R^n.
    Haar {
        #[serde(default)]
        seed: u64,
    },
    /// A common random rotation composed with perturbations of norm `spread`.
    NearConsensus {
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Every agent at the identity (or the zero vector).
    Consensus,
    /// Row-major `n x n` matrices on SO(n), plain vectors on R^n.
    Explicit { states: Vec<Vec<f64>> },
}

impl Default for InitJson {
    fn default() -> Self {
        InitJson::Haar { seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub enum InitialStates {
    Rotations(Vec<Rotation>),
    Vectors(Vec<DVector<f64>>),
}

#[derive(Debug)]
pub struct Scenario {
    pub network: NetworkConfig,
    pub spec: FlowSpec,
    pub init: InitialStates,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Overrides taken from the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
}

/// Network JSON taken either from a bare network file or from the
/// `network` member of a scenario.
pub fn network_from_value(v: &Value) -> Result<NetworkConfig> {
    match v.get("network") {
        Some(inner) => NetworkConfig::from_json_value(inner),
        None => NetworkConfig::from_json_value(v),
    }
}

fn init_seed(init: &InitJson) -> u64 {
    match init {
        InitJson::Haar { seed } | InitJson::NearConsensus { seed, .. } => *seed,
        _ => 0,
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn initial_states(init: &InitJson, net: &NetworkConfig, seed: u64) -> Result<InitialStates> {
    let (n, k) = (net.dim(), net.agent_count());
    let mut r = rng(seed, 0);
    Ok(match (net.space(), init) {
        (Space::SOn, InitJson::Haar { .. }) => InitialStates::Rotations(haar_states(n, k, &mut r)),
        (Space::SOn, InitJson::NearConsensus { spread, .. }) => {
            if !(*spread >= 0.0 && spread.is_finite()) {
                return Err(Error::Config(format!("spread must be non-negative, got {spread}")));
            }
            InitialStates::Rotations(near_consensus(n, k, *spread, &mut r))
        }
        (Space::SOn, InitJson::Consensus) => InitialStates::Rotations(vec![Rotation::identity(n); k]),
        (Space::Rn, InitJson::Haar { .. }) => InitialStates::Vectors(
            (0..k).map(|_| DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal))).collect(),
        ),
        (Space::Rn, InitJson::NearConsensus { spread, .. }) => {
            let base = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
            InitialStates::Vectors(
                (0..k)
                    .map(|_| {
                        let d = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
                        let norm = d.norm();
                        if norm == 0.0 {
                            base.clone()
                        } else {
                            &base + d * (*spread / norm)
                        }
                    })
                    .collect(),
            )
        }
        (Space::Rn, InitJson::Consensus) => InitialStates::Vectors(vec![DVector::zeros(n); k]),
        (space, InitJson::Explicit { states }) => {
            if states.len() != k {
                return Err(Error::Config(format!("{} initial states for {k} agents", states.len())));
            }
            match space {
                Space::SOn => InitialStates::Rotations(
                    states
                        .iter()
                        .map(|rows| {
                            if rows.len() != n * n {
                                return Err(Error::Config(format!("initial rotation needs {} entries", n * n)));
                            }
                            Rotation::from_matrix(DMatrix::from_row_slice(n, n, rows))
                        })
                        .collect::<Result<_>>()?,
                ),
                Space::Rn => InitialStates::Vectors(
                    states
                        .iter()
                        .map(|v| {
                            if v.len() != n {
                                return Err(Error::Config(format!("initial vector needs {n} entries")));
                            }
                            Ok(DVector::from_column_slice(v))
                        })
                        .collect::<Result<_>>()?,
                ),
            }
        }
    })
}

impl Scenario {
    pub fn from_value(v: &Value, ov: &Overrides) -> Result<Self> {
        let raw: ScenarioJson =
            serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        let network = NetworkConfig::from_json_value(&raw.network)?;
        let seed = ov.seed.unwrap_or_else(|| init_seed(&raw.init));
        let f = raw.flow;
        if raw.record_every == 0 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        let held = f
            .held
            .iter()
            .map(|&i| {
                if i == 0 || i > network.agent_count() {
                    Err(Error::Config(format!("held agent {i} outside 1..={}", network.agent_count())))
                } else {
                    Ok(i - 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut spec = FlowSpec::new(f.kind, ov.step.unwrap_or(f.step), ov.horizon.unwrap_or(f.horizon))
            .with_epsilon(f.epsilon)
            .with_scheme(f.scheme)
            .with_record_every(raw.record_every)
            .with_held(held);
        if let Some(tol) = f.gradient_tol {
            spec = spec.with_gradient_tol(tol);
        }
        if let Some(p) = f.perturbations {
            let set = PerturbationSet::sample(network.graph(), p.min, p.max, &mut rng(seed, 1))?;
            spec = spec.with_perturbations(set);
        }
        spec.validate(&network)?;
        let init = initial_states(&raw.init, &network, seed)?;
        Ok(Scenario { network, spec, init, seed, out: raw.out })
    }
}
