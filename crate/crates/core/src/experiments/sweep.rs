use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{levenberg_marquardt, near_consensus, seeded_rng, ExperimentReport, RunOptions};
use crate::dynamics::{dist_to_consensus, fit_log_linear, integrate, FlowKind, FlowSpec};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::liegroup::Rotation;
use crate::network::{check_condition_b, so3_triangle_class, NetworkConfig, PerturbationSet, Space, TriangleClass};

/// Reference family of the three-agent robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepCase {
    /// Coplanar references (relative positions of three points).
    A,
    /// Full-rank generic references.
    B,
}

impl FromStr for SweepCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(SweepCase::A),
            "B" | "b" => Ok(SweepCase::B),
            _ => Err(Error::config(format!("sweep case must be A or B, got '{s}'"))),
        }
    }
}

impl fmt::Display for SweepCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepCase::A => "A",
            SweepCase::B => "B",
        })
    }
}

/// Seven log-spaced magnitudes from `1e-5` to `1e-2`.
pub fn default_eps_list() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-5.0 + 0.5 * i as f64)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTrial {
    pub eps: f64,
    pub trial: usize,
    /// The flow met the gradient tolerance before the horizon.
    pub flow_converged: bool,
    pub flow_dist: f64,
    /// Output residual `sqrt(2 f_oe)` after polishing.
    pub residual: f64,
    /// Consensus distance of the polished limit.
    pub dist: f64,
    /// A perturbed output-synchronized point was reached.
    pub kept: bool,
}

/// Stacked differences `Q_a^T E_ab y_ab - Q_b^T E_ba y_ab`; half the squared
/// norm is `f_oe`.
pub fn output_residuals(states: &[Rotation], net: &NetworkConfig, p: &PerturbationSet) -> Result<DVector<f64>> {
    let refs = net.fixed_refs()?;
    let n = net.dim();
    let edges = net.graph().edges();
    let mut r = DVector::zeros(edges.len() * n);
    for (e, (&(a, b), y)) in edges.iter().zip(refs).enumerate() {
        let (eab, eba) = match (p.get(a, b), p.get(b, a)) {
            (Some(x), Some(z)) => (x, z),
            _ => return Err(Error::config(format!("missing measurement error on edge ({a}, {b})"))),
        };
        let d = states[a].matrix().transpose() * (eab.matrix() * y) - states[b].matrix().transpose() * (eba.matrix() * y);
        r.rows_mut(e * n, n).copy_from(&d);
    }
    Ok(r)
}

fn sweep_network(case: SweepCase, seed: u64) -> Result<NetworkConfig> {
    let tri = Graph::complete(3);
    match case {
        SweepCase::A => NetworkConfig::relative_position(3, Space::SOn, tri, seed),
        SweepCase::B => NetworkConfig::generic(3, Space::SOn, tri, seed),
    }
}

const STEP: f64 = 0.25;
const HORIZON: f64 = 2000.0;
const SPREAD: f64 = 0.05;

fn run_trial(net: &NetworkConfig, eps: f64, trial: usize, seed: u64, stream: u64, step: f64, horizon: f64) -> Result<SweepTrial> {
    let mut rng = seeded_rng(seed, stream);
    let init = near_consensus(3, 3, SPREAD, &mut rng);
    let p = PerturbationSet::sample(net.graph(), 0.5 * eps, eps, &mut rng)?;
    let spec = FlowSpec::new(FlowKind::Perturbed, step, horizon)
        .with_perturbations(p.clone())
        .with_gradient_tol(1e-12)
        .with_record_every(usize::MAX);
    let traj = integrate(&init, net, &spec)?;
    let end = traj.final_rotations().expect("rotation trajectory");
    let flow_dist = dist_to_consensus(end)?.value;
    let out = levenberg_marquardt(end, |q| output_residuals(q, net, &p), 1e-15, 100)?;
    let dist = dist_to_consensus(&out.states)?.value;
    Ok(SweepTrial {
        eps,
        trial,
        flow_converged: traj.converged,
        flow_dist,
        residual: out.residual_norm,
        dist,
        kept: out.residual_norm <= 1e-8 * eps,
    })
}

/// Robustness of output synchronization to measurement errors on a
/// three-agent SO(3) network.
///
/// For every `eps` and trial, errors with `|E_ij - I|_F` uniform in
/// `(eps/2, eps)` are drawn and the perturbed flow runs from near
/// consensus until its gradient drops below `1e-12` or the horizon ends.
/// The end point is polished by Levenberg-Marquardt on the output
/// residuals; trials whose residual stays above `1e-8 eps` found no
/// perturbed output-synchronized point and are discarded. The slope of
/// `log max dist` against `log eps` is fitted over magnitudes with at least
/// one kept trial.
pub fn robustness_sweep(
    case: SweepCase,
    eps_list: &[f64],
    trials: usize,
    seed: u64,
    opts: &RunOptions,
) -> Result<ExperimentReport> {
    if eps_list.is_empty() || trials == 0 {
        return Err(Error::config("the sweep needs at least one magnitude and one trial"));
    }
    if let Some(&e) = eps_list.iter().find(|&&e| !(e > 0.0 && e < 0.1)) {
        return Err(Error::config(format!("error magnitude {e} outside (0, 0.1)")));
    }
    let net = sweep_network(case, seed)?;
    let step = opts.step_or(STEP);
    let horizon = opts.horizon_or(HORIZON);
    let mut rep = ExperimentReport::new("sweep", seed, opts.out_dir.as_deref());
    rep.param("case", case);
    rep.param("eps", eps_list);
    rep.param("trials", trials);
    rep.param("step", step);
    rep.param("horizon", horizon);
    rep.param("init_spread", SPREAD);

    let refs = net.fixed_refs()?;
    let class = so3_triangle_class(&refs[0], &refs[1], &refs[2])?;
    rep.param("triangle", class);
    rep.metric("condition_b", f64::from(u8::from(check_condition_b(&net)?.holds)));
    rep.check_true(
        "reference_family",
        class == match case {
            SweepCase::A => TriangleClass::CaseA,
            SweepCase::B => TriangleClass::CaseB,
        },
    );

    let jobs: Vec<(usize, usize)> = (0..eps_list.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let results: Vec<SweepTrial> = jobs
        .par_iter()
        .map(|&(i, t)| run_trial(&net, eps_list[i], t, seed, ((i as u64) << 32) | t as u64, step, horizon))
        .collect::<Result<_>>()?;

    let mut csv = String::from("eps,trial,flow_converged,flow_dist,residual,dist,kept\n");
    for r in &results {
        csv.push_str(&format!(
            "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{}\n",
            r.eps, r.trial, r.flow_converged as u8, r.flow_dist, r.residual, r.dist, r.kept as u8
        ));
    }
    rep.emit_csv("trials.csv", &csv)?;

    let mut log_eps = Vec::new();
    let mut max_dist = Vec::new();
    let mut summary = String::from("eps,kept,max_dist\n");
    for (i, &eps) in eps_list.iter().enumerate() {
        let kept: Vec<&SweepTrial> = results.iter().filter(|r| r.eps == eps && r.kept).collect();
        let m = kept.iter().map(|r| r.dist).fold(f64::NAN, f64::max);
        summary.push_str(&format!("{eps:.16e},{},{m:.16e}\n", kept.len()));
        rep.metric(&format!("max_dist_{i}"), m);
        rep.metric(&format!("kept_{i}"), kept.len() as f64);
        if !kept.is_empty() {
            log_eps.push(eps.ln());
            max_dist.push(m);
        }
    }
    rep.emit_csv("envelope.csv", &summary)?;

    let total = results.len() as f64;
    let discarded = results.iter().filter(|r| !r.kept).count() as f64;
    rep.metric("discard_fraction", discarded / total);
    rep.metric("flow_converged_fraction", results.iter().filter(|r| r.flow_converged).count() as f64 / total);
    rep.metric("magnitudes_fitted", log_eps.len() as f64);
    let ratio = eps_list
        .iter()
        .enumerate()
        .filter_map(|(i, &e)| rep.get(&format!("max_dist_{i}")).filter(|m| m.is_finite()).map(|m| m / e))
        .fold(0.0, f64::max);
    rep.metric("max_dist_over_eps", ratio);

    let (slope, r2) = match fit_log_linear(&log_eps, &max_dist) {
        Ok(fit) => (fit.slope, fit.r2),
        Err(_) => (f64::NAN, f64::NAN),
    };
    rep.metric("slope", slope);
    rep.metric("slope_r2", r2);
    match case {
        SweepCase::A => rep.check_within("slope", slope, 0.35, 0.65),
        SweepCase::B => rep.check_within("slope", slope, 0.85, 1.15),
    }
    Ok(rep)
}
