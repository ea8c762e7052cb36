use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{seeded_rng, ExperimentReport, RunOptions};
use crate::dynamics::{integrate, FlowKind, FlowSpec, Trajectory};
use crate::error::Result;
use crate::graph::Graph;
use crate::liegroup::{sample_rotation, sample_rotation_at_distance, Rotation};
use crate::network::{
    check_persistent_excitation, sample_unit_vector, Harmonic, NetworkConfig, PathGenerator, QuasiPeriodic, Space,
    TimeVaryingRefs,
};

fn pair_network(y: &DVector<f64>) -> Result<NetworkConfig> {
    NetworkConfig::new_fixed(3, Space::SOn, Graph::new(2, [(0, 1)])?, vec![y.clone()])
}

/// `I + (cos t - 1)(y y^T + z z^T) + sin t (y z^T - z y^T)`.
fn s0_point(y: &DVector<f64>, z: &DVector<f64>, theta: f64) -> Rotation {
    let m = DMatrix::identity(3, 3) + (y * y.transpose() + z * z.transpose()) * (theta.cos() - 1.0)
        + (y * z.transpose() - z * y.transpose()) * theta.sin();
    Rotation::from_matrix_unchecked(m)
}

fn relative(traj: &Trajectory, idx: usize) -> DMatrix<f64> {
    let q = match &traj.states[idx] {
        crate::dynamics::AgentStates::Rotations(q) => q,
        crate::dynamics::AgentStates::Vectors(_) => unreachable!("SO(n) trajectory"),
    };
    q[0].matrix() * q[1].matrix().transpose()
}

/// Unit vector orthogonal to `y`.
fn orthogonal_unit(y: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let z = w - y * y.dot(w);
    z.normalize()
}

/// Two agents coupled through one edge: stationarity on the stabilizer of
/// the reference, the reduced angle flow, convergence of the relative
/// state to the stabilizer, and full synchronization under a persistently
/// exciting reference.
pub fn two_agent_suite(seed: u64, opts: &RunOptions) -> Result<ExperimentReport> {
    let mut rep = ExperimentReport::new("two_agent", seed, opts.out_dir.as_deref());
    let mut rng = seeded_rng(seed, 0);
    let y = sample_unit_vector(3, &mut rng);
    let z = orthogonal_unit(&y, &sample_unit_vector(3, &mut rng));
    let net = pair_network(&y)?;
    rep.param("y12", y.as_slice());

    // A relative state in the stabilizer of y12 is an equilibrium.
    let ya = [y[0], y[1], y[2]];
    let start = vec![crate::liegroup::rotation_about_axis(&ya, 0.7)?, Rotation::identity(3)];
    let traj = integrate(&start, &net, &FlowSpec::new(FlowKind::PartialState, 0.01, 10.0).with_record_every(100))?;
    let moved = traj
        .final_rotations()
        .expect("rotations")
        .iter()
        .zip(&start)
        .map(|(a, b)| a.chordal_distance(b))
        .fold(0.0, f64::max);
    rep.metric("stabilizer_initial_f_o", traj.samples[0].f_o);
    rep.metric("stabilizer_motion", moved);
    rep.check_lt("stabilizer_motion", moved, 1e-12);

    // Directed link from S0: the angle obeys d theta/dt = -sin(theta)/2.
    let theta0 = 1.0;
    let step = opts.step_or(1e-3);
    let horizon = opts.horizon_or(10.0);
    let spec = FlowSpec::new(FlowKind::PartialState, step, horizon).with_held(vec![1]);
    let traj = integrate(&[s0_point(&y, &z, theta0), Rotation::identity(3)], &net, &spec)?;
    let mut csv = String::from("t,theta,theta_exact\n");
    let (mut err, mut off) = (0.0f64, 0.0f64);
    for (i, s) in traj.samples.iter().enumerate() {
        let q = relative(&traj, i);
        let theta = (y.dot(&(&q * &z))).atan2(y.dot(&(&q * &y)));
        let exact = 2.0 * ((theta0 / 2.0).tan() * (-s.t / 2.0).exp()).atan();
        err = err.max((theta - exact).abs());
        off = off.max((q - s0_point(&y, &z, theta).matrix()).norm());
        csv.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", s.t, theta, exact));
    }
    rep.emit_csv("theta.csv", &csv)?;
    rep.param("theta_step", step);
    rep.param("theta_horizon", horizon);
    rep.metric("theta_max_error", err);
    rep.metric("s0_residual", off);
    rep.check_lt("theta_max_error", err, 1e-4);
    rep.check_lt("s0_residual", off, 1e-8);

    // Symmetric pair from random states: Q1 Q2^T tends to stab(y12).
    let init = vec![sample_rotation(3, &mut rng), sample_rotation(3, &mut rng)];
    let traj = integrate(&init, &net, &FlowSpec::new(FlowKind::PartialState, 0.05, 60.0).with_record_every(20))?;
    let q = relative(&traj, traj.states.len() - 1);
    let residual = (q.transpose() * &y - &y).norm();
    rep.metric("stabilizer_residual", residual);
    rep.metric("fixed_ref_final_f_s", traj.last().f_s);
    rep.check_lt("stabilizer_residual", residual, 1e-8);

    // Persistently exciting reference: full synchronization.
    let (f1, f2) = (0.1, 0.07);
    let path = PathGenerator {
        coords: vec![
            QuasiPeriodic { offset: 0.0, terms: vec![Harmonic { amplitude: 1.0, frequency_hz: f1, phase: PI / 2.0 }] },
            QuasiPeriodic { offset: 0.0, terms: vec![Harmonic { amplitude: 1.0, frequency_hz: f1, phase: 0.0 }] },
            QuasiPeriodic { offset: 0.0, terms: vec![Harmonic { amplitude: 1.0, frequency_hz: f2, phase: 0.0 }] },
        ],
    };
    let tv = TimeVaryingRefs::Direct { edges: BTreeMap::from([((0, 1), path)]) };
    let pe = check_persistent_excitation(&tv, (0, 1), 40.0, 4001)?;
    rep.metric("pe_min_eig", pe.min_eig);
    rep.check_true("pe_certificate", pe.holds);
    let tv_net = NetworkConfig::new_time_varying(3, Space::SOn, Graph::new(2, [(0, 1)])?, tv)?;
    let q1 = sample_rotation(3, &mut rng);
    let q2 = &sample_rotation_at_distance(1.0, &mut rng)? * &q1;
    let traj = integrate(&[q1, q2], &tv_net, &FlowSpec::new(FlowKind::PartialStateTV, 0.01, 200.0).with_record_every(10))?;
    // f_s of the pair is half of |Q1 Q2^T - I|_F^2.
    let increase = traj.samples.windows(2).map(|w| w[1].f_s - w[0].f_s).fold(f64::NEG_INFINITY, f64::max);
    let last = traj.states.len() - 1;
    let gap = (relative(&traj, last) - DMatrix::identity(3, 3)).norm();
    rep.emit_csv("tv.csv", &traj.to_csv_string())?;
    rep.metric("tv_initial_hat_f_s", 2.0 * traj.samples[0].f_s);
    rep.metric("tv_max_f_s_increase", increase);
    rep.metric("tv_final_gap", gap);
    rep.check_lt("tv_final_gap", gap, 1e-6);
    rep.check_lt("tv_f_s_increase", increase, 1e-10);
    Ok(rep)
}
