use super::*;
use crate::graph::Graph;
use crate::liegroup::{exp_skew, rotation_about_axis, sample_rotation, so_basis};
use crate::network::sample_unit_vector;
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn diag(d: [f64; 3]) -> Rotation {
    Rotation::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(&d))).unwrap()
}

fn nocon() -> (NetworkConfig, Vec<Rotation>) {
    let net = NetworkConfig::from_edge_vectors(
        3,
        Space::SOn,
        3,
        &[((0, 1), vec![1.0, 0.0, 0.0]), ((1, 2), vec![0.0, 1.0, 0.0]), ((0, 2), vec![0.0, 0.0, 1.0])],
    )
    .unwrap();
    (net, vec![diag([1.0, 1.0, 1.0]), diag([1.0, -1.0, -1.0]), diag([-1.0, -1.0, 1.0])])
}

fn random_states(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Rotation> {
    (0..k).map(|_| sample_rotation(n, rng)).collect()
}

/// Central differences of `cost` along `Q_i exp(s E_a)`; the flow velocity
/// satisfies `d/ds cost = -<E_a, u_i>`.
fn fd_check(states: &[Rotation], u: &[SkewMatrix], cost: impl Fn(&[Rotation]) -> f64) -> f64 {
    let n = states[0].dim();
    let basis = so_basis(n).unwrap();
    let s = 1e-5;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..states.len() {
        for e in &basis {
            let mut plus = states.to_vec();
            let mut minus = states.to_vec();
            plus[i] = states[i].step(&e.scale(s));
            minus[i] = states[i].step(&e.scale(-s));
            let fd = (cost(&plus) - cost(&minus)) / (2.0 * s);
            let analytic = -e.matrix().dot(u[i].matrix());
            num += (fd - analytic).powi(2);
            den += analytic.powi(2);
        }
    }
    (num / den).sqrt()
}

#[test]
fn partial_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..50 {
        let n = 2 + trial % 3;
        let net = NetworkConfig::generic(n, Space::SOn, Graph::complete(4), trial as u64).unwrap();
        let states = random_states(4, n, &mut rng);
        let u = rhs_partial(&states, &net, None).unwrap();
        let err = fd_check(&states, &u, |q| evaluate_costs(q, &net, None, None).unwrap().f_o);
        assert!(err < 1e-6, "trial {trial}: {err:e}");
    }
}

#[test]
fn full_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..50 {
        let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(5), trial).unwrap();
        let states = random_states(5, 3, &mut rng);
        let u = rhs_full(&states, &net).unwrap();
        let err = fd_check(&states, &u, |q| evaluate_costs(q, &net, None, None).unwrap().f_s);
        assert!(err < 1e-6, "trial {trial}: {err:e}");
    }
}

#[test]
fn perturbed_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..50 {
        let g = Graph::complete(4);
        let net = NetworkConfig::generic(3, Space::SOn, g.clone(), trial).unwrap();
        let p = PerturbationSet::sample(&g, 0.1, 0.5, &mut rng).unwrap();
        let states = random_states(4, 3, &mut rng);
        let u = rhs_perturbed(&states, &net, &p).unwrap();
        let err = fd_check(&states, &u, |q| evaluate_costs(q, &net, None, Some(&p)).unwrap().f_oe.unwrap());
        assert!(err < 1e-6, "trial {trial}: {err:e}");
    }
}

#[test]
fn consensus_is_an_equilibrium() {
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 1).unwrap();
    let r = crate::liegroup::random_rotation(3, 5).unwrap();
    let states = vec![r; 4];
    assert!(gradient_norm(&rhs_partial(&states, &net, None).unwrap()) < 1e-15);
    assert!(gradient_norm(&rhs_full(&states, &net).unwrap()) < 1e-15);
}

#[test]
fn two_agent_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(2), seed).unwrap();
        let m = net.projectors_at(None).unwrap()[0].clone();
        let states = random_states(2, 3, &mut rng);
        let (q1, q2) = (states[0].matrix(), states[1].matrix());
        let q = q1 * q2.transpose();
        let rel_rate = |u: &[SkewMatrix]| q1 * (u[0].matrix() - u[1].matrix()) * q2.transpose();

        let u = rhs_partial(&states, &net, None).unwrap();
        let expected = &q * (q.transpose() * &m - m.transpose() * &q);
        assert!((rel_rate(&u) - expected).norm() < 1e-13);

        let u = rhs_full(&states, &net).unwrap();
        let expected = &q * (q.transpose() - &q);
        assert!((rel_rate(&u) - expected).norm() < 1e-13);
    }
}

#[test]
fn perturbed_law_reduces_to_partial_and_breaks_consensus() {
    let g = Graph::complete(3);
    let net = NetworkConfig::generic(3, Space::SOn, g.clone(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let states = random_states(3, 3, &mut rng);
    let id = PerturbationSet::identity(&g, 3);
    let a = rhs_perturbed(&states, &net, &id).unwrap();
    let b = rhs_partial(&states, &net, None).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x.matrix() - y.matrix()).norm() < 1e-15);
    }
    let p = PerturbationSet::sample(&g, 0.05, 0.1, &mut rng).unwrap();
    let consensus = vec![Rotation::identity(3); 3];
    assert!(gradient_norm(&rhs_perturbed(&consensus, &net, &p).unwrap()) > 1e-4);
    let missing = PerturbationSet::new(Default::default(), 1.0).unwrap();
    assert!(matches!(rhs_perturbed(&consensus, &net, &missing), Err(Error::Config(_))));
}

#[test]
fn cost_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..100 {
        let g = Graph::complete(4);
        let net = NetworkConfig::generic(3, Space::SOn, g.clone(), seed).unwrap();
        let p = PerturbationSet::sample(&g, 0.0, 1.0, &mut rng).unwrap();
        let states = random_states(4, 3, &mut rng);
        let a = evaluate_costs(&states, &net, None, Some(&p)).unwrap();
        let b = evaluate_costs_norm_form(&states, &net, None, Some(&p)).unwrap();
        assert!((a.f_s - b.f_s).abs() < 1e-10);
        assert!((a.f_o - b.f_o).abs() < 1e-10);
        assert!((a.f_oe.unwrap() - b.f_oe.unwrap()).abs() < 1e-10);
        assert!(a.f_s >= 0.0 && a.f_o >= 0.0);
    }
}

#[test]
fn cost_examples() {
    let (net, states) = nocon();
    let c = evaluate_costs(&states, &net, None, None).unwrap();
    assert_eq!(c.f_o, 0.0);
    // Each pair has tr(Q_i^T Q_j) = -1.
    assert_eq!(c.f_s, 12.0);
    let c = evaluate_costs(&vec![Rotation::identity(3); 3], &net, None, None).unwrap();
    assert_eq!((c.f_s, c.f_o), (0.0, 0.0));

    let edge = NetworkConfig::from_edge_vectors(3, Space::SOn, 2, &[((0, 1), vec![0.0, 1.0, 0.0])]).unwrap();
    let turn = rotation_about_axis(&[0.0, 1.0, 0.0], std::f64::consts::PI).unwrap();
    let c = evaluate_costs(&[Rotation::identity(3), turn], &edge, None, None).unwrap();
    assert!(c.f_o.abs() < 1e-15);
    assert!((c.f_s - 4.0).abs() < 1e-15);
}

/// Multi-start descent on `sum |Q_i - Q|^2` from random rotations.
fn sampled_consensus_distance(states: &[Rotation], rng: &mut ChaCha8Rng) -> f64 {
    let n = states[0].dim();
    let f = |q: &Rotation| states.iter().map(|s| (s.matrix() - q.matrix()).norm_squared()).sum::<f64>();
    let mut best = f64::INFINITY;
    for _ in 0..20 {
        let mut q = sample_rotation(n, rng);
        for _ in 0..2000 {
            // Descent direction sk(Q^T sum Q_i) for cost const - 2 tr(Q^T sum Q_i).
            let mut g = DMatrix::zeros(n, n);
            for s in states {
                g += q.matrix().transpose() * s.matrix();
            }
            q = q.step(&SkewMatrix::from_raw_antisymmetrized(g).scale(0.05));
        }
        best = best.min(f(&q));
    }
    best.sqrt()
}

#[test]
fn consensus_distance_examples() {
    let r = crate::liegroup::random_rotation(3, 1).unwrap();
    assert!(dist_to_consensus(&vec![r; 4]).unwrap().value < 1e-14);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for theta in [0.3, 1.0, 2.5] {
        let states = [Rotation::identity(3), rotation_about_axis(&[0.0, 0.0, 1.0], theta).unwrap()];
        let d = dist_to_consensus(&states).unwrap();
        assert!(!d.degenerate);
        assert!((d.value - 4.0 * (theta / 4.0).sin().abs()).abs() < 1e-12);
        assert!((d.value - sampled_consensus_distance(&states, &mut rng)).abs() < 1e-6);
    }

    let (_, states) = nocon();
    let d = dist_to_consensus(&states).unwrap();
    assert!((d.value - sampled_consensus_distance(&states, &mut rng)).abs() < 1e-3);
    assert!((d.value - 4.0).abs() < 1e-12);

    // Two antipodal half turns sum to a rank-one matrix.
    let half = rotation_about_axis(&[0.0, 0.0, 1.0], std::f64::consts::PI).unwrap();
    let d = dist_to_consensus(&[Rotation::identity(3), half]).unwrap();
    assert!(d.degenerate);
}

#[test]
fn decay_fits() {
    let ts: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
    let vs: Vec<f64> = ts.iter().map(|t| (-2.0 * t).exp()).collect();
    let fit = fit_log_linear(&ts, &vs).unwrap();
    assert!((fit.slope + 2.0).abs() < 1e-6);
    assert!(fit.r2 > 1.0 - 1e-12);

    let ts: Vec<f64> = (0..=1000).map(|i| i as f64 * 0.1).collect();
    let vs: Vec<f64> = ts.iter().map(|t| 1.0 / (1.0 + t)).collect();
    let fit = fit_log_linear(&ts, &vs).unwrap();
    assert!(fit.r2 < 0.9, "r2 = {}", fit.r2);

    let vs = [1.0, 0.5, 0.25, 0.0, 0.1];
    let fit = fit_log_linear(&[0.0, 1.0, 2.0, 3.0, 4.0], &vs).unwrap();
    assert_eq!(fit.points, 3);
    assert!(fit_log_linear(&[0.0, 1.0], &[1.0, 0.5]).is_err());
}

#[test]
fn zero_horizon_returns_initial_state() {
    let (net, states) = nocon();
    let traj = integrate(&states, &net, &FlowSpec::new(FlowKind::PartialState, 0.01, 0.0)).unwrap();
    assert_eq!(traj.samples.len(), 1);
    assert_eq!(traj.final_rotations().unwrap(), &states[..]);
}

#[test]
fn spec_validation() {
    let (net, states) = nocon();
    for spec in [
        FlowSpec::new(FlowKind::PartialState, 0.0, 1.0),
        FlowSpec::new(FlowKind::PartialState, 0.1, -1.0),
        FlowSpec::new(FlowKind::PartialState, 0.1, 1.0).with_epsilon(0.0),
        FlowSpec::new(FlowKind::Perturbed, 0.1, 1.0),
        FlowSpec::new(FlowKind::RnPartial, 0.1, 1.0),
        FlowSpec::new(FlowKind::PartialState, 0.1, 1.0).with_record_every(0),
        FlowSpec::new(FlowKind::PartialState, 0.1, 1.0).with_held(vec![3]),
    ] {
        assert!(matches!(integrate(&states, &net, &spec), Err(Error::Config(_))), "{spec:?}");
    }
}

fn integrate_fixed(init: &[Rotation], net: &NetworkConfig, kind: FlowKind, h: f64, t: f64) -> Trajectory {
    integrate(init, net, &FlowSpec::new(kind, h, t)).unwrap()
}

#[test]
fn flows_stay_on_group_and_descend() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = Graph::complete(5);
    let net = NetworkConfig::generic(3, Space::SOn, g.clone(), 3).unwrap();
    let p = PerturbationSet::sample(&g, 0.005, 0.01, &mut rng).unwrap();
    let init = random_states(5, 3, &mut rng);
    for kind in [FlowKind::FullState, FlowKind::PartialState, FlowKind::Perturbed] {
        let mut spec = FlowSpec::new(kind, 0.02, 20.0);
        if kind == FlowKind::Perturbed {
            spec = spec.with_perturbations(p.clone());
        }
        let traj = integrate(&init, &net, &spec).unwrap();
        assert!(traj.max_ortho_err() < 1e-9);
        let field = match kind {
            FlowKind::FullState => CostField::FS,
            FlowKind::Perturbed => CostField::FOe,
            _ => CostField::FO,
        };
        let v = traj.field(field);
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-10), "{kind:?}");
        assert!(v.last().unwrap() < &v[0]);
    }
}

#[test]
fn trajectories_are_right_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 5).unwrap();
    let init = random_states(4, 3, &mut rng);
    let r = sample_rotation(3, &mut rng);
    let shifted: Vec<Rotation> = init.iter().map(|q| q * &r).collect();
    let a = integrate_fixed(&init, &net, FlowKind::PartialState, 0.05, 10.0);
    let b = integrate_fixed(&shifted, &net, FlowKind::PartialState, 0.05, 10.0);
    for (sa, sb) in a.states.iter().zip(&b.states) {
        let (AgentStates::Rotations(qa), AgentStates::Rotations(qb)) = (sa, sb) else { panic!() };
        for (x, y) in qa.iter().zip(qb) {
            assert!(((x * &r).matrix() - y.matrix()).norm() < 1e-8);
        }
    }
}

#[test]
fn geometric_rk4_has_fourth_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(3), 2).unwrap();
    let init = random_states(3, 3, &mut rng);
    let end = |h: f64, scheme: Scheme| {
        let spec = FlowSpec::new(FlowKind::PartialState, h, 2.0).with_scheme(scheme);
        integrate(&init, &net, &spec).unwrap().final_rotations().unwrap().to_vec()
    };
    let reference = end(0.001, Scheme::Rk4);
    let err = |q: &[Rotation]| q.iter().zip(&reference).map(|(a, b)| a.chordal_distance(b)).fold(0.0, f64::max);
    let (e1, e2) = (err(&end(0.2, Scheme::Rk4)), err(&end(0.1, Scheme::Rk4)));
    let order = (e1 / e2).log2();
    assert!(order > 3.5 && order < 4.6, "order {order}");
    let (e1, e2) = (err(&end(0.02, Scheme::LieEuler)), err(&end(0.01, Scheme::LieEuler)));
    let order = (e1 / e2).log2();
    assert!(order > 0.9 && order < 1.1, "order {order}");
}

#[test]
fn rn_flow_matches_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = Graph::complete(4);
    let net = NetworkConfig::generic(2, Space::Rn, g, 3).unwrap();
    let lg = generalized_laplacian(&net, None).unwrap();
    let eig = SymmetricEigen::new(lg.matrix().clone());
    let init: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
    let x0 = DVector::from_iterator(8, init.iter().flat_map(|v| v.iter().copied()));
    let traj = integrate_rn(&init, &net, &FlowSpec::new(FlowKind::RnPartial, 0.01, 5.0).with_record_every(10)).unwrap();
    for (s, st) in traj.samples.iter().zip(&traj.states) {
        let decay = eig.eigenvalues.map(|l| (-l * s.t).exp());
        let exact = &eig.eigenvectors * DMatrix::from_diagonal(&decay) * eig.eigenvectors.transpose() * &x0;
        let AgentStates::Vectors(xs) = st else { panic!() };
        for (i, x) in xs.iter().enumerate() {
            assert!((x - exact.rows(2 * i, 2)).norm() < 1e-8, "t = {}", s.t);
        }
    }
    let v = traj.field(CostField::FO);
    assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn rn_two_agents_keep_orthogonal_component() {
    let y = DVector::from_column_slice(&[0.6, 0.8, 0.0]);
    let net = NetworkConfig::new_fixed(3, Space::Rn, Graph::complete(2), vec![y.clone()]).unwrap();
    let init = vec![DVector::from_column_slice(&[1.0, -2.0, 0.5]), DVector::from_column_slice(&[0.0, 1.0, 3.0])];
    let traj = integrate_rn(&init, &net, &FlowSpec::new(FlowKind::RnPartial, 0.01, 30.0)).unwrap();
    let xs = traj.final_vectors().unwrap();
    let d0 = &init[1] - &init[0];
    let d = &xs[1] - &xs[0];
    assert!(y.dot(&d).abs() < 1e-10);
    let orth = |v: &DVector<f64>| v - &y * y.dot(v);
    assert!((orth(&d) - orth(&d0)).norm() < 1e-10);
}

#[test]
fn gradient_tolerance_stops_early() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 1).unwrap();
    let base = sample_rotation(3, &mut rng);
    let init: Vec<Rotation> =
        (0..4).map(|_| &base * &exp_skew(&crate::liegroup::sample_skew(3, &mut rng).scale(0.1))).collect();
    let spec = FlowSpec::new(FlowKind::PartialState, 0.1, 1e4).with_gradient_tol(1e-10).with_record_every(100);
    let traj = integrate(&init, &net, &spec).unwrap();
    assert!(traj.converged);
    assert!(traj.last().t < 1e4);
    assert!(traj.last().gradient_norm < 1e-10);
}

#[test]
fn oversized_steps_are_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(6), 1).unwrap();
    let init = random_states(6, 3, &mut rng);
    let spec = FlowSpec::new(FlowKind::FullState, 3.0, 300.0).with_scheme(Scheme::LieEuler);
    match integrate(&init, &net, &spec) {
        Err(Error::Integration { partial, .. }) => assert!(!partial.unwrap().samples.is_empty()),
        other => panic!("expected an integration failure, got {:?}", other.map(|t| t.last().f_s)),
    }
}

#[test]
fn held_agents_do_not_move() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(3), 1).unwrap();
    let init = random_states(3, 3, &mut rng);
    let spec = FlowSpec::new(FlowKind::PartialState, 0.05, 5.0).with_held(vec![1]);
    let traj = integrate(&init, &net, &spec).unwrap();
    assert_eq!(traj.final_rotations().unwrap()[1], init[1]);
    assert_ne!(traj.final_rotations().unwrap()[0], init[0]);
}

#[test]
fn time_varying_flow_runs_and_scales() {
    let tv = crate::network::TimeVaryingRefs::quasi_periodic_anchors(3, 3, 5);
    let net = NetworkConfig::new_time_varying(3, Space::SOn, Graph::complete(3), tv).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let init = random_states(3, 3, &mut rng);
    let spec = FlowSpec::new(FlowKind::PartialStateTV, 0.05, 5.0).with_epsilon(0.5);
    let traj = integrate(&init, &net, &spec).unwrap();
    assert!(traj.max_ortho_err() < 1e-9);
    assert_eq!(traj.samples.len(), 101);
    let y = sample_unit_vector(3, &mut rng);
    assert!((y.norm() - 1.0).abs() < 1e-15);
}

#[test]
fn csv_has_header_and_full_precision() {
    let (net, states) = nocon();
    let traj = integrate_fixed(&states, &net, FlowKind::PartialState, 0.1, 0.3);
    let csv = traj.to_csv_string();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,f_s,f_o,f_oe,dist_cs,ortho_err");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    assert_eq!(row[3], "NaN");
    let mant = row[1].split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mant.len(), 17);
    assert_eq!(row[1].parse::<f64>().unwrap(), traj.samples[0].f_s);
    assert_eq!(csv.lines().count(), traj.samples.len() + 1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    traj.write_csv(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), csv);
}

/// Both agents moving: the relative angle decays twice as fast as with a
/// held agent, d theta/dt = -sin(theta).
#[test]
fn symmetric_pair_angle_flow() {
    let net = NetworkConfig::from_edge_vectors(3, Space::SOn, 2, &[((0, 1), vec![0.0, 0.0, 1.0])]).unwrap();
    let theta0: f64 = 1.0;
    let init = vec![rotation_about_axis(&[0.0, 1.0, 0.0], theta0).unwrap(), Rotation::identity(3)];
    for horizon in [0.5, 1.0, 3.0] {
        let traj = integrate(&init, &net, &FlowSpec::new(FlowKind::PartialState, 1e-3, horizon)).unwrap();
        let q = traj.final_rotations().unwrap();
        let r = q[0].matrix() * q[1].matrix().transpose();
        let theta = r[(2, 0)].atan2(r[(2, 2)]).abs();
        let exact = 2.0 * ((theta0 / 2.0).tan() * (-horizon).exp()).atan();
        assert!((theta - exact).abs() < 1e-8, "t={horizon}: {theta} vs {exact}");
    }
}
