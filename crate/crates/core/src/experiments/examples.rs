use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;

use super::{refine_equilibrium, ExperimentReport, RunOptions};
use crate::dynamics::{dist_to_consensus, dist_to_consensus_rn, evaluate_costs, evaluate_costs_rn, gradient_norm, rhs_partial};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::liegroup::Rotation;
use crate::network::{
    check_condition_a, check_condition_b, check_injectivity, classify_equilibrium, generalized_laplacian, hessian_gg,
    numerical_rank, so3_triangle_class, NetworkConfig, Space, Verdict,
};

fn flag(b: bool) -> f64 {
    f64::from(u8::from(b))
}

fn verdict_code(v: Verdict) -> f64 {
    match v {
        Verdict::ExpStable => 0.0,
        Verdict::Unstable => 1.0,
        Verdict::Degenerate => 2.0,
    }
}

/// Three agents on SO(3), all-to-all, with coordinate-axis references
/// `y12 = e1`, `y23 = e2`, `y13 = e3`.
pub fn nocon_network() -> NetworkConfig {
    NetworkConfig::from_edge_vectors(
        3,
        Space::SOn,
        3,
        &[((0, 1), vec![1.0, 0.0, 0.0]), ((1, 2), vec![0.0, 1.0, 0.0]), ((0, 2), vec![0.0, 0.0, 1.0])],
    )
    .expect("static network is valid")
}

/// The diagonal states `I`, `diag(1, -1, -1)`, `diag(-1, -1, 1)`.
pub fn nocon_states() -> Vec<Rotation> {
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, -1.0, 1.0]]
        .iter()
        .map(|d| Rotation::from_rows(3, &[d[0], 0.0, 0.0, 0.0, d[1], 0.0, 0.0, 0.0, d[2]]).expect("diagonal rotation"))
        .collect()
}

pub fn verify_example_nocon(seed: u64, opts: &RunOptions) -> Result<ExperimentReport> {
    let net = nocon_network();
    let states = nocon_states();
    let mut rep = ExperimentReport::new("nocon", seed, opts.out_dir.as_deref());
    rep.param("agents", 3);
    rep.param("refs", "y12 = e1, y23 = e2, y13 = e3");

    let costs = evaluate_costs(&states, &net, None, None)?;
    let grad = gradient_norm(&rhs_partial(&states, &net, None)?);
    let inj = check_injectivity(&net)?;
    let eq = classify_equilibrium(&states, &net)?;
    let refs = net.fixed_refs()?;
    let g = net.graph();
    let y = |a, b| refs[g.edge_index(a, b).expect("edge exists")].clone();
    let tri = so3_triangle_class(&y(0, 1), &y(0, 2), &y(1, 2))?;

    rep.metric("f_o", costs.f_o);
    rep.metric("f_s", costs.f_s);
    rep.metric("gradient_norm", grad);
    rep.metric("injective", flag(inj.injective));
    rep.metric("hessian_min_eig", eq.min_eigenvalue());
    rep.metric("verdict", verdict_code(eq.verdict));
    rep.metric("condition_a", flag(check_condition_a(&net)?.holds));
    rep.metric("condition_b", flag(check_condition_b(&net)?.holds));
    rep.param("verdict", eq.verdict);
    rep.param("triangle", tri);

    rep.check_eq("f_o", costs.f_o, 0.0);
    rep.check_lt("gradient_norm", grad, 1e-12);
    rep.check_gt("f_s", costs.f_s, 1.0);
    rep.check_true("injective", inj.injective);
    Ok(rep)
}

pub const NOTGLOBAL_ALPHA: f64 = 0.04;
pub const NOTGLOBAL_BETA: f64 = -0.0558;

/// Seven agents, all-to-all. The reference of pair `(i, j)` depends on
/// `(i - j) mod 7`: `e2` for +-1, `(sin a, 0, cos a)` for +-2, `e3` for +-3.
pub fn notglobal_network(alpha: f64) -> NetworkConfig {
    let k = 7;
    let pairs: Vec<((usize, usize), Vec<f64>)> = Graph::complete(k)
        .edges()
        .iter()
        .map(|&(a, b)| {
            let d = (b - a) % k;
            let y = match d.min(k - d) {
                1 => vec![0.0, 1.0, 0.0],
                2 => vec![alpha.sin(), 0.0, alpha.cos()],
                _ => vec![0.0, 0.0, 1.0],
            };
            ((a, b), y)
        })
        .collect();
    NetworkConfig::from_edge_vectors(3, Space::SOn, k, &pairs).expect("static network is valid")
}

/// `Q_i = Q_y(beta) Q_z(2 pi i / 7)` for `i = 1..7`, with the matrices as
/// printed: `Q_z(t) = [[c, s, 0], [-s, c, 0], [0, 0, 1]]` and
/// `Q_y(b) = [[c, 0, s], [0, 1, 0], [-s, 0, c]]`.
pub fn notglobal_states(beta: f64) -> Vec<Rotation> {
    let (sb, cb) = beta.sin_cos();
    let qy = Rotation::from_rows(3, &[cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb]).expect("rotation");
    (1..=7)
        .map(|i| {
            let (s, c) = (i as f64 * 2.0 * PI / 7.0).sin_cos();
            let qz = Rotation::from_rows(3, &[c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0]).expect("rotation");
            &qy * &qz
        })
        .collect()
}

/// Best `beta` with `Q_1 = Q_y(beta) Q_z(2 pi / 7)` and the largest
/// deviation of the states from the family at that `beta`.
fn fit_family(states: &[Rotation]) -> (f64, f64) {
    let (s, c) = (2.0 * PI / 7.0).sin_cos();
    let qz = Rotation::from_rows(3, &[c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0]).expect("rotation");
    let qy = states[0].matrix() * qz.matrix().transpose();
    let beta = qy[(0, 2)].atan2(qy[(0, 0)]);
    let off = states
        .iter()
        .zip(notglobal_states(beta))
        .map(|(a, b)| a.chordal_distance(&b))
        .fold(0.0, f64::max);
    (beta, off)
}

pub fn verify_example_notglobal(refine: bool, seed: u64, opts: &RunOptions) -> Result<ExperimentReport> {
    let net = notglobal_network(NOTGLOBAL_ALPHA);
    let raw = notglobal_states(NOTGLOBAL_BETA);
    let mut rep = ExperimentReport::new("notglobal", seed, opts.out_dir.as_deref());
    rep.param("alpha", NOTGLOBAL_ALPHA);
    rep.param("beta", NOTGLOBAL_BETA);
    rep.param("refine", refine);

    let lg = generalized_laplacian(&net, None)?;
    let rank = numerical_rank(lg.matrix());
    rep.metric("rank_lg", rank as f64);
    rep.check_eq("rank_lg", rank as f64, 18.0);

    let raw_grad = gradient_norm(&rhs_partial(&raw, &net, None)?);
    rep.metric("gradient_norm_raw", raw_grad);
    rep.check_lt("gradient_norm_raw", raw_grad, 1e-4);

    let states = if refine {
        let out = refine_equilibrium(&raw, &net, 1e-13, 50)?;
        let shift = raw.iter().zip(&out.states).map(|(a, b)| a.chordal_distance(b)).fold(0.0, f64::max);
        rep.metric("gradient_norm_refined", out.residual_norm);
        rep.metric("refinement_iterations", out.iterations as f64);
        rep.metric("refinement_shift", shift);
        rep.check_lt("gradient_norm_refined", out.residual_norm, 1e-10);
        let (beta, off) = fit_family(&out.states);
        rep.metric("refined_beta", beta);
        rep.metric("refined_family_residual", off);
        out.states
    } else {
        raw
    };

    let costs = evaluate_costs(&states, &net, None, None)?;
    rep.metric("f_o", costs.f_o);
    rep.metric("f_s", costs.f_s);
    rep.metric("dist_to_consensus", dist_to_consensus(&states)?.value);
    rep.check_gt("f_s", costs.f_s, 1.0);

    let hess = hessian_gg(&states, &net)?;
    let m = hess.matrix();
    rep.metric("hessian_asymmetry", (m - m.transpose()).norm());
    rep.metric(
        "offdiag_block_asymmetry",
        (0..7).flat_map(|j| (0..j).map(move |i| (i, j))).map(|(i, j)| {
            let b = hess.block(i, j);
            (&b - b.transpose()).norm()
        })
        .fold(0.0, f64::max),
    );

    let eq = classify_equilibrium(&states, &net)?;
    rep.metric("hessian_min_eig", eq.min_eigenvalue());
    rep.metric("verdict", verdict_code(eq.verdict));
    rep.param("verdict", eq.verdict);
    rep.check_true("equilibrium_exp_stable", eq.verdict == Verdict::ExpStable);

    let cs = classify_equilibrium(&vec![Rotation::identity(3); 7], &net)?;
    rep.metric("consensus_min_eig", cs.min_eigenvalue());
    rep.metric("consensus_verdict", verdict_code(cs.verdict));
    rep.check_true("consensus_exp_stable", cs.verdict == Verdict::ExpStable);
    Ok(rep)
}

fn rn_angle_ok(x: f64) -> bool {
    let r = (x / FRAC_PI_2).round();
    (x - r * FRAC_PI_2).abs() > 1e-9
}

/// Four agents in the plane on the cycle `1-2-3-4-1` with `y12 = e1`,
/// `y14 = e2`, `y23 = (cos t, sin t)`, `y34 = (cos p, sin p)`.
pub fn rn_family_network(theta: f64, phi: f64) -> Result<NetworkConfig> {
    if !rn_angle_ok(theta) || !rn_angle_ok(phi) {
        return Err(Error::domain("theta and phi must avoid multiples of pi/2"));
    }
    let (y23, y34) = ((theta.cos(), theta.sin()), (phi.cos(), phi.sin()));
    NetworkConfig::from_edge_vectors(
        2,
        Space::Rn,
        4,
        &[
            ((0, 1), vec![1.0, 0.0]),
            ((0, 3), vec![0.0, 1.0]),
            ((1, 2), vec![y23.0, y23.1]),
            ((2, 3), vec![y34.0, y34.1]),
        ],
    )
}

/// The output-synchronized family parametrized by `(a, b, c, d)`.
pub fn rn_family_states(p: (f64, f64, f64, f64), theta: f64, phi: f64) -> Vec<DVector<f64>> {
    let (a, b, c, d) = p;
    vec![
        DVector::from_vec(vec![a, b]),
        DVector::from_vec(vec![a, d + (c - a) / theta.tan()]),
        DVector::from_vec(vec![c, d]),
        DVector::from_vec(vec![c + (d - b) * phi.tan(), b]),
    ]
}

pub fn verify_example_rn_family(
    p: (f64, f64, f64, f64),
    theta: f64,
    phi: f64,
    seed: u64,
    opts: &RunOptions,
) -> Result<ExperimentReport> {
    let net = rn_family_network(theta, phi)?;
    let xs = rn_family_states(p, theta, phi);
    let mut rep = ExperimentReport::new("rn_family", seed, opts.out_dir.as_deref());
    rep.param("abcd", [p.0, p.1, p.2, p.3]);
    rep.param("theta", theta);
    rep.param("phi", phi);

    let costs = evaluate_costs_rn(&xs, &net, None)?;
    let scale = xs.iter().map(|x| x.norm_squared()).sum::<f64>().max(1.0);
    let rank = numerical_rank(generalized_laplacian(&net, None)?.matrix());
    let dist = dist_to_consensus_rn(&xs);
    let expect_consensus = p.2 == p.0 && p.3 == p.1;
    // The family exists regardless; distinct references are what make the
    // output map injective.
    let distinct = (theta.cos() * phi.sin() - theta.sin() * phi.cos()).abs() > 1e-12;
    rep.metric("y23_distinct_from_y34", flag(distinct));
    rep.metric("g_o", costs.f_o);
    rep.metric("f_s", costs.f_s);
    rep.metric("dist_to_consensus", dist);
    rep.metric("rank_lg", rank as f64);
    rep.check_lt("g_o", costs.f_o, 1e-12 * scale);
    rep.check_lt("rank_lg", rank as f64, 6.0);
    rep.check_true("consensus_iff_cd_equals_ab", (dist <= 1e-12 * scale.sqrt()) == expect_consensus);
    Ok(rep)
}
