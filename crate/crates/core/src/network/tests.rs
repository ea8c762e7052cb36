use super::*;
use crate::graph::incidence_matrix;
use crate::liegroup::{random_rotation, rotation_about_axis, sample_rotation};
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn axes_triangle(y12: &[f64], y13: &[f64], y23: &[f64]) -> NetworkConfig {
    NetworkConfig::from_edge_vectors(
        3,
        Space::SOn,
        3,
        &[((0, 1), y12.to_vec()), ((0, 2), y13.to_vec()), ((1, 2), y23.to_vec())],
    )
    .unwrap()
}

fn example_rn(theta: f64, phi: f64) -> NetworkConfig {
    NetworkConfig::from_edge_vectors(
        2,
        Space::Rn,
        4,
        &[
            ((0, 1), vec![1.0, 0.0]),
            ((0, 3), vec![0.0, 1.0]),
            ((1, 2), vec![theta.cos(), theta.sin()]),
            ((2, 3), vec![phi.cos(), phi.sin()]),
        ],
    )
    .unwrap()
}

/// `(B (x) I_n) W (B (x) I_n)^T` with `W = blockdiag(M_e)`.
fn factorized(net: &NetworkConfig) -> DMatrix<f64> {
    let n = net.dim();
    let b = incidence_matrix(net.graph());
    let (k, m) = b.shape();
    let mut bi = DMatrix::zeros(k * n, m * n);
    for r in 0..k {
        for c in 0..m {
            for d in 0..n {
                bi[(r * n + d, c * n + d)] = b[(r, c)];
            }
        }
    }
    let mut w = DMatrix::zeros(m * n, m * n);
    for (e, mp) in net.projectors_at(None).unwrap().iter().enumerate() {
        w.view_mut((e * n, e * n), (n, n)).copy_from(mp);
    }
    &bi * w * bi.transpose()
}

fn random_connected_graph(k: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    loop {
        let mut edges = Vec::new();
        for a in 0..k {
            for b in (a + 1)..k {
                if rng.random_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        let g = Graph::new(k, edges).unwrap();
        if connected_components(&g).count == 1 {
            return g;
        }
    }
}

#[test]
fn projector_examples() {
    assert_eq!(projector(&v(&[1.0, 0.0, 0.0])).unwrap(), DMatrix::from_diagonal(&v(&[1.0, 0.0, 0.0])));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let m = projector(&v(&[s, s, 0.0])).unwrap();
    let expected = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
    assert_relative_eq!(m, expected, epsilon = 1e-15);
    assert!(matches!(projector(&v(&[1.0, 1.0, 0.0])), Err(Error::Domain(_))));
}

#[test]
fn projector_is_idempotent_rank_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 2..6 {
        let m = projector(&sample_unit_vector(n, &mut rng)).unwrap();
        assert!((&m * &m - &m).norm() < 1e-12);
        assert!((m.trace() - 1.0).abs() < 1e-12);
        assert_eq!(numerical_rank(&m), 1);
    }
}

#[test]
fn single_edge_laplacian_blocks() {
    let net = NetworkConfig::from_edge_vectors(2, Space::SOn, 2, &[((0, 1), vec![1.0, 0.0])]).unwrap();
    let lg = generalized_laplacian(&net, None).unwrap();
    let d = DMatrix::from_diagonal(&v(&[1.0, 0.0]));
    assert_eq!(lg.block(0, 0), d);
    assert_eq!(lg.block(1, 1), d);
    assert_eq!(lg.block(0, 1), -&d);
    assert_eq!(lg.block(1, 0), -d);
    let a = check_condition_a(&net).unwrap();
    assert!(!a.holds);
    assert_eq!((a.rank, a.required, a.bound), (1, 2, 1));
}

#[test]
fn equal_references_reduce_to_standard_laplacian_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in 3..7 {
        let g = random_connected_graph(k, 0.6, &mut rng);
        let y = sample_unit_vector(3, &mut rng);
        let net = NetworkConfig::new_fixed(3, Space::SOn, g.clone(), vec![y; g.edge_count()]).unwrap();
        let lg = generalized_laplacian(&net, None).unwrap();
        assert_eq!(numerical_rank(lg.matrix()), numerical_rank(&standard_laplacian(&g)));
        assert_eq!(numerical_rank(lg.matrix()), k - 1);
    }
}

#[test]
fn time_varying_laplacian_needs_time() {
    let g = Graph::complete(3);
    let tv = TimeVaryingRefs::quasi_periodic_anchors(3, 3, 1);
    let net = NetworkConfig::new_time_varying(3, Space::SOn, g, tv).unwrap();
    assert!(matches!(generalized_laplacian(&net, None), Err(Error::Usage(_))));
    assert!(generalized_laplacian(&net, Some(1.5)).is_ok());
    assert!(matches!(check_condition_a(&net), Err(Error::Usage(_))));
}

#[test]
fn numerical_rank_basics() {
    assert_eq!(numerical_rank(&DMatrix::identity(5, 5)), 5);
    let x = v(&[1.0, 2.0, 3.0]);
    assert_eq!(numerical_rank(&(&x * x.transpose())), 1);
    assert_eq!(numerical_rank(&DMatrix::zeros(3, 3)), 0);
}

#[test]
fn triangle_fails_condition_a() {
    for seed in 0..10 {
        let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(3), seed).unwrap();
        let a = check_condition_a(&net).unwrap();
        assert!(!a.holds);
        assert!(a.rank <= 3);
        assert_eq!(a.bound, 3);
    }
}

#[test]
fn so2_tangent_form_is_the_laplacian() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let generator = SkewMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
    for k in 2..7 {
        let g = random_connected_graph(k, 0.5, &mut rng);
        let net = NetworkConfig::generic(2, Space::SOn, g.clone(), rng.random()).unwrap();
        let lg = generalized_laplacian(&net, None).unwrap();
        let l = standard_laplacian(&g);
        assert!((restrict_to_tangent(&lg, std::slice::from_ref(&generator)) - &l).norm() < 1e-10);
        // The orthonormal generator has norm 1 instead of sqrt 2.
        let b = check_condition_b(&net).unwrap();
        assert!((&b.l_v - &l * 0.5).norm() < 1e-10);
        assert!(b.holds);
    }
    let disconnected = Graph::new(4, [(0, 1), (2, 3)]).unwrap();
    let net = NetworkConfig::generic(2, Space::SOn, disconnected, 1).unwrap();
    assert!(!check_condition_b(&net).unwrap().holds);
}

#[test]
fn tangent_form_matches_block_traces() {
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 9).unwrap();
    let lg = generalized_laplacian(&net, None).unwrap();
    let basis = so_basis(3).unwrap();
    let lv = check_condition_b(&net).unwrap().l_v;
    let d = basis.len();
    for i in 0..4 {
        for j in 0..4 {
            for a in 0..d {
                for b in 0..d {
                    let direct = (basis[a].matrix().transpose() * lg.block(i, j) * basis[b].matrix()).trace();
                    assert!((lv[(i * d + a, j * d + b)] - direct).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn condition_b_on_small_so3_networks() {
    // Five-edge pattern and K4 with generic references.
    let five = Graph::new(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]).unwrap();
    for seed in 0..5 {
        for g in [five.clone(), Graph::complete(4)] {
            let net = NetworkConfig::generic(3, Space::SOn, g, seed).unwrap();
            assert!(!check_condition_a(&net).unwrap().holds);
            let b = check_condition_b(&net).unwrap();
            assert!(b.holds, "seed {seed}: rank {} of {}", b.rank, b.required);
        }
    }
    // Parallel y12, y13.
    let net = axes_triangle(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    assert!(!check_condition_b(&net).unwrap().holds);
    // Coplanar, pairwise independent.
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let net = axes_triangle(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[s, s, 0.0]);
    assert!(!check_condition_b(&net).unwrap().holds);
    assert!(matches!(check_condition_b(&example_rn(0.3, 1.1)), Err(Error::Usage(_))));
}

#[test]
fn injectivity_reports() {
    let ex1 = axes_triangle(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]);
    let r = check_injectivity(&ex1).unwrap();
    assert!(r.injective);
    assert!(r.vertices.iter().all(|v| v.independent_count == 2 && v.required == 2));

    let ex2 = example_rn(std::f64::consts::FRAC_PI_4, 1.0);
    let r = check_injectivity(&ex2).unwrap();
    assert!(r.injective);
    assert!(r.vertices.iter().all(|v| v.required == 2));

    let path = NetworkConfig::generic(3, Space::SOn, Graph::new(3, [(0, 1), (1, 2)]).unwrap(), 4).unwrap();
    let r = check_injectivity(&path).unwrap();
    assert!(!r.injective);
    assert!(!r.vertices[0].passes && r.vertices[1].passes && !r.vertices[2].passes);
}

#[test]
fn cut_condition_reports() {
    let ex1 = axes_triangle(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]);
    let c = check_cut_condition(&ex1).unwrap();
    assert!(c.holds);
    assert_eq!(c.min_rank, 2);

    assert!(check_cut_condition(&example_rn(0.4, 1.2)).unwrap().holds);

    // Two triangles joined by one bridge edge (2, 3).
    let g = Graph::new(6, [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)]).unwrap();
    let net = NetworkConfig::generic(3, Space::SOn, g, 2).unwrap();
    let c = check_cut_condition(&net).unwrap();
    assert!(!c.holds);
    assert_eq!(c.min_rank, 1);
    assert_eq!(c.worst_cut, vec![3, 4, 5]);

    let big = NetworkConfig::generic(3, Space::SOn, Graph::complete(21), 1).unwrap();
    assert!(matches!(check_cut_condition(&big), Err(Error::Capacity(_))));
}

#[test]
fn triangle_classes() {
    let e = |i: usize| {
        let mut x = DVector::zeros(3);
        x[i] = 1.0;
        x
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert_eq!(so3_triangle_class(&e(0), &e(2), &e(1)).unwrap(), TriangleClass::CaseB);
    assert_eq!(so3_triangle_class(&e(0), &e(1), &v(&[s, s, 0.0])).unwrap(), TriangleClass::CaseA);
    assert_eq!(so3_triangle_class(&e(0), &e(0), &e(1)).unwrap(), TriangleClass::Degenerate);
    assert!(matches!(so3_triangle_class(&v(&[1.0, 0.0]), &e(0), &e(1)), Err(Error::Dimension(_))));
}

/// `y24` solving ratio equality: with `n4 = y12 x y14`, the right ratio is
/// `y24.(n4 x y12) / y24.n4`, so any `y24` orthogonal to `n4 x y12 - r3 n4` works.
fn mirror_y24(y12: &DVector<f64>, y13: &DVector<f64>, y14: &DVector<f64>, y23: &DVector<f64>, pick: &DVector<f64>) -> DVector<f64> {
    let c = |a: &DVector<f64>, b: &DVector<f64>| a.cross(b);
    let n3 = c(y12, y13);
    let r3 = c(y12, y23).dot(&n3) / y23.dot(&n3);
    let n4 = c(y12, y14);
    let normal = c(&n4, y12) - n4 * r3;
    let y = c(&normal, pick);
    y.normalize()
}

#[test]
fn quad_condition_generic_and_mirror() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mirrored = 0;
    for _ in 0..50 {
        let ys: Vec<DVector<f64>> = (0..5).map(|_| sample_unit_vector(3, &mut rng)).collect();
        let q = so3_quad_condition(&ys[0], &ys[1], &ys[2], &ys[3], &ys[4]).unwrap();
        assert_eq!(q, QuadCondition::Holds);

        let pick = sample_unit_vector(3, &mut rng);
        let y24 = mirror_y24(&ys[0], &ys[1], &ys[2], &ys[3], &pick);
        let (r3, r4) = so3_quad_ratios(&ys[0], &ys[1], &ys[2], &ys[3], &y24).unwrap();
        assert!((r3 - r4).abs() <= 1e-10 * r3.abs().max(1.0));
        match so3_quad_condition(&ys[0], &ys[1], &ys[2], &ys[3], &y24).unwrap() {
            QuadCondition::RatiosEqual => mirrored += 1,
            QuadCondition::CoplanarTriple { .. } => {}
            QuadCondition::Holds => panic!("mirror construction must not satisfy the condition"),
        }
    }
    assert!(mirrored > 40);

    let e = |i: usize| {
        let mut x = DVector::zeros(3);
        x[i] = 1.0;
        x
    };
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let q = so3_quad_condition(&e(0), &e(1), &v(&[s, s, 0.0]), &e(2), &v(&[0.0, s, s])).unwrap();
    assert_eq!(q, QuadCondition::CoplanarTriple { a: 0, b: 1, c: 2 });
    assert!(!q.holds());
}

#[test]
fn quad_ratio_zero_denominator_is_an_error() {
    let e = |i: usize| {
        let mut x = DVector::zeros(3);
        x[i] = 1.0;
        x
    };
    // y23 in the plane of y12, y13.
    let r = so3_quad_ratios(&e(0), &e(1), &e(2), &v(&[0.6, 0.8, 0.0]), &e(1));
    assert!(matches!(r, Err(Error::Degenerate(_))));
}

#[test]
fn hessian_at_identity_and_common_rotation() {
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(5), 8).unwrap();
    let lg = generalized_laplacian(&net, None).unwrap();
    let id = vec![Rotation::identity(3); 5];
    assert!((hessian_gg(&id, &net).unwrap().matrix() - lg.matrix()).norm() < 1e-14);

    let r = random_rotation(3, 4).unwrap();
    let common = vec![r.clone(); 5];
    let mut kron = DMatrix::zeros(15, 15);
    for i in 0..5 {
        kron.view_mut((3 * i, 3 * i), (3, 3)).copy_from(r.matrix());
    }
    let expected = kron.transpose() * lg.matrix() * &kron;
    assert!((hessian_gg(&common, &net).unwrap().matrix() - expected).norm() < 1e-12);
}

#[test]
fn hessian_skew_part_is_the_gradient() {
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let states: Vec<Rotation> = (0..4).map(|_| sample_rotation(3, &mut rng)).collect();
    let h = hessian_gg(&states, &net).unwrap();
    let u = crate::dynamics::rhs_partial(&states, &net, None).unwrap();
    for (i, ui) in u.iter().enumerate() {
        let d = h.block(i, i);
        assert!(((&d - d.transpose()) * 0.5 - ui.matrix()).norm() < 1e-14);
    }
    // Off-diagonal blocks pair up as transposes.
    assert!((h.block(0, 1) - h.block(1, 0).transpose()).norm() < 1e-15);
}

#[test]
fn classify_consensus_and_degenerate_triangle() {
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 3).unwrap();
    let r = random_rotation(3, 12).unwrap();
    let rep = classify_equilibrium(&vec![r; 4], &net).unwrap();
    assert!(rep.gradient_norm < 1e-14);
    assert_eq!(rep.verdict, Verdict::ExpStable);
    assert_eq!(rep.restricted_spectrum.len(), 9);

    let tri = axes_triangle(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
    let rep = classify_equilibrium(&vec![Rotation::identity(3); 3], &tri).unwrap();
    assert_eq!(rep.verdict, Verdict::Degenerate);
    assert!(rep.min_eigenvalue().abs() < 1e-12);
}

#[test]
fn classify_saddle_is_unstable() {
    // Two agents with a single edge: the antipodal relative state, a half
    // turn about an axis orthogonal to y, is a maximum of f_o.
    let net = NetworkConfig::from_edge_vectors(3, Space::SOn, 2, &[((0, 1), vec![0.0, 0.0, 1.0])]).unwrap();
    let flip = rotation_about_axis(&[1.0, 0.0, 0.0], std::f64::consts::PI).unwrap();
    let rep = classify_equilibrium(&[Rotation::identity(3), flip], &net).unwrap();
    assert!(rep.gradient_norm < 1e-14);
    assert_eq!(rep.verdict, Verdict::Unstable);
}

#[test]
fn persistent_excitation_examples() {
    let mut edges = BTreeMap::new();
    edges.insert((0, 1), PathGenerator::constant(&[0.0, 0.6, 0.8]));
    let constant = TimeVaryingRefs::Direct { edges };
    let r = check_persistent_excitation(&constant, (0, 1), 10.0, 101).unwrap();
    assert!(!r.holds);
    assert!(r.min_eig.abs() < 1e-12);
    assert!((r.m_bar[(1, 2)] - 0.48).abs() < 1e-12);

    // Unit-speed great circle in the xy-plane, one full turn over the window.
    let period = 20.0;
    let circle = PathGenerator {
        coords: vec![
            QuasiPeriodic {
                offset: 0.0,
                terms: vec![Harmonic { amplitude: 1.0, frequency_hz: 1.0 / period, phase: std::f64::consts::FRAC_PI_2 }],
            },
            QuasiPeriodic {
                offset: 0.0,
                terms: vec![Harmonic { amplitude: 1.0, frequency_hz: 1.0 / period, phase: 0.0 }],
            },
            QuasiPeriodic::constant(0.0),
        ],
    };
    let mut edges = BTreeMap::new();
    edges.insert((0, 1), circle);
    let r = check_persistent_excitation(&TimeVaryingRefs::Direct { edges }, (0, 1), period, 2001).unwrap();
    let mut eig: Vec<f64> = r.m_bar.clone().symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    assert!(eig[0].abs() < 1e-12);
    assert!((eig[1] - 0.5).abs() < 1e-9 && (eig[2] - 0.5).abs() < 1e-9);
    assert!(!r.holds);

    let tv = TimeVaryingRefs::quasi_periodic_anchors(3, 6, 2024);
    for a in 0..6 {
        for b in (a + 1)..6 {
            let r = check_persistent_excitation(&tv, (a, b), 60.0, 6001).unwrap();
            assert!(r.holds, "edge ({a}, {b}) min eig {}", r.min_eig);
        }
    }
    assert!(check_persistent_excitation(&tv, (0, 1), 0.0, 10).is_err());
}

#[test]
fn perturbations_respect_bound() {
    let g = Graph::complete(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = PerturbationSet::sample(&g, 0.005, 0.01, &mut rng).unwrap();
    for &(a, b) in g.edges() {
        for (i, j) in [(a, b), (b, a)] {
            let d = p.get(i, j).unwrap().chordal_distance(&Rotation::identity(3));
            assert!((0.005..0.01 + 1e-15).contains(&d));
        }
    }
    assert_ne!(p.get(0, 1), p.get(1, 0));
    assert!(p.max_deviation() < 0.01);
    let net = NetworkConfig::generic(3, Space::SOn, g.clone(), 1).unwrap();
    let id = PerturbationSet::identity(&g, 3);
    let blocks = id.coupling_blocks(&g, &net.projectors_at(None).unwrap()).unwrap();
    for (b, m) in blocks.iter().zip(net.projectors_at(None).unwrap()) {
        assert_eq!(b, &m);
    }
    let missing = PerturbationSet::new(BTreeMap::new(), 0.1).unwrap();
    assert!(matches!(missing.coupling_blocks(&g, &net.projectors_at(None).unwrap()), Err(Error::Config(_))));
}

#[test]
fn json_roundtrip_and_modes() {
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 5).unwrap();
    let back = NetworkConfig::from_json_value(&net.to_json_value()).unwrap();
    assert_eq!(back.graph(), net.graph());
    for (a, b) in back.fixed_refs().unwrap().iter().zip(net.fixed_refs().unwrap()) {
        assert!((a - b).norm() < 1e-15);
    }

    let doc = r#"{"n": 3, "space": "SOn", "graph": {"k": 3, "edges": [[1,2],[1,3],[2,3]]},
        "refs": {"mode": "explicit", "vectors": {"1-2": [2,0,0], "3-1": [0,0,1], "2-3": [0,1,0]}}}"#;
    let net = NetworkConfig::from_json_str(doc).unwrap();
    assert_eq!(net.fixed_refs().unwrap()[0], v(&[1.0, 0.0, 0.0]));
    assert_eq!(net.fixed_refs().unwrap()[1], v(&[0.0, 0.0, 1.0]));

    let seeded = r#"{"n": 3, "space": "SOn", "graph": {"k": 3, "edges": [[1,2],[1,3],[2,3]]}, "refs": {"mode": "generic", "seed": 4}}"#;
    let a = NetworkConfig::from_json_str(seeded).unwrap();
    assert_eq!(a, NetworkConfig::generic(3, Space::SOn, Graph::complete(3), 4).unwrap());

    let rel = r#"{"n": 3, "space": "SOn", "graph": {"k": 3, "edges": [[1,2],[1,3],[2,3]]},
        "refs": {"mode": "relative_position", "anchors": {"1": [0,0,0], "2": [1,0,0], "3": [0,2,0]}}}"#;
    let r = NetworkConfig::from_json_str(rel).unwrap();
    assert_eq!(r.fixed_refs().unwrap()[1], v(&[0.0, -1.0, 0.0]));

    let tv = r#"{"n": 3, "space": "SOn", "graph": {"k": 3, "edges": [[1,2],[1,3],[2,3]]}, "refs": {"mode": "time_varying", "seed": 4}}"#;
    let t = NetworkConfig::from_json_str(tv).unwrap();
    assert!(t.is_time_varying());
    let back = NetworkConfig::from_json_value(&t.to_json_value()).unwrap();
    assert_eq!(back, t);

    for bad in [
        r#"{"n": 3, "space": "SOn", "graph": {"k": 2, "edges": [[1,2]]}, "refs": {"mode": "explicit", "vectors": {}}}"#,
        r#"{"n": 3, "space": "SOn", "graph": {"k": 2, "edges": [[1,2]]}, "refs": {"mode": "explicit", "vectors": {"1-3": [1,0,0]}}}"#,
        r#"{"n": 3, "space": "SOn", "graph": {"k": 2, "edges": [[1,2]]}, "refs": {"mode": "explicit", "vectors": {"1-2": [0,0,0]}}}"#,
        r#"{"n": 3, "space": "SO3", "graph": {"k": 2, "edges": [[1,2]]}, "refs": {"mode": "generic", "seed": 1}}"#,
        r#"{"n": 3, "space": "SOn", "graph": {"k": 2, "edges": [[1,2]]}, "refs": {"mode": "magic"}}"#,
        r#"{"n": 3, "space": "SOn", "graph": {"k": 2, "edges": [[1,2]]}, "refs": {"mode": "generic", "seed": 1}, "extra": 1}"#,
    ] {
        assert!(NetworkConfig::from_json_str(bad).is_err(), "{bad}");
    }
}

#[test]
fn restriction_keeps_vectors() {
    let net = NetworkConfig::generic(3, Space::SOn, Graph::complete(4), 2).unwrap();
    let sub = net.restricted_to(Graph::new(4, [(0, 1), (2, 3)]).unwrap()).unwrap();
    assert_eq!(sub.fixed_refs().unwrap()[1], net.fixed_refs().unwrap()[5]);
}

#[test]
fn rn_kernel_contains_consensus_directions() {
    let net = example_rn(0.3, 1.3);
    let lg = generalized_laplacian(&net, None).unwrap();
    for d in 0..2 {
        let x = DVector::from_fn(8, |r, _| if r % 2 == d { 1.0 } else { 0.0 });
        assert!((lg.matrix() * x).norm() < 1e-14);
    }
}

fn arb_network() -> impl Strategy<Value = NetworkConfig> {
    (2usize..4, 2usize..7, any::<u64>(), 0.2f64..1.0).prop_map(|(n, k, seed, p)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for a in 0..k {
            for b in (a + 1)..k {
                if rng.random_bool(p) {
                    edges.push((a, b));
                }
            }
        }
        let g = Graph::new(k, edges).unwrap();
        NetworkConfig::generic(n, Space::SOn, g, seed).unwrap()
    })
}

proptest! {
    #[test]
    fn laplacian_factorizes(net in arb_network()) {
        let lg = generalized_laplacian(&net, None).unwrap();
        prop_assert!((lg.matrix() - factorized(&net)).norm() < 1e-10);
        let m = lg.matrix();
        prop_assert!((m - m.transpose()).norm() == 0.0);
        let n = net.dim();
        for i in 0..net.agent_count() {
            let mut row = DMatrix::zeros(n, n);
            for j in 0..net.agent_count() {
                row += lg.block(i, j);
            }
            prop_assert!(row.norm() < 1e-12);
        }
        prop_assert!(m.clone().symmetric_eigenvalues().min() > -1e-12);
    }

    #[test]
    fn rank_respects_bound(net in arb_network()) {
        let a = check_condition_a(&net).unwrap();
        prop_assert!(a.rank <= a.bound);
        let b = check_condition_b(&net).unwrap();
        prop_assert!(!a.holds || b.holds);
    }

    #[test]
    fn quadratic_form_is_output_cost(net in arb_network(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states: Vec<Rotation> = (0..net.agent_count()).map(|_| sample_rotation(net.dim(), &mut rng)).collect();
        let n = net.dim();
        let k = net.agent_count();
        let mut stacked = DMatrix::zeros(k * n, n);
        for (i, q) in states.iter().enumerate() {
            stacked.view_mut((i * n, 0), (n, n)).copy_from(q.matrix());
        }
        let vec = DVector::from_column_slice(stacked.as_slice());
        let lg = generalized_laplacian(&net, None).unwrap();
        let quad = 0.5 * vec.dot(&(lg.kron_identity() * &vec));
        let direct = crate::dynamics::evaluate_costs(&states, &net, None, None).unwrap().f_o;
        prop_assert!((quad - direct).abs() < 1e-10);
    }
}
