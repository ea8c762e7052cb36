//! Reference-vector assignments, the generalized (block) Laplacian and the
//! static tests deciding when output synchronization forces state
//! synchronization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{connected_components, standard_laplacian, Graph};
use crate::liegroup::{sample_rotation_at_distance, so_basis, Rotation, SkewMatrix};
use crate::tol;

mod json;
mod timevarying;

pub use timevarying::{Harmonic, PathGenerator, QuasiPeriodic, TimeVaryingRefs, AMPLITUDE_BAND, FREQUENCY_BAND};

/// State space of the agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    #[serde(rename = "SOn")]
    SOn,
    #[serde(rename = "Rn")]
    Rn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefAssignment {
    /// One unit vector per edge, in [`Graph::edges`] order.
    Fixed(Vec<DVector<f64>>),
    TimeVarying(TimeVaryingRefs),
}

/// Interaction graph plus the reference vector carried by every edge.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    n: usize,
    space: Space,
    graph: Graph,
    refs: RefAssignment,
}

fn unit(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let norm = v.norm();
    if (norm - 1.0).abs() > tol::INVARIANT {
        return Err(Error::domain(format!("{what} must be a unit vector (norm {norm})")));
    }
    Ok(v / norm)
}

impl NetworkConfig {
    /// Fixed reference vectors, one per edge in canonical edge order.
    pub fn new_fixed(n: usize, space: Space, graph: Graph, refs: Vec<DVector<f64>>) -> Result<Self> {
        if n == 0 || (space == Space::SOn && n < 2) {
            return Err(Error::domain(format!("dimension n = {n} is not supported for {space:?}")));
        }
        if refs.len() != graph.edge_count() {
            return Err(Error::config(format!(
                "{} reference vectors for {} edges",
                refs.len(),
                graph.edge_count()
            )));
        }
        let refs = refs
            .into_iter()
            .zip(graph.edges())
            .map(|(y, &(a, b))| {
                if y.len() != n {
                    return Err(Error::dim(format!("reference vector on edge ({a}, {b}) has length {}", y.len())));
                }
                unit(y, &format!("reference vector on edge ({a}, {b})"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkConfig { n, space, graph, refs: RefAssignment::Fixed(refs) })
    }

    /// Fixed vectors given as `(i, j) -> y` pairs (0-based, either orientation).
    pub fn from_edge_vectors(n: usize, space: Space, k: usize, pairs: &[((usize, usize), Vec<f64>)]) -> Result<Self> {
        let graph = Graph::new(k, pairs.iter().map(|&(e, _)| e))?;
        let mut refs = vec![DVector::zeros(n); graph.edge_count()];
        for ((a, b), y) in pairs {
            let e = graph.edge_index(*a, *b).expect("edge was just inserted");
            refs[e] = DVector::from_column_slice(y);
        }
        Self::new_fixed(n, space, graph, refs)
    }

    pub fn new_time_varying(n: usize, space: Space, graph: Graph, refs: TimeVaryingRefs) -> Result<Self> {
        refs.validate(n, &graph)?;
        Ok(NetworkConfig { n, space, graph, refs: RefAssignment::TimeVarying(refs) })
    }

    /// Reference vectors drawn uniformly on the unit sphere.
    pub fn generic(n: usize, space: Space, graph: Graph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let refs = (0..graph.edge_count()).map(|_| sample_unit_vector(n, &mut rng)).collect();
        Self::new_fixed(n, space, graph, refs)
    }

    /// Reference vectors `(p_i - p_j)/|p_i - p_j|` for anchor points drawn
    /// uniformly in `[-1, 1]^n`.
    pub fn relative_position(n: usize, space: Space, graph: Graph, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors: Vec<DVector<f64>> = (0..graph.vertex_count())
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        Self::from_anchors(n, space, graph, &anchors)
    }

    pub fn from_anchors(n: usize, space: Space, graph: Graph, anchors: &[DVector<f64>]) -> Result<Self> {
        if anchors.len() != graph.vertex_count() {
            return Err(Error::config("one anchor point per vertex is required"));
        }
        let refs = graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                let d = &anchors[a] - &anchors[b];
                let norm = d.norm();
                if norm <= tol::CONSTRUCTION {
                    return Err(Error::Degenerate(format!("anchors {a} and {b} coincide")));
                }
                Ok(d / norm)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new_fixed(n, space, graph, refs)
    }

    /// Same reference vectors on a different graph. Edges absent from `self`
    /// are rejected.
    pub fn restricted_to(&self, graph: Graph) -> Result<Self> {
        let refs = self.fixed_refs()?;
        let sub = graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                self.graph
                    .edge_index(a, b)
                    .map(|e| refs[e].clone())
                    .ok_or_else(|| Error::config(format!("edge ({a}, {b}) has no reference vector")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new_fixed(self.n, self.space, graph, sub)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn refs(&self) -> &RefAssignment {
        &self.refs
    }

    pub fn agent_count(&self) -> usize {
        self.graph.vertex_count()
    }

    pub fn is_time_varying(&self) -> bool {
        matches!(self.refs, RefAssignment::TimeVarying(_))
    }

    pub fn fixed_refs(&self) -> Result<&[DVector<f64>]> {
        match &self.refs {
            RefAssignment::Fixed(v) => Ok(v),
            RefAssignment::TimeVarying(_) => Err(Error::Usage("operation requires fixed reference vectors".into())),
        }
    }

    /// Reference vectors at time `t`; `t` is required for time-varying refs.
    pub fn refs_at(&self, t: Option<f64>) -> Result<Vec<DVector<f64>>> {
        match (&self.refs, t) {
            (RefAssignment::Fixed(v), _) => Ok(v.clone()),
            (RefAssignment::TimeVarying(tv), Some(t)) => {
                self.graph.edges().iter().map(|&e| tv.vector_at(e, t)).collect()
            }
            (RefAssignment::TimeVarying(_), None) => {
                Err(Error::Usage("time-varying reference vectors need an evaluation time".into()))
            }
        }
    }

    /// Projectors `M_ij = y_ij y_ij^T` per edge at time `t`.
    pub fn projectors_at(&self, t: Option<f64>) -> Result<Vec<DMatrix<f64>>> {
        Ok(self.refs_at(t)?.iter().map(outer).collect())
    }
}

pub fn sample_unit_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

fn outer(y: &DVector<f64>) -> DMatrix<f64> {
    y * y.transpose()
}

/// Rank-one projector `y y^T`.
pub fn projector(y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let norm = y.norm();
    if (norm - 1.0).abs() > tol::CONSTRUCTION {
        return Err(Error::domain(format!("projector needs a unit vector (norm {norm})")));
    }
    Ok(outer(y))
}

/// `kn x kn` symmetric block matrix with blocks `-a_ij M_ij` off the diagonal
/// and `sum_j a_ij M_ij` on it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedLaplacian {
    n: usize,
    k: usize,
    matrix: DMatrix<f64>,
}

impl GeneralizedLaplacian {
    /// Assembles from per-edge coupling blocks `F_e` where the `(lo, hi)`
    /// off-diagonal block is `-F_e` and the `(hi, lo)` block is `-F_e^T`.
    pub(crate) fn assemble(n: usize, graph: &Graph, blocks: &[DMatrix<f64>]) -> Self {
        let k = graph.vertex_count();
        let mut m = DMatrix::zeros(k * n, k * n);
        for (&(a, b), f) in graph.edges().iter().zip(blocks) {
            let ft = f.transpose();
            let mut add = |r: usize, c: usize, x: &DMatrix<f64>, s: f64| {
                let mut view = m.view_mut((r * n, c * n), (n, n));
                view += x * s;
            };
            add(a, b, f, -1.0);
            add(b, a, &ft, -1.0);
            add(a, a, f, 1.0);
            add(b, b, &ft, 1.0);
        }
        GeneralizedLaplacian { n, k, matrix: m }
    }

    pub fn block_dim(&self) -> usize {
        self.n
    }

    pub fn agent_count(&self) -> usize {
        self.k
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.matrix.view((i * self.n, j * self.n), (self.n, self.n)).clone_owned()
    }

    /// `I_n (x) L` acting on `vec` of the stacked `kn x n` matrix.
    pub fn kron_identity(&self) -> DMatrix<f64> {
        let kn = self.k * self.n;
        let mut out = DMatrix::zeros(kn * self.n, kn * self.n);
        for c in 0..self.n {
            out.view_mut((c * kn, c * kn), (kn, kn)).copy_from(&self.matrix);
        }
        out
    }
}

pub fn generalized_laplacian(net: &NetworkConfig, t: Option<f64>) -> Result<GeneralizedLaplacian> {
    let proj = net.projectors_at(t)?;
    Ok(GeneralizedLaplacian::assemble(net.n, &net.graph, &proj))
}

/// Number of singular values above `tol::RANK_RELATIVE * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol::RANK_RELATIVE * smax).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionA {
    pub holds: bool,
    pub rank: usize,
    /// `n (k - 1)`, the rank that certifies `C_o = C_s`.
    pub required: usize,
    /// A-priori bound `min(#E, n rank L)`.
    pub bound: usize,
}

pub fn check_condition_a(net: &NetworkConfig) -> Result<ConditionA> {
    net.fixed_refs()?;
    let lg = generalized_laplacian(net, None)?;
    let rank = numerical_rank(lg.matrix());
    let k = net.agent_count();
    let rank_l = k - connected_components(&net.graph).count;
    let required = net.n * (k - 1);
    Ok(ConditionA {
        holds: rank == required,
        rank,
        required,
        bound: net.graph.edge_count().min(net.n * rank_l),
    })
}

/// `V`: columns are the `vec` of each basis element placed in one agent
/// slot of the stacked `kn x n` matrix. Agent-major, then basis order.
pub fn tangent_basis_matrix(n: usize, k: usize, basis: &[SkewMatrix]) -> DMatrix<f64> {
    let d = basis.len();
    let kn = k * n;
    let mut v = DMatrix::zeros(kn * n, k * d);
    for i in 0..k {
        for (a, e) in basis.iter().enumerate() {
            let col = i * d + a;
            for c in 0..n {
                for r in 0..n {
                    v[(c * kn + i * n + r, col)] = e.matrix()[(r, c)];
                }
            }
        }
    }
    v
}

/// `V^T (I_n (x) L) V` for an arbitrary skew basis.
pub fn restrict_to_tangent(l: &GeneralizedLaplacian, basis: &[SkewMatrix]) -> DMatrix<f64> {
    let v = tangent_basis_matrix(l.n, l.k, basis);
    v.transpose() * l.kron_identity() * v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionB {
    pub holds: bool,
    pub rank: usize,
    /// `(k - 1) n (n - 1) / 2`.
    pub required: usize,
    #[serde(skip)]
    pub l_v: DMatrix<f64>,
}

pub fn check_condition_b(net: &NetworkConfig) -> Result<ConditionB> {
    if net.space != Space::SOn {
        return Err(Error::Usage("tangent-space rank test applies to SO(n) networks".into()));
    }
    net.fixed_refs()?;
    let lg = generalized_laplacian(net, None)?;
    let basis = so_basis(net.n)?;
    let l_v = restrict_to_tangent(&lg, &basis);
    let rank = numerical_rank(&l_v);
    let required = (net.agent_count() - 1) * basis.len();
    Ok(ConditionB { holds: rank == required, rank, required, l_v })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VertexInjectivity {
    pub vertex: usize,
    pub independent_count: usize,
    pub required: usize,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InjectivityReport {
    pub injective: bool,
    pub vertices: Vec<VertexInjectivity>,
}

fn required_independent(net: &NetworkConfig) -> usize {
    match net.space {
        Space::SOn => net.n - 1,
        Space::Rn => net.n,
    }
}

fn rank_of_columns(vectors: &[&DVector<f64>], n: usize) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let mut m = DMatrix::zeros(n, vectors.len());
    for (c, y) in vectors.iter().enumerate() {
        m.set_column(c, y);
    }
    numerical_rank(&m)
}

/// Per-vertex count of linearly independent incident reference vectors.
pub fn check_injectivity(net: &NetworkConfig) -> Result<InjectivityReport> {
    let refs = net.fixed_refs()?;
    let required = required_independent(net);
    let nbrs = net.graph.neighbor_lists();
    let vertices: Vec<_> = nbrs
        .iter()
        .enumerate()
        .map(|(vertex, list)| {
            let cols: Vec<&DVector<f64>> = list.iter().map(|&(_, e)| &refs[e]).collect();
            let independent_count = rank_of_columns(&cols, net.n);
            VertexInjectivity { vertex, independent_count, required, passes: independent_count >= required }
        })
        .collect();
    Ok(InjectivityReport { injective: vertices.iter().all(|v| v.passes), vertices })
}

/// Largest `k` for the exhaustive cut enumeration.
pub const MAX_CUT_VERTICES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CutReport {
    pub holds: bool,
    pub required: usize,
    /// Smallest rank of cut-edge reference vectors over all bipartitions.
    pub min_rank: usize,
    /// Vertex side not containing vertex 0 of the first violating cut, or of
    /// the weakest cut when none violates.
    pub worst_cut: Vec<usize>,
}

/// Every bipartition must carry at least `n - 1` (SO(n)) or `n` (R^n)
/// independent reference vectors across it.
pub fn check_cut_condition(net: &NetworkConfig) -> Result<CutReport> {
    let refs = net.fixed_refs()?;
    let k = net.agent_count();
    if k > MAX_CUT_VERTICES {
        return Err(Error::Capacity(format!(
            "cut enumeration is limited to {MAX_CUT_VERTICES} vertices, got {k}"
        )));
    }
    let required = required_independent(net);
    if k < 2 {
        return Ok(CutReport { holds: true, required, min_rank: usize::MAX, worst_cut: vec![] });
    }
    let mut min_rank = usize::MAX;
    let mut worst = 0u32;
    for mask in 1u32..(1u32 << (k - 1)) {
        // Bit b set means vertex b + 1 is on the far side.
        let far = |v: usize| v > 0 && mask & (1 << (v - 1)) != 0;
        let cols: Vec<&DVector<f64>> = net
            .graph
            .edges()
            .iter()
            .zip(refs)
            .filter(|(&(a, b), _)| far(a) != far(b))
            .map(|(_, y)| y)
            .collect();
        let r = rank_of_columns(&cols, net.n);
        if r < min_rank {
            min_rank = r;
            worst = mask;
            if r < required {
                break;
            }
        }
    }
    let worst_cut = (1..k).filter(|&v| worst & (1 << (v - 1)) != 0).collect();
    Ok(CutReport { holds: min_rank >= required, required, min_rank, worst_cut })
}

/// Rank structure of the three reference vectors of an SO(3) triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TriangleClass {
    /// Coplanar, pairwise independent: `C_o = C_s`, convergence not exponential.
    CaseA,
    /// Full rank: `C_o` has a second component besides `C_s`.
    CaseB,
    /// Some pair is parallel.
    Degenerate,
}

fn vec3(y: &DVector<f64>) -> Result<nalgebra::Vector3<f64>> {
    if y.len() != 3 {
        return Err(Error::dim(format!("expected a 3-vector, got length {}", y.len())));
    }
    Ok(nalgebra::Vector3::new(y[0], y[1], y[2]))
}

fn independent_pair(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> bool {
    a.cross(b).norm() > tol::RANK_RELATIVE * a.norm() * b.norm()
}

fn full_rank_triple(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>, c: &nalgebra::Vector3<f64>) -> bool {
    a.cross(b).dot(c).abs() > tol::RANK_RELATIVE * a.norm() * b.norm() * c.norm()
}

pub fn so3_triangle_class(y12: &DVector<f64>, y13: &DVector<f64>, y23: &DVector<f64>) -> Result<TriangleClass> {
    let (a, b, c) = (vec3(y12)?, vec3(y13)?, vec3(y23)?);
    if !(independent_pair(&a, &b) && independent_pair(&a, &c) && independent_pair(&b, &c)) {
        return Ok(TriangleClass::Degenerate);
    }
    Ok(if full_rank_triple(&a, &b, &c) { TriangleClass::CaseB } else { TriangleClass::CaseA })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum QuadCondition {
    /// The two cross-product ratios differ: `C_o = C_s`.
    Holds,
    RatiosEqual,
    /// Precondition failure: the listed edge vectors (0 = y12, 1 = y13,
    /// 2 = y14, 3 = y23, 4 = y24) are coplanar.
    CoplanarTriple { a: usize, b: usize, c: usize },
}

impl QuadCondition {
    pub fn holds(&self) -> bool {
        matches!(self, QuadCondition::Holds)
    }
}

/// The two ratios compared by the four-agent test, for edges
/// `{12, 13, 14, 23, 24}` on SO(3).
pub fn so3_quad_ratios(
    y12: &DVector<f64>,
    y13: &DVector<f64>,
    y14: &DVector<f64>,
    y23: &DVector<f64>,
    y24: &DVector<f64>,
) -> Result<(f64, f64)> {
    let (y12, y13, y14, y23, y24) = (vec3(y12)?, vec3(y13)?, vec3(y14)?, vec3(y23)?, vec3(y24)?);
    let n3 = y12.cross(&y13);
    let n4 = y12.cross(&y14);
    let (d3, d4) = (y23.dot(&n3), y24.dot(&n4));
    if d3.abs() <= tol::RANK_RELATIVE || d4.abs() <= tol::RANK_RELATIVE {
        return Err(Error::Degenerate("cross-product ratio has a vanishing denominator".into()));
    }
    Ok((y12.cross(&y23).dot(&n3) / d3, y12.cross(&y24).dot(&n4) / d4))
}

pub fn so3_quad_condition(
    y12: &DVector<f64>,
    y13: &DVector<f64>,
    y14: &DVector<f64>,
    y23: &DVector<f64>,
    y24: &DVector<f64>,
) -> Result<QuadCondition> {
    let v = [vec3(y12)?, vec3(y13)?, vec3(y14)?, vec3(y23)?, vec3(y24)?];
    for a in 0..5 {
        for b in (a + 1)..5 {
            for c in (b + 1)..5 {
                if !full_rank_triple(&v[a], &v[b], &v[c]) {
                    return Ok(QuadCondition::CoplanarTriple { a, b, c });
                }
            }
        }
    }
    let (r3, r4) = so3_quad_ratios(y12, y13, y14, y23, y24)?;
    let scale = r3.abs().max(r4.abs());
    Ok(if (r3 - r4).abs() > tol::RANK_RELATIVE * scale { QuadCondition::Holds } else { QuadCondition::RatiosEqual })
}

/// Hessian block matrix at `states`: blocks `-F_ij` off the diagonal with
/// `F_ij = Q_i^T M_ij Q_j`, and `sum_j F_ij` on it.
pub fn hessian_gg(states: &[Rotation], net: &NetworkConfig) -> Result<GeneralizedLaplacian> {
    check_states(states, net)?;
    let proj = net.projectors_at(None)?;
    let blocks: Vec<DMatrix<f64>> = net
        .graph
        .edges()
        .iter()
        .zip(&proj)
        .map(|(&(a, b), m)| states[a].matrix().transpose() * m * states[b].matrix())
        .collect();
    Ok(GeneralizedLaplacian::assemble(net.n, &net.graph, &blocks))
}

fn check_states(states: &[Rotation], net: &NetworkConfig) -> Result<()> {
    if states.len() != net.agent_count() {
        return Err(Error::dim(format!("{} states for {} agents", states.len(), net.agent_count())));
    }
    if let Some(q) = states.iter().find(|q| q.dim() != net.n) {
        return Err(Error::dim(format!("state of size {} in an n = {} network", q.dim(), net.n)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    ExpStable,
    Unstable,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub gradient_norm: f64,
    /// Eigenvalues of the Hessian restricted to tangent directions
    /// orthogonal to the common-rotation orbit, ascending.
    pub restricted_spectrum: Vec<f64>,
    pub verdict: Verdict,
}

impl EquilibriumReport {
    pub fn min_eigenvalue(&self) -> f64 {
        self.restricted_spectrum.first().copied().unwrap_or(f64::INFINITY)
    }
}

/// Second-order test at a candidate equilibrium of the output flow.
pub fn classify_equilibrium(states: &[Rotation], net: &NetworkConfig) -> Result<EquilibriumReport> {
    let lgg = hessian_gg(states, net)?;
    let gradient_norm = crate::dynamics::gradient_norm(&crate::dynamics::rhs_partial(states, net, None)?);
    let basis = so_basis(net.n)?;
    let d = basis.len();
    let k = net.agent_count();
    let h = restrict_to_tangent(&lgg, &basis);
    let h = (&h + h.transpose()) * 0.5;

    // Orthonormal complement of the invariance directions (E_a, ..., E_a).
    let mut w = DMatrix::zeros(k * d, d);
    let s = 1.0 / (k as f64).sqrt();
    for i in 0..k {
        for a in 0..d {
            w[(i * d + a, a)] = s;
        }
    }
    let p = DMatrix::identity(k * d, k * d) - &w * w.transpose();
    let pe = SymmetricEigen::new(p);
    let comp: Vec<DVector<f64>> = pe
        .eigenvalues
        .iter()
        .zip(pe.eigenvectors.column_iter())
        .filter(|(&ev, _)| ev > 0.5)
        .map(|(_, c)| c.clone_owned())
        .collect();
    let mut spectrum: Vec<f64> = if comp.is_empty() {
        Vec::new()
    } else {
        let c = DMatrix::from_columns(&comp);
        let r = c.transpose() * h * &c;
        SymmetricEigen::new((&r + r.transpose()) * 0.5).eigenvalues.iter().copied().collect()
    };
    spectrum.sort_by(|a, b| a.total_cmp(b));
    let min = spectrum.first().copied().unwrap_or(f64::INFINITY);
    let verdict = if min > tol::HESSIAN_EIG {
        Verdict::ExpStable
    } else if min < -tol::HESSIAN_EIG {
        Verdict::Unstable
    } else {
        Verdict::Degenerate
    };
    Ok(EquilibriumReport { gradient_norm, restricted_spectrum: spectrum, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcitationReport {
    #[serde(skip)]
    pub m_bar: DMatrix<f64>,
    pub min_eig: f64,
    pub holds: bool,
}

/// Trapezoid average of `y(t) y(t)^T` over `[0, window]` with `samples`
/// nodes; holds iff its smallest eigenvalue exceeds [`tol::PE_MIN_EIG`].
pub fn check_persistent_excitation(
    refs: &TimeVaryingRefs,
    edge: (usize, usize),
    window: f64,
    samples: usize,
) -> Result<ExcitationReport> {
    if window <= 0.0 || !window.is_finite() {
        return Err(Error::domain(format!("averaging window must be positive, got {window}")));
    }
    if samples < 2 {
        return Err(Error::domain("trapezoid quadrature needs at least two samples"));
    }
    let h = window / (samples - 1) as f64;
    let mut acc: Option<DMatrix<f64>> = None;
    for s in 0..samples {
        let y = refs.vector_at(edge, s as f64 * h)?;
        let w = if s == 0 || s == samples - 1 { 0.5 } else { 1.0 };
        let term = outer(&y) * (w * h);
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    let m_bar = acc.expect("samples >= 2") / window;
    let sym = (&m_bar + m_bar.transpose()) * 0.5;
    let min_eig = sym.symmetric_eigenvalues().min();
    Ok(ExcitationReport { m_bar, min_eig, holds: min_eig > tol::PE_MIN_EIG })
}

/// Fixed measurement errors `E_ij` per directed edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    errors: BTreeMap<(usize, usize), Rotation>,
    bound: f64,
}

impl PerturbationSet {
    pub fn new(errors: BTreeMap<(usize, usize), Rotation>, bound: f64) -> Result<Self> {
        for (&(i, j), e) in &errors {
            let dev = e.chordal_distance(&Rotation::identity(e.dim()));
            if dev >= bound {
                return Err(Error::domain(format!("E_({i},{j}) deviates by {dev:.3e} >= bound {bound:.3e}")));
            }
        }
        Ok(PerturbationSet { errors, bound })
    }

    pub fn identity(graph: &Graph, n: usize) -> Self {
        let errors = directed_edges(graph).map(|e| (e, Rotation::identity(n))).collect();
        PerturbationSet { errors, bound: f64::MIN_POSITIVE }
    }

    /// Independent SO(3) errors per directed edge with `||E - I||_F` uniform
    /// in `[lo, hi)` about uniformly random axes.
    pub fn sample<R: Rng + ?Sized>(graph: &Graph, lo: f64, hi: f64, rng: &mut R) -> Result<Self> {
        if !(0.0 <= lo && lo < hi) {
            return Err(Error::domain(format!("invalid perturbation band [{lo}, {hi})")));
        }
        let mut errors = BTreeMap::new();
        for e in directed_edges(graph) {
            let m = rng.random_range(lo..hi);
            errors.insert(e, sample_rotation_at_distance(m, rng)?);
        }
        Ok(PerturbationSet { errors, bound: hi })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Rotation> {
        self.errors.get(&(i, j))
    }

    pub fn max_deviation(&self) -> f64 {
        self.errors
            .values()
            .map(|e| e.chordal_distance(&Rotation::identity(e.dim())))
            .fold(0.0, f64::max)
    }

    /// Effective coupling blocks `E_ij M_ij E_ji^T` per edge `(i, j)`, `i < j`.
    pub fn coupling_blocks(&self, graph: &Graph, projectors: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
        graph
            .edges()
            .iter()
            .zip(projectors)
            .map(|(&(a, b), m)| {
                let (eab, eba) = match (self.get(a, b), self.get(b, a)) {
                    (Some(x), Some(y)) => (x, y),
                    _ => return Err(Error::config(format!("missing measurement error on edge ({a}, {b})"))),
                };
                Ok(eab.matrix() * m * eba.matrix().transpose())
            })
            .collect()
    }
}

fn directed_edges(graph: &Graph) -> impl Iterator<Item = (usize, usize)> + '_ {
    graph.edges().iter().flat_map(|&(a, b)| [(a, b), (b, a)])
}

/// Standard Laplacian, re-exported for callers comparing against `L^g`.
pub fn laplacian_of(net: &NetworkConfig) -> DMatrix<f64> {
    standard_laplacian(&net.graph)
}

#[cfg(test)]
mod tests;
