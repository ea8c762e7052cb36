//! Gradient flows on SO(n)^k and R^{nk}, cost functions and trajectory
//! diagnostics.
//!
//! Every SO(n) right-hand side returns the body-frame velocities `u_i`, so
//! that `dQ_i/dt = Q_i u_i`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::liegroup::{project_to_rotation_flagged, Rotation, SkewMatrix};
use crate::network::{generalized_laplacian, NetworkConfig, PerturbationSet, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowKind {
    /// Gradient descent of `f_s`; agents see each other's full state.
    FullState,
    /// Gradient descent of `f_o` with fixed references.
    PartialState,
    /// The partial-state law with time-varying references, scaled by epsilon.
    PartialStateTV,
    /// Gradient descent of `f_oe` under measurement errors.
    Perturbed,
    /// `dx/dt = -L^g x` on R^n.
    RnPartial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scheme {
    /// `Q <- Q exp(h u(Q))`.
    LieEuler,
    /// Fourth-order commutator-free Lie group method (classic RK4 on R^n).
    #[default]
    Rk4,
}

#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub kind: FlowKind,
    /// Gain multiplying the right-hand side.
    pub epsilon: f64,
    pub step: f64,
    pub horizon: f64,
    /// Record diagnostics every this many steps (the final state is always recorded).
    pub record_every: usize,
    pub scheme: Scheme,
    pub perturbations: Option<PerturbationSet>,
    /// Stop once the norm of the unscaled right-hand side drops below this.
    pub gradient_tol: Option<f64>,
    /// Agents held fixed (zero input).
    pub held: Vec<usize>,
}

impl FlowSpec {
    pub fn new(kind: FlowKind, step: f64, horizon: f64) -> Self {
        FlowSpec {
            kind,
            epsilon: 1.0,
            step,
            horizon,
            record_every: 1,
            scheme: Scheme::Rk4,
            perturbations: None,
            gradient_tol: None,
            held: Vec::new(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_perturbations(mut self, p: PerturbationSet) -> Self {
        self.perturbations = Some(p);
        self
    }

    pub fn with_gradient_tol(mut self, tol: f64) -> Self {
        self.gradient_tol = Some(tol);
        self
    }

    pub fn with_held(mut self, held: Vec<usize>) -> Self {
        self.held = held;
        self
    }

    pub fn validate(&self, net: &NetworkConfig) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::config(format!("step must be positive, got {}", self.step)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every must be at least 1"));
        }
        if (self.kind == FlowKind::Perturbed) != self.perturbations.is_some() {
            return Err(Error::config("measurement errors are given iff the flow is perturbed"));
        }
        if (self.kind == FlowKind::RnPartial) != (net.space() == Space::Rn) {
            return Err(Error::config(format!("flow {:?} does not match state space {:?}", self.kind, net.space())));
        }
        if net.is_time_varying() && matches!(self.kind, FlowKind::FullState | FlowKind::Perturbed) {
            return Err(Error::config(format!("flow {:?} needs fixed reference vectors", self.kind)));
        }
        if let Some(&i) = self.held.iter().find(|&&i| i >= net.agent_count()) {
            return Err(Error::config(format!("held agent {i} does not exist")));
        }
        Ok(())
    }

    /// Gradient flows with fixed references, along which the driving cost
    /// cannot increase.
    fn is_monotone(&self, net: &NetworkConfig) -> bool {
        !net.is_time_varying() && self.kind != FlowKind::PartialStateTV
    }
}

/// Body-frame velocities for edge couplings `F_e`: for edge `(a, b)`,
/// `u_a += sk(Q_a^T F_e Q_b)` and `u_b += sk(Q_b^T F_e^T Q_a)`.
fn coupled_rhs(states: &[Rotation], graph: &Graph, blocks: &[DMatrix<f64>]) -> Vec<SkewMatrix> {
    let n = states.first().map_or(0, |q| q.dim());
    let mut u = vec![SkewMatrix::zeros(n); states.len()];
    for (&(a, b), f) in graph.edges().iter().zip(blocks) {
        let x = states[a].matrix().transpose() * f * states[b].matrix();
        let s = SkewMatrix::from_raw_antisymmetrized(x);
        u[a].add_scaled_assign(&s, 1.0);
        u[b].add_scaled_assign(&s, -1.0);
    }
    u
}

/// `sum_e (c - tr(Q_a^T F_e Q_b))`.
fn coupled_cost(states: &[Rotation], graph: &Graph, blocks: &[DMatrix<f64>], c: f64) -> f64 {
    graph
        .edges()
        .iter()
        .zip(blocks)
        .map(|(&(a, b), f)| c - states[a].matrix().dot(&(f * states[b].matrix())))
        .sum()
}

fn check_states(states: &[Rotation], net: &NetworkConfig) -> Result<()> {
    if net.space() != Space::SOn {
        return Err(Error::Usage("rotation states need an SO(n) network".into()));
    }
    if states.len() != net.agent_count() {
        return Err(Error::dim(format!("{} states for {} agents", states.len(), net.agent_count())));
    }
    if let Some(q) = states.iter().find(|q| q.dim() != net.dim()) {
        return Err(Error::dim(format!("state of size {} in an n = {} network", q.dim(), net.dim())));
    }
    Ok(())
}

fn check_vectors(xs: &[DVector<f64>], net: &NetworkConfig) -> Result<()> {
    if xs.len() != net.agent_count() {
        return Err(Error::dim(format!("{} states for {} agents", xs.len(), net.agent_count())));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != net.dim()) {
        return Err(Error::dim(format!("state of length {} in an n = {} network", x.len(), net.dim())));
    }
    Ok(())
}

fn identity_blocks(net: &NetworkConfig) -> Vec<DMatrix<f64>> {
    vec![DMatrix::identity(net.dim(), net.dim()); net.graph().edge_count()]
}

/// Partial-state law `u_i = sum_j sk(Q_i^T M_ij Q_j)`, minus the gradient of `f_o`.
pub fn rhs_partial(states: &[Rotation], net: &NetworkConfig, t: Option<f64>) -> Result<Vec<SkewMatrix>> {
    check_states(states, net)?;
    Ok(coupled_rhs(states, net.graph(), &net.projectors_at(t)?))
}

/// Full-state law `u_i = sum_j sk(Q_i^T Q_j)`, minus the gradient of `f_s`.
pub fn rhs_full(states: &[Rotation], net: &NetworkConfig) -> Result<Vec<SkewMatrix>> {
    check_states(states, net)?;
    Ok(coupled_rhs(states, net.graph(), &identity_blocks(net)))
}

/// Perturbed-output law `u_i = sum_j sk(Q_i^T E_ij M_ij E_ji^T Q_j)`, minus
/// the gradient of `f_oe`.
pub fn rhs_perturbed(states: &[Rotation], net: &NetworkConfig, perturbations: &PerturbationSet) -> Result<Vec<SkewMatrix>> {
    check_states(states, net)?;
    let blocks = perturbations.coupling_blocks(net.graph(), &net.projectors_at(None)?)?;
    Ok(coupled_rhs(states, net.graph(), &blocks))
}

/// `dx/dt = -L^g x`, per agent.
pub fn rhs_rn(xs: &[DVector<f64>], net: &NetworkConfig, t: Option<f64>) -> Result<Vec<DVector<f64>>> {
    check_vectors(xs, net)?;
    let lg = generalized_laplacian(net, t)?;
    Ok(laplacian_rhs(lg.matrix(), xs))
}

fn laplacian_rhs(lg: &DMatrix<f64>, xs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = xs.first().map_or(0, |x| x.len());
    let stacked = DVector::from_iterator(xs.len() * n, xs.iter().flat_map(|x| x.iter().copied()));
    let dx = -(lg * stacked);
    (0..xs.len()).map(|i| dx.rows(i * n, n).clone_owned()).collect()
}

/// Euclidean norm of the stacked velocities.
pub fn gradient_norm(u: &[SkewMatrix]) -> f64 {
    u.iter().map(|x| x.norm().powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Costs {
    /// `sum (n - tr(Q_i^T Q_j))`, or `1/2 sum |x_i - x_j|^2` on R^n.
    pub f_s: f64,
    /// `sum (1 - tr(Q_i^T M_ij Q_j))`, or `g_o` on R^n.
    pub f_o: f64,
    pub f_oe: Option<f64>,
}

/// Trace forms of the costs on SO(n)^k.
pub fn evaluate_costs(
    states: &[Rotation],
    net: &NetworkConfig,
    t: Option<f64>,
    perturbations: Option<&PerturbationSet>,
) -> Result<Costs> {
    check_states(states, net)?;
    let g = net.graph();
    let proj = net.projectors_at(t)?;
    let f_s = coupled_cost(states, g, &identity_blocks(net), net.dim() as f64);
    let f_o = coupled_cost(states, g, &proj, 1.0);
    let f_oe = match perturbations {
        Some(p) => Some(coupled_cost(states, g, &p.coupling_blocks(g, &proj)?, 1.0)),
        None => None,
    };
    Ok(Costs { f_s, f_o, f_oe })
}

/// The same costs as half squared distances between states and between
/// outputs `Q_i^T y_ij` (resp. `Q_i^T E_ij y_ij`).
pub fn evaluate_costs_norm_form(
    states: &[Rotation],
    net: &NetworkConfig,
    t: Option<f64>,
    perturbations: Option<&PerturbationSet>,
) -> Result<Costs> {
    check_states(states, net)?;
    let refs = net.refs_at(t)?;
    let mut f_s = 0.0;
    let mut f_o = 0.0;
    let mut f_oe = perturbations.map(|_| 0.0);
    for (&(a, b), y) in net.graph().edges().iter().zip(&refs) {
        let (qa, qb) = (states[a].matrix(), states[b].matrix());
        f_s += 0.5 * (qa - qb).norm_squared();
        f_o += 0.5 * (qa.transpose() * y - qb.transpose() * y).norm_squared();
        if let (Some(acc), Some(p)) = (f_oe.as_mut(), perturbations) {
            let (eab, eba) = match (p.get(a, b), p.get(b, a)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::config(format!("missing measurement error on edge ({a}, {b})"))),
            };
            *acc += 0.5 * (qa.transpose() * eab.matrix() * y - qb.transpose() * eba.matrix() * y).norm_squared();
        }
    }
    Ok(Costs { f_s, f_o, f_oe })
}

/// `f_s = 1/2 sum |x_i - x_j|^2` and `f_o = g_o = 1/2 sum (y_ij^T (x_i - x_j))^2`.
pub fn evaluate_costs_rn(xs: &[DVector<f64>], net: &NetworkConfig, t: Option<f64>) -> Result<Costs> {
    check_vectors(xs, net)?;
    let refs = net.refs_at(t)?;
    let mut f_s = 0.0;
    let mut f_o = 0.0;
    for (&(a, b), y) in net.graph().edges().iter().zip(&refs) {
        let d = &xs[a] - &xs[b];
        f_s += 0.5 * d.norm_squared();
        f_o += 0.5 * y.dot(&d).powi(2);
    }
    Ok(Costs { f_s, f_o, f_oe: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsensusDistance {
    pub value: f64,
    /// `sum_i Q_i` was rank deficient; the minimizer is not unique.
    pub degenerate: bool,
}

/// `min_Q sqrt(sum_i |Q_i - Q|_F^2)` with `Q = proj(sum_i Q_i)`.
pub fn dist_to_consensus(states: &[Rotation]) -> Result<ConsensusDistance> {
    let first = states.first().ok_or_else(|| Error::dim("no states"))?;
    let n = first.dim();
    let mut sum = DMatrix::zeros(n, n);
    for q in states {
        if q.dim() != n {
            return Err(Error::dim("states of different sizes"));
        }
        sum += q.matrix();
    }
    let (center, degenerate) = project_to_rotation_flagged(&sum);
    let value = states.iter().map(|q| (q.matrix() - center.matrix()).norm_squared()).sum::<f64>().sqrt();
    Ok(ConsensusDistance { value, degenerate })
}

/// `sqrt(sum_i |x_i - mean|^2)`.
pub fn dist_to_consensus_rn(xs: &[DVector<f64>]) -> f64 {
    let Some(first) = xs.first() else { return 0.0 };
    let mean = xs.iter().fold(DVector::zeros(first.len()), |acc, x| acc + x) / xs.len() as f64;
    xs.iter().map(|x| (x - &mean).norm_squared()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct Sample {
    pub t: f64,
    pub f_s: f64,
    pub f_o: f64,
    pub f_oe: Option<f64>,
    pub dist_cs: f64,
    pub ortho_err: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub enum AgentStates {
    Rotations(Vec<Rotation>),
    Vectors(Vec<DVector<f64>>),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Agent states at each sample.
    pub states: Vec<AgentStates>,
    /// Stopped early because the gradient tolerance was reached.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostField {
    FS,
    FO,
    FOe,
    DistCs,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn field(&self, field: CostField) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match field {
                CostField::FS => s.f_s,
                CostField::FO => s.f_o,
                CostField::FOe => s.f_oe.unwrap_or(f64::NAN),
                CostField::DistCs => s.dist_cs,
            })
            .collect()
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectories hold at least the initial sample")
    }

    pub fn final_rotations(&self) -> Option<&[Rotation]> {
        match self.states.last()? {
            AgentStates::Rotations(q) => Some(q),
            AgentStates::Vectors(_) => None,
        }
    }

    pub fn final_vectors(&self) -> Option<&[DVector<f64>]> {
        match self.states.last()? {
            AgentStates::Vectors(x) => Some(x),
            AgentStates::Rotations(_) => None,
        }
    }

    pub fn max_ortho_err(&self) -> f64 {
        self.samples.iter().map(|s| s.ortho_err).fold(0.0, f64::max)
    }

    /// Header `t,f_s,f_o,f_oe,dist_cs,ortho_err`; 17 significant digits.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,f_s,f_o,f_oe,dist_cs,ortho_err\n");
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t,
                s.f_s,
                s.f_o,
                s.f_oe.unwrap_or(f64::NAN),
                s.dist_cs,
                s.ortho_err
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    /// Slope of `ln f` against `t`.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
}

/// Least-squares fit of `ln v` against `t`, truncated at the first
/// nonpositive value.
pub fn fit_log_linear(ts: &[f64], vs: &[f64]) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = ts
        .iter()
        .zip(vs)
        .take_while(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::domain(format!("log-linear fit needs 3 positive samples, got {}", pts.len())));
    }
    let m = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), &(t, y)| (a + t / m, b + y / m));
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in &pts {
        stt += (t - mt).powi(2);
        sty += (t - mt) * (y - my);
        syy += (y - my).powi(2);
    }
    if stt == 0.0 {
        return Err(Error::domain("log-linear fit needs distinct times"));
    }
    let slope = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Ok(DecayFit { slope, intercept: my - slope * mt, r2, points: pts.len() })
}

/// Exponential-rate fit of a trajectory field over `window = (t0, t1)`.
pub fn estimate_decay_rate(traj: &Trajectory, field: CostField, window: (f64, f64)) -> Result<DecayFit> {
    let (ts, vs): (Vec<f64>, Vec<f64>) = traj
        .times()
        .into_iter()
        .zip(traj.field(field))
        .filter(|&(t, _)| t >= window.0 && t <= window.1)
        .unzip();
    fit_log_linear(&ts, &vs)
}

/// How the SO(n) right-hand side obtains its edge couplings.
enum Coupling<'a> {
    Static(Vec<DMatrix<f64>>),
    TimeVarying(&'a NetworkConfig),
}

impl Coupling<'_> {
    fn rhs(&self, graph: &Graph, states: &[Rotation], t: f64) -> Result<Vec<SkewMatrix>> {
        match self {
            Coupling::Static(b) => Ok(coupled_rhs(states, graph, b)),
            Coupling::TimeVarying(net) => Ok(coupled_rhs(states, graph, &net.projectors_at(Some(t))?)),
        }
    }
}

fn step_count(spec: &FlowSpec) -> usize {
    if spec.horizon == 0.0 {
        0
    } else {
        (spec.horizon / spec.step - 1e-9).ceil().max(1.0) as usize
    }
}

fn integration_error(time: f64, reason: String, partial: Trajectory) -> Error {
    Error::Integration { time, reason, partial: Some(Box::new(partial)) }
}

/// Integrates an SO(n) flow from `init` over `[0, spec.horizon]`.
///
/// Steps are products of exponentials of skew matrices, so states stay on
/// the group up to roundoff. In fixed-reference gradient modes an increase
/// of the driving cost by more than `1e-8` aborts the run.
pub fn integrate(init: &[Rotation], net: &NetworkConfig, spec: &FlowSpec) -> Result<Trajectory> {
    spec.validate(net)?;
    check_states(init, net)?;
    let graph = net.graph();
    let coupling = match spec.kind {
        FlowKind::FullState => Coupling::Static(identity_blocks(net)),
        FlowKind::PartialState | FlowKind::PartialStateTV if net.is_time_varying() => Coupling::TimeVarying(net),
        FlowKind::PartialState | FlowKind::PartialStateTV => Coupling::Static(net.projectors_at(None)?),
        FlowKind::Perturbed => {
            let p = spec.perturbations.as_ref().expect("validated");
            Coupling::Static(p.coupling_blocks(graph, &net.projectors_at(None)?)?)
        }
        FlowKind::RnPartial => unreachable!("validated"),
    };
    let pert = spec.perturbations.as_ref();
    let monotone = spec.is_monotone(net);
    let eps = spec.epsilon;
    let held = &spec.held;
    let field = |states: &[Rotation], t: f64| -> Result<Vec<SkewMatrix>> {
        let mut u = coupling.rhs(graph, states, t)?;
        for &i in held {
            u[i] = SkewMatrix::zeros(net.dim());
        }
        Ok(u)
    };
    let driving_cost = |c: &Costs| match spec.kind {
        FlowKind::FullState => c.f_s,
        FlowKind::Perturbed => c.f_oe.expect("perturbed costs"),
        _ => c.f_o,
    };
    let sample = |states: &[Rotation], t: f64, u: &[SkewMatrix]| -> Result<(Sample, Costs)> {
        let costs = evaluate_costs(states, net, net.is_time_varying().then_some(t), pert)?;
        let s = Sample {
            t,
            f_s: costs.f_s,
            f_o: costs.f_o,
            f_oe: costs.f_oe,
            dist_cs: dist_to_consensus(states)?.value,
            ortho_err: states.iter().map(|q| q.orthogonality_residual()).fold(0.0, f64::max),
            gradient_norm: gradient_norm(u),
        };
        Ok((s, costs))
    };

    let mut traj = Trajectory { samples: Vec::new(), states: Vec::new(), converged: false };
    let mut q: Vec<Rotation> = init.to_vec();
    let mut t = 0.0;
    let mut u1 = field(&q, t)?;
    let (s0, c0) = sample(&q, t, &u1)?;
    let mut prev_cost = driving_cost(&c0);
    traj.samples.push(s0);
    traj.states.push(AgentStates::Rotations(q.clone()));
    let steps = step_count(spec);
    let mut recorded_last = true;

    for step in 0..steps {
        if let Some(tol) = spec.gradient_tol {
            if gradient_norm(&u1) < tol {
                traj.converged = true;
                break;
            }
        }
        let h = if step + 1 == steps { spec.horizon - t } else { spec.step };
        let hs = eps * h;
        let next: Vec<Rotation> = match spec.scheme {
            Scheme::LieEuler => q.iter().zip(&u1).map(|(qi, ui)| qi.step(&ui.scale(hs))).collect(),
            Scheme::Rk4 => {
                let y2: Vec<Rotation> = q.iter().zip(&u1).map(|(qi, ui)| qi.step(&ui.scale(0.5 * hs))).collect();
                let u2 = field(&y2, t + 0.5 * h)?;
                let y3: Vec<Rotation> = q.iter().zip(&u2).map(|(qi, ui)| qi.step(&ui.scale(0.5 * hs))).collect();
                let u3 = field(&y3, t + 0.5 * h)?;
                let y4: Vec<Rotation> = y2
                    .iter()
                    .zip(u1.iter().zip(&u3))
                    .map(|(yi, (a, c))| yi.step(&c.scale(hs).add(&a.scale(-0.5 * hs))))
                    .collect();
                let u4 = field(&y4, t + h)?;
                (0..q.len())
                    .map(|i| {
                        let mut first = u1[i].scale(0.25 * hs);
                        first.add_scaled_assign(&u2[i], hs / 6.0);
                        first.add_scaled_assign(&u3[i], hs / 6.0);
                        first.add_scaled_assign(&u4[i], -hs / 12.0);
                        let mut second = u1[i].scale(-hs / 12.0);
                        second.add_scaled_assign(&u2[i], hs / 6.0);
                        second.add_scaled_assign(&u3[i], hs / 6.0);
                        second.add_scaled_assign(&u4[i], 0.25 * hs);
                        q[i].step(&first).step(&second)
                    })
                    .collect()
            }
        };
        let t_next = if step + 1 == steps { spec.horizon } else { (step + 1) as f64 * spec.step };
        if next.iter().any(|r| r.matrix().iter().any(|x| !x.is_finite())) {
            if !recorded_last {
                let (s, _) = sample(&q, t, &u1)?;
                traj.samples.push(s);
                traj.states.push(AgentStates::Rotations(q.clone()));
            }
            return Err(integration_error(t_next, "non-finite state".into(), traj));
        }
        q = next;
        t = t_next;
        u1 = field(&q, t)?;
        let record = (step + 1) % spec.record_every == 0 || step + 1 == steps;
        if monotone || record {
            let (s, c) = sample(&q, t, &u1)?;
            let cost = driving_cost(&c);
            if !cost.is_finite() {
                return Err(integration_error(t, "non-finite cost".into(), traj));
            }
            if monotone && cost > prev_cost + 1e-8 {
                return Err(integration_error(
                    t,
                    format!("cost increased from {prev_cost:.6e} to {cost:.6e}; reduce the step size"),
                    traj,
                ));
            }
            prev_cost = cost;
            recorded_last = record;
            if record {
                traj.samples.push(s);
                traj.states.push(AgentStates::Rotations(q.clone()));
            }
        } else {
            recorded_last = false;
        }
    }
    if !recorded_last {
        let (s, _) = sample(&q, t, &u1)?;
        traj.samples.push(s);
        traj.states.push(AgentStates::Rotations(q));
    }
    Ok(traj)
}

/// Integrates `dx/dt = -epsilon L^g(t) x` with classic RK4.
pub fn integrate_rn(init: &[DVector<f64>], net: &NetworkConfig, spec: &FlowSpec) -> Result<Trajectory> {
    spec.validate(net)?;
    check_vectors(init, net)?;
    let eps = spec.epsilon;
    let fixed = if net.is_time_varying() { None } else { Some(generalized_laplacian(net, None)?.matrix().clone()) };
    let lg_at = |t: f64| -> Result<DMatrix<f64>> {
        match &fixed {
            Some(m) => Ok(m.clone()),
            None => Ok(generalized_laplacian(net, Some(t))?.matrix().clone()),
        }
    };
    let held = &spec.held;
    let field = |xs: &DVector<f64>, t: f64| -> Result<DVector<f64>> {
        let mut dx = -(lg_at(t)? * xs) * eps;
        let n = net.dim();
        for &i in held {
            dx.rows_mut(i * n, n).fill(0.0);
        }
        Ok(dx)
    };
    let n = net.dim();
    let k = net.agent_count();
    let split = |x: &DVector<f64>| -> Vec<DVector<f64>> { (0..k).map(|i| x.rows(i * n, n).clone_owned()).collect() };
    let tv = net.is_time_varying();
    let sample = |x: &DVector<f64>, t: f64| -> Result<Sample> {
        let xs = split(x);
        let c = evaluate_costs_rn(&xs, net, tv.then_some(t))?;
        let dx = -(lg_at(t)? * x);
        Ok(Sample {
            t,
            f_s: c.f_s,
            f_o: c.f_o,
            f_oe: None,
            dist_cs: dist_to_consensus_rn(&xs),
            ortho_err: 0.0,
            gradient_norm: dx.norm(),
        })
    };

    let mut x = DVector::from_iterator(k * n, init.iter().flat_map(|v| v.iter().copied()));
    let mut t = 0.0;
    let mut traj = Trajectory { samples: vec![sample(&x, t)?], states: vec![AgentStates::Vectors(init.to_vec())], converged: false };
    let mut prev = traj.samples[0].f_o;
    let monotone = spec.is_monotone(net);
    let steps = step_count(spec);
    for step in 0..steps {
        let h = if step + 1 == steps { spec.horizon - t } else { spec.step };
        let k1 = field(&x, t)?;
        if let Some(tol) = spec.gradient_tol {
            if k1.norm() / eps < tol {
                traj.converged = true;
                break;
            }
        }
        let k2 = field(&(&x + &k1 * (0.5 * h)), t + 0.5 * h)?;
        let k3 = field(&(&x + &k2 * (0.5 * h)), t + 0.5 * h)?;
        let k4 = field(&(&x + &k3 * h), t + h)?;
        let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        t = if step + 1 == steps { spec.horizon } else { (step + 1) as f64 * spec.step };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(integration_error(t, "non-finite state".into(), traj));
        }
        x = next;
        let record = (step + 1) % spec.record_every == 0 || step + 1 == steps;
        if record || monotone {
            let s = sample(&x, t)?;
            if monotone && s.f_o > prev + 1e-8 {
                return Err(integration_error(t, format!("cost increased from {prev:.6e} to {:.6e}", s.f_o), traj));
            }
            prev = s.f_o;
            if record {
                traj.samples.push(s);
                traj.states.push(AgentStates::Vectors(split(&x)));
            }
        }
    }
    if traj.samples.last().map(|s| s.t) != Some(t) {
        traj.samples.push(sample(&x, t)?);
        traj.states.push(AgentStates::Vectors(split(&x)));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests;
