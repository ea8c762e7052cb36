//! Undirected interaction graphs, classical Laplacian objects and the
//! four-vertex collapse procedure deciding whether generic reference vectors
//! force output synchronization to be state synchronization on SO(3).
//!
//! Vertices are 0-based in the API; the JSON form uses 1-based indices.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple undirected graph; edges stored as `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    k: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphJson {
    k: usize,
    edges: Vec<[usize; 2]>,
}

impl Graph {
    /// Canonicalizes edge orientation and order. Rejects self-loops,
    /// duplicates and out-of-range endpoints.
    pub fn new(k: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::config(format!("self-loop at vertex {a}")));
            }
            if a >= k || b >= k {
                return Err(Error::config(format!("edge ({a}, {b}) out of range for k = {k}")));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::config(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Graph { k, edges: set.into_iter().collect() })
    }

    pub fn complete(k: usize) -> Self {
        let edges = (0..k).flat_map(|i| ((i + 1)..k).map(move |j| (i, j))).collect();
        Graph { k, edges }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(s)?;
        Self::from_one_based(raw.k, &raw.edges)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json_value()).expect("graph serializes")
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let raw = GraphJson { k: self.k, edges: self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect() };
        serde_json::to_value(raw).expect("graph serializes")
    }

    pub fn from_json_value(v: &serde_json::Value) -> Result<Self> {
        let raw: GraphJson = serde_json::from_value(v.clone())?;
        Self::from_one_based(raw.k, &raw.edges)
    }

    fn from_one_based(k: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut zero = Vec::with_capacity(edges.len());
        for &[a, b] in edges {
            if a == 0 || b == 0 {
                return Err(Error::config("graph JSON uses 1-based vertex indices"));
            }
            zero.push((a - 1, b - 1));
        }
        Self::new(k, zero)
    }

    pub fn vertex_count(&self) -> usize {
        self.k
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Index of the (unordered) edge `{a, b}` in [`Graph::edges`].
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&(a.min(b), a.max(b))).ok()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edge_index(a, b).is_some()
    }

    /// Neighbors of each vertex paired with the connecting edge index.
    pub fn neighbor_lists(&self) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![Vec::new(); self.k];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            out[a].push((b, e));
            out[b].push((a, e));
        }
        out
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.k, self.k);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Same graph with vertex `v` renamed to `perm[v]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::dim("permutation length must equal vertex count"));
        }
        Self::new(self.k, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }
}

/// `k x #E` incidence matrix: column `e` has `-1` at the lower endpoint and
/// `+1` at the upper endpoint.
pub fn incidence_matrix(g: &Graph) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(g.k, g.edges.len());
    for (e, &(lo, hi)) in g.edges.iter().enumerate() {
        b[(lo, e)] = -1.0;
        b[(hi, e)] = 1.0;
    }
    b
}

/// `L = D - A`.
pub fn standard_laplacian(g: &Graph) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(g.k, g.k);
    for &(i, j) in &g.edges {
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
    }
    l
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub count: usize,
    /// Component label per vertex, numbered in order of first appearance.
    pub labels: Vec<usize>,
}

pub fn connected_components(g: &Graph) -> Components {
    let mut parent: Vec<usize> = (0..g.k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in &g.edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut relabel = BTreeMap::new();
    let mut labels = Vec::with_capacity(g.k);
    for v in 0..g.k {
        let r = find(&mut parent, v);
        let next = relabel.len();
        labels.push(*relabel.entry(r).or_insert(next));
    }
    Components { count: relabel.len(), labels }
}

/// Multigraph on a subset of the original vertex labels. Only used while
/// collapsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct MultiGraph {
    vertices: BTreeSet<usize>,
    /// Multiplicity per unordered pair `(a, b)`, `a < b`.
    edges: BTreeMap<(usize, usize), usize>,
}

impl MultiGraph {
    fn from_graph(g: &Graph) -> Self {
        MultiGraph {
            vertices: (0..g.k).collect(),
            edges: g.edges.iter().map(|&e| (e, 1)).collect(),
        }
    }

    fn has(&self, a: usize, b: usize) -> bool {
        self.edges.contains_key(&(a.min(b), a.max(b)))
    }

    /// Merges `group` into its smallest member; internal edges vanish and
    /// parallel edges accumulate multiplicity.
    fn merge(&mut self, group: &[usize]) -> usize {
        let into = *group.iter().min().expect("non-empty group");
        let members: BTreeSet<usize> = group.iter().copied().collect();
        let mut next = BTreeMap::new();
        for (&(a, b), &mult) in &self.edges {
            let a2 = if members.contains(&a) { into } else { a };
            let b2 = if members.contains(&b) { into } else { b };
            if a2 == b2 {
                continue;
            }
            *next.entry((a2.min(b2), a2.max(b2))).or_insert(0) += mult;
        }
        self.edges = next;
        for v in &members {
            if *v != into {
                self.vertices.remove(v);
            }
        }
        into
    }

    fn find_pattern(&self) -> Option<[usize; 4]> {
        let vs: Vec<usize> = self.vertices.iter().copied().collect();
        for &i in &vs {
            for &l in &vs {
                if l == i || !self.has(i, l) {
                    continue;
                }
                for &m in &vs {
                    if m == i || m == l || !self.has(i, m) || !self.has(m, l) {
                        continue;
                    }
                    for &p in &vs {
                        if p == i || p == l || p == m {
                            continue;
                        }
                        if self.has(p, l) && self.has(p, m) {
                            return Some([i, l, m, p]);
                        }
                    }
                }
            }
        }
        None
    }

    fn find_multi_edge(&self) -> Option<(usize, usize)> {
        self.edges.iter().find(|(_, &mult)| mult > 1).map(|(&e, _)| e)
    }

    fn max_multiplicity(&self) -> usize {
        self.edges.values().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CollapseStep {
    /// Four vertices `i, l, m, p` with edges `il, im, pl, pm, ml` merged.
    Pattern { i: usize, l: usize, m: usize, p: usize, into: usize },
    /// Two vertices joined by parallel edges merged.
    MultiEdge { a: usize, b: usize, multiplicity: usize, into: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CollapseReport {
    /// True iff the graph reduced to a single vertex.
    pub reducible: bool,
    pub trace: Vec<CollapseStep>,
    /// Surviving vertex labels (original 0-based indices).
    pub final_vertices: Vec<usize>,
    /// Surviving edges with multiplicity.
    pub final_edges: Vec<(usize, usize, usize)>,
    /// Largest multiplicity observed at any point.
    pub peak_multiplicity: usize,
}

/// Runs the collapse procedure to a fixed point. The scan is lexicographic
/// over `(i, l, m, p)` and the first match is collapsed.
pub fn collapse_analysis(g: &Graph) -> CollapseReport {
    let mut mg = MultiGraph::from_graph(g);
    let mut trace = Vec::new();
    let mut peak = mg.max_multiplicity();
    while let Some([i, l, m, p]) = mg.find_pattern() {
        let into = mg.merge(&[i, l, m, p]);
        trace.push(CollapseStep::Pattern { i, l, m, p, into });
        peak = peak.max(mg.max_multiplicity());
        while let Some((a, b)) = mg.find_multi_edge() {
            let multiplicity = mg.edges[&(a, b)];
            let into = mg.merge(&[a, b]);
            trace.push(CollapseStep::MultiEdge { a, b, multiplicity, into });
            peak = peak.max(mg.max_multiplicity());
        }
    }
    CollapseReport {
        reducible: mg.vertices.len() == 1,
        trace,
        final_vertices: mg.vertices.iter().copied().collect(),
        final_edges: mg.edges.iter().map(|(&(a, b), &m)| (a, b, m)).collect(),
        peak_multiplicity: peak,
    }
}

/// The two seven-vertex graphs used to contrast the collapse outcome: two
/// four-cliques-minus-a-diagonal sharing a vertex, with (`with_bridge =
/// true`) or without the diagonal of the right-hand diamond.
///
/// Labels: 0 = left tip, 1 = top-left, 2 = bottom-left, 3 = center,
/// 4 = top-right, 5 = bottom-right, 6 = right tip.
pub fn diamond_chain(with_bridge: bool) -> Graph {
    let mut edges = vec![(0, 1), (0, 2), (0, 3), (1, 3), (2, 3), (3, 4), (3, 5), (4, 6), (5, 6)];
    if with_bridge {
        edges.push((4, 5));
    }
    Graph::new(7, edges).expect("static graph is valid")
}
