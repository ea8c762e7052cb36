//! NetworkConfig JSON: `{"n", "space", "graph", "refs": {"mode": ...}}`.
//! Edge keys are `"i-j"` and vertex keys `"i"`, both 1-based.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{NetworkConfig, PathGenerator, QuasiPeriodic, RefAssignment, Space, TimeVaryingRefs};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkJson {
    n: usize,
    space: Space,
    graph: Value,
    refs: RefsJson,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum RefsJson {
    Explicit {
        vectors: BTreeMap<String, Vec<f64>>,
    },
    Generic {
        seed: u64,
    },
    RelativePosition {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchors: Option<BTreeMap<String, Vec<f64>>>,
    },
    TimeVarying {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchors: Option<BTreeMap<String, Vec<QuasiPeriodic>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        edges: Option<BTreeMap<String, Vec<QuasiPeriodic>>>,
    },
}

fn parse_vertex(key: &str, k: usize) -> Result<usize> {
    let v: usize = key.trim().parse().map_err(|_| Error::config(format!("bad vertex key {key:?}")))?;
    if v == 0 || v > k {
        return Err(Error::config(format!("vertex key {key:?} outside 1..={k}")));
    }
    Ok(v - 1)
}

fn parse_edge(key: &str, graph: &Graph) -> Result<(usize, usize)> {
    let (a, b) = key.split_once('-').ok_or_else(|| Error::config(format!("edge key {key:?} is not of the form \"i-j\"")))?;
    let k = graph.vertex_count();
    let (a, b) = (parse_vertex(a, k)?, parse_vertex(b, k)?);
    let e = (a.min(b), a.max(b));
    if !graph.has_edge(e.0, e.1) {
        return Err(Error::config(format!("edge key {key:?} is not an edge of the graph")));
    }
    Ok(e)
}

fn edge_key((a, b): (usize, usize)) -> String {
    format!("{}-{}", a + 1, b + 1)
}

fn vertex_map<T>(map: BTreeMap<String, T>, k: usize, what: &str) -> Result<Vec<T>> {
    let mut slots: Vec<Option<T>> = (0..k).map(|_| None).collect();
    for (key, v) in map {
        let i = parse_vertex(&key, k)?;
        if slots[i].replace(v).is_some() {
            return Err(Error::config(format!("duplicate {what} for vertex {key}")));
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::config(format!("missing {what} for vertex {}", i + 1))))
        .collect()
}

fn normalized(v: Vec<f64>, n: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != n {
        return Err(Error::dim(format!("{what} has length {}, expected {n}", v.len())));
    }
    let v = DVector::from_vec(v);
    let norm = v.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::config(format!("{what} must be a nonzero finite vector")));
    }
    Ok(v / norm)
}

impl NetworkConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        Self::from_json_value(&v)
    }

    /// Parses and validates a config. Explicit vectors are normalized on load.
    pub fn from_json_value(v: &Value) -> Result<Self> {
        let raw: NetworkJson =
            serde_json::from_value(v.clone()).map_err(|e| Error::config(format!("network config: {e}")))?;
        let graph = Graph::from_json_value(&raw.graph)?;
        let (n, space, k) = (raw.n, raw.space, graph.vertex_count());
        match raw.refs {
            RefsJson::Explicit { vectors } => {
                let mut refs: Vec<Option<DVector<f64>>> = vec![None; graph.edge_count()];
                for (key, y) in vectors {
                    let e = parse_edge(&key, &graph)?;
                    let idx = graph.edge_index(e.0, e.1).expect("checked by parse_edge");
                    if refs[idx].replace(normalized(y, n, &format!("vector {key}"))?).is_some() {
                        return Err(Error::config(format!("duplicate vector for edge {key}")));
                    }
                }
                let refs = refs
                    .into_iter()
                    .zip(graph.edges())
                    .map(|(y, &e)| y.ok_or_else(|| Error::config(format!("missing vector for edge {}", edge_key(e)))))
                    .collect::<Result<Vec<_>>>()?;
                NetworkConfig::new_fixed(n, space, graph, refs)
            }
            RefsJson::Generic { seed } => NetworkConfig::generic(n, space, graph, seed),
            RefsJson::RelativePosition { seed, anchors } => match (seed, anchors) {
                (Some(seed), None) => NetworkConfig::relative_position(n, space, graph, seed),
                (None, Some(anchors)) => {
                    let anchors = vertex_map(anchors, k, "anchor")?
                        .into_iter()
                        .map(|p| {
                            if p.len() != n {
                                return Err(Error::dim(format!("anchor of length {}, expected {n}", p.len())));
                            }
                            Ok(DVector::from_vec(p))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    NetworkConfig::from_anchors(n, space, graph, &anchors)
                }
                _ => Err(Error::config("relative_position refs need exactly one of \"seed\" or \"anchors\"")),
            },
            RefsJson::TimeVarying { seed, anchors, edges } => {
                let tv = match (seed, anchors, edges) {
                    (Some(seed), None, None) => TimeVaryingRefs::quasi_periodic_anchors(n, k, seed),
                    (None, Some(anchors), None) => TimeVaryingRefs::RelativePosition {
                        anchors: vertex_map(anchors, k, "anchor path")?
                            .into_iter()
                            .map(|coords| PathGenerator { coords })
                            .collect(),
                    },
                    (None, None, Some(edges)) => {
                        let mut map = BTreeMap::new();
                        for (key, coords) in edges {
                            let e = parse_edge(&key, &graph)?;
                            if map.insert(e, PathGenerator { coords }).is_some() {
                                return Err(Error::config(format!("duplicate path for edge {key}")));
                            }
                        }
                        TimeVaryingRefs::Direct { edges: map }
                    }
                    _ => {
                        return Err(Error::config(
                            "time_varying refs need exactly one of \"seed\", \"anchors\" or \"edges\"",
                        ))
                    }
                };
                NetworkConfig::new_time_varying(n, space, graph, tv)
            }
        }
    }

    /// Self-contained form: fixed refs are written out explicitly.
    pub fn to_json_value(&self) -> Value {
        let refs = match &self.refs {
            RefAssignment::Fixed(v) => RefsJson::Explicit {
                vectors: self
                    .graph
                    .edges()
                    .iter()
                    .zip(v)
                    .map(|(&e, y)| (edge_key(e), y.iter().copied().collect()))
                    .collect(),
            },
            RefAssignment::TimeVarying(TimeVaryingRefs::RelativePosition { anchors }) => RefsJson::TimeVarying {
                seed: None,
                anchors: Some(
                    anchors.iter().enumerate().map(|(i, p)| ((i + 1).to_string(), p.coords.clone())).collect(),
                ),
                edges: None,
            },
            RefAssignment::TimeVarying(TimeVaryingRefs::Direct { edges }) => RefsJson::TimeVarying {
                seed: None,
                anchors: None,
                edges: Some(edges.iter().map(|(&e, p)| (edge_key(e), p.coords.clone())).collect()),
            },
        };
        let doc = NetworkJson { n: self.n, space: self.space, graph: self.graph.to_json_value(), refs };
        serde_json::to_value(doc).expect("network config serializes")
    }
}
