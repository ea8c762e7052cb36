use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tol;

/// One sinusoid `amplitude * sin(2 pi frequency_hz t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub phase: f64,
}

/// Scalar quasi-periodic signal: constant offset plus a sum of sinusoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiPeriodic {
    pub offset: f64,
    #[serde(default)]
    pub terms: Vec<Harmonic>,
}

impl QuasiPeriodic {
    pub fn constant(offset: f64) -> Self {
        QuasiPeriodic { offset, terms: Vec::new() }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|h| h.amplitude * (2.0 * PI * h.frequency_hz * t + h.phase).sin())
            .sum::<f64>()
            + self.offset
    }
}

/// Vector-valued path, one quasi-periodic signal per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PathGenerator {
    pub coords: Vec<QuasiPeriodic>,
}

impl PathGenerator {
    pub fn constant(v: &[f64]) -> Self {
        PathGenerator { coords: v.iter().map(|&c| QuasiPeriodic::constant(c)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn value(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.coords.len(), self.coords.iter().map(|c| c.value(t)))
    }
}

/// Time-dependent reference vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeVaryingRefs {
    /// Moving anchor points per vertex; edge `(i, j)`, `i < j`, carries the
    /// normalized difference `p_i(t) - p_j(t)`.
    RelativePosition { anchors: Vec<PathGenerator> },
    /// One path per edge `(i, j)`, `i < j`, normalized on evaluation.
    Direct { edges: BTreeMap<(usize, usize), PathGenerator> },
}

/// Frequency band of the sampled quasi-periodic terms, in Hz.
pub const FREQUENCY_BAND: (f64, f64) = (0.05, 1.0 / (2.0 * PI));

/// Default amplitude band of the sampled terms. Anchor offsets span `[-1, 1]`.
pub const AMPLITUDE_BAND: (f64, f64) = (0.15, 0.3);

impl TimeVaryingRefs {
    /// Anchors with uniform offsets in `[-1, 1]` and two sinusoids per
    /// coordinate, frequencies uniform in [`FREQUENCY_BAND`] and amplitudes
    /// uniform in [`AMPLITUDE_BAND`].
    pub fn quasi_periodic_anchors(n: usize, k: usize, seed: u64) -> Self {
        Self::quasi_periodic_anchors_with(n, k, AMPLITUDE_BAND, seed)
    }

    pub fn quasi_periodic_anchors_with(n: usize, k: usize, amplitude: (f64, f64), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = (0..k)
            .map(|_| PathGenerator {
                coords: (0..n)
                    .map(|_| QuasiPeriodic {
                        offset: rng.random_range(-1.0..1.0),
                        terms: (0..2)
                            .map(|_| Harmonic {
                                amplitude: rng.random_range(amplitude.0..amplitude.1),
                                frequency_hz: rng.random_range(FREQUENCY_BAND.0..FREQUENCY_BAND.1),
                                phase: rng.random_range(0.0..2.0 * PI),
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        TimeVaryingRefs::RelativePosition { anchors }
    }

    pub(crate) fn validate(&self, n: usize, graph: &Graph) -> Result<()> {
        match self {
            TimeVaryingRefs::RelativePosition { anchors } => {
                if anchors.len() != graph.vertex_count() {
                    return Err(Error::config(format!(
                        "{} anchor paths for {} vertices",
                        anchors.len(),
                        graph.vertex_count()
                    )));
                }
                if anchors.iter().any(|a| a.dim() != n) {
                    return Err(Error::dim(format!("anchor paths must have {n} coordinates")));
                }
            }
            TimeVaryingRefs::Direct { edges } => {
                for &(a, b) in graph.edges() {
                    match edges.get(&(a, b)) {
                        Some(p) if p.dim() == n => {}
                        Some(_) => return Err(Error::dim(format!("path on edge ({a}, {b}) must have {n} coordinates"))),
                        None => return Err(Error::config(format!("edge ({a}, {b}) has no reference path"))),
                    }
                }
                if edges.len() != graph.edge_count() {
                    return Err(Error::config("reference paths given for edges not in the graph"));
                }
            }
        }
        Ok(())
    }

    /// Unit reference vector of edge `(i, j)` at time `t`.
    pub fn vector_at(&self, edge: (usize, usize), t: f64) -> Result<DVector<f64>> {
        let (a, b) = if edge.0 < edge.1 { edge } else { (edge.1, edge.0) };
        let raw = match self {
            TimeVaryingRefs::RelativePosition { anchors } => {
                let (pa, pb) = match (anchors.get(a), anchors.get(b)) {
                    (Some(x), Some(y)) => (x, y),
                    _ => return Err(Error::config(format!("edge ({a}, {b}) is outside the anchor set"))),
                };
                pa.value(t) - pb.value(t)
            }
            TimeVaryingRefs::Direct { edges } => edges
                .get(&(a, b))
                .ok_or_else(|| Error::config(format!("edge ({a}, {b}) has no reference path")))?
                .value(t),
        };
        let norm = raw.norm();
        if norm <= tol::CONSTRUCTION {
            return Err(Error::Degenerate(format!("reference on edge ({a}, {b}) vanishes at t = {t}")));
        }
        Ok(raw / norm)
    }
}
