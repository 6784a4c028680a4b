//! Weighted interaction graph and neighbor aggregation.
//!
//! Each agent is a vertex whose initial embedding is its attribute vector.
//! One aggregation round adds to every vertex the mean of its neighbors'
//! embeddings, each divided by the edge weight:
//! `e'_v = e_v + mean_{u in N(v)} e_u / w(u, v)`, with an empty mean equal to
//! zero. Rounds are synchronous.

use alloc::vec;
use alloc::vec::Vec;

use crate::env::{DistanceTable, Environment};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    /// Aggregation rounds.
    pub k: usize,
    pub embedding_dim: usize,
    pub min_weight: f64,
    /// Edge radius; `None` uses the environment's visibility radius.
    pub radius: Option<f64>,
    pub fully_connected: bool,
    /// When false every embedding is replaced by zeros (ablation).
    pub enabled: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 2,
            embedding_dim: 8,
            min_weight: 1.0,
            radius: None,
            fully_connected: false,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentGraph {
    n: usize,
    attributes: Vec<Vec<f64>>,
    /// `weights[u * n + v]`, `None` when there is no edge.
    weights: Vec<Option<f64>>,
}

impl AgentGraph {
    /// Graph from explicit weights; the caller guarantees symmetry.
    pub fn from_weights(attributes: Vec<Vec<f64>>, weights: Vec<Option<f64>>) -> Result<Self> {
        let n = attributes.len();
        check_len("edge weights", n * n, weights.len())?;
        for u in 0..n {
            if weights[u * n + u].is_some() {
                return Err(Error::InvalidConfig("self-edges are not allowed".into()));
            }
            for v in 0..n {
                if weights[u * n + v] != weights[v * n + u] {
                    return Err(Error::InvalidConfig("edge weights must be symmetric".into()));
                }
                if let Some(w) = weights[u * n + v] {
                    if !(w > 0.0) || !w.is_finite() {
                        return Err(Error::InvalidConfig("edge weights must be positive".into()));
                    }
                }
            }
        }
        Ok(Self { n, attributes, weights })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn attributes(&self) -> &[Vec<f64>] {
        &self.attributes
    }

    pub fn weight(&self, u: usize, v: usize) -> Option<f64> {
        self.weights[u * self.n + v]
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n).filter_map(move |u| self.weight(u, v).map(|w| (u, w)))
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors(v).count()
    }
}

/// Edges join agents within `radius` (or every pair when `fully_connected`)
/// with weight `max(distance, min_weight)`.
pub fn build_graph(
    attributes: Vec<Vec<f64>>,
    distances: &DistanceTable,
    radius: f64,
    min_weight: f64,
    fully_connected: bool,
) -> Result<AgentGraph> {
    let n = attributes.len();
    check_len("distance table", n, distances.len())?;
    if !(min_weight > 0.0) {
        return Err(Error::InvalidConfig("min_weight must be positive".into()));
    }
    let mut weights = vec![None; n * n];
    for u in 0..n {
        for v in 0..n {
            let d = distances.get(u, v);
            if u != v && (fully_connected || d <= radius) {
                weights[u * n + v] = Some(d.max(min_weight));
            }
        }
    }
    Ok(AgentGraph { n, attributes, weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub values: Vec<Vec<f64>>,
    /// Aggregation rounds applied so far.
    pub iteration: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }
}

pub fn init_embeddings(graph: &AgentGraph, dim: usize) -> EmbeddingTable {
    let values = graph
        .attributes
        .iter()
        .map(|a| {
            let mut e = vec![0.0; dim];
            let k = a.len().min(dim);
            e[..k].copy_from_slice(&a[..k]);
            e
        })
        .collect();
    EmbeddingTable { values, iteration: 0 }
}

pub fn aggregate(graph: &AgentGraph, table: &EmbeddingTable, k: usize) -> Result<EmbeddingTable> {
    check_len("embedding table", graph.n, table.values.len())?;
    let dim = table.dim();
    let mut current = table.values.clone();
    for _ in 0..k {
        let mut next = current.clone();
        for (v, out) in next.iter_mut().enumerate() {
            let mut mean = vec![0.0; dim];
            let mut count = 0usize;
            for (u, w) in graph.neighbors(v) {
                for (m, &x) in mean.iter_mut().zip(&current[u]) {
                    *m += x / w;
                }
                count += 1;
            }
            if count > 0 {
                for (o, m) in out.iter_mut().zip(&mean) {
                    *o += m / count as f64;
                }
            }
        }
        current = next;
    }
    if current.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "embeddings" });
    }
    Ok(EmbeddingTable {
        values: current,
        iteration: table.iteration + k,
    })
}

/// `h_i = o_i ⊕ e_i`, observation first.
pub fn features(observations: &[Vec<f64>], table: &EmbeddingTable) -> Result<Vec<Vec<f64>>> {
    check_len("embedding table", observations.len(), table.values.len())?;
    Ok(observations
        .iter()
        .zip(&table.values)
        .map(|(o, e)| {
            let mut h = o.clone();
            h.extend_from_slice(e);
            h
        })
        .collect())
}

/// Agent graph of `state` under `cfg`.
pub fn state_graph<E: Environment>(env: &E, state: &E::State, cfg: &GraphConfig) -> Result<AgentGraph> {
    let radius = cfg.radius.unwrap_or_else(|| env.visibility_radius());
    build_graph(
        env.attributes(state),
        &env.distances(state),
        radius,
        cfg.min_weight,
        cfg.fully_connected,
    )
}

/// Feature vectors of every agent in `state`.
pub fn state_features<E: Environment>(env: &E, state: &E::State, cfg: &GraphConfig) -> Result<Vec<Vec<f64>>> {
    let obs = env.observe(state);
    let table = if cfg.enabled {
        let graph = state_graph(env, state, cfg)?;
        aggregate(&graph, &init_embeddings(&graph, cfg.embedding_dim), cfg.k)?
    } else {
        EmbeddingTable {
            values: vec![vec![0.0; cfg.embedding_dim]; obs.len()],
            iteration: 0,
        }
    };
    features(&obs, &table)
}

pub fn feature_dim<E: Environment>(env: &E, cfg: &GraphConfig) -> usize {
    env.obs_dim() + cfg.embedding_dim
}
