//! Cosine-similarity stock graph and deterministic greedy modularity clustering.
//!
//! Edge weights are `max(0, cos(v_i, v_j))` over a dense, symmetric matrix.
//! Clustering is agglomerative: every node starts alone and the pair of
//! communities with the largest modularity gain is merged until no merge
//! gains. Ties go to the lexicographically smallest `(lower id, higher id)`
//! pair, where a community's id is the index of its first node in sorted
//! ticker order, so results never depend on input order.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use thiserror::Error;

use crate::autoencoder::Embedding;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("need at least 2 embeddings, got {0}")]
    TooFew(usize),
    #[error("embedding for {symbol} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        symbol: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding for {symbol} comes from model {got}, expected {expected}")]
    ModelMismatch {
        symbol: String,
        expected: String,
        got: String,
    },
    #[error("zero-norm embedding for {0}")]
    ZeroVector(String),
    #[error("non-finite embedding for {0}")]
    NonFinite(String),
    #[error("duplicate ticker {0}")]
    DuplicateTicker(String),
    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),
    #[error("partition has {got} labels for {expected} nodes")]
    LabelCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    nodes: Vec<String>,
    /// Row-major `n x n`.
    weights: Vec<f64>,
}

impl SimilarityGraph {
    /// Validates and takes ownership of a weight matrix. Nodes must already be
    /// in sorted order.
    pub fn from_weights(nodes: Vec<String>, weights: Vec<f64>) -> Result<Self, GraphError> {
        let n = nodes.len();
        if weights.len() != n * n {
            return Err(GraphError::InvalidWeights(format!(
                "{} entries for {n} nodes",
                weights.len()
            )));
        }
        for pair in nodes.windows(2) {
            if pair[0] == pair[1] {
                return Err(GraphError::DuplicateTicker(pair[0].clone()));
            }
            if pair[0] > pair[1] {
                return Err(GraphError::InvalidWeights("nodes are not sorted".into()));
            }
        }
        for i in 0..n {
            if weights[i * n + i] != 0.0 {
                return Err(GraphError::InvalidWeights(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let w = weights[i * n + j];
                if !w.is_finite() || w < 0.0 {
                    return Err(GraphError::InvalidWeights(format!("w[{i}][{j}] = {w}")));
                }
                if w != weights[j * n + i] {
                    return Err(GraphError::InvalidWeights(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.nodes.len() + j]
    }

    pub fn degree(&self, i: usize) -> f64 {
        let n = self.nodes.len();
        self.weights[i * n..(i + 1) * n].iter().sum()
    }

    /// `m = (1/2) * sum_ij w_ij`.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() / 2.0
    }

    /// Symmetric CSV matrix with a ticker header row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "symbol,{}", self.nodes.join(","))?;
        for (i, name) in self.nodes.iter().enumerate() {
            let row: Vec<String> = (0..self.len()).map(|j| format!("{:?}", self.weight(i, j))).collect();
            writeln!(out, "{name},{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Subtracts the cross-sectional mean vector from every embedding.
///
/// Autoencoder bottlenecks share a large common component, which pushes every
/// pairwise cosine towards 1 and leaves modularity nothing to separate. The mean
/// is summed in ticker order so the result does not depend on input order. If
/// all vectors are equal there is nothing to remove and the input is returned
/// unchanged.
pub fn center_embeddings(embeddings: &[Embedding]) -> Vec<Embedding> {
    let Some(first) = embeddings.first() else {
        return Vec::new();
    };
    let dim = first.vector.len();
    if embeddings.iter().any(|e| e.vector.len() != dim) {
        // build_graph reports the mismatch.
        return embeddings.to_vec();
    }
    let mut order: Vec<&Embedding> = embeddings.iter().collect();
    order.sort_by(|a, b| a.symbol.cmp(&b.symbol));
    let mut mean = vec![0.0; dim];
    for e in &order {
        for (m, v) in mean.iter_mut().zip(&e.vector) {
            *m += v;
        }
    }
    let n = embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    if embeddings.iter().all(|e| e.vector == first.vector) {
        return embeddings.to_vec();
    }
    embeddings
        .iter()
        .map(|e| Embedding {
            vector: e.vector.iter().zip(&mean).map(|(v, m)| v - m).collect(),
            ..e.clone()
        })
        .collect()
}

/// Dense graph with `w_ij = max(0, cos(v_i, v_j))`, nodes in sorted ticker order.
pub fn build_graph(embeddings: &[Embedding]) -> Result<SimilarityGraph, GraphError> {
    if embeddings.len() < 2 {
        return Err(GraphError::TooFew(embeddings.len()));
    }
    let mut sorted: Vec<&Embedding> = embeddings.iter().collect();
    sorted.sort_by(|a, b| a.symbol.cmp(&b.symbol));
    let first = sorted[0];
    for e in &sorted {
        if e.vector.len() != first.vector.len() {
            return Err(GraphError::DimensionMismatch {
                symbol: e.symbol.clone(),
                expected: first.vector.len(),
                got: e.vector.len(),
            });
        }
        if e.model_id != first.model_id {
            return Err(GraphError::ModelMismatch {
                symbol: e.symbol.clone(),
                expected: first.model_id.clone(),
                got: e.model_id.clone(),
            });
        }
        if !e.vector.iter().all(|v| v.is_finite()) {
            return Err(GraphError::NonFinite(e.symbol.clone()));
        }
        if e.vector.iter().all(|&v| v == 0.0) {
            return Err(GraphError::ZeroVector(e.symbol.clone()));
        }
    }
    for pair in sorted.windows(2) {
        if pair[0].symbol == pair[1].symbol {
            return Err(GraphError::DuplicateTicker(pair[0].symbol.clone()));
        }
    }
    let n = sorted.len();
    let mut weights = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let w = cosine(&sorted[i].vector, &sorted[j].vector).max(0.0);
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
    }
    Ok(SimilarityGraph {
        nodes: sorted.iter().map(|e| e.symbol.clone()).collect(),
        weights,
    })
}

/// Newman modularity of a partition given as one label per node.
///
/// `Q = sum_c [ in_c / 2m - (tot_c / 2m)^2 ]`; zero when the graph has no weight.
pub fn modularity(graph: &SimilarityGraph, labels: &[usize]) -> Result<f64, GraphError> {
    let n = graph.len();
    if labels.len() != n {
        return Err(GraphError::LabelCount {
            expected: n,
            got: labels.len(),
        });
    }
    let two_m = 2.0 * graph.total_weight();
    if two_m == 0.0 {
        return Ok(0.0);
    }
    let mut inside: BTreeMap<usize, f64> = BTreeMap::new();
    let mut total: BTreeMap<usize, f64> = BTreeMap::new();
    for i in 0..n {
        *total.entry(labels[i]).or_default() += graph.degree(i);
        for j in 0..n {
            if labels[i] == labels[j] {
                *inside.entry(labels[i]).or_default() += graph.weight(i, j);
            }
        }
    }
    Ok(total
        .iter()
        .map(|(c, tot)| inside.get(c).copied().unwrap_or(0.0) / two_m - (tot / two_m).powi(2))
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Ticker -> dense community id.
    pub labels: BTreeMap<String, usize>,
    pub modularity: f64,
    pub rebalance_date: Option<NaiveDate>,
}

impl ClusterAssignment {
    /// `K`, the number of communities.
    pub fn community_count(&self) -> usize {
        self.labels.values().max().map_or(0, |m| m + 1)
    }

    /// Members of each community, in id order, each sorted by ticker.
    pub fn communities(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (sym, &c) in &self.labels {
            out[c].push(sym.clone());
        }
        out
    }

    pub fn with_date(mut self, date: NaiveDate) -> Self {
        self.rebalance_date = Some(date);
        self
    }

    /// Rows of `rebalance_date,symbol,community_id`, header included when `header`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "rebalance_date,symbol,community_id")?;
        }
        let date = self.rebalance_date.map(|d| d.to_string()).unwrap_or_default();
        for (sym, c) in &self.labels {
            writeln!(out, "{date},{sym},{c}")?;
        }
        Ok(())
    }
}

/// One accepted merge of the greedy agglomeration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    /// Community ids (smallest member index) before the merge, `kept < absorbed`.
    pub kept: usize,
    pub absorbed: usize,
    pub delta_q: f64,
}

pub fn cluster(graph: &SimilarityGraph) -> ClusterAssignment {
    cluster_with_trace(graph).0
}

/// Greedy agglomeration, also returning the sequence of merges.
pub fn cluster_with_trace(graph: &SimilarityGraph) -> (ClusterAssignment, Vec<Merge>) {
    let n = graph.len();
    let two_m = 2.0 * graph.total_weight();
    let mut community: Vec<usize> = (0..n).collect();
    let mut merges = Vec::new();

    if two_m > 0.0 {
        // e[a][b]: fraction of edge ends between a and b (both orders counted
        // once each side); a[c]: fraction of edge ends in c.
        let mut e: Vec<f64> = graph.weights.iter().map(|w| w / two_m).collect();
        let mut a: Vec<f64> = (0..n).map(|i| graph.degree(i) / two_m).collect();
        let mut alive = vec![true; n];
        loop {
            let mut best: Option<Merge> = None;
            for i in 0..n {
                if !alive[i] {
                    continue;
                }
                for j in i + 1..n {
                    if !alive[j] {
                        continue;
                    }
                    let dq = merge_gain(e[i * n + j], a[i], a[j]);
                    if best.is_none_or(|b| dq > b.delta_q) {
                        best = Some(Merge {
                            kept: i,
                            absorbed: j,
                            delta_q: dq,
                        });
                    }
                }
            }
            let Some(m) = best.filter(|m| m.delta_q > 0.0) else {
                break;
            };
            let (i, j) = (m.kept, m.absorbed);
            for k in 0..n {
                if alive[k] && k != i && k != j {
                    let merged = e[i * n + k] + e[j * n + k];
                    e[i * n + k] = merged;
                    e[k * n + i] = merged;
                }
            }
            e[i * n + i] += e[j * n + j] + 2.0 * e[i * n + j];
            a[i] += a[j];
            alive[j] = false;
            for c in community.iter_mut() {
                if *c == j {
                    *c = i;
                }
            }
            merges.push(m);
        }
    }

    // Dense relabel in order of each community's first (smallest) member.
    let mut dense = BTreeMap::new();
    let labels_vec: Vec<usize> = community
        .iter()
        .map(|&c| {
            let next = dense.len();
            *dense.entry(c).or_insert(next)
        })
        .collect();
    let q = modularity(graph, &labels_vec).expect("labels cover every node");
    let labels = graph
        .nodes
        .iter()
        .cloned()
        .zip(labels_vec)
        .collect();
    (
        ClusterAssignment {
            labels,
            modularity: q,
            rebalance_date: None,
        },
        merges,
    )
}

/// Modularity change from merging two communities: `2 (e_ab - a_a a_b)`.
pub fn merge_gain(e_between: f64, a_first: f64, a_second: f64) -> f64 {
    2.0 * (e_between - a_first * a_second)
}
