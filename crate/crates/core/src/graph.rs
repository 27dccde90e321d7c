//! Undirected graphs, sparse adjacency matrices, edge splits and non-edge
//! sampling.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::rng::{self, streams};

/// Unordered node pair stored canonically with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    u: usize,
    v: usize,
}

impl Edge {
    /// Canonicalises `(a, b)`. Panics on a self-loop; use [`Edge::try_new`]
    /// for untrusted input.
    pub fn new(a: usize, b: usize) -> Self {
        Self::try_new(a, b).expect("self-loop is not an edge")
    }

    pub fn try_new(a: usize, b: usize) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self { u: a, v: b }),
            std::cmp::Ordering::Greater => Some(Self { u: b, v: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    /// Smaller endpoint; treated as the edge's source node.
    pub fn u(&self) -> usize {
        self.u
    }

    pub fn v(&self) -> usize {
        self.v
    }
}

impl From<(usize, usize)> for Edge {
    fn from((a, b): (usize, usize)) -> Self {
        Edge::new(a, b)
    }
}

/// Number of unordered non-loop pairs on `n` nodes.
pub fn num_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
    features: Tensor2,
    labels: Option<Vec<usize>>,
}

impl Graph {
    pub fn new(
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor2,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let mut list = Vec::new();
        let mut edge_set = HashSet::new();
        for (a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            let e = Edge::try_new(a, b)
                .ok_or_else(|| Error::InvalidGraph(format!("self-loop at node {a}")))?;
            if !edge_set.insert(e) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
            list.push(e);
        }
        list.sort_unstable();
        if features.rows() != num_nodes {
            return Err(Error::InvalidGraph(format!(
                "{} feature rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "{} labels for {num_nodes} nodes",
                    labels.len()
                )));
            }
        }
        Ok(Self {
            num_nodes,
            edges: list,
            edge_set,
            features,
            labels,
        })
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: &[Edge]) -> Result<Self> {
        Self::new(
            self.num_nodes,
            edges.iter().map(|e| (e.u, e.v)),
            self.features.clone(),
            self.labels.clone(),
        )
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in ascending canonical order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        Edge::try_new(a, b).is_some_and(|e| self.edge_set.contains(&e))
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.edge_set.contains(e)
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// Sorted neighbour lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.num_nodes];
        for e in &self.edges {
            nbrs[e.u].push(e.v);
            nbrs[e.v].push(e.u);
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        nbrs
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.num_nodes];
        for e in &self.edges {
            deg[e.u] += 1;
            deg[e.v] += 1;
        }
        deg
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists; columns are sorted here.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        let n_rows = rows.len();
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < n_cols);
                indices.push(c);
                values.push(v);
            }
            offsets.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            offsets,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, val) = self.row(i);
        idx.binary_search(&j).map_or(0.0, |p| val[p])
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n_cols];
        for i in 0..self.n_rows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(self.n_rows, rows)
    }

    pub fn to_dense(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Binary symmetric adjacency `A` (both directions materialised).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrAdjacency(CsrMatrix);

impl CsrAdjacency {
    pub fn from_graph(graph: &Graph) -> Self {
        let rows = graph
            .neighbors()
            .into_iter()
            .map(|n| n.into_iter().map(|j| (j, 1.0)).collect())
            .collect();
        Self(CsrMatrix::from_rows(graph.num_nodes(), rows))
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency(CsrMatrix);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.0
    }

    /// Self-loop-augmented degree `d̃` of every node.
    pub fn augmented_degrees(graph: &Graph) -> Vec<f64> {
        graph.degrees().into_iter().map(|d| d as f64 + 1.0).collect()
    }
}

impl AsRef<CsrMatrix> for NormalizedAdjacency {
    fn as_ref(&self) -> &CsrMatrix {
        &self.0
    }
}

impl AsRef<CsrMatrix> for CsrAdjacency {
    fn as_ref(&self) -> &CsrMatrix {
        &self.0
    }
}

pub fn normalized_adjacency(graph: &Graph) -> NormalizedAdjacency {
    let deg = NormalizedAdjacency::augmented_degrees(graph);
    let rows = graph
        .neighbors()
        .into_iter()
        .enumerate()
        .map(|(u, nbrs)| {
            let mut row: Vec<(usize, f64)> = nbrs
                .into_iter()
                .map(|v| (v, 1.0 / (deg[u] * deg[v]).sqrt()))
                .collect();
            row.push((u, 1.0 / deg[u]));
            row
        })
        .collect();
    NormalizedAdjacency(CsrMatrix::from_rows(graph.num_nodes(), rows))
}

/// Row-normalised adjacency without self-loops: `(M·H)ᵤ` is the mean of the
/// neighbour rows of `u`, or zero for an isolated node.
pub fn mean_aggregator(graph: &Graph) -> CsrMatrix {
    let rows = graph
        .neighbors()
        .into_iter()
        .map(|nbrs| {
            let w = 1.0 / nbrs.len().max(1) as f64;
            nbrs.into_iter().map(|v| (v, w)).collect()
        })
        .collect();
    CsrMatrix::from_rows(graph.num_nodes(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.85,
            valid: 0.05,
            test: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub valid_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub valid_neg: Vec<Edge>,
    pub test_neg: Vec<Edge>,
}

impl EdgeSplit {
    /// Message-passing graph for training: the train positives only.
    pub fn train_graph(&self, graph: &Graph) -> Result<Graph> {
        graph.with_edges(&self.train_pos)
    }
}

/// Shuffles the edge set and partitions it. Valid/test negatives are drawn
/// from the non-edges of the full graph, one per positive, disjoint from each
/// other.
pub fn split_edges(graph: &Graph, fractions: SplitFractions, seed: u64) -> Result<EdgeSplit> {
    let SplitFractions { train, valid, test } = fractions;
    if [train, valid, test].iter().any(|f| f.is_nan() || *f <= 0.0) {
        return Err(Error::InvalidSplit(format!(
            "fractions must be positive, got ({train}, {valid}, {test})"
        )));
    }
    if ((train + valid + test) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "fractions must sum to 1, got {}",
            train + valid + test
        )));
    }
    let m = graph.num_edges();
    let n_valid = (valid * m as f64).round() as usize;
    let n_test = (test * m as f64).round() as usize;
    let n_train = m.saturating_sub(n_valid + n_test);
    if n_valid == 0 || n_test == 0 || n_train == 0 {
        return Err(Error::InvalidSplit(format!(
            "{m} edges yield an empty part ({n_train}/{n_valid}/{n_test})"
        )));
    }

    let mut rng = rng::stream(seed, streams::SPLIT);
    let mut edges = graph.edges().to_vec();
    edges.shuffle(&mut rng);
    let test_pos = edges.split_off(m - n_test);
    let valid_pos = edges.split_off(n_train);
    let train_pos = edges;

    let valid_neg = sample_nonedges(graph, n_valid, seed, &HashSet::new())?;
    let exclude: HashSet<Edge> = valid_neg.iter().copied().collect();
    let test_neg = sample_nonedges(graph, n_test, seed ^ 0x9E37_79B9_7F4A_7C15, &exclude)?;

    Ok(EdgeSplit {
        train_pos,
        valid_pos,
        test_pos,
        valid_neg,
        test_neg,
    })
}

/// Draws `m` distinct non-edges that avoid `exclude`.
///
/// Rejection sampling against the edge set; switches to explicit enumeration
/// of the complement when the graph plus exclusions cover more than half of
/// all pairs.
pub fn sample_nonedges(
    graph: &Graph,
    m: usize,
    seed: u64,
    exclude: &HashSet<Edge>,
) -> Result<Vec<Edge>> {
    let mut rng = rng::stream(seed, streams::NEGATIVES);
    sample_nonedges_with(graph, m, exclude, &mut rng)
}

pub(crate) fn sample_nonedges_with(
    graph: &Graph,
    m: usize,
    exclude: &HashSet<Edge>,
    rng: &mut rng::Rng,
) -> Result<Vec<Edge>> {
    let n = graph.num_nodes();
    let total = num_pairs(n);
    let excluded_nonedges = exclude.iter().filter(|e| !graph.contains(e)).count();
    let blocked = graph.num_edges() + excluded_nonedges;
    let available = total - blocked;
    if m > available {
        return Err(Error::InsufficientNonEdges {
            requested: m,
            available,
        });
    }
    if m == 0 {
        return Ok(Vec::new());
    }

    if blocked * 2 > total || m * 2 > available {
        let mut pool: Vec<Edge> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| Edge { u, v }))
            .filter(|e| !graph.contains(e) && !exclude.contains(e))
            .collect();
        let (chosen, _) = pool.partial_shuffle(rng, m);
        return Ok(chosen.to_vec());
    }

    let mut chosen = HashSet::with_capacity(m);
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        let Some(e) = Edge::try_new(a, b) else {
            continue;
        };
        if graph.contains(&e) || exclude.contains(&e) || !chosen.insert(e) {
            continue;
        }
        out.push(e);
    }
    Ok(out)
}
