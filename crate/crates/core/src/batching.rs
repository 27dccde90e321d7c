//! Mini-batch construction: fixed-ratio (`K⁺ ≈ K⁻`) and bias-corrected
//! (`K⁺ = p`, `p ~ U{1, …, K−1}` per batch, bootstrap draws).

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{sample_nonedges_with, Edge, Graph};
use crate::rng::{self, streams, Rng};

pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub edges: Vec<Edge>,
    /// `true` for a positive (existing) edge.
    pub labels: Vec<bool>,
    pub k_pos: usize,
    pub k_neg: usize,
}

impl MiniBatch {
    fn from_parts(pos: &[Edge], neg: &[Edge]) -> Self {
        let mut edges = Vec::with_capacity(pos.len() + neg.len());
        edges.extend_from_slice(pos);
        edges.extend_from_slice(neg);
        let labels = (0..edges.len()).map(|i| i < pos.len()).collect();
        Self {
            edges,
            labels,
            k_pos: pos.len(),
            k_neg: neg.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Labels as `0.0 / 1.0` for the loss.
    pub fn label_values(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(u8::from(l))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BatchScheme {
    #[serde(rename = "fixed")]
    FixedRatio,
    #[serde(rename = "bias-corrected")]
    BiasCorrected,
}

impl BatchScheme {
    pub const ALL: [BatchScheme; 2] = [BatchScheme::FixedRatio, BatchScheme::BiasCorrected];

    pub fn as_str(&self) -> &'static str {
        match self {
            BatchScheme::FixedRatio => "fixed",
            BatchScheme::BiasCorrected => "bias-corrected",
        }
    }
}

impl fmt::Display for BatchScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BatchScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" | "fixed-ratio" => Ok(BatchScheme::FixedRatio),
            "bias-corrected" => Ok(BatchScheme::BiasCorrected),
            other => Err(Error::Config(format!("unknown batch scheme '{other}'"))),
        }
    }
}

/// `|train_pos|` fresh non-edges of `graph` for one epoch.
pub fn epoch_negatives(graph: &Graph, train_pos: &[Edge], seed: u64, epoch: u64) -> Result<Vec<Edge>> {
    let mut rng = rng::substream(seed, streams::NEGATIVES, epoch);
    sample_nonedges_with(graph, train_pos.len(), &HashSet::new(), &mut rng)
}

pub fn fixed_ratio_batches(pos: &[Edge], neg: &[Edge], k: usize, seed: u64) -> Result<Vec<MiniBatch>> {
    fixed_ratio_batches_with(pos, neg, k, &mut rng::stream(seed, streams::BATCHES))
}

/// Shuffles both pools and interleaves them, so any window of the
/// interleaved sequence is balanced to within one edge. A trailing batch of a
/// single edge is dropped.
pub fn fixed_ratio_batches_with(
    pos: &[Edge],
    neg: &[Edge],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<MiniBatch>> {
    if k < 2 {
        return Err(Error::BatchSizeTooSmall(k));
    }
    if pos.is_empty() || neg.is_empty() || pos.len().abs_diff(neg.len()) > 1 {
        return Err(Error::UnbalancedPools {
            pos: pos.len(),
            neg: neg.len(),
        });
    }
    let mut pos = pos.to_vec();
    let mut neg = neg.to_vec();
    pos.shuffle(rng);
    neg.shuffle(rng);

    // the larger pool leads so the interleaving stays within one
    let pos_first = pos.len() >= neg.len();
    let (lead, follow) = if pos_first { (&pos, &neg) } else { (&neg, &pos) };
    let mut seq: Vec<(Edge, bool)> = Vec::with_capacity(pos.len() + neg.len());
    for i in 0..lead.len() {
        seq.push((lead[i], pos_first));
        if let Some(&e) = follow.get(i) {
            seq.push((e, !pos_first));
        }
    }

    Ok(seq
        .chunks(k)
        .filter(|c| c.len() >= 2)
        .map(|chunk| {
            let p: Vec<Edge> = chunk.iter().filter(|(_, l)| *l).map(|(e, _)| *e).collect();
            let n: Vec<Edge> = chunk.iter().filter(|(_, l)| !*l).map(|(e, _)| *e).collect();
            MiniBatch::from_parts(&p, &n)
        })
        .collect())
}

/// Default bias-corrected batch count: matches the fixed scheme's expected
/// edges per epoch.
pub fn default_num_batches(num_pos: usize, k: usize) -> usize {
    (2 * num_pos).div_ceil(k)
}

pub fn bias_corrected_batches(
    pos: &[Edge],
    neg: &[Edge],
    k: usize,
    num_batches: Option<usize>,
    seed: u64,
) -> Result<Vec<MiniBatch>> {
    bias_corrected_batches_with(pos, neg, k, num_batches, &mut rng::stream(seed, streams::BATCHES))
}

/// Each batch draws `p` uniformly from `1..=K−1`, then `p` positives and
/// `K − p` negatives with replacement.
pub fn bias_corrected_batches_with(
    pos: &[Edge],
    neg: &[Edge],
    k: usize,
    num_batches: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<MiniBatch>> {
    if k < 2 {
        return Err(Error::BatchSizeTooSmall(k));
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = num_batches.unwrap_or_else(|| default_num_batches(pos.len(), k));
    Ok((0..n)
        .map(|_| {
            let p = rng.random_range(1..k);
            let bp: Vec<Edge> = (0..p).map(|_| pos[rng.random_range(0..pos.len())]).collect();
            let bn: Vec<Edge> = (0..k - p).map(|_| neg[rng.random_range(0..neg.len())]).collect();
            MiniBatch::from_parts(&bp, &bn)
        })
        .collect())
}
