//! Evaluation metrics: Hits@K, trace ratio of class scatter, edge→node
//! embedding transfer, k-means, NMI, and k-hop neighbourhood signatures.

use std::collections::{BTreeMap, HashSet, VecDeque};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::Tensor2;
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HitsResult {
    pub k: usize,
    pub value: f64,
}

/// Fraction of positive scores strictly above the `k`-th largest negative.
pub fn hits_at_k(pos_scores: &[f64], neg_scores: &[f64], k: usize) -> Result<HitsResult> {
    if k == 0 {
        return Err(Error::Config("hits@k needs k >= 1".into()));
    }
    if neg_scores.len() < k {
        return Err(Error::TooFewNegatives {
            k,
            available: neg_scores.len(),
        });
    }
    if pos_scores.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut neg = neg_scores.to_vec();
    neg.sort_unstable_by(|a, b| b.total_cmp(a));
    let threshold = neg[k - 1];
    let hits = pos_scores.iter().filter(|&&s| s > threshold).count();
    Ok(HitsResult {
        k,
        value: hits as f64 / pos_scores.len() as f64,
    })
}

/// Within-class and between-class scatter traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScatterStats {
    pub within_trace: f64,
    pub between_trace: f64,
    pub total_trace: f64,
    /// `between / max(within, TRACE_FLOOR)`.
    pub trace_ratio: f64,
    /// Set when the within-class trace fell below [`TRACE_FLOOR`].
    pub degenerate: bool,
}

pub const TRACE_FLOOR: f64 = 1e-12;

/// Between-over-within trace ratio of `embeddings` grouped by `labels`.
/// Higher means stronger class separation.
pub fn trace_ratio(embeddings: &Tensor2, labels: &[usize]) -> Result<ScatterStats> {
    let (n, h) = embeddings.shape();
    if labels.len() != n {
        return Err(Error::LengthMismatch(n, labels.len()));
    }
    let mut classes: BTreeMap<usize, (usize, Vec<f64>)> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        let entry = classes.entry(c).or_insert_with(|| (0, vec![0.0; h]));
        entry.0 += 1;
        for (s, &x) in entry.1.iter_mut().zip(embeddings.row(i)) {
            *s += x;
        }
    }
    if n < 2 || classes.len() < 2 {
        return Err(Error::SingleClass);
    }

    let mut global = vec![0.0; h];
    for (_, sum) in classes.values() {
        for (g, s) in global.iter_mut().zip(sum) {
            *g += s;
        }
    }
    global.iter_mut().for_each(|g| *g /= n as f64);
    for (count, sum) in classes.values_mut() {
        sum.iter_mut().for_each(|s| *s /= *count as f64);
    }

    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut within = 0.0;
    let mut total = 0.0;
    for (i, c) in labels.iter().enumerate() {
        within += sq(embeddings.row(i), &classes[c].1);
        total += sq(embeddings.row(i), &global);
    }
    let between: f64 = classes
        .values()
        .map(|(count, mean)| *count as f64 * sq(mean, &global))
        .sum();
    let (within, between, total) = (within / n as f64, between / n as f64, total / n as f64);

    if total <= 0.0 {
        return Err(Error::NoScatter("all embeddings are identical".into()));
    }
    let degenerate = within < TRACE_FLOOR;
    Ok(ScatterStats {
        within_trace: within,
        between_trace: between,
        total_trace: total,
        trace_ratio: between / within.max(TRACE_FLOOR),
        degenerate,
    })
}

/// Node features as the mean of the embeddings of incident edges.
/// `edge_embeddings` row `i` belongs to `graph.edges()[i]`; isolated nodes
/// get zeros.
pub fn edge_to_node(edge_embeddings: &Tensor2, graph: &Graph) -> Result<Tensor2> {
    if edge_embeddings.rows() != graph.num_edges() {
        return Err(Error::LengthMismatch(edge_embeddings.rows(), graph.num_edges()));
    }
    let mut out = Tensor2::zeros(graph.num_nodes(), edge_embeddings.cols());
    let mut count = vec![0usize; graph.num_nodes()];
    for (r, e) in graph.edges().iter().enumerate() {
        for node in [e.u(), e.v()] {
            count[node] += 1;
            for (o, &x) in out.row_mut(node).iter_mut().zip(edge_embeddings.row(r)) {
                *o += x;
            }
        }
    }
    for (node, &c) in count.iter().enumerate() {
        if c > 0 {
            out.row_mut(node).iter_mut().for_each(|x| *x /= c as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop once an iteration lowers inertia by less than `tol × inertia`.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub centroids: Tensor2,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct_rows(points: &Tensor2) -> usize {
    (0..points.rows())
        .map(|i| points.row(i).iter().map(|x| x.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// Distance-weighted (k-means++) seeding.
fn seed_centroids(points: &Tensor2, k: usize, rng: &mut rng::Rng) -> Tensor2 {
    let n = points.rows();
    let mut centroids = Tensor2::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids.
pub(crate) fn lloyd(
    points: &Tensor2,
    mut centroids: Tensor2,
    max_iters: usize,
    tol: f64,
) -> ClusterAssignment {
    let (n, dim) = points.shape();
    let k = centroids.rows();
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut dist = vec![0.0; n];

    for _ in 0..max_iters.max(1) {
        let mut inertia = 0.0;
        for i in 0..n {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(points.row(i), centroids.row(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            labels[i] = best;
            dist[i] = d;
            inertia += d;
        }
        let converged = history
            .last()
            .is_some_and(|&prev: &f64| prev - inertia <= tol * prev);
        history.push(inertia);
        if converged {
            break;
        }

        let mut sums = Tensor2::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, &x) in sums.row_mut(labels[i]).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / counts[c] as f64;
                }
            } else {
                // re-seed an empty cluster at the worst-served point
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]))
                    .expect("non-empty");
                centroids.row_mut(c).copy_from_slice(points.row(far));
                dist[far] = 0.0;
            }
        }
    }

    // final assignment against the final centroids
    let mut inertia = 0.0;
    for i in 0..n {
        let (best, d) = (0..k)
            .map(|c| (c, sq_dist(points.row(i), centroids.row(c))))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        labels[i] = best;
        inertia += d;
    }
    if history.last() != Some(&inertia) {
        history.push(inertia);
    }
    ClusterAssignment {
        labels,
        centroids,
        inertia,
        inertia_history: history,
    }
}

/// k-means with k-means++ seeding; the lowest-inertia restart wins.
pub fn kmeans(points: &Tensor2, k: usize, seed: u64, config: KMeansConfig) -> Result<ClusterAssignment> {
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    let distinct = count_distinct_rows(points);
    if k > distinct {
        return Err(Error::TooFewDistinctPoints { k, distinct });
    }
    let mut best: Option<ClusterAssignment> = None;
    for r in 0..config.restarts.max(1) {
        let mut rng = rng::substream(seed, streams::KMEANS, r as u64);
        let init = seed_centroids(points, k, &mut rng);
        let run = lloyd(points, init, config.max_iters, config.tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Arithmetic-mean normalised mutual information, natural logs. Two trivial
/// partitions (both entropies zero) score 1.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = a.len() as f64;
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cab: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *cab.entry((x, y)).or_default() += 1;
    }
    // terms summed in sorted order so that swapping or relabelling the
    // partitions gives a bitwise-identical result
    let sorted_sum = |mut terms: Vec<f64>| {
        terms.sort_unstable_by(f64::total_cmp);
        terms.into_iter().sum::<f64>()
    };
    let entropy = |counts: &BTreeMap<usize, usize>| {
        -sorted_sum(
            counts
                .values()
                .map(|&c| {
                    let p = c as f64 / n;
                    p * p.ln()
                })
                .collect(),
        )
    };
    let (ha, hb) = (entropy(&ca), entropy(&cb));
    let mi = sorted_sum(
        cab.iter()
            .map(|(&(x, y), &c)| {
                let c = c as f64;
                c / n * (n * c / (ca[&x] as f64 * cb[&y] as f64)).ln()
            })
            .collect(),
    );
    let denom = ha + hb;
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok((2.0 * mi / denom).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Sum,
}

/// Aggregate of the features of every node within `k_hops` of `v`,
/// including `v`.
pub fn neighborhood_signature(graph: &Graph, v: usize, k_hops: usize, agg: Aggregation) -> Result<Vec<f64>> {
    if v >= graph.num_nodes() {
        return Err(Error::InvalidGraph(format!("node {v} out of range")));
    }
    let nbrs = graph.neighbors();
    let mut depth = vec![usize::MAX; graph.num_nodes()];
    let mut queue = VecDeque::from([v]);
    depth[v] = 0;
    let x = graph.features();
    let mut acc = vec![0.0; x.cols()];
    let mut count = 0usize;
    while let Some(u) = queue.pop_front() {
        count += 1;
        for (a, &f) in acc.iter_mut().zip(x.row(u)) {
            *a += f;
        }
        if depth[u] == k_hops {
            continue;
        }
        for &w in &nbrs[u] {
            if depth[w] == usize::MAX {
                depth[w] = depth[u] + 1;
                queue.push_back(w);
            }
        }
    }
    if agg == Aggregation::Mean {
        acc.iter_mut().for_each(|a| *a /= count as f64);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hits_examples() {
        let h = hits_at_k(&[0.9, 0.4, 0.2], &[0.8, 0.5, 0.3, 0.1], 2).unwrap();
        assert_eq!(h.value, 1.0 / 3.0);
        assert_eq!(hits_at_k(&[5.0, 6.0], &[1.0, 2.0, 3.0], 3).unwrap().value, 1.0);
        assert_eq!(hits_at_k(&[0.0, 0.5], &[1.0, 2.0, 3.0], 3).unwrap().value, 0.0);
        // tie with the threshold is a miss
        assert_eq!(hits_at_k(&[2.0], &[2.0, 1.0], 1).unwrap().value, 0.0);
        assert!(matches!(
            hits_at_k(&[1.0], &[0.0], 2),
            Err(Error::TooFewNegatives { k: 2, available: 1 })
        ));
    }

    #[test]
    fn trace_ratio_hand_example() {
        let z = Tensor2::from_rows(&[&[0.0, 1.0], &[0.0, -1.0], &[2.0, 1.0], &[2.0, -1.0]]);
        let s = trace_ratio(&z, &[0, 0, 1, 1]).unwrap();
        assert!((s.within_trace - 1.0).abs() < 1e-15);
        assert!((s.between_trace - 1.0).abs() < 1e-15);
        assert!((s.trace_ratio - 1.0).abs() < 1e-15);
        assert!(!s.degenerate);
    }

    #[test]
    fn trace_ratio_degenerate_and_errors() {
        let z = Tensor2::from_rows(&[&[0.0], &[0.0], &[3.0], &[3.0]]);
        let s = trace_ratio(&z, &[0, 0, 1, 1]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.trace_ratio, s.between_trace / TRACE_FLOOR);

        let same = Tensor2::filled(4, 2, 1.5);
        assert!(matches!(trace_ratio(&same, &[0, 0, 1, 1]), Err(Error::NoScatter(_))));
        assert!(matches!(trace_ratio(&z, &[1, 1, 1, 1]), Err(Error::SingleClass)));
        assert!(trace_ratio(&z, &[0, 1]).is_err());
    }

    #[test]
    fn edge_to_node_examples() {
        let g = Graph::new(4, [(0, 1), (1, 2)], Tensor2::zeros(4, 1), None).unwrap();
        let e = Tensor2::from_rows(&[&[1.0, 3.0], &[3.0, 1.0]]);
        let x = edge_to_node(&e, &g).unwrap();
        assert_eq!(x.row(0), &[1.0, 3.0]);
        assert_eq!(x.row(1), &[2.0, 2.0]);
        assert_eq!(x.row(2), &[3.0, 1.0]);
        assert_eq!(x.row(3), &[0.0, 0.0]);
        assert!(edge_to_node(&Tensor2::zeros(3, 2), &g).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_global_mean() {
        let p = Tensor2::from_rows(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 3.0]]);
        let c = kmeans(&p, 1, 0, KMeansConfig::default()).unwrap();
        assert!((c.centroids[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((c.centroids[(0, 1)] - 1.0).abs() < 1e-15);
        // 2 + 2 + 4
        assert!((c.inertia - 8.0).abs() < 1e-12);
    }

    #[test]
    fn kmeans_recovers_far_blobs() {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        let mut r = rng::stream(3, 0);
        for i in 0..40 {
            let centre = if i % 2 == 0 { -100.0 } else { 100.0 };
            rows.push(vec![centre + r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)]);
            truth.push(i % 2);
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let c = kmeans(&Tensor2::from_rows(&refs), 2, 1, KMeansConfig::default()).unwrap();
        assert_eq!(nmi(&c.labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_too_few_distinct_points() {
        let p = Tensor2::from_rows(&[&[1.0], &[1.0], &[2.0]]);
        assert!(matches!(
            kmeans(&p, 3, 0, KMeansConfig::default()),
            Err(Error::TooFewDistinctPoints { k: 3, distinct: 2 })
        ));
    }

    #[test]
    fn lloyd_inertia_never_increases() {
        for seed in 0..20 {
            let mut r = rng::stream(seed, 0);
            let p = Tensor2::uniform(60, 3, 1.0, &mut r);
            let init = p.gather_rows(&[0, 1, 2, 3, 4]);
            let run = lloyd(&p, init, 100, 0.0);
            for w in run.inertia_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", run.inertia_history);
            }
        }
    }

    #[test]
    fn nmi_examples() {
        let a = [0, 0, 1, 1, 2, 2];
        assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        // 40-digit contingency-table evaluation
        let v = nmi(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((v - 0.343_711_018_485_450_8).abs() < 1e-15, "{v}");
        assert!(nmi(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn signature_examples() {
        let x = Tensor2::from_rows(&[&[1.0, 0.0], &[0.0, 2.0], &[4.0, 4.0], &[-1.0, 0.0]]);
        let star = Graph::new(4, [(0, 1), (0, 2), (0, 3)], x.clone(), None).unwrap();
        assert_eq!(neighborhood_signature(&star, 2, 0, Aggregation::Mean).unwrap(), vec![4.0, 4.0]);
        assert_eq!(neighborhood_signature(&star, 0, 1, Aggregation::Mean).unwrap(), vec![1.0, 1.5]);
        assert_eq!(neighborhood_signature(&star, 1, 1, Aggregation::Sum).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn signature_matches_bfs_on_path() {
        let n = 7;
        let x = Tensor2::from_vec(n, 1, (0..n).map(|i| (i * i) as f64).collect()).unwrap();
        let path = Graph::new(n, (0..n - 1).map(|i| (i, i + 1)), x, None).unwrap();
        for v in 0..n {
            let got = neighborhood_signature(&path, v, 2, Aggregation::Mean).unwrap();
            let within: Vec<usize> = (0..n).filter(|u| u.abs_diff(v) <= 2).collect();
            let want = within.iter().map(|&u| (u * u) as f64).sum::<f64>() / within.len() as f64;
            assert!((got[0] - want).abs() < 1e-12);
        }
    }
}
