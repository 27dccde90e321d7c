//! End-to-end runs: split, train, evaluate, and scheme comparisons over seeds.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::batching::BatchScheme;
use crate::data::MetricsRow;
use crate::error::{Error, Result};
use crate::forensics::{audit_all_positive, LogitAudit};
use crate::graph::{split_edges, EdgeSplit, Graph, SplitFractions};
use crate::metrics::{edge_to_node, hits_at_k, kmeans, nmi, trace_ratio, KMeansConfig};
use crate::model::{GraphContext, LinkPredictor, ModelConfig};
use crate::nn::BnMode;
use crate::train::{train, TrainConfig, TrainingLog};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
    pub kmeans: KMeansConfig,
}

/// Metrics of one trained model. Entries are `None` when the graph cannot
/// support them (no labels, too few test negatives, a single class).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub hits: Option<f64>,
    pub trace_ratio: Option<f64>,
    pub nmi: Option<f64>,
    pub audit_eval: LogitAudit,
    pub audit_batch_stats: LogitAudit,
}

impl Evaluation {
    pub fn audit(&self, mode: BnMode) -> &LogitAudit {
        match mode {
            BnMode::Eval => &self.audit_eval,
            _ => &self.audit_batch_stats,
        }
    }
}

/// Evaluates on the held-out split with message passing over the training
/// graph.
///
/// * Hits@K: test positives ranked against test negatives (Eval mode).
/// * TR: `Z₂` of the test positives, each labelled by the class of its
///   lower-numbered endpoint.
/// * NMI: `Z₂` of every graph edge averaged onto nodes, clustered with
///   k-means (`k` = number of classes) and compared with the labels.
pub fn evaluate(
    model: &LinkPredictor,
    graph: &Graph,
    split: &EdgeSplit,
    hits_k: usize,
    kmeans_config: KMeansConfig,
    seed: u64,
) -> Result<Evaluation> {
    let train_graph = split.train_graph(graph)?;
    let ctx = GraphContext::new(&train_graph, model.config.encoder);
    let z = model.encode(&ctx)?;

    let pos = model.score_frozen(&ctx, &z, &split.test_pos, BnMode::Eval)?;
    let hits = if split.test_neg.len() >= hits_k.max(1) && !split.test_pos.is_empty() {
        let neg = model.score_frozen(&ctx, &z, &split.test_neg, BnMode::Eval)?;
        Some(hits_at_k(&pos.logits, &neg.logits, hits_k)?.value)
    } else {
        None
    };

    let (mut tr, mut cluster_nmi) = (None, None);
    if let Some(labels) = graph.labels() {
        let src: Vec<usize> = split.test_pos.iter().map(|e| labels[e.u()]).collect();
        tr = match trace_ratio(&pos.z2, &src) {
            Ok(s) => Some(s.trace_ratio),
            Err(Error::SingleClass | Error::NoScatter(_)) => None,
            Err(e) => return Err(e),
        };
        let classes = graph.num_classes();
        if classes >= 2 && graph.num_edges() > 0 {
            let all = model.score_frozen(&ctx, &z, graph.edges(), BnMode::Eval)?;
            let nodes = edge_to_node(&all.z2, graph)?;
            cluster_nmi = match kmeans(&nodes, classes, seed, kmeans_config) {
                Ok(c) => Some(nmi(&c.labels, labels)?),
                Err(Error::TooFewDistinctPoints { .. }) => None,
                Err(e) => return Err(e),
            };
        }
    }

    Ok(Evaluation {
        hits,
        trace_ratio: tr,
        nmi: cluster_nmi,
        audit_eval: audit_all_positive(model, &ctx, &split.test_pos, BnMode::Eval)?,
        audit_batch_stats: audit_all_positive(model, &ctx, &split.test_pos, BnMode::EvalBatchStats)?,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub scheme: BatchScheme,
    pub use_batchnorm: bool,
    pub model: LinkPredictor,
    pub split: EdgeSplit,
    pub log: TrainingLog,
    pub eval: Evaluation,
}

impl SeedRun {
    pub fn metrics_row(&self, dataset: &str) -> MetricsRow {
        MetricsRow {
            dataset: dataset.to_string(),
            model: model_label(&self.model.config),
            scheme: self.scheme.to_string(),
            seed: self.seed,
            hits: self.eval.hits,
            trace_ratio: self.eval.trace_ratio,
            nmi: self.eval.nmi,
            frac_predicted_absent: Some(self.eval.audit_eval.frac_predicted_absent),
        }
    }
}

pub fn model_label(config: &ModelConfig) -> String {
    if config.use_batchnorm {
        config.encoder.to_string()
    } else {
        format!("{}-no-bn", config.encoder)
    }
}

/// Splits, initialises and trains with every seed set to `seed`, so the two
/// schemes share the split and initial weights.
pub fn run_seed(graph: &Graph, config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let split = split_edges(graph, config.split, seed)?;
    let model_config = ModelConfig {
        seed,
        ..config.model.clone()
    };
    let mut model = LinkPredictor::new(model_config, graph.feature_dim())?;
    let log = train(&mut model, graph, &split, &config.train, seed)?;
    let eval = evaluate(&model, graph, &split, config.train.hits_k, config.kmeans, seed)?;
    Ok(SeedRun {
        seed,
        scheme: config.train.scheme,
        use_batchnorm: model.config.use_batchnorm,
        model,
        split,
        log,
        eval,
    })
}

fn worker_count(jobs: usize) -> usize {
    std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs)
        .max(1)
}

/// Runs `f` over `jobs` on a thread pool; results keep the input order.
fn parallel_map<J: Sync, T: Send>(jobs: &[J], f: impl Fn(&J) -> Result<T> + Sync) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..worker_count(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let out = f(job);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job runs"))
        .collect()
}

/// Runs every seed under each configuration in `configs`, in parallel.
/// Results are ordered by configuration, then seed.
pub fn run_many(graph: &Graph, configs: &[ExperimentConfig], seeds: &[u64]) -> Result<Vec<SeedRun>> {
    let jobs: Vec<(&ExperimentConfig, u64)> =
        configs.iter().flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    parallel_map(&jobs, |(c, s)| run_seed(graph, c, *s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Hits,
    TraceRatio,
    Nmi,
    FracAbsentEval,
    FracAbsentBatchStats,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Hits,
        Metric::TraceRatio,
        Metric::Nmi,
        Metric::FracAbsentEval,
        Metric::FracAbsentBatchStats,
    ];

    pub fn name(&self, hits_k: usize) -> String {
        match self {
            Metric::Hits => format!("hits@{hits_k}"),
            Metric::TraceRatio => "TR".into(),
            Metric::Nmi => "NMI".into(),
            Metric::FracAbsentEval => "frac_predicted_absent_eval".into(),
            Metric::FracAbsentBatchStats => "frac_predicted_absent_batch_stats".into(),
        }
    }

    pub fn of(&self, eval: &Evaluation) -> Option<f64> {
        match self {
            Metric::Hits => eval.hits,
            Metric::TraceRatio => eval.trace_ratio,
            Metric::Nmi => eval.nmi,
            Metric::FracAbsentEval => Some(eval.audit_eval.frac_predicted_absent),
            Metric::FracAbsentBatchStats => Some(eval.audit_batch_stats.frac_predicted_absent),
        }
    }
}

/// Mean and sample standard deviation; `std` is `None` below two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: Metric,
    pub use_batchnorm: bool,
    pub original: Option<MeanStd>,
    pub bias_corrected: Option<MeanStd>,
}

impl ComparisonRow {
    pub fn change(&self) -> Option<f64> {
        Some(self.bias_corrected?.mean - self.original?.mean)
    }
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub hits_k: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedRun>,
    pub table: Vec<ComparisonRow>,
}

fn summarise(runs: &[SeedRun], scheme: BatchScheme, bn: bool, metric: Metric) -> Option<MeanStd> {
    let values: Vec<f64> = runs
        .iter()
        .filter(|r| r.scheme == scheme && r.use_batchnorm == bn)
        .filter_map(|r| metric.of(&r.eval))
        .collect();
    MeanStd::of(&values)
}

/// Both schemes with BN on and off over `seeds`. Only `config.model.
/// use_batchnorm` and `config.train.scheme` are overridden.
pub fn sweep(graph: &Graph, config: &ExperimentConfig, seeds: &[u64]) -> Result<Sweep> {
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    let mut configs = Vec::new();
    for bn in [true, false] {
        for scheme in BatchScheme::ALL {
            let mut c = config.clone();
            c.model.use_batchnorm = bn;
            c.train.scheme = scheme;
            configs.push(c);
        }
    }
    let runs = run_many(graph, &configs, seeds)?;
    let mut table = Vec::new();
    for bn in [true, false] {
        for metric in Metric::ALL {
            table.push(ComparisonRow {
                metric,
                use_batchnorm: bn,
                original: summarise(&runs, BatchScheme::FixedRatio, bn, metric),
                bias_corrected: summarise(&runs, BatchScheme::BiasCorrected, bn, metric),
            });
        }
    }
    Ok(Sweep {
        hits_k: config.train.hits_k,
        seeds: seeds.to_vec(),
        runs,
        table,
    })
}

impl Sweep {
    pub fn row(&self, metric: Metric, use_batchnorm: bool) -> Option<&ComparisonRow> {
        self.table
            .iter()
            .find(|r| r.metric == metric && r.use_batchnorm == use_batchnorm)
    }

    /// Comparison table as CSV with Original / Bias-Corrected / Change
    /// columns.
    pub fn write_table(&self, w: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record([
            "metric",
            "batchnorm",
            "original_mean",
            "original_std",
            "bias_corrected_mean",
            "bias_corrected_std",
            "change",
        ])?;
        let f = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for r in &self.table {
            w.write_record([
                r.metric.name(self.hits_k),
                if r.use_batchnorm { "on" } else { "off" }.to_string(),
                f(r.original.map(|m| m.mean)),
                f(r.original.and_then(|m| m.std)),
                f(r.bias_corrected.map(|m| m.mean)),
                f(r.bias_corrected.and_then(|m| m.std)),
                f(r.change()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn metrics_rows(&self, dataset: &str) -> Vec<MetricsRow> {
        self.runs.iter().map(|r| r.metrics_row(dataset)).collect()
    }
}
