//! Synthetic stochastic block model graphs, dataset files, and result export.
//!
//! Dataset files: an edge list of whitespace-separated node-id pairs with `#`
//! comments, a headerless CSV of node features (row `i` is node `i`), and an
//! optional label file with one integer per line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorFile;
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::nn::Tensor2;
use crate::rng::{self, streams};

pub const EDGE_FILE: &str = "edges.txt";
pub const FEATURE_FILE: &str = "features.csv";
pub const LABEL_FILE: &str = "labels.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub num_classes: usize,
    pub nodes_per_class: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub class_mean_separation: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            nodes_per_class: vec![100; 4],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            class_mean_separation: 1.0,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("sbm: {msg}")));
        if self.num_classes == 0 || self.nodes_per_class.len() != self.num_classes {
            return bad("nodes_per_class must list one size per class");
        }
        if self.nodes_per_class.contains(&0) {
            return bad("every class needs at least one node");
        }
        if !(0.0..=1.0).contains(&self.p_out) || !(self.p_out..=1.0).contains(&self.p_in) {
            return bad("need 0 <= p_out <= p_in <= 1");
        }
        if self.feature_dim < self.num_classes {
            return bad("feature_dim must be at least num_classes");
        }
        let (sep, noise) = (self.class_mean_separation, self.feature_noise);
        if sep.is_nan() || sep < 0.0 || noise.is_nan() || noise <= 0.0 {
            return bad("need class_mean_separation >= 0 and feature_noise > 0");
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes_per_class.iter().sum()
    }
}

/// Nodes are numbered class by class. Class `c` has mean
/// `class_mean_separation · e_c` plus isotropic Gaussian noise.
pub fn generate_sbm(config: &SbmConfig) -> Result<Graph> {
    config.validate()?;
    let labels: Vec<usize> = config
        .nodes_per_class
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
        .collect();
    let n = labels.len();

    let mut rng = rng::stream(config.seed, streams::SBM_EDGES);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { config.p_in } else { config.p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut rng = rng::stream(config.seed, streams::SBM_FEATURES);
    let noise = Normal::new(0.0, config.feature_noise).map_err(|e| Error::Config(e.to_string()))?;
    let d = config.feature_dim;
    let mut x = Tensor2::zeros(n, d);
    for (i, &c) in labels.iter().enumerate() {
        for (j, v) in x.row_mut(i).iter_mut().enumerate() {
            let mean = if j == c { config.class_mean_separation } else { 0.0 };
            *v = mean + noise.sample(&mut rng);
        }
    }
    Graph::new(n, edges, x, Some(labels))
}

/// Counts of input lines dropped while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub self_loops: usize,
    pub duplicates: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read_features(path: &Path) -> Result<Tensor2> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, found {}", width.unwrap_or(0), record.len()),
            ));
        }
        for field in &record {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad number '{field}'")))?;
            data.push(v);
        }
        rows += 1;
    }
    Tensor2::from_vec(rows, width.unwrap_or(0), data)
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            out.push((i + 1, body.to_string()));
        }
    }
    Ok(out)
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    content_lines(path)?
        .into_iter()
        .map(|(line, s)| {
            s.parse()
                .map_err(|_| parse_err(path, line, format!("bad label '{s}'")))
        })
        .collect()
}

/// Loads a graph whose node count is the number of feature rows. Reversed
/// and repeated edges are merged; self-loops are dropped.
pub fn load_dataset(
    edge_path: impl AsRef<Path>,
    feature_path: impl AsRef<Path>,
    label_path: Option<&Path>,
) -> Result<(Graph, LoadReport)> {
    let edge_path = edge_path.as_ref();
    let features = read_features(feature_path.as_ref())?;
    let n = features.rows();
    let labels = label_path.map(read_labels).transpose()?;
    if let (Some(l), Some(p)) = (&labels, label_path) {
        if l.len() != n {
            return Err(parse_err(p, l.len(), format!("{} labels for {n} feature rows", l.len())));
        }
    }

    let mut report = LoadReport::default();
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for (line, body) in content_lines(edge_path)? {
        let ids: Vec<&str> = body.split_whitespace().collect();
        if ids.len() != 2 {
            return Err(parse_err(edge_path, line, "expected two node ids"));
        }
        let mut pair = [0usize; 2];
        for (slot, s) in pair.iter_mut().zip(&ids) {
            *slot = s
                .parse()
                .map_err(|_| parse_err(edge_path, line, format!("bad node id '{s}'")))?;
            if *slot >= n {
                return Err(parse_err(
                    edge_path,
                    line,
                    format!("node {slot} out of range for {n} feature rows"),
                ));
            }
        }
        match Edge::try_new(pair[0], pair[1]) {
            None => report.self_loops += 1,
            Some(e) if !seen.insert(e) => report.duplicates += 1,
            Some(e) => edges.push((e.u(), e.v())),
        }
    }
    if report.self_loops > 0 {
        log::warn!("{}: dropped {} self-loops", edge_path.display(), report.self_loops);
    }
    Ok((Graph::new(n, edges, features, labels)?, report))
}

/// Writes the three dataset files into `dir` (the label file only when the
/// graph has labels) and returns their paths.
pub fn save_dataset(graph: &Graph, dir: impl AsRef<Path>) -> Result<[PathBuf; 3]> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let paths = [dir.join(EDGE_FILE), dir.join(FEATURE_FILE), dir.join(LABEL_FILE)];

    let mut w = BufWriter::new(File::create(&paths[0])?);
    for e in graph.edges() {
        writeln!(w, "{} {}", e.u(), e.v())?;
    }
    w.flush()?;

    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&paths[1])?;
    let x = graph.features();
    for i in 0..x.rows() {
        w.write_record(x.row(i).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;

    if let Some(labels) = graph.labels() {
        let mut w = BufWriter::new(File::create(&paths[2])?);
        for l in labels {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
    }
    Ok(paths)
}

pub fn save_embeddings(path: impl AsRef<Path>, matrix: &Tensor2) -> Result<()> {
    TensorFile {
        meta: vec![("kind".into(), "embeddings".into())],
        tensors: vec![("embeddings".into(), matrix.clone())],
    }
    .save(path)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Tensor2> {
    let file = TensorFile::load(path)?;
    file.tensor("embeddings")
        .cloned()
        .ok_or_else(|| Error::Checkpoint("no 'embeddings' tensor".into()))
}

/// One result row. Metrics that could not be computed are written as empty
/// cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub dataset: String,
    pub model: String,
    pub scheme: String,
    pub seed: u64,
    pub hits: Option<f64>,
    pub trace_ratio: Option<f64>,
    pub nmi: Option<f64>,
    pub frac_predicted_absent: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Writes rows under the header
/// `dataset,model,scheme,seed,hits@K,TR,NMI,frac_predicted_absent`.
pub fn write_metrics(w: impl Write, hits_k: usize, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let hits = format!("hits@{hits_k}");
    w.write_record([
        "dataset",
        "model",
        "scheme",
        "seed",
        hits.as_str(),
        "TR",
        "NMI",
        "frac_predicted_absent",
    ])?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.scheme.clone(),
            r.seed.to_string(),
            cell(r.hits),
            cell(r.trace_ratio),
            cell(r.nmi),
            cell(r.frac_predicted_absent),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_metrics(path: impl AsRef<Path>, hits_k: usize, rows: &[MetricsRow]) -> Result<()> {
    write_metrics(File::create(path)?, hits_k, rows)
}
