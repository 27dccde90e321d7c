use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use linklab::batching::BatchScheme;
use linklab::data::{generate_sbm, load_dataset, SbmConfig};
use linklab::experiment::ExperimentConfig;
use linklab::graph::{Graph, SplitFractions};
use linklab::metrics::KMeansConfig;
use linklab::model::ModelConfig;
use linklab::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Sbm(SbmConfig),
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: Option<PathBuf>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Sbm(SbmConfig::default())
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Graph> {
        match self {
            DatasetSource::Sbm(cfg) => Ok(generate_sbm(cfg)?),
            DatasetSource::Files {
                edges,
                features,
                labels,
            } => {
                let (g, report) = load_dataset(edges, features, labels.as_deref())?;
                if report.duplicates > 0 {
                    log::info!("merged {} duplicate edge lines", report.duplicates);
                }
                Ok(g)
            }
        }
    }
}

/// Experiment manifest. Every field has a default, so `{}` is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub dataset_name: Option<String>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
    pub kmeans: KMeansConfig,
    pub schemes: Vec<BatchScheme>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::default(),
            dataset_name: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitFractions::default(),
            kmeans: KMeansConfig::default(),
            schemes: BatchScheme::ALL.to_vec(),
            seeds: vec![0],
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!(linklab::Error::Config("seeds must not be empty".into()));
        }
        if self.schemes.is_empty() {
            bail!(linklab::Error::Config("schemes must not be empty".into()));
        }
        if self.train.batch_size < 2 {
            bail!(linklab::Error::BatchSizeTooSmall(self.train.batch_size));
        }
        self.model.validate()?;
        Ok(())
    }

    pub fn experiment(&self, scheme: BatchScheme) -> ExperimentConfig {
        let mut train = self.train.clone();
        train.scheme = scheme;
        ExperimentConfig {
            model: self.model.clone(),
            train,
            split: self.split,
            kmeans: self.kmeans,
        }
    }

    pub fn dataset_name(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| match &self.dataset {
            DatasetSource::Sbm(_) => "sbm".into(),
            DatasetSource::Files { edges, .. } => edges
                .parent()
                .and_then(Path::file_name)
                .map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

fn parse_scheme(s: &str) -> Result<BatchScheme, String> {
    s.parse().map_err(|e: linklab::Error| e.to_string())
}

/// Options shared by the experiment commands. Flags override the JSON config.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON experiment manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Batching scheme: fixed or bias-corrected
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<BatchScheme>,
    /// Batch normalisation in the decoder
    #[arg(long, value_enum)]
    pub bn: Option<Toggle>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hits_k: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Edge list file; replaces the configured dataset
    #[arg(long, requires = "features")]
    pub edges: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "edges")]
    pub labels: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| linklab::Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.scheme {
            cfg.schemes = vec![s];
        }
        if let Some(bn) = self.bn {
            cfg.model.use_batchnorm = bn == Toggle::On;
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(k) = self.batch_size {
            cfg.train.batch_size = k;
        }
        if let Some(k) = self.hits_k {
            cfg.train.hits_k = k;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let (Some(edges), Some(features)) = (&self.edges, &self.features) {
            cfg.dataset = DatasetSource::Files {
                edges: edges.clone(),
                features: features.clone(),
                labels: self.labels.clone(),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_is_default() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn flags_override_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"seeds":[1,2],"train":{"epochs":7,"batch_size":64},"model":{"use_batchnorm":true}}"#,
        )
        .unwrap();
        let args = RunArgs {
            config: Some(path),
            epochs: Some(3),
            bn: Some(Toggle::Off),
            scheme: Some(BatchScheme::BiasCorrected),
            ..RunArgs::default()
        };
        let cfg = args.resolve().unwrap();
        assert_eq!(cfg.seeds, [1, 2]);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 64);
        assert!(!cfg.model.use_batchnorm);
        assert_eq!(cfg.schemes, [BatchScheme::BiasCorrected]);
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"epochs":3}"#).is_err());
    }

    #[test]
    fn empty_seed_list_rejected() {
        let cfg = RunConfig {
            seeds: vec![],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
