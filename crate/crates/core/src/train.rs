//! Mini-batch training loop.

use serde::{Deserialize, Serialize};

use crate::batching::{
    bias_corrected_batches_with, epoch_negatives, fixed_ratio_batches_with, BatchScheme, MiniBatch,
    DEFAULT_BATCH_SIZE,
};
use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeSplit, Graph};
use crate::metrics::{hits_at_k, trace_ratio};
use crate::model::{GraphContext, LinkPredictor};
use crate::nn::{AdamConfig, AdamState, BnMode};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scheme: BatchScheme,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub hits_k: usize,
    /// Draw training negatives once instead of every epoch.
    pub freeze_negatives: bool,
    /// Bias-corrected batches per epoch; `None` matches the fixed scheme's
    /// edge throughput.
    pub num_batches: Option<usize>,
    /// Keep per-batch loss, composition, `Z₂` gradient norm and trace ratio.
    pub record_batches: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: BatchScheme::FixedRatio,
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 100,
            adam: AdamConfig::default(),
            hits_k: 100,
            freeze_negatives: false,
            num_batches: None,
            record_batches: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// `None` when the validation split is empty or has fewer than `hits_k`
    /// negatives.
    pub valid_hits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub k_pos: usize,
    pub k_neg: usize,
    pub loss: f64,
    pub z2_grad_norm: f64,
    pub trace_ratio: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Trains `model` on `split.train_pos`, passing messages over the training
/// graph only. Negatives are non-edges of the training graph.
pub fn train(
    model: &mut LinkPredictor,
    graph: &Graph,
    split: &EdgeSplit,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainingLog> {
    if config.batch_size < 2 {
        return Err(Error::BatchSizeTooSmall(config.batch_size));
    }
    if split.train_pos.is_empty() {
        return Err(Error::InvalidSplit("no training edges".into()));
    }
    let train_graph = split.train_graph(graph)?;
    let ctx = GraphContext::new(&train_graph, model.config.encoder);
    let mut adam = AdamState::new(config.adam);
    let mut log = TrainingLog::default();
    let frozen = if config.freeze_negatives {
        Some(epoch_negatives(&train_graph, &split.train_pos, seed, 0)?)
    } else {
        None
    };

    for epoch in 0..config.epochs {
        let negatives = match &frozen {
            Some(n) => n.clone(),
            None => epoch_negatives(&train_graph, &split.train_pos, seed, epoch as u64)?,
        };
        let batches = epoch_batches(&split.train_pos, &negatives, config, seed, epoch)?;

        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            model.zero_grad();
            let (loss, grad_norm, z2) =
                model.loss_and_grad(&ctx, &batch.edges, &batch.label_values(), BnMode::Train)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b, loss });
            }
            adam.step(&mut model.params_mut());
            total += loss;
            if config.record_batches {
                log.batches.push(BatchRecord {
                    epoch,
                    k_pos: batch.k_pos,
                    k_neg: batch.k_neg,
                    loss,
                    z2_grad_norm: grad_norm,
                    trace_ratio: batch_trace_ratio(graph, &batch.edges, &z2),
                });
            }
        }
        let mean_loss = total / batches.len().max(1) as f64;
        log::debug!("epoch {epoch}: loss {mean_loss:.6}");
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss,
            valid_hits: validation_hits(model, &ctx, split, config.hits_k)?,
        });
    }
    Ok(log)
}

fn epoch_batches(
    pos: &[Edge],
    neg: &[Edge],
    config: &TrainConfig,
    seed: u64,
    epoch: usize,
) -> Result<Vec<MiniBatch>> {
    let mut rng = rng::substream(seed, streams::BATCHES, epoch as u64);
    match config.scheme {
        BatchScheme::FixedRatio => fixed_ratio_batches_with(pos, neg, config.batch_size, &mut rng),
        BatchScheme::BiasCorrected => {
            bias_corrected_batches_with(pos, neg, config.batch_size, config.num_batches, &mut rng)
        }
    }
}

fn batch_trace_ratio(graph: &Graph, edges: &[Edge], z2: &crate::nn::Tensor2) -> Option<f64> {
    let labels = graph.labels()?;
    let src: Vec<usize> = edges.iter().map(|e| labels[e.u()]).collect();
    trace_ratio(z2, &src).ok().map(|s| s.trace_ratio)
}

fn validation_hits(
    model: &LinkPredictor,
    ctx: &GraphContext,
    split: &EdgeSplit,
    k: usize,
) -> Result<Option<f64>> {
    if split.valid_pos.is_empty() || split.valid_neg.len() < k.max(1) {
        return Ok(None);
    }
    let z = model.encode(ctx)?;
    let pos = model.score_frozen(ctx, &z, &split.valid_pos, BnMode::Eval)?;
    let neg = model.score_frozen(ctx, &z, &split.valid_neg, BnMode::Eval)?;
    Ok(Some(hits_at_k(&pos.logits, &neg.logits, k)?.value))
}
