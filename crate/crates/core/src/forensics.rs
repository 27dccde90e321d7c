//! Batch-norm collapse on indicator activations, and the all-positive logit
//! audit of a trained predictor.
//!
//! If a decoder unit outputs exactly 1 for positives and 0 for negatives,
//! batch statistics depend only on the composition `(K⁺, K⁻)`: the mean is
//! `K⁺/K`, the population variance `K⁺K⁻/K²`, and after normalisation every
//! positive maps to `√(K⁻/K⁺)` and every negative to `−√(K⁺/K⁻)`.

use serde::{Deserialize, Serialize};

use crate::batching::BatchScheme;
use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::model::{GraphContext, LinkPredictor};
use crate::nn::{BatchNormState, BnMode, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchComposition {
    k_pos: usize,
    k_neg: usize,
}

impl BatchComposition {
    /// Both classes must be present; otherwise the batch variance is zero.
    pub fn new(k: usize, k_pos: usize) -> Result<Self> {
        if k_pos == 0 || k_pos >= k {
            return Err(Error::Composition {
                k,
                k_pos,
                k_neg: k.saturating_sub(k_pos),
            });
        }
        Ok(Self {
            k_pos,
            k_neg: k - k_pos,
        })
    }

    pub fn k(&self) -> usize {
        self.k_pos + self.k_neg
    }

    pub fn k_pos(&self) -> usize {
        self.k_pos
    }

    pub fn k_neg(&self) -> usize {
        self.k_neg
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnCollapse {
    pub mu: f64,
    pub sigma2: f64,
    pub ahat_pos: f64,
    pub ahat_neg: f64,
}

pub fn indicator_collapse(comp: BatchComposition) -> BnCollapse {
    let k = comp.k() as f64;
    let (kp, kn) = (comp.k_pos as f64, comp.k_neg as f64);
    BnCollapse {
        mu: kp / k,
        sigma2: kp * kn / (k * k),
        ahat_pos: (kn / kp).sqrt(),
        ahat_neg: -(kp / kn).sqrt(),
    }
}

/// True iff `γ·â + β` keeps the sign of both collapsed constants, i.e.
/// `γ > 0` and `−γ·â_pos < β < −γ·â_neg`.
pub fn affine_sign_preserved(collapse: &BnCollapse, gamma: f64, beta: f64) -> bool {
    gamma * collapse.ahat_pos + beta > 0.0 && gamma * collapse.ahat_neg + beta < 0.0
}

/// Runs the batch-norm layer in train mode on the indicator column of `comp`
/// and returns the largest deviation from `γ·â + β`, where `â` uses
/// `√(σ² + ε)`.
pub fn verify_collapse_against_layer(
    comp: BatchComposition,
    gamma: f64,
    beta: f64,
    epsilon: f64,
) -> Result<f64> {
    let indicator: Vec<f64> = (0..comp.k())
        .map(|i| if i < comp.k_pos { 1.0 } else { 0.0 })
        .collect();
    let mut bn = BatchNormState::new(1).with_epsilon(epsilon);
    bn.gamma.value[(0, 0)] = gamma;
    bn.beta.value[(0, 0)] = beta;
    let (out, _) = bn.forward(&Tensor2::column(&indicator), BnMode::Train)?;

    let c = indicator_collapse(comp);
    // â scales by σ/√(σ² + ε); the factor is exactly 1 when ε = 0
    let shrink = c.sigma2.sqrt() / (c.sigma2 + epsilon).sqrt();
    let expect_pos = gamma * c.ahat_pos * shrink + beta;
    let expect_neg = gamma * c.ahat_neg * shrink + beta;
    Ok(out
        .as_slice()
        .iter()
        .zip(&indicator)
        .map(|(&o, &a)| (o - if a == 1.0 { expect_pos } else { expect_neg }).abs())
        .fold(0.0, f64::max))
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogitAudit {
    pub probabilities: Vec<f64>,
    /// Share of audited positives with `ρ < 0.5`; `ρ = 0.5` counts as present.
    pub frac_predicted_absent: f64,
    /// Counts over 20 equal bins on `[0, 1]`; `ρ = 1` falls in the last bin.
    pub histogram: [usize; HISTOGRAM_BINS],
}

impl LogitAudit {
    pub fn from_probabilities(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let absent = probabilities.iter().filter(|&&p| p < 0.5).count();
        let mut histogram = [0usize; HISTOGRAM_BINS];
        for &p in &probabilities {
            let bin = ((p * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1;
        }
        Ok(Self {
            frac_predicted_absent: absent as f64 / probabilities.len() as f64,
            probabilities,
            histogram,
        })
    }
}

/// Scores every edge in `test_pos` as a single batch.
pub fn audit_all_positive(
    model: &LinkPredictor,
    ctx: &GraphContext,
    test_pos: &[Edge],
    mode: BnMode,
) -> Result<LogitAudit> {
    if test_pos.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let z = model.encode(ctx)?;
    let scores = model.score_frozen(ctx, &z, test_pos, mode)?;
    LogitAudit::from_probabilities(scores.probs)
}

/// One JSON line of audit output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub scheme: BatchScheme,
    pub bn_mode: BnMode,
    pub frac_predicted_absent: f64,
    pub histogram: Vec<usize>,
    pub seed: u64,
}

impl AuditRecord {
    pub fn new(scheme: BatchScheme, bn_mode: BnMode, audit: &LogitAudit, seed: u64) -> Self {
        Self {
            scheme,
            bn_mode,
            frac_predicted_absent: audit.frac_predicted_absent,
            histogram: audit.histogram.to_vec(),
            seed,
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
