//! GCN / SAGE link predictor: encoder → gather → Hadamard → BN-MLP →
//! optional structural features → linear logit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{mean_aggregator, normalized_adjacency, CsrMatrix, Edge, Graph};
use crate::nn::gradcheck::{self, GradReport, Probe};
use crate::nn::{
    bce_with_logits, gcn_layer, hadamard, linear, relu, sage_layer, sigmoid, BatchNormState,
    BnCache, BnMode, GcnCache, HadamardCache, LinearCache, Param, ReluCache, SageCache, Tensor2,
};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Gcn,
    SageMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructuralEncoder {
    None,
    CommonNeighbors,
    AdamicAdar,
}

impl StructuralEncoder {
    pub fn width(&self) -> usize {
        match self {
            StructuralEncoder::None => 0,
            StructuralEncoder::CommonNeighbors | StructuralEncoder::AdamicAdar => 1,
        }
    }
}

macro_rules! string_enum {
    ($ty:ty { $($variant:path => $name:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

string_enum!(EncoderKind {
    EncoderKind::Gcn => "gcn",
    EncoderKind::SageMean => "sage-mean",
});

string_enum!(StructuralEncoder {
    StructuralEncoder::None => "none",
    StructuralEncoder::CommonNeighbors => "common-neighbors",
    StructuralEncoder::AdamicAdar => "adamic-adar",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    /// Output width of each encoder layer; its length is the layer count.
    pub hidden_dims: Vec<usize>,
    pub decoder_hidden: usize,
    pub structural: StructuralEncoder,
    pub use_batchnorm: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Gcn,
            hidden_dims: vec![128, 128],
            decoder_hidden: 128,
            structural: StructuralEncoder::None,
            use_batchnorm: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.hidden_dims.contains(&0) || self.decoder_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated")
    }
}

/// Message-passing structure of one graph, prepared for an encoder kind.
#[derive(Debug, Clone)]
pub struct GraphContext {
    encoder: EncoderKind,
    propagation: CsrMatrix,
    propagation_t: CsrMatrix,
    neighbors: Vec<Vec<usize>>,
    features: Tensor2,
}

impl GraphContext {
    pub fn new(graph: &Graph, encoder: EncoderKind) -> Self {
        let (propagation, propagation_t) = match encoder {
            EncoderKind::Gcn => {
                let a = normalized_adjacency(graph).matrix().clone();
                (a.clone(), a)
            }
            EncoderKind::SageMean => {
                let m = mean_aggregator(graph);
                let t = m.transpose();
                (m, t)
            }
        };
        Self {
            encoder,
            propagation,
            propagation_t,
            neighbors: graph.neighbors(),
            features: graph.features().clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn encoder(&self) -> EncoderKind {
        self.encoder
    }
}

/// Structural pair features on the context's message-passing graph.
pub fn structural_features(
    neighbors: &[Vec<usize>],
    edges: &[Edge],
    kind: StructuralEncoder,
) -> Tensor2 {
    let mut out = Tensor2::zeros(edges.len(), kind.width());
    if kind == StructuralEncoder::None {
        return out;
    }
    for (r, e) in edges.iter().enumerate() {
        let (a, b) = (&neighbors[e.u()], &neighbors[e.v()]);
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += match kind {
                        StructuralEncoder::CommonNeighbors => 1.0,
                        _ => {
                            let ln_deg = (neighbors[a[i]].len() as f64).ln();
                            if ln_deg > 0.0 {
                                1.0 / ln_deg
                            } else {
                                0.0
                            }
                        }
                    };
                    i += 1;
                    j += 1;
                }
            }
        }
        out[(r, 0)] = acc;
    }
    out
}

/// Outputs of scoring a batch of edges.
#[derive(Debug, Clone)]
pub struct Scores {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    /// Penultimate activations (BN-MLP output, before structural features).
    pub z2: Tensor2,
}

enum EncoderCache {
    Gcn(GcnCache),
    Sage(SageCache),
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    encoder: Vec<EncoderCache>,
    decoder: DecoderCache,
}

impl ForwardCache {
    /// Concatenated ReLU activation patterns.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for c in &self.encoder {
            let mask = match c {
                EncoderCache::Gcn(c) => c.mask(),
                EncoderCache::Sage(c) => c.mask(),
            };
            out.extend_from_slice(mask.unwrap_or_default());
        }
        out.extend_from_slice(self.decoder.relu.mask());
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkPredictor {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub encoder: Vec<Param>,
    pub w1: Param,
    pub b1: Param,
    pub bn: BatchNormState,
    pub w2: Param,
    pub b2: Param,
}

impl LinkPredictor {
    pub fn new(config: ModelConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("input feature dimension must be positive".into()));
        }
        let mut rng = rng::stream(config.seed, streams::INIT);
        let mut encoder = Vec::with_capacity(config.hidden_dims.len());
        let mut fan_in = input_dim;
        for &width in &config.hidden_dims {
            let rows = match config.encoder {
                EncoderKind::Gcn => fan_in,
                EncoderKind::SageMean => 2 * fan_in,
            };
            encoder.push(Param::new(Tensor2::glorot(rows, width, &mut rng)));
            fan_in = width;
        }
        let h = config.decoder_hidden;
        let w1 = Param::new(Tensor2::glorot(fan_in, h, &mut rng));
        let b1 = Param::new(Tensor2::zeros(1, h));
        let d2 = h + config.structural.width();
        let w2 = Param::new(Tensor2::glorot(d2, 1, &mut rng));
        let b2 = Param::new(Tensor2::zeros(1, 1));
        Ok(Self {
            bn: BatchNormState::new(h),
            config,
            input_dim,
            encoder,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.encoder.iter_mut().collect();
        out.push(&mut self.w1);
        out.push(&mut self.b1);
        if self.config.use_batchnorm {
            out.push(&mut self.bn.gamma);
            out.push(&mut self.bn.beta);
        }
        out.push(&mut self.w2);
        out.push(&mut self.b2);
        out
    }

    /// Named parameter tensors in a fixed order (BN running statistics
    /// included as `1 × h` rows).
    pub fn named_tensors(&self) -> Vec<(String, Tensor2)> {
        let mut out: Vec<(String, Tensor2)> = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("encoder.{i}.weight"), p.value.clone()))
            .collect();
        let h = self.bn.width();
        let row = |v: &[f64]| Tensor2::from_vec(1, h, v.to_vec()).expect("width");
        out.extend([
            ("decoder.w1".into(), self.w1.value.clone()),
            ("decoder.b1".into(), self.b1.value.clone()),
            ("bn.gamma".into(), self.bn.gamma.value.clone()),
            ("bn.beta".into(), self.bn.beta.value.clone()),
            ("bn.running_mean".into(), row(&self.bn.running_mean)),
            ("bn.running_var".into(), row(&self.bn.running_var)),
            ("decoder.w2".into(), self.w2.value.clone()),
            ("decoder.b2".into(), self.b2.value.clone()),
        ]);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_context(&self, ctx: &GraphContext) -> Result<()> {
        if ctx.encoder != self.config.encoder {
            return Err(Error::Config(format!(
                "context built for {} but model uses {}",
                ctx.encoder, self.config.encoder
            )));
        }
        if ctx.features.cols() != self.input_dim {
            return Err(Error::shape("encode", self.input_dim, ctx.features.cols()));
        }
        Ok(())
    }

    fn encode_cached(&self, ctx: &GraphContext) -> Result<(Tensor2, Vec<EncoderCache>)> {
        self.check_context(ctx)?;
        let mut h = ctx.features.clone();
        let mut caches = Vec::with_capacity(self.encoder.len());
        for w in &self.encoder {
            let (out, cache) = match ctx.encoder {
                EncoderKind::Gcn => {
                    let (o, c) = gcn_layer(&h, w, &ctx.propagation, true)?;
                    (o, EncoderCache::Gcn(c))
                }
                EncoderKind::SageMean => {
                    let (o, c) = sage_layer(&h, w, &ctx.propagation, true)?;
                    (o, EncoderCache::Sage(c))
                }
            };
            h = out;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    /// Node embeddings `Z = H^(L)`.
    pub fn encode(&self, ctx: &GraphContext) -> Result<Tensor2> {
        Ok(self.encode_cached(ctx)?.0)
    }

    /// Decoder on precomputed node embeddings. Only `BnMode::Train` mutates
    /// (running statistics).
    fn decode(
        &mut self,
        ctx: &GraphContext,
        z: &Tensor2,
        edges: &[Edge],
        mode: BnMode,
    ) -> Result<(Vec<f64>, Tensor2, DecoderCache)> {
        if edges.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let src: Vec<usize> = edges.iter().map(Edge::u).collect();
        let dst: Vec<usize> = edges.iter().map(Edge::v).collect();
        if let Some(&bad) = src.iter().chain(&dst).find(|&&n| n >= z.rows()) {
            return Err(Error::InvalidGraph(format!("edge endpoint {bad} out of range")));
        }
        let (z1, had) = hadamard(&z.gather_rows(&src), &z.gather_rows(&dst))?;
        let (a1, lin1) = linear(&z1, &self.w1, &self.b1)?;
        let (normed, bn) = if self.config.use_batchnorm {
            let (o, c) = self.bn.forward(&a1, mode)?;
            (o, Some(c))
        } else {
            (a1, None)
        };
        let (z2, relu_cache) = relu(&normed);
        let s = structural_features(&ctx.neighbors, edges, self.config.structural);
        let (logits, lin2) = linear(&z2.hcat(&s)?, &self.w2, &self.b2)?;
        Ok((
            logits.into_vec(),
            z2,
            DecoderCache {
                src,
                dst,
                hadamard: had,
                lin1,
                bn,
                relu: relu_cache,
                lin2,
            },
        ))
    }

    /// Scores `edges` as one batch. In `Eval` mode the model is untouched; in
    /// `Train` mode BN running statistics are updated.
    pub fn score_edges(&mut self, ctx: &GraphContext, edges: &[Edge], mode: BnMode) -> Result<Scores> {
        let z = self.encode(ctx)?;
        self.score_with_embeddings(ctx, &z, edges, mode)
    }

    /// As [`score_edges`](Self::score_edges) with embeddings computed once by
    /// the caller.
    pub fn score_with_embeddings(
        &mut self,
        ctx: &GraphContext,
        z: &Tensor2,
        edges: &[Edge],
        mode: BnMode,
    ) -> Result<Scores> {
        let (logits, z2, _) = self.decode(ctx, z, edges, mode)?;
        let probs = logits.iter().map(|&l| sigmoid(l)).collect();
        Ok(Scores { logits, probs, z2 })
    }

    /// Frozen-model scoring that never mutates BN state; `Train` is treated
    /// as `EvalBatchStats`.
    pub fn score_frozen(
        &self,
        ctx: &GraphContext,
        z: &Tensor2,
        edges: &[Edge],
        mode: BnMode,
    ) -> Result<Scores> {
        let mode = if mode == BnMode::Train {
            BnMode::EvalBatchStats
        } else {
            mode
        };
        self.clone().score_with_embeddings(ctx, z, edges, mode)
    }

    /// Train-mode forward pass with everything cached for [`backward`].
    ///
    /// [`backward`]: Self::backward
    pub fn forward(
        &mut self,
        ctx: &GraphContext,
        edges: &[Edge],
        mode: BnMode,
    ) -> Result<(Scores, ForwardCache)> {
        let (z, encoder) = self.encode_cached(ctx)?;
        let (logits, z2, decoder) = self.decode(ctx, &z, edges, mode)?;
        let probs = logits.iter().map(|&l| sigmoid(l)).collect();
        Ok((Scores { logits, probs, z2 }, ForwardCache { encoder, decoder }))
    }

    /// Accumulates parameter gradients from `dlogits` and returns the
    /// gradient with respect to `Z₂`.
    pub fn backward(
        &mut self,
        ctx: &GraphContext,
        cache: &ForwardCache,
        dlogits: &[f64],
    ) -> Result<Tensor2> {
        let dec = &cache.decoder;
        let g = Tensor2::from_vec(dlogits.len(), 1, dlogits.to_vec())?;
        let d_concat = dec.lin2.backward(&g, &mut self.w2, &mut self.b2)?;
        let (dz2, _) = d_concat.hsplit(self.config.decoder_hidden);
        let d_norm = dec.relu.backward(&dz2);
        let d_a1 = match &dec.bn {
            Some(bn) => bn.backward(&d_norm, &mut self.bn)?,
            None => d_norm,
        };
        let d_z1 = dec.lin1.backward(&d_a1, &mut self.w1, &mut self.b1)?;
        let (d_zs, d_zt) = dec.hadamard.backward(&d_z1)?;

        let mut dz = Tensor2::zeros(ctx.num_nodes(), self.config.embedding_dim());
        for (r, (&s, &t)) in dec.src.iter().zip(&dec.dst).enumerate() {
            for (d, &g) in dz.row_mut(s).iter_mut().zip(d_zs.row(r)) {
                *d += g;
            }
            for (d, &g) in dz.row_mut(t).iter_mut().zip(d_zt.row(r)) {
                *d += g;
            }
        }
        for (w, c) in self.encoder.iter_mut().zip(&cache.encoder).rev() {
            dz = match c {
                EncoderCache::Gcn(c) => c.backward(&dz, w, &ctx.propagation_t)?,
                EncoderCache::Sage(c) => c.backward(&dz, w, &ctx.propagation_t)?,
            };
        }
        Ok(dz2)
    }

    /// Mean BCE of one batch; gradients are accumulated into the parameters.
    /// Returns `(loss, ‖∂loss/∂Z₂‖_F, Z₂)`.
    pub fn loss_and_grad(
        &mut self,
        ctx: &GraphContext,
        edges: &[Edge],
        labels: &[f64],
        mode: BnMode,
    ) -> Result<(f64, f64, Tensor2)> {
        let (scores, cache) = self.forward(ctx, edges, mode)?;
        let (loss, dlogits) = bce_with_logits(&scores.logits, labels)?;
        let dz2 = self.backward(ctx, &cache, &dlogits)?;
        Ok((loss, dz2.frobenius_norm(), scores.z2))
    }
}

struct DecoderCache {
    src: Vec<usize>,
    dst: Vec<usize>,
    hadamard: HadamardCache,
    lin1: LinearCache,
    bn: Option<BnCache>,
    relu: ReluCache,
    lin2: LinearCache,
}

/// Finite-difference check of the BCE gradient with respect to every model
/// parameter on one batch. BN uses `EvalBatchStats` so probing does not move
/// the running statistics.
pub fn end_to_end_gradcheck(
    model: &LinkPredictor,
    ctx: &GraphContext,
    edges: &[Edge],
    labels: &[f64],
) -> Result<Vec<GradReport>> {
    let mode = BnMode::EvalBatchStats;
    let mut analytic = model.clone();
    analytic.zero_grad();
    analytic.loss_and_grad(ctx, edges, labels, mode)?;

    let names: Vec<String> = {
        let mut n: Vec<String> = (0..model.encoder.len())
            .map(|i| format!("encoder.{i}.weight"))
            .collect();
        n.extend(["decoder.w1", "decoder.b1"].map(String::from));
        if model.config.use_batchnorm {
            n.extend(["bn.gamma", "bn.beta"].map(String::from));
        }
        n.extend(["decoder.w2", "decoder.b2"].map(String::from));
        n
    };
    let grads: Vec<Tensor2> = analytic.params_mut().iter().map(|p| p.grad.clone()).collect();
    let values: Vec<Tensor2> = analytic.params_mut().iter().map(|p| p.value.clone()).collect();

    let mut reports = Vec::with_capacity(names.len());
    for (idx, name) in names.iter().enumerate() {
        let shape = values[idx].shape();
        reports.push(gradcheck::check_gradient(
            name,
            values[idx].as_slice(),
            grads[idx].as_slice(),
            gradcheck::DEFAULT_STEP,
            |x| {
                let mut m = model.clone();
                m.params_mut()[idx].value = Tensor2::from_vec(shape.0, shape.1, x.to_vec()).unwrap();
                let (scores, cache) = m.forward(ctx, edges, mode).unwrap();
                Probe {
                    value: bce_with_logits(&scores.logits, labels).unwrap().0,
                    pattern: cache.relu_pattern(),
                }
            },
        ));
    }
    Ok(reports)
}

/// End-to-end checks over `configs` random small graphs, architectures and
/// batches. Returns one merged report per parameter name.
pub fn model_suite(seed: u64, configs: usize) -> Result<Vec<GradReport>> {
    use rand::seq::IndexedRandom as _;
    use rand::Rng as _;

    let mut all: Vec<GradReport> = Vec::new();
    for c in 0..configs {
        let mut rng = rng::substream(seed, 0xE2E, c as u64);
        let n = rng.random_range(5..=10);
        let d = rng.random_range(1..=4);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < 0.35 {
                    edges.push((u, v));
                }
            }
        }
        let x = Tensor2::uniform(n, d, 1.0, &mut rng);
        let graph = Graph::new(n, edges, x, None)?;
        let layers = rng.random_range(1..=2);
        let config = ModelConfig {
            encoder: *[EncoderKind::Gcn, EncoderKind::SageMean].choose(&mut rng).expect("nonempty"),
            hidden_dims: (0..layers).map(|_| rng.random_range(2..=5)).collect(),
            decoder_hidden: rng.random_range(2..=5),
            structural: *[StructuralEncoder::None, StructuralEncoder::CommonNeighbors, StructuralEncoder::AdamicAdar]
                .choose(&mut rng)
                .expect("nonempty"),
            use_batchnorm: rng.random_bool(0.7),
            seed: rng.random(),
        };
        let mut model = LinkPredictor::new(config, d)?;
        // move BN away from its identity initialisation
        for p in [&mut model.bn.gamma, &mut model.bn.beta, &mut model.b1, &mut model.b2] {
            for v in p.value.as_mut_slice() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let ctx = GraphContext::new(&graph, model.config.encoder);
        let k = rng.random_range(3..=8);
        let batch: Vec<Edge> = (0..k)
            .map(|_| loop {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                if let Some(e) = Edge::try_new(a, b) {
                    break e;
                }
            })
            .collect();
        let mut labels: Vec<f64> = (0..k).map(|_| f64::from(rng.random_bool(0.5))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        all.extend(end_to_end_gradcheck(&model, &ctx, &batch, &labels)?);
    }
    let mut names: Vec<String> = Vec::new();
    for r in &all {
        if !names.contains(&r.name) {
            names.push(r.name.clone());
        }
    }
    Ok(names
        .iter()
        .map(|name| {
            let group: Vec<GradReport> = all.iter().filter(|r| &r.name == name).cloned().collect();
            GradReport::merge(&group, &format!("model.{name}"))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_graph() -> Graph {
        // 0-1-2-3 path plus chord 0-2
        let x = Tensor2::from_rows(&[
            &[1.0, 0.5, -0.3],
            &[0.2, -1.0, 0.8],
            &[-0.7, 0.4, 0.1],
            &[0.9, 0.9, -0.6],
        ]);
        Graph::new(4, [(0, 1), (1, 2), (2, 3), (0, 2)], x, None).unwrap()
    }

    fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            hidden_dims: vec![4, 3],
            decoder_hidden: 5,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn single_layer_identity_encoder_is_relu_of_features() {
        let g = Graph::new(
            2,
            [],
            Tensor2::from_rows(&[&[1.0, -2.0], &[-0.5, 3.0]]),
            None,
        )
        .unwrap();
        let ctx = GraphContext::new(&g, EncoderKind::Gcn);
        let mut m = LinkPredictor::new(
            ModelConfig {
                hidden_dims: vec![2],
                ..small_config(0)
            },
            2,
        )
        .unwrap();
        m.encoder[0].value = Tensor2::identity(2);
        let z = m.encode(&ctx).unwrap();
        assert_eq!(z, g.features().map(|v| v.max(0.0)));
    }

    #[test]
    fn zero_features_give_zero_embeddings() {
        let g = toy_graph();
        let g0 = Graph::new(4, [(0, 1), (1, 2)], Tensor2::zeros(4, 3), None).unwrap();
        let m = LinkPredictor::new(small_config(3), g.feature_dim()).unwrap();
        let z = m.encode(&GraphContext::new(&g0, EncoderKind::Gcn)).unwrap();
        assert_eq!(z, Tensor2::zeros(4, 3));
    }

    #[test]
    fn encoder_matches_dense_reference() {
        let g = toy_graph();
        let m = LinkPredictor::new(small_config(5), 3).unwrap();
        let z = m.encode(&GraphContext::new(&g, EncoderKind::Gcn)).unwrap();

        // dense Â built by hand from A + I and degrees (3, 3, 4, 2)
        let mut a = Tensor2::identity(4);
        for &(u, v) in &[(0, 1), (1, 2), (2, 3), (0, 2)] {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        let deg = [3.0f64, 3.0, 4.0, 2.0];
        let mut a_hat = a.clone();
        for i in 0..4 {
            for j in 0..4 {
                a_hat[(i, j)] = a[(i, j)] / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
        let mut h = g.features().clone();
        for w in &m.encoder {
            h = a_hat.matmul(&h).unwrap().matmul(&w.value).unwrap().map(|v| v.max(0.0));
        }
        assert!(z.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn structural_feature_examples() {
        let tri = Graph::new(3, [(0, 1), (1, 2), (0, 2)], Tensor2::zeros(3, 1), None).unwrap();
        let s = structural_features(&tri.neighbors(), &[Edge::new(0, 1)], StructuralEncoder::CommonNeighbors);
        assert_eq!(s.as_slice(), &[1.0]);

        let pair = Graph::new(4, [(0, 1), (2, 3)], Tensor2::zeros(4, 1), None).unwrap();
        let s = structural_features(&pair.neighbors(), &[Edge::new(0, 2), Edge::new(1, 3)], StructuralEncoder::CommonNeighbors);
        assert_eq!(s.as_slice(), &[0.0, 0.0]);

        let none = structural_features(&pair.neighbors(), &[Edge::new(0, 2)], StructuralEncoder::None);
        assert_eq!(none.shape(), (1, 0));
    }

    #[test]
    fn adamic_adar_matches_enumeration() {
        let edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 4), (3, 4), (1, 4)];
        let g = Graph::new(5, edges, Tensor2::zeros(5, 1), None).unwrap();
        let nbrs = g.neighbors();
        let deg = g.degrees();
        let mut pairs = Vec::new();
        for u in 0..5 {
            for v in u + 1..5 {
                pairs.push(Edge::new(u, v));
            }
        }
        let s = structural_features(&nbrs, &pairs, StructuralEncoder::AdamicAdar);
        for (r, e) in pairs.iter().enumerate() {
            let brute: f64 = (0..5)
                .filter(|&w| g.has_edge(w, e.u()) && g.has_edge(w, e.v()))
                .map(|w| 1.0 / (deg[w] as f64).ln())
                .sum();
            assert!((s[(r, 0)] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_layer_gives_half_probabilities() {
        let g = toy_graph();
        let ctx = GraphContext::new(&g, EncoderKind::Gcn);
        let mut m = LinkPredictor::new(small_config(1), 3).unwrap();
        m.w2.value.fill(0.0);
        let s = m.score_edges(&ctx, &[Edge::new(0, 1), Edge::new(2, 3)], BnMode::Eval).unwrap();
        assert_eq!(s.logits, vec![0.0, 0.0]);
        assert_eq!(s.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn duplicate_edges_score_identically_in_eval() {
        let g = toy_graph();
        let ctx = GraphContext::new(&g, EncoderKind::Gcn);
        let mut m = LinkPredictor::new(small_config(2), 3).unwrap();
        let e = Edge::new(1, 3);
        let s = m.score_edges(&ctx, &[e, Edge::new(0, 2), e], BnMode::Eval).unwrap();
        assert_eq!(s.logits[0], s.logits[2]);
    }

    #[test]
    fn decoder_matches_step_by_step_reference() {
        let g = toy_graph();
        let ctx = GraphContext::new(&g, EncoderKind::Gcn);
        let mut m = LinkPredictor::new(small_config(9), 3).unwrap();
        m.bn.gamma.value = Tensor2::from_rows(&[&[1.2, 0.8, 1.0, 0.5, 2.0]]);
        m.bn.beta.value = Tensor2::from_rows(&[&[0.1, -0.2, 0.3, 0.0, -0.1]]);
        m.b1.value = Tensor2::from_rows(&[&[0.05, -0.05, 0.1, 0.0, 0.2]]);
        m.b2.value[(0, 0)] = -0.3;
        let edges = [Edge::new(0, 1), Edge::new(2, 3), Edge::new(0, 3)];
        let z = m.encode(&ctx).unwrap();
        let s = m.clone().score_with_embeddings(&ctx, &z, &edges, BnMode::Train).unwrap();

        let h = 5;
        let mut a1 = vec![vec![0.0; h]; 3];
        for (r, e) in edges.iter().enumerate() {
            for c in 0..h {
                let mut acc = m.b1.value[(0, c)];
                for k in 0..3 {
                    acc += z[(e.u(), k)] * z[(e.v(), k)] * m.w1.value[(k, c)];
                }
                a1[r][c] = acc;
            }
        }
        for (r, &logit) in s.logits.iter().enumerate() {
            let mut l = m.b2.value[(0, 0)];
            for c in 0..h {
                let col: Vec<f64> = a1.iter().map(|row| row[c]).collect();
                let mu = col.iter().sum::<f64>() / 3.0;
                let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 3.0;
                let bn = m.bn.gamma.value[(0, c)] * (a1[r][c] - mu) / (var + 1e-5).sqrt()
                    + m.bn.beta.value[(0, c)];
                let z2 = bn.max(0.0);
                assert!((s.z2[(r, c)] - z2).abs() < 1e-12);
                l += z2 * m.w2.value[(c, 0)];
            }
            assert!((logit - l).abs() < 1e-12);
        }
    }

    #[test]
    fn context_and_shape_mismatches_error() {
        let g = toy_graph();
        let m = LinkPredictor::new(small_config(0), 3).unwrap();
        assert!(m.encode(&GraphContext::new(&g, EncoderKind::SageMean)).is_err());
        let m4 = LinkPredictor::new(small_config(0), 4).unwrap();
        assert!(m4.encode(&GraphContext::new(&g, EncoderKind::Gcn)).is_err());
        assert!(LinkPredictor::new(ModelConfig { hidden_dims: vec![], ..small_config(0) }, 3).is_err());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let g = toy_graph();
        for (encoder, structural, bn) in [
            (EncoderKind::Gcn, StructuralEncoder::None, true),
            (EncoderKind::SageMean, StructuralEncoder::CommonNeighbors, true),
            (EncoderKind::Gcn, StructuralEncoder::AdamicAdar, false),
        ] {
            let ctx = GraphContext::new(&g, encoder);
            let cfg = ModelConfig {
                encoder,
                structural,
                use_batchnorm: bn,
                ..small_config(4)
            };
            let m = LinkPredictor::new(cfg, 3).unwrap();
            let edges = [Edge::new(0, 1), Edge::new(1, 3), Edge::new(2, 3), Edge::new(0, 3)];
            let labels = [1.0, 0.0, 1.0, 0.0];
            for r in end_to_end_gradcheck(&m, &ctx, &edges, &labels).unwrap() {
                assert!(r.passes(1e-4), "{encoder} {structural} bn={bn}: {r:?}");
            }
        }
    }

    #[test]
    fn random_end_to_end_configs_pass() {
        for r in model_suite(1, 10).unwrap() {
            assert!(r.passes(1e-4), "{r:?}");
        }
    }
}
