//! Central finite-difference gradient checks.

use rand::Rng as _;
use serde::Serialize;

use super::layers::{
    bce_with_logits, gcn_layer, hadamard, linear, sage_layer, BatchNormState, BnMode,
};
use super::tensor::{Param, Tensor2};
use crate::graph::{mean_aggregator, normalized_adjacency, Graph};
use crate::rng;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely; finite-difference
/// rounding noise is ~1e-10 at unit loss scale.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
}

impl GradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance && self.checked > 0
    }

    pub fn merge(reports: &[GradReport], name: &str) -> GradReport {
        GradReport {
            name: name.to_string(),
            max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
            checked: reports.iter().map(|r| r.checked).sum(),
            skipped: reports.iter().map(|r| r.skipped).sum(),
        }
    }
}

/// Objective value plus the activation pattern of every ReLU it passed
/// through. Two probes with different patterns straddle a kink.
pub struct Probe {
    pub value: f64,
    pub pattern: Vec<bool>,
}

impl From<f64> for Probe {
    fn from(value: f64) -> Self {
        Probe {
            value,
            pattern: Vec::new(),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_gradient<F, P>(name: &str, x: &[f64], analytic: &[f64], step: f64, mut f: F) -> GradReport
where
    F: FnMut(&[f64]) -> P,
    P: Into<Probe>,
{
    assert_eq!(x.len(), analytic.len());
    let mut probe = x.to_vec();
    let mut report = GradReport {
        name: name.to_string(),
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus: Probe = f(&probe).into();
        probe[i] = x[i] - step;
        let minus: Probe = f(&probe).into();
        probe[i] = x[i];
        if plus.pattern != minus.pattern {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * step);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic[i], numeric));
        report.checked += 1;
    }
    report
}

fn weighted_sum(out: &Tensor2, weights: &Tensor2) -> f64 {
    out.as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(a, b)| a * b)
        .sum()
}

fn with_values(shape: (usize, usize), values: &[f64]) -> Tensor2 {
    Tensor2::from_vec(shape.0, shape.1, values.to_vec()).expect("shape")
}

fn random_graph(n: usize, p: f64, rng: &mut rng::Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, edges, Tensor2::zeros(n, 1), None).expect("valid graph")
}

fn check_gcn(rng: &mut rng::Rng, step: f64) -> Vec<GradReport> {
    let n = rng.random_range(2..9);
    let (d_in, d_out) = (rng.random_range(1..6), rng.random_range(1..6));
    let relu = rng.random_bool(0.5);
    let a = normalized_adjacency(&random_graph(n, 0.4, rng));
    let a = a.matrix();
    let h = Tensor2::uniform(n, d_in, 1.0, rng);
    let mut w = Param::new(Tensor2::uniform(d_in, d_out, 1.0, rng));
    let r = Tensor2::uniform(n, d_out, 1.0, rng);

    let (_, cache) = gcn_layer(&h, &w, a, relu).unwrap();
    let dh = cache.backward(&r, &mut w, a).unwrap();
    let probe = |h: &Tensor2, w: &Param| {
        let (out, c) = gcn_layer(h, w, a, relu).unwrap();
        Probe {
            value: weighted_sum(&out, &r),
            pattern: c.mask().map(<[bool]>::to_vec).unwrap_or_default(),
        }
    };
    let wv = w.value.clone();
    vec![
        check_gradient("gcn.W", wv.as_slice(), w.grad.as_slice(), step, |x| {
            probe(&h, &Param::new(with_values(wv.shape(), x)))
        }),
        check_gradient("gcn.H", h.as_slice(), dh.as_slice(), step, |x| {
            probe(&with_values(h.shape(), x), &Param::new(wv.clone()))
        }),
    ]
}

fn check_sage(rng: &mut rng::Rng, step: f64) -> Vec<GradReport> {
    let n = rng.random_range(2..9);
    let (d_in, d_out) = (rng.random_range(1..5), rng.random_range(1..5));
    let relu = rng.random_bool(0.5);
    let mean = mean_aggregator(&random_graph(n, 0.4, rng));
    let mean_t = mean.transpose();
    let h = Tensor2::uniform(n, d_in, 1.0, rng);
    let mut w = Param::new(Tensor2::uniform(2 * d_in, d_out, 1.0, rng));
    let r = Tensor2::uniform(n, d_out, 1.0, rng);

    let (_, cache) = sage_layer(&h, &w, &mean, relu).unwrap();
    let dh = cache.backward(&r, &mut w, &mean_t).unwrap();
    let probe = |h: &Tensor2, w: &Param| {
        let (out, c) = sage_layer(h, w, &mean, relu).unwrap();
        Probe {
            value: weighted_sum(&out, &r),
            pattern: c.mask().map(<[bool]>::to_vec).unwrap_or_default(),
        }
    };
    let wv = w.value.clone();
    vec![
        check_gradient("sage.W", wv.as_slice(), w.grad.as_slice(), step, |x| {
            probe(&h, &Param::new(with_values(wv.shape(), x)))
        }),
        check_gradient("sage.H", h.as_slice(), dh.as_slice(), step, |x| {
            probe(&with_values(h.shape(), x), &Param::new(wv.clone()))
        }),
    ]
}

fn check_linear(rng: &mut rng::Rng, step: f64) -> Vec<GradReport> {
    let k = rng.random_range(1..8);
    let (d_in, d_out) = (rng.random_range(1..6), rng.random_range(1..6));
    let x = Tensor2::uniform(k, d_in, 1.0, rng);
    let mut w = Param::new(Tensor2::uniform(d_in, d_out, 1.0, rng));
    let mut b = Param::new(Tensor2::uniform(1, d_out, 1.0, rng));
    let r = Tensor2::uniform(k, d_out, 1.0, rng);

    let (_, cache) = linear(&x, &w, &b).unwrap();
    let dx = cache.backward(&r, &mut w, &mut b).unwrap();
    let value = |x: &Tensor2, w: &Tensor2, b: &Tensor2| {
        let (out, _) = linear(x, &Param::new(w.clone()), &Param::new(b.clone())).unwrap();
        weighted_sum(&out, &r)
    };
    let (wv, bv) = (w.value.clone(), b.value.clone());
    vec![
        check_gradient("linear.W", wv.as_slice(), w.grad.as_slice(), step, |p| {
            value(&x, &with_values(wv.shape(), p), &bv)
        }),
        check_gradient("linear.b", bv.as_slice(), b.grad.as_slice(), step, |p| {
            value(&x, &wv, &with_values(bv.shape(), p))
        }),
        check_gradient("linear.X", x.as_slice(), dx.as_slice(), step, |p| {
            value(&with_values(x.shape(), p), &wv, &bv)
        }),
    ]
}

fn check_batchnorm(rng: &mut rng::Rng, step: f64, mode: BnMode) -> Vec<GradReport> {
    let k = rng.random_range(2..10);
    let h = rng.random_range(1..5);
    let x = Tensor2::uniform(k, h, 2.0, rng);
    let mut bn = BatchNormState::new(h);
    bn.gamma.value = Tensor2::uniform(1, h, 1.5, rng);
    bn.beta.value = Tensor2::uniform(1, h, 1.0, rng);
    bn.running_mean = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
    bn.running_var = (0..h).map(|_| rng.random_range(0.5..2.0)).collect();
    let r = Tensor2::uniform(k, h, 1.0, rng);

    // forward on a copy: Train mode mutates running statistics
    let (_, cache) = bn.clone().forward(&x, mode).unwrap();
    let dx = cache.backward(&r, &mut bn).unwrap();
    let value = |x: &Tensor2, gamma: &Tensor2, beta: &Tensor2| {
        let mut s = bn.clone();
        s.gamma.value = gamma.clone();
        s.beta.value = beta.clone();
        weighted_sum(&s.forward(x, mode).unwrap().0, &r)
    };
    let (g, b) = (bn.gamma.value.clone(), bn.beta.value.clone());
    let tag = mode.as_str();
    vec![
        check_gradient(&format!("batchnorm[{tag}].X"), x.as_slice(), dx.as_slice(), step, |p| {
            value(&with_values(x.shape(), p), &g, &b)
        }),
        check_gradient(
            &format!("batchnorm[{tag}].gamma"),
            g.as_slice(),
            bn.gamma.grad.as_slice(),
            step,
            |p| value(&x, &with_values(g.shape(), p), &b),
        ),
        check_gradient(
            &format!("batchnorm[{tag}].beta"),
            b.as_slice(),
            bn.beta.grad.as_slice(),
            step,
            |p| value(&x, &g, &with_values(b.shape(), p)),
        ),
    ]
}

fn check_hadamard(rng: &mut rng::Rng, step: f64) -> Vec<GradReport> {
    let (k, h) = (rng.random_range(1..8), rng.random_range(1..6));
    let zs = Tensor2::uniform(k, h, 1.0, rng);
    let zt = Tensor2::uniform(k, h, 1.0, rng);
    let r = Tensor2::uniform(k, h, 1.0, rng);
    let (_, cache) = hadamard(&zs, &zt).unwrap();
    let (ds, dt) = cache.backward(&r).unwrap();
    vec![
        check_gradient("hadamard.Zs", zs.as_slice(), ds.as_slice(), step, |p| {
            weighted_sum(&hadamard(&with_values(zs.shape(), p), &zt).unwrap().0, &r)
        }),
        check_gradient("hadamard.Zt", zt.as_slice(), dt.as_slice(), step, |p| {
            weighted_sum(&hadamard(&zs, &with_values(zt.shape(), p)).unwrap().0, &r)
        }),
    ]
}

fn check_bce(rng: &mut rng::Rng, step: f64) -> Vec<GradReport> {
    let k = rng.random_range(1..12);
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
    let labels: Vec<f64> = (0..k).map(|_| f64::from(rng.random_bool(0.5) as u8)).collect();
    let (_, grad) = bce_with_logits(&logits, &labels).unwrap();
    vec![check_gradient("bce.logits", &logits, &grad, step, |l| {
        bce_with_logits(l, &labels).unwrap().0
    })]
}

/// Runs every layer's check on `configs` random shape/seed configurations.
/// Returns one merged report per layer input/parameter.
pub fn layer_suite(seed: u64, configs: usize) -> Vec<GradReport> {
    let step = DEFAULT_STEP;
    let mut all = Vec::new();
    for c in 0..configs {
        let mut rng = rng::substream(seed, 0xC0DE, c as u64);
        all.extend(check_gcn(&mut rng, step));
        all.extend(check_sage(&mut rng, step));
        all.extend(check_linear(&mut rng, step));
        for mode in [BnMode::Train, BnMode::Eval, BnMode::EvalBatchStats] {
            all.extend(check_batchnorm(&mut rng, step, mode));
        }
        all.extend(check_hadamard(&mut rng, step));
        all.extend(check_bce(&mut rng, step));
    }
    let mut groups: Vec<(String, Vec<GradReport>)> = Vec::new();
    for r in all {
        match groups.iter_mut().find(|(n, _)| *n == r.name) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.name.clone(), vec![r])),
        }
    }
    groups
        .iter()
        .map(|(n, g)| GradReport::merge(g, n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        let x = [1.0, 2.0];
        let r = check_gradient("sq", &x, &[2.0, 3.0], DEFAULT_STEP, |p: &[f64]| {
            p.iter().map(|v| v * v).sum::<f64>()
        });
        assert!(r.max_rel_error > 0.2);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let r = check_gradient("relu", &[0.0], &[0.0], DEFAULT_STEP, |p: &[f64]| Probe {
            value: p[0].max(0.0),
            pattern: vec![p[0] > 0.0],
        });
        assert_eq!((r.checked, r.skipped), (0, 1));
        assert!(!r.passes(1e-5));
    }

    #[test]
    fn every_layer_passes_on_a_few_configs() {
        for r in layer_suite(11, 5) {
            assert!(r.passes(1e-5), "{r:?}");
        }
    }
}
