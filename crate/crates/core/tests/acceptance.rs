//! Acceptance suite: one PASS/FAIL line per criterion; exits nonzero if any
//! gating criterion fails.
//!
//! Set `LINKLAB_REAL_DATA=<dir>` (containing `edges.txt`, `features.csv`,
//! `labels.txt`) to run the non-gating real-data check.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use linklab::batching::{bias_corrected_batches, fixed_ratio_batches};
use linklab::data::{generate_sbm, load_dataset, SbmConfig};
use linklab::experiment::{run_seed, sweep, ExperimentConfig, Metric, Sweep};
use linklab::forensics::{indicator_collapse, verify_collapse_against_layer, BatchComposition};
use linklab::graph::{Edge, Graph};
use linklab::metrics::{edge_to_node, hits_at_k, nmi, trace_ratio};
use linklab::model::model_suite;
use linklab::nn::gradcheck::layer_suite;
use linklab::nn::{BnMode, Tensor2};
use linklab::rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, t: Instant) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.1}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn c1_bn_collapse() -> Outcome {
    let t = Instant::now();
    let mut rng = rng::stream(1, 0);
    let (mut max_dev, mut max_mean, mut max_var) = (0.0f64, 0.0f64, 0.0f64);
    for k in 2..=512usize {
        for k_pos in 1..k {
            let comp = BatchComposition::new(k, k_pos).unwrap();
            let gamma = rng.random_range(0.1..3.0);
            let beta = rng.random_range(-1.0..1.0);
            for (g, b) in [(1.0, 0.0), (gamma, beta)] {
                max_dev = max_dev.max(verify_collapse_against_layer(comp, g, b, 0.0).unwrap());
            }
            let c = indicator_collapse(comp);
            let (p, n) = (k_pos as f64, (k - k_pos) as f64);
            max_mean = max_mean.max((p * c.ahat_pos + n * c.ahat_neg).abs());
            max_var = max_var.max((p * c.ahat_pos.powi(2) + n * c.ahat_neg.powi(2) - k as f64).abs());
        }
    }
    let (fast, time) = within(Duration::from_secs(10), t);
    outcome(
        max_dev < 1e-12 && max_mean < 1e-9 && max_var < 1e-9 && fast,
        format!("max layer deviation {max_dev:.2e}, zero-mean {max_mean:.2e}, unit-variance {max_var:.2e}, {time}"),
    )
}

fn c2_gradcheck() -> Outcome {
    let t = Instant::now();
    let layers = layer_suite(2, 100);
    let model = model_suite(2, 100).unwrap();
    let worst_layer = layers.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let worst_model = model.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let ok = layers.iter().all(|r| r.passes(1e-5)) && model.iter().all(|r| r.passes(1e-4));
    let (fast, time) = within(Duration::from_secs(60), t);
    outcome(
        ok && fast,
        format!(
            "100 configs: {} layer checks max {worst_layer:.2e}, {} model checks max {worst_model:.2e}, {time}",
            layers.len(),
            model.len()
        ),
    )
}

fn c3_samplers() -> Outcome {
    let pos: Vec<Edge> = (0..50).map(|i| Edge::new(i, i + 1000)).collect();
    let neg: Vec<Edge> = (0..50).map(|i| Edge::new(i, i + 2000)).collect();
    let k = 16;
    let batches = bias_corrected_batches(&pos, &neg, k, Some(100_000), 3).unwrap();
    let mut counts = vec![0.0f64; k - 1];
    for b in &batches {
        counts[b.k_pos - 1] += 1.0;
    }
    let expected = batches.len() as f64 / (k - 1) as f64;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((k - 2) as f64).unwrap().cdf(stat);

    let mut worst = 0usize;
    let mut rng = rng::stream(3, 1);
    for trial in 0..500 {
        let np = rng.random_range(1..200);
        let nn = np + rng.random_range(0..=1);
        let pos: Vec<Edge> = (0..np).map(|i| Edge::new(i, i + 1000)).collect();
        let neg: Vec<Edge> = (0..nn).map(|i| Edge::new(i, i + 2000)).collect();
        let size = rng.random_range(2..64);
        for b in fixed_ratio_batches(&pos, &neg, size, trial).unwrap() {
            worst = worst.max(b.k_pos.abs_diff(b.k_neg));
        }
    }
    outcome(
        p > 0.001 && worst <= 1,
        format!("chi-square p = {p:.4} (stat {stat:.2}, 14 dof); fixed-ratio max |K+ - K-| = {worst}"),
    )
}

fn acceptance_graph() -> Graph {
    generate_sbm(&SbmConfig::default()).unwrap()
}

fn c4_audit(graph: &Graph) -> Outcome {
    let t = Instant::now();
    let run = run_seed(graph, &ExperimentConfig::default(), 0).unwrap();
    let eval = run.eval.audit(BnMode::Eval).frac_predicted_absent;
    let batch = run.eval.audit(BnMode::EvalBatchStats).frac_predicted_absent;
    let band = |f: f64| (0.3..=0.7).contains(&f);
    let (fast, time) = within(Duration::from_secs(120), t);
    outcome(
        (band(eval) || band(batch)) && fast,
        format!("frac_predicted_absent eval {eval:.3}, batch-stats {batch:.3} (band [0.3, 0.7]), {time}"),
    )
}

fn means(s: &Sweep, metric: Metric, bn: bool) -> (f64, f64) {
    let r = s.row(metric, bn).unwrap();
    (r.original.unwrap().mean, r.bias_corrected.unwrap().mean)
}

fn c5_tr(s: &Sweep) -> Outcome {
    let (fixed, bias) = means(s, Metric::TraceRatio, true);
    outcome(bias > fixed, format!("mean TR fixed {fixed:.4} -> bias-corrected {bias:.4}"))
}

fn c6_nmi(s: &Sweep) -> Outcome {
    let (fixed, bias) = means(s, Metric::Nmi, true);
    outcome(bias > fixed, format!("mean NMI fixed {fixed:.4} -> bias-corrected {bias:.4}"))
}

fn c7_ablation(s: &Sweep) -> Outcome {
    let (f_on, b_on) = means(s, Metric::TraceRatio, true);
    let (f_off, b_off) = means(s, Metric::TraceRatio, false);
    let (on, off) = (b_on - f_on, b_off - f_off);
    outcome(
        off.abs() * 10.0 <= on.abs(),
        format!("TR change with BN {on:+.4}, without BN {off:+.4} (need |off| <= |on|/10)"),
    )
}

fn brute_hits(pos: &[f64], neg: &[f64], k: usize) -> f64 {
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let threshold = sorted[k - 1];
    pos.iter().filter(|&&p| p > threshold).count() as f64 / pos.len() as f64
}

fn c8_hits() -> Outcome {
    let mut rng = rng::stream(8, 0);
    let mut mismatches = 0;
    for i in 0..1000 {
        let np = rng.random_range(1..=25);
        let nn = rng.random_range(1..=25);
        // coarse grids on half the instances force ties
        let draw = |rng: &mut rng::Rng| {
            if i % 2 == 0 {
                f64::from(rng.random_range(0..6u8))
            } else {
                rng.random::<f64>()
            }
        };
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(&mut rng)).collect();
        let k = rng.random_range(1..=nn);
        if hits_at_k(&pos, &neg, k).unwrap().value != brute_hits(&pos, &neg, k) {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in 1000 instances"))
}

fn c9_metric_units() -> Outcome {
    let mut rng = rng::stream(9, 0);
    let mut nmi_dev = 0.0f64;
    let mut scatter_dev = 0.0f64;
    let mut node_dev = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        nmi_dev = nmi_dev.max((nmi(&a, &a).unwrap() - 1.0).abs());

        let dim = rng.random_range(1..6);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let z = Tensor2::uniform(n, dim, 3.0, &mut rng);
        let s = trace_ratio(&z, &labels).unwrap();
        let mean: Vec<f64> = (0..dim).map(|j| (0..n).map(|i| z[(i, j)]).sum::<f64>() / n as f64).collect();
        let total: f64 = (0..n)
            .map(|i| (0..dim).map(|j| (z[(i, j)] - mean[j]).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        scatter_dev = scatter_dev.max((s.within_trace + s.between_trace - total).abs());

        let nodes = rng.random_range(2..12);
        let mut edges = Vec::new();
        for u in 0..nodes {
            for v in u + 1..nodes {
                if rng.random_bool(0.3) {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::new(nodes, edges, Tensor2::zeros(nodes, 1), None).unwrap();
        let emb = Tensor2::uniform(g.num_edges(), dim, 1.0, &mut rng);
        let got = edge_to_node(&emb, &g).unwrap();
        for v in 0..nodes {
            let incident: Vec<usize> = (0..g.num_edges())
                .filter(|&r| g.edges()[r].u() == v || g.edges()[r].v() == v)
                .collect();
            for j in 0..dim {
                let want = if incident.is_empty() {
                    0.0
                } else {
                    incident.iter().map(|&r| emb[(r, j)]).sum::<f64>() / incident.len() as f64
                };
                node_dev = node_dev.max((got[(v, j)] - want).abs());
            }
        }
    }
    outcome(
        nmi_dev <= 1e-12 && scatter_dev <= 1e-9 && node_dev <= 1e-12,
        format!("NMI(a,a) dev {nmi_dev:.1e}, scatter decomposition dev {scatter_dev:.1e}, edge_to_node dev {node_dev:.1e}"),
    )
}

/// Not gating: a real citation graph should give fixed-ratio Hits@100 near
/// 83.9 with TR and NMI rising under bias correction.
fn c10_real_data(dir: &Path) -> Outcome {
    let loaded = load_dataset(
        dir.join("edges.txt"),
        dir.join("features.csv"),
        Some(&dir.join("labels.txt")),
    );
    let graph = match loaded {
        Ok((g, _)) => g,
        Err(e) => return outcome(false, format!("could not load {}: {e}", dir.display())),
    };
    let s = match sweep(&graph, &ExperimentConfig::default(), &SEEDS) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let hits = s.row(Metric::Hits, true).and_then(|r| r.original).map(|m| 100.0 * m.mean);
    let tr = s.row(Metric::TraceRatio, true).and_then(|r| r.change());
    let nmi = s.row(Metric::Nmi, true).and_then(|r| r.change());
    let ok = hits.is_some_and(|h| (h - 83.909).abs() <= 10.0)
        && tr.is_some_and(|c| c > 0.0)
        && nmi.is_some_and(|c| c > 0.0);
    outcome(ok, format!("fixed-ratio hits@100 {hits:.3?}, TR change {tr:+.4?}, NMI change {nmi:+.4?}"))
}

fn report(results: &mut Vec<(usize, bool)>, id: usize, name: &str, o: Outcome) {
    println!("{} [{id}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    results.push((id, o.pass));
}

fn main() -> ExitCode {
    // libtest-style flags (e.g. --list, filters) are ignored
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut results = Vec::new();
    report(&mut results, 1, "closed-form batch-norm collapse", c1_bn_collapse());
    report(&mut results, 2, "gradient correctness", c2_gradcheck());
    report(&mut results, 3, "sampler distributions", c3_samplers());
    let graph = acceptance_graph();
    report(&mut results, 4, "all-positive audit after fixed-ratio training", c4_audit(&graph));
    let s = sweep(&graph, &ExperimentConfig::default(), &SEEDS).unwrap();
    report(&mut results, 5, "trace ratio rises under bias correction", c5_tr(&s));
    report(&mut results, 6, "NMI rises under bias correction", c6_nmi(&s));
    report(&mut results, 7, "batch-norm ablation shrinks the TR change", c7_ablation(&s));
    report(&mut results, 8, "hits@K brute-force oracle", c8_hits());
    report(&mut results, 9, "metric unit checks", c9_metric_units());
    match std::env::var_os("LINKLAB_REAL_DATA") {
        Some(dir) => {
            let o = c10_real_data(Path::new(&dir));
            println!("{} [10] real-data comparison (not gating): {}", if o.pass { "PASS" } else { "INFO" }, o.detail);
        }
        None => println!("SKIP [10] real-data comparison (not gating): LINKLAB_REAL_DATA not set"),
    }

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(id, _)| id.to_string())
        .collect();
    println!(
        "acceptance: {}/{} gating criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
