use std::path::Path;
use std::process::{Command, Output};

fn linklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linklab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = linklab(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = r#"{
  "dataset": {"sbm": {"num_classes": 2, "nodes_per_class": [20, 20], "p_in": 0.3,
                      "p_out": 0.02, "feature_dim": 4, "seed": 1}},
  "model": {"hidden_dims": [8], "decoder_hidden": 8},
  "train": {"epochs": 2, "batch_size": 32, "hits_k": 5},
  "kmeans": {"restarts": 2}
}"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.json");
    std::fs::write(&p, SMALL).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn generate_then_train_from_files_then_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let data_s = data.to_string_lossy().into_owned();
    ok(&["generate", "--config", &cfg, "--out", &data_s]);
    for f in ["edges.txt", "features.csv", "labels.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let out = dir.path().join("run");
    let out_s = out.to_string_lossy().into_owned();
    let (e, x, l) = (data.join("edges.txt"), data.join("features.csv"), data.join("labels.txt"));
    let file_args = [
        "--edges",
        e.to_str().unwrap(),
        "--features",
        x.to_str().unwrap(),
        "--labels",
        l.to_str().unwrap(),
    ];
    let mut train = vec!["train", "--config", &cfg, "--seeds", "3", "--scheme", "fixed", "--out", &out_s];
    train.extend(file_args);
    ok(&train);

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dataset,model,scheme,seed,hits@5,TR,NMI,frac_predicted_absent"
    );
    assert!(lines.next().unwrap().starts_with("data,gcn,fixed,3,"));
    let ckpt = out.join("checkpoints/gcn-fixed-seed3.lklb");
    assert!(ckpt.exists());
    assert!(out.join("embeddings/gcn-fixed-seed3.bin").exists());
    assert_eq!(
        std::fs::read_to_string(out.join("training_log.jsonl")).unwrap().lines().count(),
        2
    );

    let mut audit = vec!["audit", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", &out_s];
    audit.extend(file_args);
    let stdout = ok(&audit);
    let records: Vec<serde_json::Value> =
        stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["bn_mode"], "eval");
    assert_eq!(records[1]["bn_mode"], "eval_batch_stats");
    assert_eq!(records[0]["scheme"], "fixed");
    assert_eq!(records[0]["seed"], 3);
    assert_eq!(records[0]["histogram"].as_array().unwrap().len(), 20);
}

#[test]
fn train_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&["train", "--config", &cfg, "--seeds", "0,1", "--out", out.to_str().unwrap()]);
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    // two seeds x two schemes plus header
    assert_eq!(String::from_utf8_lossy(&csvs[0]).lines().count(), 5);
}

#[test]
fn untrained_sweep_has_zero_change() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("sweep");
    let stdout = ok(&["sweep", "--config", &cfg, "--epochs", "0", "--seeds", "5", "--out", out.to_str().unwrap()]);
    assert!(out.join("sweep.csv").exists());
    assert!(out.join("sweep_metrics.csv").exists());
    let mut rows = stdout.lines();
    assert!(rows.next().unwrap().ends_with(",change"));
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[2], cells[4], "{row}");
        if !cells[6].is_empty() {
            assert_eq!(cells[6].parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}

#[test]
fn gradcheck_passes() {
    let stdout = ok(&["gradcheck", "--configs", "3"]);
    assert!(stdout.lines().all(|l| l.starts_with("ok")), "{stdout}");
    assert!(stdout.contains("model.decoder.w2"));
}

#[test]
fn failures_print_one_classified_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seeds": []}"#).unwrap();
    let out = linklab(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]:"), "{err}");

    let out = linklab(&["audit", "--checkpoint", dir.path().join("missing.lklb").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[io]:"));

    let edges = dir.path().join("e.txt");
    let feats = dir.path().join("x.csv");
    std::fs::write(&edges, "0 1\nnot an edge\n").unwrap();
    std::fs::write(&feats, "1.0\n2.0\n").unwrap();
    let out = linklab(&[
        "train",
        "--edges",
        edges.to_str().unwrap(),
        "--features",
        feats.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[parse]:") && err.contains(":2:"), "{err}");
}
