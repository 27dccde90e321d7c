mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use linklab::batching::BatchScheme;
use linklab::checkpoint::{model_from_file, model_to_file, TensorFile};
use linklab::data::{save_dataset, save_embeddings, save_metrics};
use linklab::experiment::{model_label, run_many, sweep, SeedRun};
use linklab::forensics::{audit_all_positive, AuditRecord};
use linklab::graph::split_edges;
use linklab::metrics::edge_to_node;
use linklab::model::{model_suite, GraphContext};
use linklab::nn::gradcheck::{layer_suite, GradReport};
use linklab::nn::BnMode;

use config::{DatasetSource, RunArgs};

const LAYER_TOLERANCE: f64 = 1e-5;
const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "linklab", version, about = "Link prediction mini-batching experiments")]
struct Cli {
    /// Log progress to stderr (repeat for more detail)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model per seed and scheme; write checkpoints, embeddings and metrics
    Train(RunArgs),
    /// Score every positive test edge of a checkpoint as one batch
    Audit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        bn_mode: AuditMode,
    },
    /// Compare both schemes with batch norm on and off over all seeds
    Sweep(RunArgs),
    /// Write a synthetic SBM dataset
    Generate {
        #[command(flatten)]
        run: RunArgs,
        /// Overrides the SBM seed of the config
        #[arg(long)]
        sbm_seed: Option<u64>,
    },
    /// Finite-difference gradient checks of every layer and the full model
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AuditMode {
    Eval,
    EvalBatchStats,
    Both,
}

impl AuditMode {
    fn modes(self) -> Vec<BnMode> {
        match self {
            AuditMode::Eval => vec![BnMode::Eval],
            AuditMode::EvalBatchStats => vec![BnMode::EvalBatchStats],
            AuditMode::Both => vec![BnMode::Eval, BnMode::EvalBatchStats],
        }
    }
}

fn run_stem(run: &SeedRun) -> String {
    format!("{}-{}-seed{}", model_label(&run.model.config), run.scheme, run.seed)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let graph = cfg.dataset.load()?;
    let configs: Vec<_> = cfg.schemes.iter().map(|&s| cfg.experiment(s)).collect();
    let runs = run_many(&graph, &configs, &cfg.seeds)?;

    let ckpt_dir = cfg.out.join("checkpoints");
    let emb_dir = cfg.out.join("embeddings");
    create_dir(&ckpt_dir)?;
    create_dir(&emb_dir)?;
    let mut log_file = fs::File::create(cfg.out.join("training_log.jsonl"))?;
    let name = cfg.dataset_name();
    for run in &runs {
        let stem = run_stem(run);
        let mut file = model_to_file(&run.model);
        file.meta.push(("scheme".into(), run.scheme.to_string()));
        file.save(ckpt_dir.join(format!("{stem}.lklb")))?;

        let train_graph = run.split.train_graph(&graph)?;
        let ctx = GraphContext::new(&train_graph, run.model.config.encoder);
        let z = run.model.encode(&ctx)?;
        let scores = run.model.score_frozen(&ctx, &z, graph.edges(), BnMode::Eval)?;
        save_embeddings(emb_dir.join(format!("{stem}.bin")), &edge_to_node(&scores.z2, &graph)?)?;

        for e in &run.log.epochs {
            let line = serde_json::json!({
                "model": model_label(&run.model.config),
                "scheme": run.scheme,
                "seed": run.seed,
                "epoch": e.epoch,
                "mean_loss": e.mean_loss,
                "valid_hits": e.valid_hits,
            });
            writeln!(log_file, "{line}")?;
        }
        println!(
            "{stem}: loss {}, hits@{} {}, TR {}, NMI {}",
            fmt_opt(run.log.final_loss()),
            cfg.train.hits_k,
            fmt_opt(run.eval.hits),
            fmt_opt(run.eval.trace_ratio),
            fmt_opt(run.eval.nmi),
        );
    }
    let rows: Vec<_> = runs.iter().map(|r| r.metrics_row(&name)).collect();
    save_metrics(cfg.out.join("metrics.csv"), cfg.train.hits_k, &rows)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn cmd_audit(args: &RunArgs, checkpoint: &Path, mode: AuditMode) -> Result<()> {
    let cfg = args.resolve()?;
    let file = TensorFile::load(checkpoint)?;
    let model = model_from_file(&file)?;
    let scheme: BatchScheme = file
        .meta_value("scheme")
        .unwrap_or(BatchScheme::FixedRatio.as_str())
        .parse()?;
    let graph = cfg.dataset.load()?;
    let seed = model.config.seed;
    let split = split_edges(&graph, cfg.split, seed)?;
    let ctx = GraphContext::new(&split.train_graph(&graph)?, model.config.encoder);

    create_dir(&cfg.out)?;
    let mut out = fs::File::create(cfg.out.join("audit.jsonl"))?;
    for bn_mode in mode.modes() {
        let audit = audit_all_positive(&model, &ctx, &split.test_pos, bn_mode)?;
        let line = AuditRecord::new(scheme, bn_mode, &audit, seed).to_json_line()?;
        println!("{line}");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if args.scheme.is_some() || args.bn.is_some() {
        log::warn!("sweep always covers both schemes with batch norm on and off");
    }
    let graph = cfg.dataset.load()?;
    let result = sweep(&graph, &cfg.experiment(BatchScheme::FixedRatio), &cfg.seeds)?;
    create_dir(&cfg.out)?;
    let mut table = Vec::new();
    result.write_table(&mut table)?;
    fs::write(cfg.out.join("sweep.csv"), &table)?;
    save_metrics(
        cfg.out.join("sweep_metrics.csv"),
        cfg.train.hits_k,
        &result.metrics_rows(&cfg.dataset_name()),
    )?;
    std::io::stdout().write_all(&table)?;
    Ok(())
}

fn cmd_generate(args: &RunArgs, sbm_seed: Option<u64>) -> Result<()> {
    let cfg = args.resolve()?;
    let DatasetSource::Sbm(mut sbm) = cfg.dataset.clone() else {
        bail!(linklab::Error::Config("generate needs an sbm dataset".into()));
    };
    if let Some(seed) = sbm_seed {
        sbm.seed = seed;
    }
    let graph = DatasetSource::Sbm(sbm).load()?;
    let paths = save_dataset(&graph, &cfg.out)?;
    println!(
        "{} nodes, {} edges -> {}",
        graph.num_nodes(),
        graph.num_edges(),
        paths[0].parent().unwrap_or(Path::new(".")).display()
    );
    Ok(())
}

fn cmd_gradcheck(configs: usize, seed: u64) -> Result<()> {
    let mut failed = Vec::new();
    let mut report = |r: &GradReport, tol: f64| {
        let ok = r.passes(tol);
        println!(
            "{} {:<28} max rel err {:.3e} (tol {tol:.0e}, {} checked, {} skipped)",
            if ok { "ok  " } else { "FAIL" },
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped
        );
        if !ok {
            failed.push(r.name.clone());
        }
    };
    for r in layer_suite(seed, configs) {
        report(&r, LAYER_TOLERANCE);
    }
    for r in model_suite(seed, configs)? {
        report(&r, MODEL_TOLERANCE);
    }
    if !failed.is_empty() {
        bail!(GradcheckFailed(failed.join(", ")));
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
#[error("gradient check failed for {0}")]
struct GradcheckFailed(String);

fn error_class(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<linklab::Error>() {
        e.class()
    } else if err.downcast_ref::<GradcheckFailed>().is_some() {
        "gradcheck"
    } else if err.downcast_ref::<std::io::Error>().is_some() {
        "io"
    } else if err.downcast_ref::<serde_json::Error>().is_some() {
        "json"
    } else {
        "error"
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Audit {
            run,
            checkpoint,
            bn_mode,
        } => cmd_audit(run, checkpoint, *bn_mode),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Generate { run, sbm_seed } => cmd_generate(run, *sbm_seed),
        Command::Gradcheck { configs, seed } => cmd_gradcheck(*configs, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", error_class(&e));
            ExitCode::FAILURE
        }
    }
}
