//! `o2cap`: synthesize embedding datasets, train the camera-aware proxy
//! pipeline, evaluate retrieval, and audit association statistics.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use o2cap_core::dataset::{self, Instance};
use o2cap_core::trainer::{
    self, association_snapshot, fit, load_checkpoint, write_history_csv, LossMode, Snapshot,
};
use o2cap_core::{O2capError, Result, RetrievalMetrics};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "o2cap",
    version,
    about = "Unsupervised re-identification on embedding vectors"
)]
struct Cli {
    /// Flat JSON config file with dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.lr=0.3 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset and write it as an embedding file.
    Synth {
        /// Output file (.csv for text, anything else binary). Defaults to
        /// <out.dir>/dataset.o2eb.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write checkpoint, history CSV and metrics JSON.
    Train {
        /// Shortcut for --set train.loss_mode=...
        #[arg(long)]
        loss_mode: Option<String>,
        /// Shortcut for --set train.max_epochs=...
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a query/gallery split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Recompute association statistics from a checkpoint.
    Stats {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn exit_code_for(e: &O2capError) -> u8 {
    match e {
        O2capError::Config(_) | O2capError::Parameter(_) => 2,
        O2capError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn check_thread_cap() -> Result<()> {
    if let Ok(v) = std::env::var("O2CAP_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| O2capError::Config(format!("O2CAP_THREADS={v:?} is not an integer")))?;
        if n == 0 {
            return Err(O2capError::Config("O2CAP_THREADS must be >= 1".into()));
        }
        // All pipeline stages run single-threaded, which satisfies any
        // positive cap.
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    check_thread_cap()?;
    let cfg = config::resolve(cli.config.as_deref(), &cli.sets)?;
    match cli.cmd {
        Cmd::Synth { out } => cmd_synth(cfg, out),
        Cmd::Train { loss_mode, epochs } => {
            let mut cfg = cfg;
            if let Some(m) = loss_mode {
                cfg.train.loss_mode = LossMode::parse(&m)?;
            }
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            cmd_train(cfg)
        }
        Cmd::Eval { checkpoint } => cmd_eval(cfg, &checkpoint),
        Cmd::Stats { checkpoint } => cmd_stats(&checkpoint),
    }
}

fn save_dataset(data: &[Instance], path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() && !parent.exists() {
            return Err(O2capError::Config(format!(
                "output directory {} does not exist",
                parent.display()
            )));
        }
    }
    if path.extension().is_some_and(|e| e == "csv") {
        dataset::save_csv(data, path)
    } else {
        dataset::save_binary(data, path)
    }
}

fn cmd_synth(cfg: RunConfig, out: Option<PathBuf>) -> Result<()> {
    let data = dataset::synthesize(&cfg.synth)?;
    let out = out.unwrap_or_else(|| Path::new(&cfg.out.dir).join("dataset.o2eb"));
    if out
        .parent()
        .is_some_and(|p| p.as_os_str().is_empty() || p == Path::new(&cfg.out.dir))
    {
        std::fs::create_dir_all(Path::new(&cfg.out.dir))?;
    }
    save_dataset(&data, &out)?;
    config::write_resolved(&cfg, out.parent().unwrap_or(Path::new(".")))?;
    if cfg.verbosity >= 1 {
        println!(
            "wrote {}: N={} C={} CID={:.2} IID={:.2}",
            out.display(),
            data.len(),
            dataset::num_cameras(&data),
            dataset::mean_cameras_per_id(&data),
            dataset::mean_images_per_id(&data),
        );
    }
    Ok(())
}

fn load_training_data(cfg: &RunConfig) -> Result<Vec<Instance>> {
    if cfg.data.path.is_empty() {
        dataset::synthesize(&cfg.synth)
    } else {
        dataset::load_embeddings(Path::new(&cfg.data.path))
    }
}

/// The held-out split: explicit files if configured, otherwise fresh
/// noise over the synthetic identities. External data without an explicit
/// split yields no retrieval evaluation.
fn load_eval_split(cfg: &RunConfig) -> Result<Option<(Vec<Instance>, Vec<Instance>)>> {
    if !cfg.eval.query.is_empty() && !cfg.eval.gallery.is_empty() {
        let q = dataset::load_embeddings(Path::new(&cfg.eval.query))?;
        let g = dataset::load_embeddings(Path::new(&cfg.eval.gallery))?;
        return Ok(Some((q, g)));
    }
    if cfg.data.path.is_empty() {
        let q = dataset::synthesize_with_noise_seed(
            &dataset::SynthesisConfig {
                images_per_id: cfg.eval.query_images_per_id,
                ..cfg.synth.clone()
            },
            cfg.eval.query_noise_seed,
        )?;
        let g = dataset::synthesize_with_noise_seed(
            &dataset::SynthesisConfig {
                images_per_id: cfg.eval.gallery_images_per_id,
                ..cfg.synth.clone()
            },
            cfg.eval.gallery_noise_seed,
        )?;
        return Ok(Some((q, g)));
    }
    Ok(None)
}

fn metrics_json(
    retrieval: Option<&RetrievalMetrics>,
    snapshot: Option<&Snapshot>,
) -> serde_json::Value {
    let null = serde_json::Value::Null;
    serde_json::json!({
        "map": retrieval.map(|m| m.map),
        "cmc": retrieval.map(|m| serde_json::json!({
            "r1": m.cmc.r1, "r5": m.cmc.r5, "r10": m.cmc.r10,
        })).unwrap_or(null.clone()),
        "ari": snapshot.and_then(|s| s.clustering).map(|c| c.ari),
        "purity": snapshot.and_then(|s| s.clustering).map(|c| c.purity),
        "assoc": snapshot
            .and_then(|s| s.assoc)
            .map(|a| serde_json::to_value(a).expect("stats serialize"))
            .unwrap_or(null),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_train(cfg: RunConfig) -> Result<()> {
    let data = load_training_data(&cfg)?;
    let split = load_eval_split(&cfg)?;
    let split_refs = split.as_ref().map(|(q, g)| (q.as_slice(), g.as_slice()));
    let (model, history) = fit(&data, &cfg.train, split_refs)?;

    let out = Path::new(&cfg.out.dir);
    std::fs::create_dir_all(out)?;
    config::write_resolved(&cfg, out)?;
    let resolved = serde_json::to_value(config::flatten(&cfg))?;
    trainer::save_checkpoint(out, &model, &data, &resolved, &history)?;
    write_history_csv(&history, &out.join("history.csv"))?;

    // Final-state metrics: retrieval with the trained model, association
    // statistics recomputed on the learned table.
    let retrieval = match &split_refs {
        Some((q, g)) => {
            let raw: Vec<Vec<f64>> = data.iter().map(|i| i.embedding.clone()).collect();
            let qe = model.embed_instances(q, &raw);
            let ge = model.embed_instances(g, &raw);
            Some(o2cap_core::eval::evaluate_retrieval(&qe, &ge)?)
        }
        None => None,
    };
    let learned: Vec<Instance> = data
        .iter()
        .zip(&model.table)
        .map(|(i, row)| Instance {
            embedding: row.clone(),
            ..i.clone()
        })
        .collect();
    let snapshot = association_snapshot(&learned, &cfg.train).ok();
    write_json(
        &out.join("metrics.json"),
        &metrics_json(retrieval.as_ref(), snapshot.as_ref()),
    )?;

    if cfg.verbosity >= 1 {
        for report in &history {
            for w in &report.warnings {
                eprintln!("warning (epoch {}): {w}", report.epoch);
            }
        }
    }
    if cfg.verbosity >= 2 {
        for report in &history {
            eprintln!(
                "epoch {}: loss {:.4}, {} clusters, {} proxies",
                report.epoch, report.mean_loss, report.num_clusters, report.num_proxies
            );
        }
    }
    let last_map = retrieval.map(|m| m.map);
    if cfg.verbosity >= 1 {
        println!(
            "trained {} epochs, {} instances{}; artifacts in {}",
            history.len(),
            data.len(),
            last_map
                .map(|m| format!(", final mAP {m:.4}"))
                .unwrap_or_default(),
            out.display()
        );
    }
    Ok(())
}

fn cmd_eval(cfg: RunConfig, checkpoint: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let split = load_eval_split(&cfg)?
        .ok_or_else(|| O2capError::Config("eval needs a query/gallery split".into()))?;
    let raw: Vec<Vec<f64>> = ck.raw.iter().map(|i| i.embedding.clone()).collect();
    let q = ck.model.embed_instances(&split.0, &raw);
    let g = ck.model.embed_instances(&split.1, &raw);
    let retrieval = o2cap_core::eval::evaluate_retrieval(&q, &g)?;
    let value = metrics_json(Some(&retrieval), None);
    let out = checkpoint.join("metrics.eval.json");
    write_json(&out, &value)?;
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}

fn cmd_stats(checkpoint: &Path) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let flat: std::collections::BTreeMap<String, serde_json::Value> =
        serde_json::from_value(ck.meta["config"].clone()).map_err(|e| O2capError::Parse {
            location: checkpoint.display().to_string(),
            message: format!("checkpoint config is not a flat map: {e}"),
        })?;
    let cfg: RunConfig =
        serde_json::from_value(config::unflatten(&flat)).map_err(|e| O2capError::Parse {
            location: checkpoint.display().to_string(),
            message: format!("checkpoint config does not deserialize: {e}"),
        })?;
    let snapshot = association_snapshot(&ck.learned, &cfg.train)?;
    let value = serde_json::to_value(&snapshot)?;
    let out = checkpoint.join("stats.json");
    write_json(&out, &value)?;
    println!("{}", serde_json::to_string(&value)?);
    Ok(())
}
