//! `gimforge`: generate synthetic perturbation data, train generative
//! intervention models, predict unseen perturbations and evaluate.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use gimforge::baselines::mlp_shift_fit;
use gimforge::experiment::{self, evaluate_predictions, predict_split, EnvPrediction, ExperimentConfig, Method};
use gimforge::io::{self, Checkpoint};
use gimforge::metrics::{edge_f1, sid, summarize, EnvMetrics};
use gimforge::perturbgen::{DatasetBundle, Split};
use gimforge::predictor::Predictor;
use gimforge::{Dag, RngState, Scm};

use config::ConfigError;

#[derive(Parser)]
#[command(name = "gimforge", version, about = "Generative intervention models for perturbation prediction")]
struct Cli {
    /// Worker threads (falls back to GIMFORGE_THREADS, then all cores).
    #[arg(long, global = true, env = "GIMFORGE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a ground-truth SCM and a dataset bundle.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a model to a bundle's training environments.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Output directory for checkpoint, trace and manifest.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict the environments of one split.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::FullOod)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        /// Trained checkpoint (required for `--method gim`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MethodArg::Gim)]
        method: MethodArg,
        /// Configuration (evaluation sample count, shift baseline settings).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against the bundle and the true SCM.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        scm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rerun generate/train/predict/evaluate for several feature sizes.
    AblatePca {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated component counts, e.g. `2,15`.
        #[arg(long, value_delimiter = ',', required = true)]
        components: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a complete configuration with default values.
    DefaultConfig,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    PartialOod,
    FullOod,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::PartialOod => Split::PartialOod,
            SplitArg::FullOod => Split::FullOod,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum MethodArg {
    Gim,
    Observational,
    Shift,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    code_version: &'a str,
    seed: Option<u64>,
    config_hash: Option<String>,
    inputs: serde_json::Value,
}

fn write_manifest(dir: &Path, command: &str, cfg: Option<&ExperimentConfig>, inputs: serde_json::Value) -> Result<()> {
    let m = Manifest {
        command,
        code_version: env!("CARGO_PKG_VERSION"),
        seed: cfg.map(|c| c.seed),
        config_hash: cfg.map(config::hash),
        inputs,
    };
    io::write_json(&dir.join("manifest.json"), &m)?;
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = config::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn cmd_generate(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let g = experiment::generate(&cfg)?;
    io::write_bundle(out, &g.bundle)?;
    io::write_json(&out.join("scm.json"), &g.scm)?;
    std::fs::write(out.join("config.toml"), config::to_toml(&cfg))?;
    write_manifest(out, "generate", Some(&cfg), json!({ "config": config }))?;
    log::info!(
        "wrote {} train, {} partial-OOD and {} full-OOD environments to {}",
        g.bundle.train.len(),
        g.bundle.partial_ood.len(),
        g.bundle.full_ood.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(config: &Path, bundle_dir: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_config(config, seed)?;
    let bundle = io::read_bundle(bundle_dir)?;
    std::fs::create_dir_all(out)?;
    let outcome = experiment::fit(&bundle, &cfg)?;
    let ckpt = Checkpoint::new(outcome.model, outcome.gim, outcome.steps_run, outcome.lambda, outcome.mu);
    io::write_checkpoint(&out.join("checkpoint.json"), &ckpt)?;
    io::write_trace_csv(&out.join("trace.csv"), &outcome.trace)?;
    io::write_json(&out.join("lagrangian_updates.json"), &outcome.trace.updates)?;
    write_manifest(
        out,
        "train",
        Some(&cfg),
        json!({ "config": config, "bundle": bundle_dir, "status": outcome.status, "steps_run": outcome.steps_run }),
    )?;
    if let gimforge::trainer::TrainStatus::Aborted(reason) = &outcome.status {
        log::warn!("training aborted: {reason}; wrote the last finite parameters");
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictedEnv<'a> {
    env: &'a str,
    rows: usize,
    targets: Option<Vec<usize>>,
    psi: Option<&'a [f64]>,
    log_var: Option<&'a [f64]>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    bundle_dir: &Path,
    split: Split,
    out: &Path,
    checkpoint: Option<&Path>,
    method: MethodArg,
    config: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = match config {
        Some(p) => load_config(p, seed)?,
        None if method == MethodArg::Shift => bail!(ConfigError("`--method shift` needs --config".into())),
        None => ExperimentConfig { seed: seed.unwrap_or(0), ..ExperimentConfig::default() },
    };
    let bundle = io::read_bundle(bundle_dir)?;
    std::fs::create_dir_all(out)?;
    let rng = RngState::new(cfg.seed);
    let mut graph = serde_json::Value::Null;
    let predictor;
    let shift;
    let m = match method {
        MethodArg::Gim => {
            let path = checkpoint.context("`--method gim` needs --checkpoint")?;
            let ck = io::read_checkpoint(path)?;
            predictor = Predictor::new(&ck.model, &ck.gim)?;
            graph = json!({ "dag": predictor.scm.dag, "removed_edges": predictor.removed });
            Method::Gim(&predictor)
        }
        MethodArg::Observational => Method::Observational,
        MethodArg::Shift => {
            shift = mlp_shift_fit(&bundle, &cfg.baseline, &rng.named("baseline"))?;
            Method::Shift(&shift)
        }
    };
    let preds = predict_split(&m, &bundle, split, &cfg.eval, &rng)?;
    let mut envs = Vec::new();
    for p in &preds {
        io::write_matrix_csv(&out.join(format!("{}.csv", p.env)), &p.x)?;
        envs.push(PredictedEnv {
            env: &p.env,
            rows: p.x.nrows(),
            targets: p.intervention.as_ref().map(|iv| iv.target_indices()),
            psi: p.intervention.as_ref().map(|iv| iv.psi.as_slice()),
            log_var: p.intervention.as_ref().map(|iv| iv.log_var.as_slice()),
        });
    }
    io::write_json(
        &out.join("summary.json"),
        &json!({ "method": method, "split": split.as_str(), "map_graph": graph, "environments": envs }),
    )?;
    write_manifest(
        out,
        "predict",
        config.map(|_| &cfg),
        json!({ "bundle": bundle_dir, "checkpoint": checkpoint, "split": split.as_str(), "method": method, "seed": cfg.seed }),
    )?;
    log::info!("wrote {} predicted environments to {}", preds.len(), out.display());
    Ok(())
}

/// Predictions written by `predict`, re-read with their inferred targets.
fn read_predictions(dir: &Path, bundle: &DatasetBundle) -> Result<(Vec<EnvPrediction>, Option<Dag>)> {
    let summary: serde_json::Value = io::read_json(&dir.join("summary.json"))?;
    let split: Split = summary["split"].as_str().context("summary.json: missing split")?.parse()?;
    let dag: Option<Dag> = match &summary["map_graph"] {
        serde_json::Value::Null => None,
        g => Some(serde_json::from_value(g["dag"].clone()).context("summary.json: bad map_graph")?),
    };
    let envs = summary["environments"].as_array().context("summary.json: missing environments")?;
    let mut preds = Vec::new();
    for e in envs {
        let id = e["env"].as_str().context("summary.json: environment without id")?;
        let x = io::read_matrix_csv(&dir.join(format!("{id}.csv")))?;
        let truth = bundle.environments().find(|t| t.id == id).with_context(|| format!("{id} is not in the bundle"))?;
        let intervention = match &e["targets"] {
            serde_json::Value::Array(t) => {
                let mut iv = truth.intervention.clone();
                iv.targets = vec![false; bundle.d];
                for v in t {
                    let j = v.as_u64().context("target index")? as usize;
                    *iv.targets.get_mut(j).context("target index out of range")? = true;
                }
                Some(iv)
            }
            _ => None,
        };
        preds.push(EnvPrediction { env: id.to_string(), split, x, intervention });
    }
    Ok((preds, dag))
}

fn write_metrics_csv(path: &Path, rows: &[EnvMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["env", "split", "metric", "value"])?;
    for r in rows {
        let mut put = |name: &str, v: f64| w.write_record([r.env.as_str(), r.split.as_str(), name, &format!("{v:.10e}")]);
        put("w2", r.w2)?;
        put("w2_raw", r.w2_raw)?;
        put("w2_converged", f64::from(u8::from(r.w2_converged)))?;
        put("mean_distance", r.mean_distance)?;
        put("pearson", r.pearson)?;
        put("kde_nll", r.kde_nll)?;
        if let Some(f) = r.target_f1 {
            put("target_f1", f)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_evaluate(bundle_dir: &Path, pred_dir: &Path, scm_path: &Path, out: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = match config {
        Some(p) => Some(load_config(p, None)?),
        None => None,
    };
    let eval = cfg.as_ref().map(|c| c.eval.clone()).unwrap_or_else(|| ExperimentConfig::default().eval);
    let bundle = io::read_bundle(bundle_dir)?;
    let scm: Scm = io::read_json(scm_path)?;
    let (preds, dag) = read_predictions(pred_dir, &bundle)?;
    let rows = evaluate_predictions(&bundle, &preds, &eval)?;
    std::fs::create_dir_all(out)?;
    write_metrics_csv(&out.join("metrics.csv"), &rows)?;
    let structure = match &dag {
        Some(g) => json!({ "edge_f1": edge_f1(g, &scm.dag)?, "sid": sid(g, &scm.dag)? }),
        None => serde_json::Value::Null,
    };
    io::write_json(&out.join("aggregate.json"), &json!({ "splits": summarize(&rows), "structure": structure }))?;
    write_manifest(
        out,
        "evaluate",
        cfg.as_ref(),
        json!({ "bundle": bundle_dir, "predictions": pred_dir, "scm": scm_path }),
    )?;
    Ok(())
}

fn cmd_ablate(config: &Path, components: &[usize], out: &Path, seed: Option<u64>) -> Result<()> {
    let base = load_config(config, seed)?;
    std::fs::create_dir_all(out)?;
    let mut report = Vec::new();
    let mut w = csv::Writer::from_path(out.join("report.csv"))?;
    w.write_record(["n_components", "split", "n_envs", "w2", "mean_distance", "pearson", "kde_nll", "target_f1", "edge_f1"])?;
    for &nc in components {
        let cfg = ExperimentConfig { features: experiment::FeatureConfig { n_components: nc }, ..base.clone() };
        log::info!("n_components = {nc}");
        let g = experiment::generate(&cfg)?;
        let outcome = experiment::fit(&g.bundle, &cfg)?;
        let predictor = Predictor::new(&outcome.model, &outcome.gim)?;
        let rng = RngState::new(cfg.seed);
        let mut rows = Vec::new();
        for split in [Split::Train, Split::PartialOod, Split::FullOod] {
            let preds = predict_split(&Method::Gim(&predictor), &g.bundle, split, &cfg.eval, &rng)?;
            rows.extend(evaluate_predictions(&g.bundle, &preds, &cfg.eval)?);
        }
        let ef1 = edge_f1(&predictor.scm.dag, &g.scm.dag)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        for s in summarize(&rows) {
            w.write_record([
                nc.to_string(),
                s.split.clone(),
                s.n_envs.to_string(),
                opt(s.w2),
                opt(s.mean_distance),
                opt(s.pearson),
                opt(s.kde_nll),
                opt(s.target_f1),
                format!("{ef1:.10e}"),
            ])?;
            report.push(json!({ "n_components": nc, "edge_f1": ef1, "summary": s }));
        }
    }
    w.flush()?;
    io::write_json(&out.join("report.json"), &report)?;
    write_manifest(out, "ablate-pca", Some(&base), json!({ "config": config, "components": components }))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Generate { config, out, seed } => cmd_generate(&config, &out, seed),
        Command::Train { config, bundle, out, seed } => cmd_train(&config, &bundle, &out, seed),
        Command::Predict { bundle, split, out, checkpoint, method, config, seed } => {
            cmd_predict(&bundle, split.into(), &out, checkpoint.as_deref(), method, config.as_deref(), seed)
        }
        Command::Evaluate { bundle, predictions, scm, out, config } => {
            cmd_evaluate(&bundle, &predictions, &scm, &out, config.as_deref())
        }
        Command::AblatePca { config, components, out, seed } => cmd_ablate(&config, &components, &out, seed),
        Command::DefaultConfig => {
            print!("{}", config::to_toml(&ExperimentConfig::default()));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
