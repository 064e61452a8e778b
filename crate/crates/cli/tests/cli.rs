use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gimforge::experiment::ExperimentConfig;

fn gimforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gimforge"))
        .args(args)
        .env("GIMFORGE_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 3;
    cfg.graph.d = 4;
    cfg.graph.expected_edges = 4.0;
    cfg.data.n_perturb = 3;
    cfg.data.train_dosages = vec![1.0, 2.0];
    cfg.data.partial_dosages = vec![1.5];
    cfg.data.n_full_ood = 2;
    cfg.data.n_k = 20;
    cfg.data.n_0 = 150;
    cfg.data.target_sizes = vec![1];
    cfg.features.n_components = 3;
    cfg.model.gim_hidden = vec![8];
    cfg.hyper.mc_samples = 2;
    cfg.train.steps = 30;
    cfg.train.check_every = 10;
    cfg.train.holdout_n = 20;
    cfg.baseline.steps = 20;
    cfg.baseline.hidden = vec![8];
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, toml::to_string(cfg).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn default_config_parses_back() {
    let out = gimforge(&["default-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}

#[test]
fn missing_key_exits_with_code_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let text = toml::to_string(&tiny_config()).unwrap().replace("n_perturb = 3\n", "");
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = gimforge(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("b"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_perturb"));
}

#[test]
fn invalid_value_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config();
    c.hyper.mc_samples = 0;
    let cfg = write_config(dir.path(), &c);
    let out = gimforge(&["generate", "--config", s(&cfg), "--out", s(&dir.path().join("b"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hyper.mc_samples"));
}

#[test]
fn runtime_failure_exits_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let out = gimforge(&[
        "train",
        "--config",
        s(&cfg),
        "--bundle",
        s(&dir.path().join("missing")),
        "--out",
        s(&dir.path().join("t")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn default_generate_writes_all_environments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &ExperimentConfig::default());
    let b = dir.path().join("bundle");
    assert!(gimforge(&["generate", "--config", s(&cfg), "--out", s(&b)]).status.success());
    let n_files = std::fs::read_dir(b.join("envs")).unwrap().count();
    assert_eq!(n_files, 160 + 200 + 80 + 1);
    let m = read_json(&b.join("manifest.json"));
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn generate_is_idempotent_and_seed_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny_config());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        assert!(gimforge(&["generate", "--config", s(&cfg), "--out", s(out)]).status.success());
    }
    assert!(gimforge(&["generate", "--config", s(&cfg), "--out", s(&c), "--seed", "9"]).status.success());
    let read = |p: &Path| std::fs::read(p.join("envs/train_p000_c0.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(read_json(&a.join("manifest.json")), read_json(&b.join("manifest.json")));
    assert_eq!(read_json(&c.join("manifest.json"))["seed"], 9);
}

#[test]
fn pipeline_generate_train_predict_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = write_config(p, &tiny_config());
    let (bundle, run, pred, report) = (p.join("bundle"), p.join("run"), p.join("pred"), p.join("report"));
    assert!(gimforge(&["generate", "--config", s(&cfg), "--out", s(&bundle)]).status.success());
    let out = gimforge(&["train", "--config", s(&cfg), "--bundle", s(&bundle), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("checkpoint.json").exists());
    assert!(run.join("trace.csv").exists());
    let ckpt = run.join("checkpoint.json");
    let out = gimforge(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--bundle",
        s(&bundle),
        "--split",
        "partial-ood",
        "--out",
        s(&pred),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&pred.join("summary.json"));
    assert_eq!(summary["environments"].as_array().unwrap().len(), 3);
    let out = gimforge(&[
        "evaluate",
        "--bundle",
        s(&bundle),
        "--predictions",
        s(&pred),
        "--scm",
        s(&bundle.join("scm.json")),
        "--out",
        s(&report),
        "--config",
        s(&cfg),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let agg = read_json(&report.join("aggregate.json"));
    assert_eq!(agg["splits"][0]["split"], "partial_ood");
    assert!(agg["structure"]["edge_f1"].as_f64().is_some());
    assert!(agg["structure"]["sid"].as_u64().is_some());
}

#[test]
fn baselines_predict_and_perfect_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = write_config(p, &tiny_config());
    let bundle = p.join("bundle");
    assert!(gimforge(&["generate", "--config", s(&cfg), "--out", s(&bundle)]).status.success());
    for method in ["observational", "shift"] {
        let out_dir = p.join(method);
        let out = gimforge(&[
            "predict",
            "--method",
            method,
            "--config",
            s(&cfg),
            "--bundle",
            s(&bundle),
            "--split",
            "full-ood",
            "--out",
            s(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    // hand-built predictions equal to the observed environments
    let perfect = p.join("perfect");
    std::fs::create_dir_all(&perfect).unwrap();
    let ids = ["full_p000_c0", "full_p000_c1", "full_p001_c0", "full_p001_c1"];
    for id in ids {
        std::fs::copy(bundle.join(format!("envs/{id}.csv")), perfect.join(format!("{id}.csv"))).unwrap();
    }
    let envs: Vec<_> = ids.iter().map(|id| serde_json::json!({ "env": id, "targets": null })).collect();
    let summary = serde_json::json!({ "method": "observational", "split": "full_ood", "map_graph": null, "environments": envs });
    std::fs::write(perfect.join("summary.json"), summary.to_string()).unwrap();
    let report = p.join("report");
    let out = gimforge(&[
        "evaluate",
        "--bundle",
        s(&bundle),
        "--predictions",
        s(&perfect),
        "--scm",
        s(&bundle.join("scm.json")),
        "--out",
        s(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(report.join("metrics.csv")).unwrap();
    let mut seen = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        if &rec[2] == "mean_distance" {
            assert_eq!(rec[3].parse::<f64>().unwrap(), 0.0);
            seen += 1;
        }
    }
    assert_eq!(seen, ids.len());
}

#[test]
fn ablation_reports_one_block_per_component_count() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut c = tiny_config();
    c.train.steps = 10;
    let cfg = write_config(p, &c);
    let out = gimforge(&["ablate-pca", "--config", s(&cfg), "--components", "2,3", "--out", s(&p.join("abl"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&p.join("abl/report.json"));
    let counts: Vec<u64> = report.as_array().unwrap().iter().map(|r| r["n_components"].as_u64().unwrap()).collect();
    assert_eq!(counts.iter().filter(|&&c| c == 2).count(), 3);
    assert_eq!(counts.iter().filter(|&&c| c == 3).count(), 3);
}
