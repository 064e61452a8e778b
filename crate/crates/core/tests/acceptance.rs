//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.
//!
//! Criteria 5 to 8 share one set of scaled recovery runs: d = 5 linear
//! Gaussian ER graphs, 10 single-target hard perturbations at 4 dosages,
//! lossless features, 5000 steps, 5 seeds, each also retrained with 2
//! feature components.

mod common;

use std::time::Instant;

use common::oracles::{all_dags, best_assignment, f1_oracle, kde_nll_2d, sid_oracle, target_f1_oracle};
use common::{block_error, grad_case, BLOCKS};
use gimforge::experiment::{evaluate_predictions, fit, generate, predict_split, ExperimentConfig, Generated, Method};
use gimforge::gim::nobears::nobears;
use gimforge::graph::{is_acyclic, sample_er, Dag};
use gimforge::metrics::{edge_f1, kde_nll, median, sid, sinkhorn_w2, target_f1, EnvMetrics, SinkhornConfig};
use gimforge::perturbgen::{hill_eval, DatasetBundle, Split};
use gimforge::predictor::{extract_map_graph, Predictor};
use gimforge::scm::{InterventionKind, MechanismKind};
use gimforge::trainer::{TrainOutcome, TrainStatus};
use gimforge::RngState;
use ndarray::{array, Array2};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const STEPS: usize = 5000;
const MC_SAMPLES: usize = 16;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn report(id: usize, name: &str, started: Instant, v: &Verdict) -> bool {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("{tag} [{id}] {name}: {} ({:.1}s)", v.detail, started.elapsed().as_secs_f64());
    v.pass
}

fn gradient_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut cases = Vec::new();
    for mech in [MechanismKind::Linear, MechanismKind::Mlp, MechanismKind::Ziln] {
        for kind in [InterventionKind::Hard, InterventionKind::Shift] {
            // a shifted zero-inflated variable has no density
            if mech == MechanismKind::Ziln && kind == InterventionKind::Shift {
                continue;
            }
            let mut case = grad_case(mech, kind, 11);
            case.hyper.sufficient_stats = false;
            for name in BLOCKS {
                worst = worst.max(block_error(&case, name, 1e-5));
            }
            cases.push(format!("{mech:?}/{kind:?}"));
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} < 1e-4 over {}", cases.join(", ")))
}

fn acyclicity() -> Verdict {
    let base = RngState::new(3);
    let mut worst_dag = 0.0f64;
    for k in 0..100u64 {
        let d = 2 + (k as usize % 19);
        let pairs = (d * (d - 1) / 2) as f64;
        let g = sample_er(&base.substream(k), d, pairs.min(d as f64)).unwrap();
        worst_dag = worst_dag.max(nobears(&g.adjacency(), &base.named("acyclicity").substream(k), 30));
    }
    let cycle = array![[0.0, 1.0], [1.0, 0.0]];
    let rho = nobears(&cycle, &RngState::new(0), 30);
    verdict(
        worst_dag < 1e-6 && (rho - 1.0).abs() < 1e-3,
        format!("max on 100 DAGs {worst_dag:.1e} < 1e-6; unit 2-cycle {rho:.6} = 1 +- 1e-3"),
    )
}

fn metric_oracles() -> Verdict {
    let dags = all_dags();
    let mut mismatches = 0;
    let mut pairs = 0;
    for truth in &dags {
        for pred in &dags {
            pairs += 1;
            if sid(pred, truth).unwrap() != sid_oracle(pred, truth) || edge_f1(pred, truth).unwrap() != f1_oracle(pred, truth) {
                mismatches += 1;
            }
        }
    }
    let vectors: Vec<Vec<bool>> = (0..8u32).map(|c| (0..3).map(|j| c >> j & 1 == 1).collect()).collect();
    for p in &vectors {
        for t in &vectors {
            if target_f1(p, t).unwrap() != target_f1_oracle(p, t) {
                mismatches += 1;
            }
        }
    }

    // marginals of a generic plan at the default regularization
    let rng = RngState::new(1);
    let mut g = rng.generator();
    let x = Array2::from_shape_fn((30, 3), |_| rand::Rng::random_range(&mut g, -2.0..2.0));
    let y = Array2::from_shape_fn((20, 3), |_| rand::Rng::random_range(&mut g, -1.0..3.0));
    let plan = sinkhorn_w2(x.view(), y.view(), &SinkhornConfig { tol: 1e-9, ..SinkhornConfig::default() }).unwrap().plan;
    let rows = plan.rows().into_iter().map(|r| (r.sum() - 1.0 / 30.0).abs()).fold(0.0, f64::max);
    let cols = plan.columns().into_iter().map(|c| (c.sum() - 1.0 / 20.0).abs()).fold(0.0, f64::max);
    let marginal = rows.max(cols);

    // two points translated by 2
    let a: Array2<f64> = array![[0.0, 0.0], [1.0, 0.0]];
    let b: Array2<f64> = array![[0.0, 2.0], [1.0, 2.0]];
    let two = sinkhorn_w2(a.view(), b.view(), &SinkhornConfig { eps: 1e-3, ..SinkhornConfig::default() }).unwrap().value;
    let brute = best_assignment(&a, &b).sqrt();

    let pred = array![[0.1, 0.3], [0.9, -0.2], [-0.4, 0.5], [0.3, 1.1], [1.2, 0.4], [-0.7, -0.6]];
    let truth = array![[0.0, 0.0], [0.5, 0.5], [-0.3, 0.8], [1.0, -0.1]];
    let kde_err = (kde_nll(pred.view(), truth.view()).unwrap().nll - kde_nll_2d(&pred, &truth)).abs();

    verdict(
        mismatches == 0 && marginal < 1e-6 && (two - 2.0).abs() < 1e-2 && kde_err < 1e-10,
        format!(
            "{mismatches} mismatches over {pairs} DAG pairs and 64 target pairs; marginal violation {marginal:.1e}; \
             two-point W2 {two:.5} (assignment {brute}); kde error {kde_err:.1e}"
        ),
    )
}

fn bundle_fidelity() -> Verdict {
    let g = generate(&ExperimentConfig::default()).unwrap();
    let b = &g.bundle;
    let rows_ok = b.environments().filter(|e| e.split != Split::Observational).all(|e| e.x.nrows() == 50);
    let gamma_ok = b.environments().all(|e| e.gamma.len() == 15);
    let hill = hill_eval(4.0, 0.75).unwrap();
    let pass = b.train.len() == 160
        && b.partial_ood.len() == 200
        && b.full_ood.len() == 80
        && b.observational.x.nrows() == 800
        && rows_ok
        && gamma_ok
        && hill == 2.0;
    verdict(
        pass,
        format!(
            "train {} partial {} full {} n_0 {} n_k=50 {rows_ok} gamma len 15 {gamma_ok} hill(4, 0.75) {hill}",
            b.train.len(),
            b.partial_ood.len(),
            b.full_ood.len(),
            b.observational.x.nrows()
        ),
    )
}

fn scaled_config(seed: u64, n_components: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.graph.d = 5;
    cfg.graph.expected_edges = 5.0;
    cfg.data.n_perturb = 10;
    cfg.data.target_sizes = vec![1];
    cfg.data.n_full_ood = 5;
    cfg.data.n_k = 200;
    cfg.data.n_0 = 800;
    cfg.features.n_components = n_components;
    cfg.hyper.mc_samples = MC_SAMPLES;
    cfg.train.steps = STEPS;
    cfg.train.check_every = 20;
    cfg.train.convergence_window = 2;
    cfg.train.convergence_tol = 1e-2;
    cfg
}

struct SeedRun {
    seed: u64,
    edge_f1: f64,
    empty_edge_f1: f64,
    target_f1: f64,
    obs_target_f1: f64,
    repairs: usize,
    acyclic: bool,
    recurrence_ok: bool,
    updates: usize,
    partial_w2: f64,
    obs_partial_w2: f64,
    full_mean_distance: f64,
    obs_full_mean_distance: f64,
    full_w2: f64,
    full_w2_two: f64,
    recurrence_ok_two: bool,
}

fn recurrence_holds(out: &TrainOutcome) -> bool {
    out.trace.updates.iter().all(|u| u.mu_after == 2.0 * u.mu_before && u.lambda_after == u.lambda_before + u.mu_before * u.c)
}

fn med(rows: &[EnvMetrics], f: impl Fn(&EnvMetrics) -> f64) -> f64 {
    median(rows.iter().map(f)).expect("nonempty split")
}

fn fit_seed(cfg: &ExperimentConfig) -> (Generated, TrainOutcome, Predictor) {
    let g = generate(cfg).unwrap();
    let out = fit(&g.bundle, cfg).unwrap();
    assert_eq!(out.status, TrainStatus::Completed, "seed {} aborted", cfg.seed);
    let p = Predictor::new(&out.model, &out.gim).unwrap();
    (g, out, p)
}

fn split_metrics(method: &Method, bundle: &DatasetBundle, split: Split, cfg: &ExperimentConfig) -> Vec<EnvMetrics> {
    let preds = predict_split(method, bundle, split, &cfg.eval, &RngState::new(cfg.seed)).unwrap();
    evaluate_predictions(bundle, &preds, &cfg.eval).unwrap()
}

fn run_seed(seed: u64) -> SeedRun {
    let cfg = scaled_config(seed, 10);
    let (g, out, p) = fit_seed(&cfg);
    let bundle = &g.bundle;
    let map = extract_map_graph(&out.model);
    let none = vec![false; bundle.d];
    let mut gim_f1 = Vec::new();
    let mut obs_f1 = Vec::new();
    for env in &bundle.train {
        let iv = p.infer_intervention(&env.gamma).unwrap();
        gim_f1.push(target_f1(&iv.targets, &env.intervention.targets).unwrap());
        obs_f1.push(target_f1(&none, &env.intervention.targets).unwrap());
    }
    let gim = Method::Gim(&p);
    let gim_partial = split_metrics(&gim, bundle, Split::PartialOod, &cfg);
    let obs_partial = split_metrics(&Method::Observational, bundle, Split::PartialOod, &cfg);
    let gim_full = split_metrics(&gim, bundle, Split::FullOod, &cfg);
    let obs_full = split_metrics(&Method::Observational, bundle, Split::FullOod, &cfg);

    let cfg_two = scaled_config(seed, 2);
    let (g_two, out_two, p_two) = fit_seed(&cfg_two);
    let full_two = split_metrics(&Method::Gim(&p_two), &g_two.bundle, Split::FullOod, &cfg_two);

    let run = SeedRun {
        seed,
        edge_f1: edge_f1(&map.dag, &g.scm.dag).unwrap(),
        empty_edge_f1: edge_f1(&Dag::empty(bundle.d), &g.scm.dag).unwrap(),
        target_f1: median(gim_f1).unwrap(),
        obs_target_f1: median(obs_f1).unwrap(),
        repairs: map.removed.len(),
        acyclic: is_acyclic(&map.dag.adjacency()),
        recurrence_ok: recurrence_holds(&out),
        updates: out.trace.updates.len(),
        partial_w2: med(&gim_partial, |m| m.w2),
        obs_partial_w2: med(&obs_partial, |m| m.w2),
        full_mean_distance: med(&gim_full, |m| m.mean_distance),
        obs_full_mean_distance: med(&obs_full, |m| m.mean_distance),
        full_w2: med(&gim_full, |m| m.w2),
        full_w2_two: med(&full_two, |m| m.w2),
        recurrence_ok_two: recurrence_holds(&out_two),
    };
    println!(
        "  seed {}: edge F1 {:.3} (empty {:.3}) target F1 {:.3} (obs {:.3}) repairs {} updates {} | \
         partial W2 {:.3} vs obs {:.3} | full mean dist {:.3} vs obs {:.3} | full W2 2d {:.3} vs 2 comps {:.3}",
        run.seed,
        run.edge_f1,
        run.empty_edge_f1,
        run.target_f1,
        run.obs_target_f1,
        run.repairs,
        run.updates,
        run.partial_w2,
        run.obs_partial_w2,
        run.full_mean_distance,
        run.obs_full_mean_distance,
        run.full_w2,
        run.full_w2_two
    );
    run
}

fn recovery(runs: &[SeedRun]) -> Verdict {
    let edge = median(runs.iter().map(|r| r.edge_f1)).unwrap();
    let target = median(runs.iter().map(|r| r.target_f1)).unwrap();
    let empty = median(runs.iter().map(|r| r.empty_edge_f1)).unwrap();
    let obs = median(runs.iter().map(|r| r.obs_target_f1)).unwrap();
    verdict(
        target == 1.0 && edge >= 0.8 && edge > empty && target > obs,
        format!("median target F1 {target:.3} (= 1, obs {obs:.3}); median edge F1 {edge:.3} (>= 0.8, empty {empty:.3})"),
    )
}

fn ood_dominance(runs: &[SeedRun]) -> Verdict {
    let partial = runs.iter().filter(|r| r.partial_w2 < r.obs_partial_w2).count();
    let full = runs.iter().filter(|r| r.full_mean_distance < r.obs_full_mean_distance).count();
    verdict(
        partial >= 4 && full >= 3,
        format!("partial-OOD W2 below observational in {partial}/5 (>= 4); full-OOD mean distance in {full}/5 (>= 3)"),
    )
}

fn feature_monotonicity(runs: &[SeedRun]) -> Verdict {
    let wins = runs.iter().filter(|r| r.full_w2 <= r.full_w2_two).count();
    verdict(wins >= 4, format!("full-OOD W2 with 10 components <= with 2 in {wins}/5 (>= 4)"))
}

fn lagrangian(runs: &[SeedRun]) -> Verdict {
    let exact = runs.iter().all(|r| r.recurrence_ok && r.recurrence_ok_two);
    let acyclic = runs.iter().all(|r| r.acyclic);
    let clean = runs.iter().filter(|r| r.repairs == 0).count();
    let updates: Vec<usize> = runs.iter().map(|r| r.updates).collect();
    verdict(
        exact && acyclic && clean >= 4,
        format!("recurrence exact {exact}; final graphs acyclic {acyclic}; zero repairs in {clean}/5 (>= 4); updates {updates:?}"),
    )
}

fn main() {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "gradient oracle", t, &gradient_oracle());
    let t = Instant::now();
    all &= report(2, "acyclicity", t, &acyclicity());
    let t = Instant::now();
    all &= report(3, "metric oracles", t, &metric_oracles());
    let t = Instant::now();
    all &= report(4, "synthetic bundle fidelity", t, &bundle_fidelity());

    let t = Instant::now();
    println!("scaled recovery runs: d = 5, {STEPS} steps, M = {MC_SAMPLES}, seeds {SEEDS:?}");
    let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    all &= report(5, "end-to-end recovery", t, &recovery(&runs));
    all &= report(6, "OOD dominance", t, &ood_dominance(&runs));
    all &= report(7, "feature information", t, &feature_monotonicity(&runs));
    all &= report(8, "Lagrangian schedule", t, &lagrangian(&runs));

    if !all {
        std::process::exit(1);
    }
}
