#![allow(dead_code)]

pub mod oracles;

use gimforge::gim::{log_joint, EnvData, Estimator, GimConfig, GimParams, Hyper, LatentModel, TrainData};
use gimforge::graph::Dag;
use gimforge::numerics::{finite_diff_grad, Tensor};
use gimforge::scm::{GroundTruthConfig, Intervention, InterventionKind, MechanismKind, Scm};
use gimforge::RngState;
use ndarray::{Array2, IxDyn};

pub struct GradCase {
    pub model: LatentModel,
    pub gim: GimParams,
    pub data: TrainData,
    pub hyper: Hyper,
    pub rng: RngState,
}

/// d = 4, p_z = 4, one observational and one interventional environment.
pub fn grad_case(mech: MechanismKind, kind: InterventionKind, seed: u64) -> GradCase {
    let d = 4;
    let dag = Dag::from_edges(d, [(0, 1), (1, 2), (0, 3), (2, 3)]).unwrap();
    let gt = GroundTruthConfig { hidden: 3, ..GroundTruthConfig::default() };
    let scm = Scm::random(&RngState::new(seed), dag, mech, &gt).unwrap();
    let mut iv = match kind {
        InterventionKind::Hard => Intervention::hard(vec![false, true, false, false], vec![0.0, 1.5, 0.0, 0.0], 0.5f64.ln()),
        InterventionKind::Shift => Intervention::shift(vec![false, true, false, false], vec![0.0, 1.5, 0.0, 0.0]),
    };
    if mech == MechanismKind::Ziln {
        iv.zero_logit = vec![-2.0; d];
    }
    let x_obs = scm.sample(None, 12, &RngState::new(seed + 1)).unwrap();
    let x_int = scm.sample(Some(&iv), 8, &RngState::new(seed + 2)).unwrap();
    let data = TrainData::new(vec![
        EnvData { id: "obs".into(), gamma: vec![0.0; 3], observational: true, x: x_obs },
        EnvData { id: "int".into(), gamma: vec![0.8, -0.4, 1.2], observational: false, x: x_int },
    ])
    .unwrap();
    let mut model = LatentModel::init(&RngState::new(seed + 3), d, 4, mech, 3, 1.0).unwrap();
    model.z0 *= 0.5;
    model.z1 *= 0.5;
    for (j, v) in model.mechanism.log_var.iter_mut().enumerate() {
        *v = -0.3 + 0.1 * j as f64;
    }
    let cfg = GimConfig { hidden: vec![5], eta_h: 0.1 };
    let gim = GimParams::init(&RngState::new(seed + 4), d, 3, kind, mech, &cfg).unwrap();
    let hyper = Hyper {
        beta_m: 2.0,
        beta_i: 3.0,
        mc_samples: 2,
        lambda: 0.5,
        mu: 2.0,
        estimator: Estimator::Relaxed,
        ..Hyper::default()
    };
    GradCase { model, gim, data, hyper, rng: RngState::new(seed + 5) }
}

pub const BLOCKS: [&str; 4] = ["Z", "theta", "sigma", "phi"];

fn block(case: &GradCase, name: &str) -> Vec<f64> {
    match name {
        "Z" => case.model.z0.iter().chain(case.model.z1.iter()).copied().collect(),
        "theta" => case.model.mechanism.theta.clone(),
        "sigma" => case.model.mechanism.log_var.clone(),
        "phi" => case.gim.params_flat(),
        _ => unreachable!(),
    }
}

fn with_block(case: &GradCase, name: &str, values: &[f64]) -> (LatentModel, GimParams) {
    let mut model = case.model.clone();
    let mut gim = case.gim.clone();
    match name {
        "Z" => {
            let n = model.z0.len();
            let shape = model.z0.dim();
            model.z0 = Array2::from_shape_vec(shape, values[..n].to_vec()).unwrap();
            model.z1 = Array2::from_shape_vec(shape, values[n..].to_vec()).unwrap();
        }
        "theta" => model.mechanism.theta = values.to_vec(),
        "sigma" => model.mechanism.log_var = values.to_vec(),
        "phi" => gim.set_params_flat(values).unwrap(),
        _ => unreachable!(),
    }
    (model, gim)
}

/// Max over coordinates of `|analytic - fd| / max(|fd|, 1)` for one block.
pub fn block_error(case: &GradCase, name: &str, h: f64) -> f64 {
    let lj = log_joint(&case.model, &case.gim, &case.data, &case.hyper, &case.rng).unwrap();
    let analytic: Vec<f64> = match name {
        "Z" => lj.grads.z0.iter().chain(lj.grads.z1.iter()).copied().collect(),
        "theta" => lj.grads.theta.clone(),
        "sigma" => lj.grads.log_var.clone(),
        "phi" => lj.grads.phi.clone(),
        _ => unreachable!(),
    };
    let x0 = block(case, name);
    let x = Tensor::from_shape_vec(IxDyn(&[x0.len()]), x0).unwrap();
    let fd = finite_diff_grad(
        |t| {
            let v: Vec<f64> = t.iter().copied().collect();
            let (m, g) = with_block(case, name, &v);
            log_joint(&m, &g, &case.data, &case.hyper, &case.rng).unwrap().value
        },
        &x,
        h,
    )
    .unwrap();
    analytic.iter().zip(fd.iter()).map(|(a, f)| (a - f).abs() / f.abs().max(1.0)).fold(0.0, f64::max)
}
