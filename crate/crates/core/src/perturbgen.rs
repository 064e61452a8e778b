//! Synthetic perturbation benchmark: Hill-function dosage responses, the
//! environment bundle with train / partial-OOD / full-OOD splits, and the PCA
//! feature encoder.

use std::collections::HashSet;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{pca_fit, PcaModel, RngState};
use crate::scm::{Intervention, InterventionKind, MechanismKind, Scm};

const HILL_HALF_DOSE: f64 = 0.75;

/// `lambda / (1 + (0.75 / c)^4)`, exactly zero at `c = 0`.
pub fn hill_eval(lambda: f64, c: f64) -> Result<f64> {
    if !(c >= 0.0) {
        return Err(invalid(format!("dosage must be >= 0, got {c}")));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    Ok(lambda / (1.0 + (HILL_HALF_DOSE / c).powi(4)))
}

/// One synthetic perturbation: a target set and a Hill amplitude per target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HillPerturbation {
    pub targets: Vec<usize>,
    pub lambda: Vec<f64>,
}

impl HillPerturbation {
    /// Dense per-node intervention parameters at dosage `c` (zeros off-target).
    pub fn psi(&self, d: usize, c: f64) -> Result<Vec<f64>> {
        let mut psi = vec![0.0; d];
        for (&t, &l) in self.targets.iter().zip(&self.lambda) {
            psi[t] = hill_eval(l, c)?;
        }
        Ok(psi)
    }

    pub fn mask(&self, d: usize) -> Vec<bool> {
        let mut m = vec![false; d];
        for &t in &self.targets {
            m[t] = true;
        }
        m
    }

    fn key(&self) -> Vec<(usize, u64)> {
        self.targets.iter().zip(&self.lambda).map(|(&t, l)| (t, l.to_bits())).collect()
    }
}

/// Draw a perturbation with a target set uniform over all subsets whose size
/// is in `target_sizes`, and `|lambda| ~ U[2, 6]` with a fair random sign.
pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, d: usize, target_sizes: &[usize]) -> Result<HillPerturbation> {
    let subsets = enumerate_subsets(d, target_sizes)?;
    let targets = subsets[rng.random_range(0..subsets.len())].clone();
    let lambda = targets
        .iter()
        .map(|_| {
            let mag = rng.random_range(2.0..=6.0);
            if rng.random::<bool>() {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Ok(HillPerturbation { targets, lambda })
}

fn enumerate_subsets(d: usize, sizes: &[usize]) -> Result<Vec<Vec<usize>>> {
    if sizes.is_empty() || sizes.iter().any(|&s| s == 0 || s > d) {
        return Err(invalid(format!("target sizes {sizes:?} must lie in 1..={d}")));
    }
    let mut out = Vec::new();
    for &s in sizes {
        let mut idx: Vec<usize> = (0..s).collect();
        loop {
            out.push(idx.clone());
            // next combination in lexicographic order
            let Some(pos) = (0..s).rev().find(|&p| idx[p] < d - s + p) else { break };
            idx[pos] += 1;
            for q in pos + 1..s {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Observational,
    Train,
    PartialOod,
    FullOod,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Observational => "observational",
            Split::Train => "train",
            Split::PartialOod => "partial_ood",
            Split::FullOod => "full_ood",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observational" => Ok(Split::Observational),
            "train" => Ok(Split::Train),
            "partial_ood" => Ok(Split::PartialOod),
            "full_ood" => Ok(Split::FullOod),
            other => Err(invalid(format!("unknown split '{other}'"))),
        }
    }
}

/// One perturbation context: features, samples and (synthetic) ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub id: String,
    pub split: Split,
    /// Index into `perturbations` (train and partial-OOD) or
    /// `ood_perturbations` (full-OOD); `None` for observational data.
    pub perturbation: Option<usize>,
    pub dosage: f64,
    pub intervention: Intervention,
    pub gamma: Vec<f64>,
    pub x: Array2<f64>,
}

impl Environment {
    pub fn is_observational(&self) -> bool {
        self.split == Split::Observational
    }

    /// `[I; psi]` with `psi` dense and zero off-target.
    pub fn raw_feature(&self) -> Vec<f64> {
        let iv = &self.intervention;
        let mut f: Vec<f64> = iv.targets.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        f.extend(iv.targets.iter().zip(&iv.psi).map(|(&t, &p)| if t { p } else { 0.0 }));
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    pub n_perturb: usize,
    pub train_dosages: Vec<f64>,
    pub partial_dosages: Vec<f64>,
    pub n_full_ood: usize,
    pub n_k: usize,
    pub n_0: usize,
    pub kind: InterventionKind,
    /// Allowed target-set sizes.
    pub target_sizes: Vec<usize>,
    /// Variance of hard-intervened nodes.
    pub interv_variance: f64,
    /// Zero probability of hard-intervened ZILN nodes.
    pub interv_zero_prob: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            n_perturb: 40,
            train_dosages: vec![0.5, 1.0, 1.5, 2.0],
            partial_dosages: vec![0.25, 0.75, 1.25, 1.75, 2.25],
            n_full_ood: 20,
            n_k: 50,
            n_0: 800,
            kind: InterventionKind::Hard,
            target_sizes: vec![1, 2],
            interv_variance: 0.5,
            interv_zero_prob: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub d: usize,
    pub kind: InterventionKind,
    pub observational: Environment,
    pub train: Vec<Environment>,
    pub partial_ood: Vec<Environment>,
    pub full_ood: Vec<Environment>,
    /// Perturbations seen in training (also used by partial-OOD).
    pub perturbations: Vec<HillPerturbation>,
    /// Fresh perturbations for the full-OOD split.
    pub ood_perturbations: Vec<HillPerturbation>,
    pub pca: Option<PcaModel>,
    pub config: BundleConfig,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[Environment] {
        match split {
            Split::Observational => std::slice::from_ref(&self.observational),
            Split::Train => &self.train,
            Split::PartialOod => &self.partial_ood,
            Split::FullOod => &self.full_ood,
        }
    }

    pub fn environments(&self) -> impl Iterator<Item = &Environment> {
        std::iter::once(&self.observational)
            .chain(&self.train)
            .chain(&self.partial_ood)
            .chain(&self.full_ood)
    }

    fn environments_mut(&mut self) -> impl Iterator<Item = &mut Environment> {
        std::iter::once(&mut self.observational)
            .chain(&mut self.train)
            .chain(&mut self.partial_ood)
            .chain(&mut self.full_ood)
    }

    pub fn feature_dim(&self) -> usize {
        self.observational.gamma.len()
    }

    /// Observational plus train environments: the data a model is fit on.
    pub fn training_envs(&self) -> Vec<&Environment> {
        std::iter::once(&self.observational).chain(&self.train).collect()
    }
}

struct EnvSpec {
    id: String,
    split: Split,
    perturbation: Option<usize>,
    dosage: f64,
    intervention: Intervention,
    n: usize,
}

fn make_intervention(
    cfg: &BundleConfig,
    mech: MechanismKind,
    d: usize,
    p: &HillPerturbation,
    c: f64,
) -> Result<Intervention> {
    let psi = p.psi(d, c)?;
    let mut iv = match cfg.kind {
        InterventionKind::Hard => Intervention::hard(p.mask(d), psi, cfg.interv_variance.ln()),
        InterventionKind::Shift => Intervention::shift(p.mask(d), psi),
    };
    if mech == MechanismKind::Ziln && cfg.kind == InterventionKind::Hard {
        let q = cfg.interv_zero_prob;
        iv.zero_logit = vec![(q / (1.0 - q)).ln(); d];
    }
    Ok(iv)
}

fn observational_intervention(cfg: &BundleConfig, mech: MechanismKind, d: usize) -> Intervention {
    let mut iv = Intervention::observational(cfg.kind, d);
    if mech == MechanismKind::Ziln && cfg.kind == InterventionKind::Hard {
        iv.zero_logit = vec![0.0; d];
    }
    iv
}

/// Sample the observational environment, the train split (every training
/// perturbation at every train dosage), the partial-OOD split (same
/// perturbations at new dosages) and the full-OOD split (fresh perturbations
/// at train dosages). Features are left empty; see [`build_features`].
pub fn build_bundle(scm: &Scm, rng: &RngState, cfg: &BundleConfig) -> Result<DatasetBundle> {
    let d = scm.d();
    let mech = scm.mechanism.kind;
    if cfg.n_0 == 0 {
        return Err(invalid("n_0 must be positive"));
    }
    if mech == MechanismKind::Ziln && cfg.kind == InterventionKind::Shift {
        return Err(Error::Unsupported("shift interventions on ZILN mechanisms".into()));
    }
    for &c in cfg.train_dosages.iter().chain(&cfg.partial_dosages) {
        hill_eval(1.0, c)?;
    }
    let mut g = rng.named("perturbations").generator();
    let mut perturbations = Vec::with_capacity(cfg.n_perturb);
    for _ in 0..cfg.n_perturb {
        perturbations.push(sample_perturbation(&mut g, d, &cfg.target_sizes)?);
    }
    let seen: HashSet<_> = perturbations.iter().map(HillPerturbation::key).collect();
    let mut ood_perturbations = Vec::with_capacity(cfg.n_full_ood);
    while ood_perturbations.len() < cfg.n_full_ood {
        let p = sample_perturbation(&mut g, d, &cfg.target_sizes)?;
        if !seen.contains(&p.key()) {
            ood_perturbations.push(p);
        }
    }

    let mut specs = vec![EnvSpec {
        id: "obs".into(),
        split: Split::Observational,
        perturbation: None,
        dosage: 0.0,
        intervention: observational_intervention(cfg, mech, d),
        n: cfg.n_0,
    }];
    let mut push_split = |split: Split, perts: &[HillPerturbation], dosages: &[f64], tag: &str| -> Result<()> {
        for (pi, p) in perts.iter().enumerate() {
            for (ci, &c) in dosages.iter().enumerate() {
                specs.push(EnvSpec {
                    id: format!("{tag}_p{pi:03}_c{ci}"),
                    split,
                    perturbation: Some(pi),
                    dosage: c,
                    intervention: make_intervention(cfg, mech, d, p, c)?,
                    n: cfg.n_k,
                });
            }
        }
        Ok(())
    };
    push_split(Split::Train, &perturbations, &cfg.train_dosages, "train")?;
    push_split(Split::PartialOod, &perturbations, &cfg.partial_dosages, "partial")?;
    push_split(Split::FullOod, &ood_perturbations, &cfg.train_dosages, "full")?;

    let data = rng.named("data");
    let mut envs = specs
        .into_par_iter()
        .enumerate()
        .map(|(k, s)| {
            let x = scm.sample(Some(&s.intervention), s.n, &data.substream(k as u64))?;
            Ok(Environment {
                id: s.id,
                split: s.split,
                perturbation: s.perturbation,
                dosage: s.dosage,
                intervention: s.intervention,
                gamma: Vec::new(),
                x,
            })
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    let observational = envs.next().expect("observational env is first");
    let mut train = Vec::new();
    let mut partial_ood = Vec::new();
    let mut full_ood = Vec::new();
    for e in envs {
        match e.split {
            Split::Train => train.push(e),
            Split::PartialOod => partial_ood.push(e),
            Split::FullOod => full_ood.push(e),
            Split::Observational => unreachable!("only one observational env"),
        }
    }
    Ok(DatasetBundle {
        d,
        kind: cfg.kind,
        observational,
        train,
        partial_ood,
        full_ood,
        perturbations,
        ood_perturbations,
        pca: None,
        config: cfg.clone(),
    })
}

/// Fill every environment's `gamma` with the PCA encoding of its raw feature
/// `[I; psi]`. The encoder is fit on the perturbational train environments
/// only and applied unchanged to every split.
pub fn build_features(bundle: &mut DatasetBundle, n_components: usize) -> Result<()> {
    let p = 2 * bundle.d;
    if n_components > p {
        return Err(invalid(format!("n_components = {n_components} exceeds the raw feature length {p}")));
    }
    if bundle.train.len() < 2 {
        return Err(invalid("feature encoding needs at least two train environments"));
    }
    let raw = raw_matrix(bundle.train.iter());
    let pca = pca_fit(raw.view(), n_components)?;
    for env in bundle.environments_mut() {
        let f = Array2::from_shape_vec((1, p), env.raw_feature()).expect("raw feature has 2d entries");
        env.gamma = pca.transform(f.view())?.row(0).to_vec();
    }
    bundle.pca = Some(pca);
    Ok(())
}

fn raw_matrix<'a>(envs: impl Iterator<Item = &'a Environment>) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = envs.map(Environment::raw_feature).collect();
    let p = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), p), |(r, c)| rows[r][c])
}
