//! On-disk formats: dataset bundle directories, SCM and checkpoint JSON,
//! training traces and prediction matrices as CSV.
//!
//! Matrices are written with 17 significant digits so a write/read cycle
//! reproduces every value bit for bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gim::{GimParams, LatentModel};
use crate::numerics::PcaModel;
use crate::perturbgen::{BundleConfig, DatasetBundle, Environment, HillPerturbation, Split};
use crate::scm::{Intervention, InterventionKind};
use crate::trainer::TrainTrace;

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// CSV with a header row `x0, x1, ...`.
pub fn write_matrix_csv(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..x.ncols()).map(|j| format!("x{j}")))?;
    for row in x.rows() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let d = r.headers()?.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != d {
            return Err(Error::Format(format!("{}: row {k} has {} fields, expected {d}", path.display(), rec.len())));
        }
        for f in rec.iter() {
            values.push(f.trim().parse::<f64>().map_err(|e| Error::Format(format!("{}: row {k}: {e}", path.display())))?);
        }
        n += 1;
    }
    Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EnvEntry {
    id: String,
    split: Split,
    perturbation: Option<usize>,
    dosage: f64,
    intervention: Intervention,
    file: String,
    rows: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BundleManifest {
    d: usize,
    kind: InterventionKind,
    config: BundleConfig,
    perturbations: Vec<HillPerturbation>,
    ood_perturbations: Vec<HillPerturbation>,
    pca: Option<PcaModel>,
    feature_dim: usize,
    environments: Vec<EnvEntry>,
}

const BUNDLE_MANIFEST: &str = "bundle.json";
const FEATURES: &str = "features.csv";

/// Write `bundle.json`, one CSV per environment under `envs/` and
/// `features.csv` with one row of perturbation features per environment.
pub fn write_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<()> {
    fs::create_dir_all(dir.join("envs"))?;
    let mut entries = Vec::new();
    let mut fw = csv::Writer::from_path(dir.join(FEATURES))?;
    let p = bundle.feature_dim();
    let mut header = vec!["env".to_string()];
    header.extend((0..p).map(|j| format!("g{j}")));
    fw.write_record(&header)?;
    for env in bundle.environments() {
        let file = format!("envs/{}.csv", env.id);
        write_matrix_csv(&dir.join(&file), &env.x)?;
        let mut rec = vec![env.id.clone()];
        rec.extend(env.gamma.iter().map(|v| format!("{v:.16e}")));
        fw.write_record(&rec)?;
        entries.push(EnvEntry {
            id: env.id.clone(),
            split: env.split,
            perturbation: env.perturbation,
            dosage: env.dosage,
            intervention: env.intervention.clone(),
            file,
            rows: env.x.nrows(),
        });
    }
    fw.flush()?;
    let manifest = BundleManifest {
        d: bundle.d,
        kind: bundle.kind,
        config: bundle.config.clone(),
        perturbations: bundle.perturbations.clone(),
        ood_perturbations: bundle.ood_perturbations.clone(),
        pca: bundle.pca.clone(),
        feature_dim: p,
        environments: entries,
    };
    write_json(&dir.join(BUNDLE_MANIFEST), &manifest)
}

pub fn read_bundle(dir: &Path) -> Result<DatasetBundle> {
    let m: BundleManifest = read_json(&dir.join(BUNDLE_MANIFEST))?;
    let mut features = std::collections::HashMap::new();
    let mut fr = csv::Reader::from_path(dir.join(FEATURES))?;
    for rec in fr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let gamma = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Format(format!("features of {id}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        features.insert(id, gamma);
    }
    let mut observational = None;
    let (mut train, mut partial, mut full) = (Vec::new(), Vec::new(), Vec::new());
    for e in m.environments {
        let x = read_matrix_csv(&dir.join(&e.file))?;
        if x.nrows() != e.rows || x.ncols() != m.d {
            return Err(Error::Format(format!("{}: expected {} x {}, found {:?}", e.file, e.rows, m.d, x.dim())));
        }
        let gamma = features.remove(&e.id).ok_or_else(|| Error::Format(format!("no features for {}", e.id)))?;
        if gamma.len() != m.feature_dim {
            return Err(Error::Format(format!("features of {} have length {}", e.id, gamma.len())));
        }
        let env = Environment {
            id: e.id,
            split: e.split,
            perturbation: e.perturbation,
            dosage: e.dosage,
            intervention: e.intervention,
            gamma,
            x,
        };
        match env.split {
            Split::Observational => observational = Some(env),
            Split::Train => train.push(env),
            Split::PartialOod => partial.push(env),
            Split::FullOod => full.push(env),
        }
    }
    Ok(DatasetBundle {
        d: m.d,
        kind: m.kind,
        observational: observational.ok_or_else(|| Error::Format("bundle has no observational environment".into()))?,
        train,
        partial_ood: partial,
        full_ood: full,
        perturbations: m.perturbations,
        ood_perturbations: m.ood_perturbations,
        pca: m.pca,
        config: m.config,
    })
}

/// Trained parameters plus the Lagrangian state they ended in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: LatentModel,
    pub gim: GimParams,
    pub steps_run: usize,
    pub lambda: f64,
    pub mu: f64,
}

impl Checkpoint {
    pub fn new(model: LatentModel, gim: GimParams, steps_run: usize, lambda: f64, mu: f64) -> Self {
        Self { format_version: CHECKPOINT_VERSION, model, gim, steps_run, lambda, mu }
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_json(path, ckpt)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ckpt: Checkpoint = read_json(path)?;
    if ckpt.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
            ckpt.format_version
        )));
    }
    Ok(ckpt)
}

pub fn write_trace_csv(path: &Path, trace: &TrainTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in &trace.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
