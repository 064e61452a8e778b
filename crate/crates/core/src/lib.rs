//! Generative intervention models for causal perturbation modeling.
//!
//! The crate covers the full pipeline: simulating structural causal models
//! under feature-described perturbations ([`perturbgen`]), learning a causal
//! model jointly with a network that maps perturbation features to atomic
//! interventions ([`gim`], [`trainer`]), predicting the perturbed distribution
//! for unseen features ([`predictor`]) and scoring structure, targets and
//! predicted samples ([`metrics`]).

pub mod baselines;
pub mod error;
pub mod experiment;
pub mod gim;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod numerics;
pub mod perturbgen;
pub mod predictor;
pub mod scm;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::Dag;
pub use numerics::{RngState, Tensor};
pub use scm::{Intervention, InterventionKind, Mechanism, MechanismKind, Scm};
