//! Few-shot regression on molecular fingerprints with conditional neural
//! processes.
//!
//! The crate is organized around a sparse molecules × functions score table:
//!
//! - [`chem`] parses SMILES into molecular graphs and hashes them into
//!   binary circular fingerprints (the model input space).
//! - [`nn`] is a small dense-network engine with exact reverse-mode
//!   gradients, Adam, and a Gaussian negative-log-likelihood loss.
//! - [`cnp`] builds the conditional neural process on top of [`nn`]:
//!   encode context pairs, mean-aggregate, decode targets into Gaussian
//!   predictive distributions; episodic training.
//! - [`data`] ingests score tables, manages datapoint/function splits,
//!   synthesizes drug-likeness-modified scores and test task families.
//! - [`baselines`] holds the supervised QSAR reference models (KNN, FSS,
//!   random forest, feed-forward net, pretrain-then-fine-tune net).
//! - [`experiments`] reproduces the benchmark harness: calibration over
//!   epochs, few-shot sweeps, cross-class generalization, and pool-based
//!   Bayesian optimization, with CSV/JSON/SVG reporting.
//!
//! Everything is deterministic under explicit seeds: no global RNG, no
//! wall-clock defaults, fixed summation orders.

pub mod baselines;
pub mod chem;
pub mod cnp;
pub mod data;
pub mod experiments;
pub mod nn;
mod seeding;

pub use chem::{Fingerprint, MolGraph};
