//! Causal-rule learning toolkit.
//!
//! Rules are mined from itemized data ([`rulemine`]), pruned to a compact set
//! ([`ruleselect`]) and fed to linear models trained under sample weights that
//! remove polynomial dependence between features ([`decorrelate`]). The
//! [`synthdata`] generators and [`evalmetrics`] measures back the benchmark
//! harness in the `crtre-bench` crate.

pub mod baselines;
pub mod decorrelate;
pub mod error;
pub mod evalmetrics;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod rng;
pub mod rulemine;
pub mod ruleselect;
pub mod svm;
pub mod synthdata;
pub mod tabular;

pub use error::{Error, Result};
