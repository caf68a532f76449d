//! Nonlinear variable decorrelation by sample reweighting.
//!
//! Every ordered feature pair `(source, target)` is summarized by the
//! polynomial relation that best predicts the weighted target from the
//! weighted source. The penalty sums the squared non-constant coefficients
//! over pairs; weights that drive it to zero leave no polynomial dependence of
//! degree ≤ k between features.

pub(crate) mod models;
mod penalty;
mod pipeline;
mod relation;
mod weights;

pub use crate::model::{ModelKind, ModelParams};
pub use models::{fit_weighted_classifier, fit_weighted_svr};
pub use penalty::{decorrelation_penalty, penalty_eval, penalty_gradient, RelationTarget};
pub use pipeline::{crtre_fit, CrtreFit, FitMode, Task};
pub use relation::{solve_relation, weighted_moment_system, PolyRelation};
pub use weights::{kde_init_weights, learn_weights, BandwidthRule, DecorrConfig, SampleWeights, WeightInit};
pub use pipeline::labels_of;
