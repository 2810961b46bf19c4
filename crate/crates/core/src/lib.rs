//! Cluster recovery in the two-cluster degree-correlated stochastic block
//! model: local belief propagation, exact likelihood recursions on
//! Galton-Watson trees, and the one-dimensional Gaussian density-evolution
//! recursion that predicts the misclassified fraction.
//!
//! The crate is organized around the pipeline used by the experiment
//! harness:
//!
//! * [`model`] — parameter bookkeeping plus seeded samplers for block-model
//!   graphs and two-type Poisson branching trees.
//! * [`density_evolution`] — the scalar recursion `v_{t+1} = theta + lambda
//!   h(v_t)`, its fixed points, and the Gaussian-mixture error predictor.
//! * [`graph_bp`] — message passing on sampled graphs (zero-initialized and
//!   warm-started variants) and misclassification accounting.
//! * [`tree_bp`] — exact log-likelihood-ratio recursions on trees for the
//!   three boundary regimes, a brute-force enumeration oracle, and
//!   Monte-Carlo estimates of the tree error probabilities.
//! * [`spectral_init`] — the global (spectral) partition used to warm-start
//!   belief propagation, anchor-based orientation, and the data-driven
//!   estimate of the partition error rate.
//! * [`harness`] — seeded, reproducible experiment drivers that compare
//!   empirical error rates against the density-evolution predictions and
//!   emit CSV/JSON reports.
//!
//! All sampling entry points take an explicit `u64` seed and are pure
//! functions of `(inputs, seed)`; see [`rng`] for the derivation scheme used
//! to fan a master seed out to independent trials.

pub mod density_evolution;
pub mod error;
pub mod graph_bp;
pub mod harness;
pub mod model;
pub mod quad;
pub mod rng;
pub mod spectral_init;
pub mod tree_bp;

pub use error::{Error, Result};
pub use model::{GwTree, LabeledGraph, ModelParams};
