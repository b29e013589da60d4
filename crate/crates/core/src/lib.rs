//! Continual learning of visual concepts over precomputed feature vectors.
//!
//! Classes are remembered as small sets of Gaussian clusters (centroid,
//! scatter, count) built incrementally by distance-threshold clustering.
//! Before each retraining of a single linear softmax layer, the clusters of
//! old classes are sampled to regenerate pseudo-exemplars, so no raw data of
//! earlier increments is ever stored. Distances to the learned centroids
//! also drive curiosity-based sample selection and unknown-class detection.

pub mod aggvar;
pub mod classifier;
pub mod curiosity;
pub mod error;
pub mod feature_store;
pub mod harness;
pub mod rehearsal;
pub mod rng;
pub mod synthetic;

pub use error::{CbclError, Result};
