//! Cross-validated choice of the clustering distance threshold.
//!
//! Within each fold the memory is built from the training part, and the
//! classifier is trained on pseudo-exemplars of every class alone, the
//! situation those classes face once they become old. Held-out accuracy
//! therefore measures how well the clusters learned at a given threshold
//! stand in for the real data.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::config::ProtocolConfig;
use super::report::ClassScore;
use crate::aggvar::{AggVarConfig, MemoryStore};
use crate::classifier::{train, TrainConfig};
use crate::error::{CbclError, Result};
use crate::feature_store::{FeatureVector, IncrementBatch, LabeledSample};
use crate::rehearsal::{generate_rehearsal_set, RehearsalConfig};
use crate::rng::{derived_rng, sub_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: f64,
    /// (candidate, pooled held-out accuracy), in the order given.
    pub scores: Vec<(f64, f64)>,
}

/// Pooled k-fold accuracy of one candidate threshold.
pub fn cross_validate(
    batch: &IncrementBatch,
    threshold: f64,
    folds: usize,
    base: &ProtocolConfig,
    seed: u64,
) -> Result<f64> {
    let assignment = fold_assignment(batch.len(), folds, seed)?;
    let aggvar = AggVarConfig::new(threshold, base.aggvar.covariance_mode)?;
    let mut pooled = ClassScore::default();
    for fold in 0..folds {
        let (train_part, held_out): (Vec<_>, Vec<_>) =
            batch.samples().iter().zip(&assignment).partition(|(_, &f)| f != fold);
        let train_part: Vec<LabeledSample> = train_part.into_iter().map(|(s, _)| s.clone()).collect();

        let mut store = MemoryStore::new(batch.dim(), aggvar)?;
        store.learn_increment(&IncrementBatch::new(batch.index, train_part)?)?;
        let rehearsal = RehearsalConfig {
            seed: sub_seed(seed, "tune-rehearsal", fold as u64),
            ..base.rehearsal
        };
        let exemplars = generate_rehearsal_set(&store, &BTreeSet::new(), &rehearsal)?;
        let training: Vec<(FeatureVector, _)> = exemplars.into_iter().map(|e| (e.features, e.label)).collect();
        let classifier = train(
            &training,
            &TrainConfig {
                seed: sub_seed(seed, "tune-train", fold as u64),
                ..base.train
            },
        )?;
        for (s, _) in held_out {
            pooled.total += 1;
            if classifier.predict(&s.features)? == s.label {
                pooled.correct += 1;
            }
        }
    }
    Ok(pooled.accuracy())
}

fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(CbclError::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(CbclError::Config(format!(
            "increment of {n} samples is too small for {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut derived_rng(seed, "tune-folds", 0));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(assignment)
}

/// The candidate with the best cross-validated accuracy; ties go to the
/// smallest threshold.
pub fn tune_threshold(
    first_increment: &IncrementBatch,
    candidates: &[f64],
    folds: usize,
    base: &ProtocolConfig,
    seed: u64,
) -> Result<TuneOutcome> {
    if candidates.is_empty() {
        return Err(CbclError::Config("no candidate thresholds given".into()));
    }
    fold_assignment(first_increment.len(), folds, seed)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for &d in candidates {
        scores.push((d, cross_validate(first_increment, d, folds, base, seed)?));
    }
    let best = scores
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .map(|(d, _)| d)
        .expect("non-empty");
    Ok(TuneOutcome { best, scores })
}
