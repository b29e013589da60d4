//! Label-free curiosity scores and novelty detection.
//!
//! A sample's curiosity is its Euclidean distance to the nearest learned
//! centroid of any class; an empty memory makes every sample maximally
//! curious (`+∞`). The most curious pool samples are the ones worth asking a
//! teacher about, and samples farther than a threshold from everything known
//! are reported as unknown.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::aggvar::{euclidean, MemoryStore};
use crate::error::{CbclError, Result};
use crate::feature_store::{ClassId, FeatureVector};

/// Minimum centroid distance, `+∞` for an empty memory.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CuriosityScore(f64);

impl CuriosityScore {
    pub const UNBOUNDED: CuriosityScore = CuriosityScore(f64::INFINITY);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_unbounded(self) -> bool {
        self.0.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionResult {
    pub chosen_indices: Vec<usize>,
    /// Parallel to `chosen_indices`; non-increasing.
    pub scores: Vec<CuriosityScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoveltyConfig {
    pub unknown_threshold: f64,
}

impl NoveltyConfig {
    pub fn new(unknown_threshold: f64) -> Result<Self> {
        let c = NoveltyConfig { unknown_threshold };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.unknown_threshold.is_nan() || self.unknown_threshold <= 0.0 {
            return Err(CbclError::Config(format!(
                "unknown_threshold must be > 0, got {}",
                self.unknown_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    Known(ClassId),
    Unknown,
}

fn check_dim(store: &MemoryStore, x: &[f64]) -> Result<()> {
    if x.len() != store.dim() {
        return Err(CbclError::Data(format!(
            "sample has dimension {}, memory holds dimension {}",
            x.len(),
            store.dim()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CbclError::Data("sample has non-finite entries".into()));
    }
    Ok(())
}

pub fn score(store: &MemoryStore, x: &[f64]) -> Result<CuriosityScore> {
    check_dim(store, x)?;
    let min = store
        .centroids()
        .map(|(_, _, c)| euclidean(x, c))
        .fold(f64::INFINITY, f64::min);
    Ok(CuriosityScore(min))
}

/// Descending score, ties broken by ascending pool index.
fn by_curiosity(a: &(usize, CuriosityScore), b: &(usize, CuriosityScore)) -> Ordering {
    b.1 .0.total_cmp(&a.1 .0).then(a.0.cmp(&b.0))
}

/// The `min(budget, pool.len())` most curious pool entries.
pub fn select_informative(store: &MemoryStore, pool: &[FeatureVector], budget: usize) -> Result<SelectionResult> {
    let mut scored = pool
        .iter()
        .enumerate()
        .map(|(i, x)| Ok((i, score(store, x)?)))
        .collect::<Result<Vec<_>>>()?;
    let k = budget.min(scored.len());
    if k == 0 {
        return Ok(SelectionResult::default());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_curiosity);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_curiosity);
    let (chosen_indices, scores) = scored.into_iter().unzip();
    Ok(SelectionResult { chosen_indices, scores })
}

/// `Unknown` when the nearest centroid is farther than the threshold (or
/// the memory is empty), otherwise `Known` with that centroid's class.
pub fn detect_unknown(store: &MemoryStore, x: &[f64], config: &NoveltyConfig) -> Result<Detection> {
    check_dim(store, x)?;
    if store.is_empty() {
        return Ok(Detection::Unknown);
    }
    let nearest = store.nearest_centroid(x, None)?;
    if nearest.distance > config.unknown_threshold {
        Ok(Detection::Unknown)
    } else {
        Ok(Detection::Known(nearest.class))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggvar::{AggVarConfig, CovarianceMode};
    use crate::feature_store::LabeledSample;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    fn store(points: &[(&[f64], ClassId)]) -> MemoryStore {
        let mut s = MemoryStore::new(2, AggVarConfig::new(0.5, CovarianceMode::Diagonal).unwrap()).unwrap();
        for (p, c) in points {
            s.process_sample(&LabeledSample::new(fv(p), *c)).unwrap();
        }
        s
    }

    #[test]
    fn zero_at_centroid_and_unbounded_when_empty() {
        let s = store(&[(&[1.0, 1.0], 0), (&[4.0, 5.0], 3)]);
        assert_eq!(score(&s, &[4.0, 5.0]).unwrap().value(), 0.0);
        assert_eq!(score(&s, &[1.0, 4.0]).unwrap().value(), 3.0);
        let empty = store(&[]);
        assert!(score(&empty, &[0.0, 0.0]).unwrap().is_unbounded());
        assert!(matches!(score(&s, &[0.0]), Err(CbclError::Data(_))));
    }

    #[test]
    fn selection_prefers_distant_points() {
        let s = store(&[(&[0.0, 0.0], 0)]);
        let pool = vec![fv(&[0.0, 0.0]), fv(&[100.0, 0.0])];
        assert!(select_informative(&s, &pool, 0).unwrap().chosen_indices.is_empty());
        let r = select_informative(&s, &pool, 1).unwrap();
        assert_eq!(r.chosen_indices, vec![1]);
        assert_eq!(r.scores[0].value(), 100.0);
        let all = select_informative(&s, &pool, 10).unwrap();
        assert_eq!(all.chosen_indices, vec![1, 0]);
    }

    #[test]
    fn unbounded_ties_keep_pool_order() {
        let s = store(&[]);
        let pool = vec![fv(&[3.0, 0.0]), fv(&[1.0, 0.0]), fv(&[2.0, 0.0])];
        assert_eq!(select_informative(&s, &pool, 2).unwrap().chosen_indices, vec![0, 1]);
    }

    #[test]
    fn detection_cases() {
        let cfg = NoveltyConfig::new(2.0).unwrap();
        let s = store(&[(&[0.0, 0.0], 1), (&[10.0, 0.0], 3)]);
        assert_eq!(detect_unknown(&s, &[10.0, 0.0], &cfg).unwrap(), Detection::Known(3));
        assert_eq!(detect_unknown(&s, &[10.0, 2.0], &cfg).unwrap(), Detection::Known(3));
        assert_eq!(detect_unknown(&s, &[5.0, 0.0], &cfg).unwrap(), Detection::Unknown);
        assert_eq!(
            detect_unknown(&store(&[]), &[5.0, 0.0], &cfg).unwrap(),
            Detection::Unknown
        );

        let never = NoveltyConfig::new(f64::INFINITY).unwrap();
        assert_eq!(detect_unknown(&s, &[-1e9, 1e9], &never).unwrap(), Detection::Known(1));
        assert!(NoveltyConfig::new(0.0).is_err());
    }
}
