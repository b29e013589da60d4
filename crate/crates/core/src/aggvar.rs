//! Agg-Var clustering.
//!
//! Each class keeps its own list of clusters. A labeled sample is compared
//! against the centroids of its class: if the closest one is strictly nearer
//! than the distance threshold, the sample is folded into that cluster's
//! running mean and scatter (memory integration); otherwise it starts a new
//! cluster with zero scatter (pattern separation).
//!
//! Statistics are single-pass (Welford-style): `scatter` holds the sum of
//! deviation outer products, and the covariance is `scatter / count`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CbclError, Result};
use crate::feature_store::{ClassId, IncrementBatch, LabeledSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    #[default]
    Diagonal,
    Full,
}

impl std::str::FromStr for CovarianceMode {
    type Err = CbclError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(CovarianceMode::Diagonal),
            "full" => Ok(CovarianceMode::Full),
            other => Err(CbclError::Config(format!("unknown covariance mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggVarConfig {
    /// Integrate when the nearest same-class centroid is strictly closer than
    /// this; `f64::INFINITY` always integrates.
    pub distance_threshold: f64,
    pub covariance_mode: CovarianceMode,
}

impl AggVarConfig {
    pub fn new(distance_threshold: f64, covariance_mode: CovarianceMode) -> Result<Self> {
        let c = AggVarConfig {
            distance_threshold,
            covariance_mode,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.distance_threshold.is_nan() || self.distance_threshold < 0.0 {
            return Err(CbclError::Config(format!(
                "distance threshold must be >= 0, got {}",
                self.distance_threshold
            )));
        }
        Ok(())
    }
}

/// Scatter (or covariance) in either diagonal or dense row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Scatter {
    Diagonal(Vec<f64>),
    /// Row-major `d × d`.
    Full(Vec<f64>),
}

impl Scatter {
    fn zeros(dim: usize, mode: CovarianceMode) -> Self {
        match mode {
            CovarianceMode::Diagonal => Scatter::Diagonal(vec![0.0; dim]),
            CovarianceMode::Full => Scatter::Full(vec![0.0; dim * dim]),
        }
    }

    pub fn mode(&self) -> CovarianceMode {
        match self {
            Scatter::Diagonal(_) => CovarianceMode::Diagonal,
            Scatter::Full(_) => CovarianceMode::Full,
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Scatter::Diagonal(v) | Scatter::Full(v) => v,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().iter().all(|&v| v == 0.0)
    }

    /// Per-coordinate entries (the diagonal, in full mode).
    pub fn diagonal(&self, dim: usize) -> Vec<f64> {
        match self {
            Scatter::Diagonal(v) => v.clone(),
            Scatter::Full(m) => (0..dim).map(|i| m[i * dim + i]).collect(),
        }
    }

    fn scaled(&self, factor: f64) -> Scatter {
        match self {
            Scatter::Diagonal(v) => Scatter::Diagonal(v.iter().map(|x| x * factor).collect()),
            Scatter::Full(v) => Scatter::Full(v.iter().map(|x| x * factor).collect()),
        }
    }
}

/// Number of stored scatter values per cluster.
pub fn scatter_len(dim: usize, mode: CovarianceMode) -> usize {
    match mode {
        CovarianceMode::Diagonal => dim,
        CovarianceMode::Full => dim * dim,
    }
}

/// A centroid with its scatter and sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptCluster {
    centroid: Vec<f64>,
    scatter: Scatter,
    count: u64,
}

impl ConceptCluster {
    /// Pattern separation: a fresh cluster at `x` with zero scatter.
    pub fn new(x: &[f64], mode: CovarianceMode) -> Self {
        ConceptCluster {
            centroid: x.to_vec(),
            scatter: Scatter::zeros(x.len(), mode),
            count: 1,
        }
    }

    /// Reassembles a cluster from stored parts, checking every invariant.
    pub fn from_parts(centroid: Vec<f64>, scatter: Scatter, count: u64) -> Result<Self> {
        let d = centroid.len();
        if d == 0 || count == 0 {
            return Err(CbclError::Data("cluster needs dimension >= 1 and count >= 1".into()));
        }
        if scatter.values().len() != scatter_len(d, scatter.mode()) {
            return Err(CbclError::Data("scatter size does not match centroid dimension".into()));
        }
        if centroid.iter().chain(scatter.values()).any(|v| !v.is_finite()) {
            return Err(CbclError::Data("cluster holds non-finite values".into()));
        }
        if count == 1 && !scatter.is_zero() {
            return Err(CbclError::Data("single-sample cluster must have zero scatter".into()));
        }
        if let Scatter::Diagonal(v) = &scatter {
            if v.iter().any(|&s| s < 0.0) {
                return Err(CbclError::Data("diagonal scatter must be non-negative".into()));
            }
        }
        Ok(ConceptCluster {
            centroid,
            scatter,
            count,
        })
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    pub fn scatter(&self) -> &Scatter {
        &self.scatter
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    /// Population covariance, `scatter / count`.
    pub fn covariance(&self) -> Scatter {
        self.scatter.scaled(1.0 / self.count as f64)
    }

    /// Memory integration of `x` into this cluster.
    pub fn integrate(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.centroid.len());
        let n1 = (self.count + 1) as f64;
        let delta: Vec<f64> = x.iter().zip(&self.centroid).map(|(a, c)| a - c).collect();
        for (c, d) in self.centroid.iter_mut().zip(&delta) {
            *c += d / n1;
        }
        let resid: Vec<f64> = x.iter().zip(&self.centroid).map(|(a, c)| a - c).collect();
        match &mut self.scatter {
            Scatter::Diagonal(s) => {
                for ((s, d), r) in s.iter_mut().zip(&delta).zip(&resid) {
                    *s += d * r;
                }
            }
            Scatter::Full(m) => {
                let dim = delta.len();
                // The increment outer(delta, resid) is symmetric in exact
                // arithmetic; fill the upper triangle and mirror it.
                for i in 0..dim {
                    for j in i..dim {
                        let v = 0.5 * (delta[i] * resid[j] + delta[j] * resid[i]);
                        m[i * dim + j] += v;
                        if i != j {
                            m[j * dim + i] += v;
                        }
                    }
                }
            }
        }
        self.count += 1;
    }
}

/// Pure form of [`ConceptCluster::integrate`].
pub fn update_statistics(cluster: &ConceptCluster, x: &[f64]) -> Result<ConceptCluster> {
    check_vector(x, cluster.dim())?;
    let mut next = cluster.clone();
    next.integrate(x);
    Ok(next)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_vector(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(CbclError::Data(format!(
            "vector has dimension {}, expected {dim}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(CbclError::Data("vector has non-finite entries".into()));
    }
    Ok(())
}

/// All clusters learned for one class, in creation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    class_id: ClassId,
    clusters: Vec<ConceptCluster>,
    total_count: u64,
}

impl ClassModel {
    pub fn new(class_id: ClassId) -> Self {
        ClassModel {
            class_id,
            clusters: Vec::new(),
            total_count: 0,
        }
    }

    pub fn from_clusters(class_id: ClassId, clusters: Vec<ConceptCluster>) -> Self {
        let total_count = clusters.iter().map(ConceptCluster::count).sum();
        ClassModel {
            class_id,
            clusters,
            total_count,
        }
    }

    pub fn class_id(&self) -> ClassId {
        self.class_id
    }

    pub fn clusters(&self) -> &[ConceptCluster] {
        &self.clusters
    }

    pub fn total_count(&self) -> u64 {
        self.total_count
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterEvent {
    Integrated { class: ClassId, cluster: usize },
    Separated { class: ClassId, cluster: usize },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncrementSummary {
    pub clusters_created: usize,
    pub samples_integrated: usize,
    /// Batch samples seen per class.
    pub per_class_counts: BTreeMap<ClassId, usize>,
    /// One event per sample, in batch order.
    pub events: Vec<ClusterEvent>,
}

/// Result of a nearest-centroid query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub class: ClassId,
    pub cluster: usize,
    pub distance: f64,
}

/// Bytes used by the model next to the bytes the raw images would take.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootprintComparison {
    pub model_bytes: u64,
    pub images_seen: u64,
    pub raw_bytes: u64,
    /// `model_bytes / raw_bytes`; zero when nothing has been seen.
    pub ratio: f64,
}

/// The learner's complete persistent knowledge: per-class clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    dim: usize,
    models: BTreeMap<ClassId, ClassModel>,
    config: AggVarConfig,
}

impl MemoryStore {
    pub fn new(dim: usize, config: AggVarConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(CbclError::Config("store dimension must be >= 1".into()));
        }
        Ok(MemoryStore {
            dim,
            models: BTreeMap::new(),
            config,
        })
    }

    /// Rebuilds a store from class models, validating dimensions and modes.
    pub fn from_models(dim: usize, config: AggVarConfig, models: Vec<ClassModel>) -> Result<Self> {
        let mut store = MemoryStore::new(dim, config)?;
        for m in models {
            for c in &m.clusters {
                if c.dim() != dim || c.scatter.mode() != config.covariance_mode {
                    return Err(CbclError::Data(format!(
                        "class {} has a cluster inconsistent with the store layout",
                        m.class_id
                    )));
                }
            }
            if m.clusters.is_empty() {
                return Err(CbclError::Data(format!("class {} has no clusters", m.class_id)));
            }
            if store.models.insert(m.class_id, m.clone()).is_some() {
                return Err(CbclError::Data(format!("class {} appears twice", m.class_id)));
            }
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &AggVarConfig {
        &self.config
    }

    pub fn model(&self, class: ClassId) -> Option<&ClassModel> {
        self.models.get(&class)
    }

    /// Class models in ascending class-id order.
    pub fn models(&self) -> impl Iterator<Item = &ClassModel> {
        self.models.values()
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.models.keys().copied().collect()
    }

    pub fn has_class(&self, class: ClassId) -> bool {
        self.models.contains_key(&class)
    }

    pub fn cluster_count(&self) -> usize {
        self.models.values().map(|m| m.clusters.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Total samples learned across all classes.
    pub fn samples_seen(&self) -> u64 {
        self.models.values().map(|m| m.total_count).sum()
    }

    /// Every centroid with its (class, cluster index), in lexicographic order.
    pub fn centroids(&self) -> impl Iterator<Item = (ClassId, usize, &[f64])> {
        self.models.values().flat_map(|m| {
            m.clusters
                .iter()
                .enumerate()
                .map(move |(k, c)| (m.class_id, k, c.centroid()))
        })
    }

    /// Routes one labeled sample to integration or separation.
    pub fn process_sample(&mut self, sample: &LabeledSample) -> Result<ClusterEvent> {
        let x = sample.features.as_slice();
        check_vector(x, self.dim)?;
        let threshold = self.config.distance_threshold;
        let mode = self.config.covariance_mode;
        let model = self
            .models
            .entry(sample.label)
            .or_insert_with(|| ClassModel::new(sample.label));

        let mut best: Option<(usize, f64)> = None;
        for (k, c) in model.clusters.iter().enumerate() {
            let d = euclidean(x, c.centroid());
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        model.total_count += 1;
        match best {
            Some((k, d)) if d < threshold => {
                model.clusters[k].integrate(x);
                Ok(ClusterEvent::Integrated {
                    class: sample.label,
                    cluster: k,
                })
            }
            _ => {
                model.clusters.push(ConceptCluster::new(x, mode));
                Ok(ClusterEvent::Separated {
                    class: sample.label,
                    cluster: model.clusters.len() - 1,
                })
            }
        }
    }

    /// Applies [`process_sample`](Self::process_sample) to every sample of
    /// the batch in order. The batch is validated first, so a bad batch
    /// leaves the store untouched.
    pub fn learn_increment(&mut self, batch: &IncrementBatch) -> Result<IncrementSummary> {
        for s in batch.samples() {
            check_vector(s.features.as_slice(), self.dim)?;
        }
        let mut summary = IncrementSummary::default();
        for s in batch.samples() {
            let ev = self.process_sample(s)?;
            match ev {
                ClusterEvent::Integrated { .. } => summary.samples_integrated += 1,
                ClusterEvent::Separated { .. } => summary.clusters_created += 1,
            }
            *summary.per_class_counts.entry(s.label).or_default() += 1;
            summary.events.push(ev);
        }
        Ok(summary)
    }

    /// Closest centroid over all classes (or those accepted by `filter`).
    /// Ties go to the lowest (class, cluster index).
    pub fn nearest_centroid(&self, x: &[f64], filter: Option<&dyn Fn(ClassId) -> bool>) -> Result<Nearest> {
        check_vector(x, self.dim)?;
        let mut best: Option<Nearest> = None;
        for (class, cluster, c) in self.centroids() {
            if filter.is_some_and(|f| !f(class)) {
                continue;
            }
            let distance = euclidean(x, c);
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(Nearest {
                    class,
                    cluster,
                    distance,
                });
            }
        }
        best.ok_or_else(|| CbclError::EmptyModel("no centroids match the query".into()))
    }

    /// Bytes needed to hold every cluster as 64-bit values:
    /// `clusters × (d + scatter_len + 1) × 8`.
    pub fn memory_footprint(&self) -> u64 {
        let per = (self.dim + scatter_len(self.dim, self.config.covariance_mode) + 1) as u64 * 8;
        self.cluster_count() as u64 * per
    }

    pub fn memory_comparison(&self, image_bytes: u64) -> FootprintComparison {
        let model_bytes = self.memory_footprint();
        let images_seen = self.samples_seen();
        let raw_bytes = images_seen * image_bytes;
        FootprintComparison {
            model_bytes,
            images_seen,
            raw_bytes,
            ratio: if raw_bytes == 0 {
                0.0
            } else {
                model_bytes as f64 / raw_bytes as f64
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::FeatureVector;

    fn sample(v: &[f64], label: ClassId) -> LabeledSample {
        LabeledSample::new(FeatureVector::new(v.to_vec()).unwrap(), label)
    }

    fn store(d: usize, threshold: f64, mode: CovarianceMode) -> MemoryStore {
        MemoryStore::new(d, AggVarConfig::new(threshold, mode).unwrap()).unwrap()
    }

    #[test]
    fn first_sample_separates_with_zero_scatter() {
        let mut s = store(2, 3.0, CovarianceMode::Diagonal);
        let ev = s.process_sample(&sample(&[1.0, 2.0], 0)).unwrap();
        assert_eq!(ev, ClusterEvent::Separated { class: 0, cluster: 0 });
        let c = &s.model(0).unwrap().clusters()[0];
        assert_eq!(c.centroid(), &[1.0, 2.0]);
        assert!(c.scatter().is_zero());
        assert_eq!(c.count(), 1);
    }

    #[test]
    fn integrates_into_close_cluster_full_mode() {
        let mut s = store(2, 3.0, CovarianceMode::Full);
        s.process_sample(&sample(&[0.0, 0.0], 0)).unwrap();
        s.process_sample(&sample(&[10.0, 10.0], 0)).unwrap();
        let ev = s.process_sample(&sample(&[1.0, 1.0], 0)).unwrap();
        assert_eq!(ev, ClusterEvent::Integrated { class: 0, cluster: 0 });
        let c = &s.model(0).unwrap().clusters()[0];
        assert_eq!(c.centroid(), &[0.5, 0.5]);
        assert_eq!(c.covariance(), Scatter::Full(vec![0.25, 0.25, 0.25, 0.25]));

        let mut s = store(2, 3.0, CovarianceMode::Full);
        s.process_sample(&sample(&[0.0, 0.0], 0)).unwrap();
        s.process_sample(&sample(&[10.0, 10.0], 0)).unwrap();
        let ev = s.process_sample(&sample(&[5.0, 5.0], 0)).unwrap();
        assert_eq!(ev, ClusterEvent::Separated { class: 0, cluster: 2 });
    }

    #[test]
    fn equidistant_centroids_pick_lowest_index() {
        let mut s = store(1, 1.5, CovarianceMode::Diagonal);
        s.process_sample(&sample(&[-1.0], 0)).unwrap();
        s.process_sample(&sample(&[1.0], 0)).unwrap();
        let ev = s.process_sample(&sample(&[0.0], 0)).unwrap();
        assert_eq!(ev, ClusterEvent::Integrated { class: 0, cluster: 0 });
    }

    #[test]
    fn threshold_comparison_is_strict() {
        let mut s = store(1, 2.0, CovarianceMode::Diagonal);
        s.process_sample(&sample(&[0.0], 0)).unwrap();
        let ev = s.process_sample(&sample(&[2.0], 0)).unwrap();
        assert!(matches!(ev, ClusterEvent::Separated { .. }));
    }

    #[test]
    fn update_matches_two_point_batch() {
        let c = ConceptCluster::new(&[0.0, 0.0], CovarianceMode::Diagonal);
        let c2 = update_statistics(&c, &[2.0, 0.0]).unwrap();
        assert_eq!(c2.centroid(), &[1.0, 0.0]);
        assert_eq!(c2.covariance(), Scatter::Diagonal(vec![1.0, 0.0]));
        assert_eq!(c2.count(), 2);

        let same = update_statistics(&c2, &[1.0, 0.0]).unwrap();
        assert_eq!(same.centroid(), c2.centroid());
        assert_eq!(same.scatter(), c2.scatter());
        assert!(update_statistics(&c2, &[1.0]).is_err());
    }

    #[test]
    fn pure_integration_and_zero_threshold() {
        let mut s = store(2, 5.0, CovarianceMode::Diagonal);
        s.process_sample(&sample(&[0.0, 0.0], 3)).unwrap();
        let batch = IncrementBatch::new(1, (0..4).map(|k| sample(&[0.1 * k as f64, 0.0], 3)).collect()).unwrap();
        let summary = s.learn_increment(&batch).unwrap();
        assert_eq!(summary.clusters_created, 0);
        assert_eq!(summary.samples_integrated, 4);
        assert_eq!(s.model(3).unwrap().clusters()[0].count(), 5);

        let mut z = store(2, 0.0, CovarianceMode::Full);
        let batch = IncrementBatch::new(0, (0..6).map(|_| sample(&[1.0, 1.0], 0)).collect()).unwrap();
        let summary = z.learn_increment(&batch).unwrap();
        assert_eq!(summary.clusters_created, 6);
        assert!(z.model(0).unwrap().clusters().iter().all(|c| c.scatter().is_zero()));
    }

    #[test]
    fn bad_batch_leaves_store_untouched() {
        let mut s = store(2, 5.0, CovarianceMode::Diagonal);
        let batch = IncrementBatch::new(0, vec![sample(&[1.0, 2.0, 3.0], 0)]).unwrap();
        assert!(matches!(s.learn_increment(&batch), Err(CbclError::Data(_))));
        assert!(s.is_empty());
    }

    #[test]
    fn nearest_centroid_basics() {
        let s = store(2, 1.0, CovarianceMode::Diagonal);
        assert!(matches!(
            s.nearest_centroid(&[0.0, 0.0], None),
            Err(CbclError::EmptyModel(_))
        ));

        let mut s = store(2, 1.0, CovarianceMode::Diagonal);
        s.process_sample(&sample(&[0.0, 0.0], 1)).unwrap();
        s.process_sample(&sample(&[3.0, 4.0], 2)).unwrap();
        let hit = s.nearest_centroid(&[3.0, 4.0], None).unwrap();
        assert_eq!((hit.class, hit.cluster, hit.distance), (2, 0, 0.0));
        let only_one = |c: ClassId| c == 1;
        let f = s.nearest_centroid(&[3.0, 4.0], Some(&only_one)).unwrap();
        assert_eq!((f.class, f.distance), (1, 5.0));
        let none = |_: ClassId| false;
        assert!(s.nearest_centroid(&[0.0, 0.0], Some(&none)).is_err());
    }

    #[test]
    fn footprint_formula() {
        let s = store(4, 1.0, CovarianceMode::Diagonal);
        assert_eq!(s.memory_footprint(), 0);
        let mut s = s;
        s.process_sample(&sample(&[0.0; 4], 0)).unwrap();
        assert_eq!(s.memory_footprint(), 72);
        let mut f = store(4, 1.0, CovarianceMode::Full);
        f.process_sample(&sample(&[0.0; 4], 0)).unwrap();
        assert_eq!(f.memory_footprint(), (4 + 16 + 1) * 8);
    }

    #[test]
    fn from_parts_enforces_zero_scatter_for_singletons() {
        assert!(ConceptCluster::from_parts(vec![0.0], Scatter::Diagonal(vec![1.0]), 1).is_err());
        assert!(ConceptCluster::from_parts(vec![0.0], Scatter::Diagonal(vec![1.0]), 2).is_ok());
        assert!(ConceptCluster::from_parts(vec![0.0], Scatter::Full(vec![1.0, 0.0]), 2).is_err());
    }

    #[test]
    fn config_rejects_negative_and_nan() {
        assert!(AggVarConfig::new(-1.0, CovarianceMode::Diagonal).is_err());
        assert!(AggVarConfig::new(f64::NAN, CovarianceMode::Diagonal).is_err());
        assert!(AggVarConfig::new(f64::INFINITY, CovarianceMode::Full).is_ok());
    }
}
