//! Pseudorehearsal: sampling surrogate features for old classes from the
//! Gaussians stored in the memory.
//!
//! A class's quota of exemplars is split over its clusters in proportion to
//! their sample counts (largest remainder). Each exemplar is drawn from
//! `N(centroid, covariance + ε·I)`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aggvar::{ClassModel, ConceptCluster, MemoryStore, Scatter};
use crate::error::{CbclError, Result};
use crate::feature_store::{ClassId, FeatureVector};
use crate::rng::derived_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RehearsalConfig {
    pub exemplars_per_class: usize,
    /// Variance floor added to every covariance diagonal.
    pub jitter_epsilon: f64,
    pub seed: u64,
}

impl Default for RehearsalConfig {
    fn default() -> Self {
        RehearsalConfig {
            exemplars_per_class: 40,
            jitter_epsilon: 1e-4,
            seed: 0,
        }
    }
}

impl RehearsalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.exemplars_per_class == 0 {
            return Err(CbclError::Config("exemplars_per_class must be >= 1".into()));
        }
        if !self.jitter_epsilon.is_finite() || self.jitter_epsilon < 0.0 {
            return Err(CbclError::Config(format!(
                "jitter_epsilon must be finite and >= 0, got {}",
                self.jitter_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoExemplar {
    pub features: FeatureVector,
    pub label: ClassId,
    /// (class, cluster index) the exemplar was drawn from.
    pub source_cluster: (ClassId, usize),
}

/// Splits `quota` over clusters proportionally to `counts` with
/// largest-remainder rounding (ties to the lower index). When the quota
/// covers every cluster, clusters left at zero borrow one slot from the
/// currently largest allocation.
pub fn allocate_quota(quota: usize, counts: &[u64]) -> Vec<usize> {
    let total: u64 = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return vec![0; counts.len()];
    }
    let exact: Vec<f64> = counts.iter().map(|&c| quota as f64 * c as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(quota.saturating_sub(assigned)) {
        alloc[i] += 1;
    }

    if quota >= counts.len() {
        for i in 0..alloc.len() {
            if alloc[i] == 0 {
                let donor = (0..alloc.len())
                    .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                alloc[donor] -= 1;
                alloc[i] = 1;
            }
        }
    }
    alloc
}

/// Draws `N(0, I)` noise and maps it into one cluster's Gaussian.
enum ClusterSampler<'a> {
    Diagonal { mean: &'a [f64], std: Vec<f64> },
    Full { mean: &'a [f64], factor: DMatrix<f64> },
}

impl<'a> ClusterSampler<'a> {
    fn new(cluster: &'a ConceptCluster, epsilon: f64) -> Self {
        let d = cluster.dim();
        match cluster.covariance() {
            Scatter::Diagonal(var) => ClusterSampler::Diagonal {
                mean: cluster.centroid(),
                std: var.iter().map(|v| (v.max(0.0) + epsilon).sqrt()).collect(),
            },
            Scatter::Full(cov) => {
                let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
                // V · diag(sqrt(max(λ, 0) + ε)), so factor·factorᵀ = V(Λ⁺ + εI)Vᵀ
                let mut factor = eig.eigenvectors;
                for (j, lambda) in eig.eigenvalues.iter().enumerate() {
                    let s = (lambda.max(0.0) + epsilon).sqrt();
                    factor.column_mut(j).scale_mut(s);
                }
                ClusterSampler::Full {
                    mean: cluster.centroid(),
                    factor,
                }
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ClusterSampler::Diagonal { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(m, s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + s * z
                })
                .collect(),
            ClusterSampler::Full { mean, factor } => {
                let d = mean.len();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                (0..d)
                    .map(|i| mean[i] + (0..d).map(|j| factor[(i, j)] * z[j]).sum::<f64>())
                    .collect()
            }
        }
    }
}

/// Exactly `exemplars_per_class` exemplars for one class, grouped by
/// source cluster in cluster order.
pub fn generate_for_class<R: Rng + ?Sized>(
    model: &ClassModel,
    config: &RehearsalConfig,
    rng: &mut R,
) -> Result<Vec<PseudoExemplar>> {
    config.validate()?;
    if model.is_empty() {
        return Err(CbclError::EmptyModel(format!(
            "class {} has no clusters",
            model.class_id()
        )));
    }
    let counts: Vec<u64> = model.clusters().iter().map(ConceptCluster::count).collect();
    let alloc = allocate_quota(config.exemplars_per_class, &counts);
    let mut out = Vec::with_capacity(config.exemplars_per_class);
    for (k, (cluster, &n)) in model.clusters().iter().zip(&alloc).enumerate() {
        if n == 0 {
            continue;
        }
        let sampler = ClusterSampler::new(cluster, config.jitter_epsilon);
        for _ in 0..n {
            let features = FeatureVector::new(sampler.sample(rng))?;
            out.push(PseudoExemplar {
                features,
                label: model.class_id(),
                source_cluster: (model.class_id(), k),
            });
        }
    }
    Ok(out)
}

/// Exemplars for every stored class not in `exclude`, in ascending class
/// order. Class `c` draws from its own generator seeded by
/// `sub_seed(config.seed, "rehearsal-class", c)`.
pub fn generate_rehearsal_set(
    store: &MemoryStore,
    exclude: &BTreeSet<ClassId>,
    config: &RehearsalConfig,
) -> Result<Vec<PseudoExemplar>> {
    config.validate()?;
    let mut out = Vec::new();
    for model in store.models() {
        if exclude.contains(&model.class_id()) {
            continue;
        }
        let mut rng = derived_rng(config.seed, "rehearsal-class", model.class_id() as u64);
        out.extend(generate_for_class(model, config, &mut rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggvar::{AggVarConfig, CovarianceMode};
    use crate::feature_store::LabeledSample;
    use crate::rng::rng_from_seed;

    fn store_with(points: &[(&[f64], ClassId)], threshold: f64, mode: CovarianceMode) -> MemoryStore {
        let d = points[0].0.len();
        let mut s = MemoryStore::new(d, AggVarConfig::new(threshold, mode).unwrap()).unwrap();
        for (p, c) in points {
            s.process_sample(&LabeledSample::new(FeatureVector::new(p.to_vec()).unwrap(), *c))
                .unwrap();
        }
        s
    }

    #[test]
    fn degenerate_gaussian_returns_centroid() {
        for mode in [CovarianceMode::Diagonal, CovarianceMode::Full] {
            let s = store_with(&[(&[1.5, -2.0, 3.25], 0)], 1.0, mode);
            let cfg = RehearsalConfig {
                exemplars_per_class: 7,
                jitter_epsilon: 0.0,
                seed: 1,
            };
            let ex = generate_for_class(s.model(0).unwrap(), &cfg, &mut rng_from_seed(5)).unwrap();
            assert_eq!(ex.len(), 7);
            assert!(ex.iter().all(|e| e.features.as_slice() == [1.5, -2.0, 3.25]));
        }
    }

    #[test]
    fn zero_quota_rejected() {
        let s = store_with(&[(&[0.0], 0)], 1.0, CovarianceMode::Diagonal);
        let cfg = RehearsalConfig {
            exemplars_per_class: 0,
            ..Default::default()
        };
        assert!(matches!(
            generate_for_class(s.model(0).unwrap(), &cfg, &mut rng_from_seed(0)),
            Err(CbclError::Config(_))
        ));
    }

    #[test]
    fn empty_model_rejected() {
        let m = ClassModel::new(4);
        assert!(matches!(
            generate_for_class(&m, &RehearsalConfig::default(), &mut rng_from_seed(0)),
            Err(CbclError::EmptyModel(_))
        ));
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_quota(40, &[1]), vec![40]);
        assert_eq!(allocate_quota(10, &[1, 1, 2]), vec![3, 2, 5]);
        // 39.2/0.4/0.4 rounds to 39/1/0, then the last cluster borrows a slot
        assert_eq!(allocate_quota(40, &[98, 1, 1]), vec![38, 1, 1]);
        assert_eq!(allocate_quota(2, &[5, 5, 5]), vec![1, 1, 0]);
        assert_eq!(allocate_quota(3, &[100, 1, 1]), vec![1, 1, 1]);
    }

    #[test]
    fn exclusion_filters_classes() {
        let s = store_with(&[(&[0.0], 0), (&[5.0], 1), (&[9.0], 2)], 1.0, CovarianceMode::Diagonal);
        let cfg = RehearsalConfig::default();
        let ex = generate_rehearsal_set(&s, &[1, 2].into_iter().collect(), &cfg).unwrap();
        assert_eq!(ex.len(), 40);
        assert!(ex.iter().all(|e| e.label == 0 && e.source_cluster.0 == 0));
        let none = generate_rehearsal_set(&s, &[0, 1, 2].into_iter().collect(), &cfg).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn adding_a_class_keeps_other_classes_bit_identical() {
        let cfg = RehearsalConfig::default();
        let a = store_with(&[(&[0.0, 1.0], 0), (&[0.5, 1.5], 0)], 5.0, CovarianceMode::Diagonal);
        let b = store_with(
            &[(&[0.0, 1.0], 0), (&[0.5, 1.5], 0), (&[9.0, 9.0], 7)],
            5.0,
            CovarianceMode::Diagonal,
        );
        let ea = generate_rehearsal_set(&a, &BTreeSet::new(), &cfg).unwrap();
        let eb = generate_rehearsal_set(&b, &BTreeSet::new(), &cfg).unwrap();
        assert_eq!(ea[..], eb[..40]);
    }
}
