//! Seeded Gaussian-blob datasets with several sub-clusters per class.
//!
//! Each class gets an anchor point; its sub-cluster centers sit at a fixed
//! radius from the anchor in random directions, every pair of sub-cluster
//! centers (across all classes) at least `min_center_spacing` apart.
//! Feature values are rounded to `f32` so a dataset survives a trip through
//! a feature file unchanged.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::aggvar::euclidean;
use crate::error::{CbclError, Result};
use crate::feature_store::{ClassId, Dataset, FeatureVector, LabeledSample};
use crate::rng::{derived_rng, EngineRng};

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub classes: u32,
    pub subclusters_per_class: usize,
    pub dim: usize,
    pub samples_per_subcluster: usize,
    /// Minimum distance between any two sub-cluster centers.
    pub min_center_spacing: f64,
    /// Minimum distance between class anchors.
    pub class_spacing: f64,
    /// Distance of each sub-cluster center from its class anchor.
    pub subcluster_radius: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// Ten classes of three sub-clusters each in 16 dimensions, centers at
    /// least 20 apart, unit noise, 100 samples per sub-cluster.
    pub fn ten_class(seed: u64) -> Self {
        BlobSpec {
            classes: 10,
            subclusters_per_class: 3,
            dim: 16,
            samples_per_subcluster: 100,
            min_center_spacing: 20.0,
            class_spacing: 80.0,
            subcluster_radius: 18.0,
            sigma: 1.0,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Blobs {
    pub dataset: Dataset,
    /// Sub-cluster centers with their class, in generation order.
    pub centers: Vec<(ClassId, Vec<f64>)>,
    pub anchors: Vec<Vec<f64>>,
}

const MAX_ATTEMPTS: usize = 100_000;

fn unit_direction(rng: &mut EngineRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate_blobs(spec: &BlobSpec) -> Result<Blobs> {
    if spec.classes == 0 || spec.subclusters_per_class == 0 || spec.dim == 0 || spec.samples_per_subcluster == 0 {
        return Err(CbclError::Config("blob spec needs non-zero counts".into()));
    }
    let mut rng = derived_rng(spec.seed, "blob-geometry", 0);
    // Side of the anchor cube grows with the number of classes per axis.
    let half = spec.class_spacing * (spec.classes as f64).powf(1.0 / spec.dim as f64).max(1.0);

    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(spec.classes as usize);
    let mut attempts = 0;
    while anchors.len() < spec.classes as usize {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(CbclError::Config(
                "could not place class anchors; loosen the spacing".into(),
            ));
        }
        let a: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(-half..half)).collect();
        if anchors.iter().all(|b| euclidean(&a, b) >= spec.class_spacing) {
            anchors.push(a);
        }
    }

    let mut centers: Vec<(ClassId, Vec<f64>)> = Vec::new();
    for (class, anchor) in anchors.iter().enumerate() {
        let mut placed = 0;
        let mut attempts = 0;
        while placed < spec.subclusters_per_class {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                return Err(CbclError::Config(
                    "could not place sub-cluster centers; loosen the spacing".into(),
                ));
            }
            let u = unit_direction(&mut rng, spec.dim);
            let c: Vec<f64> = anchor
                .iter()
                .zip(&u)
                .map(|(a, u)| a + spec.subcluster_radius * u)
                .collect();
            if centers.iter().all(|(_, o)| euclidean(&c, o) >= spec.min_center_spacing) {
                centers.push((class as ClassId, c));
                placed += 1;
            }
        }
    }

    let mut noise = derived_rng(spec.seed, "blob-noise", 0);
    let mut samples = Vec::with_capacity(centers.len() * spec.samples_per_subcluster);
    for (class, c) in &centers {
        for _ in 0..spec.samples_per_subcluster {
            let v: Vec<f64> = c
                .iter()
                .map(|m| {
                    let z: f64 = noise.sample(StandardNormal);
                    (m + spec.sigma * z) as f32 as f64
                })
                .collect();
            samples.push(LabeledSample::new(FeatureVector::new(v)?, *class));
        }
    }
    let names = (0..spec.classes).map(|c| format!("blob-{c}")).collect();
    Ok(Blobs {
        dataset: Dataset::new(spec.dim, samples, names)?,
        centers,
        anchors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_respects_spacing() {
        let b = generate_blobs(&BlobSpec::ten_class(3)).unwrap();
        assert_eq!(b.centers.len(), 30);
        assert_eq!(b.dataset.len(), 3000);
        for i in 0..b.centers.len() {
            for j in 0..i {
                assert!(euclidean(&b.centers[i].1, &b.centers[j].1) >= 20.0);
            }
        }
        let again = generate_blobs(&BlobSpec::ten_class(3)).unwrap();
        assert_eq!(again.dataset, b.dataset);
    }
}
