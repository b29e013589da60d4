//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use cbcl::feature_store::{Dataset, FeatureVector, IncrementBatch, LabeledSample};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn fv(v: &[f64]) -> FeatureVector {
    FeatureVector::new(v.to_vec()).unwrap()
}

pub fn sample(v: &[f64], label: u32) -> LabeledSample {
    LabeledSample::new(fv(v), label)
}

pub fn batch(index: usize, samples: Vec<LabeledSample>) -> IncrementBatch {
    IncrementBatch::new(index, samples).unwrap()
}

/// Uniform points in [-scale, scale)^d.
pub fn uniform_points(r: &mut impl Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-scale..scale)).collect())
        .collect()
}

/// Two-pass arithmetic mean.
pub fn batch_mean(xs: &[Vec<f64>]) -> Vec<f64> {
    let d = xs[0].len();
    let mut m = vec![0.0; d];
    for x in xs {
        for (a, b) in m.iter_mut().zip(x) {
            *a += b;
        }
    }
    m.iter().map(|v| v / xs.len() as f64).collect()
}

/// Two-pass population covariance, row-major d×d.
pub fn batch_covariance(xs: &[Vec<f64>]) -> Vec<f64> {
    let d = xs[0].len();
    let m = batch_mean(xs);
    let mut c = vec![0.0; d * d];
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += (x[i] - m[i]) * (x[j] - m[j]);
            }
        }
    }
    c.iter().map(|v| v / xs.len() as f64).collect()
}

/// Normwise relative error: max |a - b| over max |b|.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn dataset(dim: usize, samples: Vec<LabeledSample>) -> Dataset {
    let classes = samples.iter().map(|s| s.label).max().map_or(0, |c| c as usize + 1);
    Dataset::new(dim, samples, (0..classes).map(|c| format!("class-{c}")).collect()).unwrap()
}

/// Gaussian blobs around the given centers, `per` samples each, labelled by
/// center position.
pub fn gaussian_blobs(r: &mut impl Rng, centers: &[Vec<f64>], per: usize, sigma: f64) -> Vec<LabeledSample> {
    use rand_distr::{Distribution, StandardNormal};
    let mut out = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            let x: Vec<f64> = center
                .iter()
                .map(|m| m + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r))
                .collect();
            out.push(sample(&x, c as u32));
        }
    }
    out
}
