mod common;

use cbcl::aggvar::{AggVarConfig, CovarianceMode, MemoryStore};
use cbcl::curiosity::{detect_unknown, score, select_informative, Detection, NoveltyConfig};
use cbcl::feature_store::FeatureVector;
use cbcl::CbclError;
use common::{batch, fv, gaussian_blobs, rng, sample, uniform_points};
use proptest::prelude::*;
use rand::Rng;

fn random_store(seed: u64, n: usize, dim: usize) -> MemoryStore {
    let mut st = MemoryStore::new(dim, AggVarConfig::new(4.0, CovarianceMode::Diagonal).unwrap()).unwrap();
    let mut r = rng(seed);
    let samples = uniform_points(&mut r, n, dim, 10.0)
        .into_iter()
        .enumerate()
        .map(|(i, x)| sample(&x, (i % 4) as u32))
        .collect();
    st.learn_increment(&batch(0, samples)).unwrap();
    st
}

fn min_distance(st: &MemoryStore, x: &[f64]) -> f64 {
    st.centroids()
        .map(|(_, _, c)| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn score_is_zero_on_centroids_and_unbounded_on_empty_memory() {
    let st = random_store(1, 40, 3);
    for (_, _, c) in st.centroids() {
        assert_eq!(score(&st, c).unwrap().value(), 0.0);
    }
    let empty = MemoryStore::new(3, AggVarConfig::new(1.0, CovarianceMode::Diagonal).unwrap()).unwrap();
    assert!(score(&empty, &[0.0, 0.0, 0.0]).unwrap().is_unbounded());
    assert!(matches!(score(&st, &[0.0]), Err(CbclError::Data(_))));
}

#[test]
fn selection_prefers_the_distant_point() {
    let st = random_store(2, 30, 2);
    let (_, _, c) = st.centroids().next().unwrap();
    let far = [c[0] + 100.0, c[1]];
    let pool = vec![fv(c), fv(&far)];
    let res = select_informative(&st, &pool, 1).unwrap();
    assert_eq!(res.chosen_indices, vec![1]);
    assert_eq!(res.scores.len(), 1);
    assert_eq!(res.scores[0].value(), min_distance(&st, &far));
    assert_eq!(select_informative(&st, &pool, 10).unwrap().chosen_indices, vec![1, 0]);
    assert!(select_informative(&st, &pool, 0).unwrap().chosen_indices.is_empty());
}

#[test]
fn known_and_unknown_blobs_are_told_apart() {
    let centers: Vec<Vec<f64>> = (0..5).map(|c| vec![10.0 * c as f64, 0.0]).collect();
    let mut st = MemoryStore::new(2, AggVarConfig::new(5.0, CovarianceMode::Diagonal).unwrap()).unwrap();
    st.learn_increment(&batch(0, gaussian_blobs(&mut rng(30), &centers, 200, 1.0)))
        .unwrap();
    let novelty = NoveltyConfig::new(5.0).unwrap();

    let held_out = gaussian_blobs(&mut rng(31), &centers, 1000, 1.0);
    let known = held_out
        .iter()
        .filter(|s| detect_unknown(&st, &s.features, &novelty).unwrap() != Detection::Unknown)
        .count();
    assert!(
        known as f64 >= 0.99 * held_out.len() as f64,
        "{known} of {} known",
        held_out.len()
    );

    let mut r = rng(32);
    let mut outliers = 0;
    while outliers < 1000 {
        let x = [r.random_range(-100.0..140.0), r.random_range(-100.0..100.0)];
        let nearest = centers
            .iter()
            .map(|c| ((c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        if nearest <= 20.0 {
            continue;
        }
        outliers += 1;
        assert_eq!(detect_unknown(&st, &x, &novelty).unwrap(), Detection::Unknown, "{x:?}");
    }
}

#[test]
fn detection_names_the_nearest_class() {
    let mut st = MemoryStore::new(1, AggVarConfig::new(1.0, CovarianceMode::Diagonal).unwrap()).unwrap();
    st.learn_increment(&batch(0, vec![sample(&[0.0], 3), sample(&[10.0], 5)]))
        .unwrap();
    let novelty = NoveltyConfig::new(2.0).unwrap();
    assert_eq!(detect_unknown(&st, &[0.0], &novelty).unwrap(), Detection::Known(3));
    assert_eq!(detect_unknown(&st, &[9.0], &novelty).unwrap(), Detection::Known(5));
    assert_eq!(detect_unknown(&st, &[5.0], &novelty).unwrap(), Detection::Unknown);
    let empty = MemoryStore::new(1, AggVarConfig::new(1.0, CovarianceMode::Diagonal).unwrap()).unwrap();
    let always = NoveltyConfig {
        unknown_threshold: f64::INFINITY,
    };
    assert_eq!(detect_unknown(&empty, &[0.0], &always).unwrap(), Detection::Unknown);
    assert!(NoveltyConfig::new(0.0).is_err());
    assert!(NoveltyConfig::new(-1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn score_is_the_minimum_centroid_distance(seed in any::<u64>(), n in 1usize..40) {
        let st = random_store(seed, n, 3);
        for x in uniform_points(&mut rng(seed ^ 1), 20, 3, 20.0) {
            let s = score(&st, &x).unwrap().value();
            prop_assert!((s - min_distance(&st, &x)).abs() <= 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn score_grows_moving_away_from_a_lone_centroid(
        seed in any::<u64>(),
        dir in prop::collection::vec(-1.0f64..1.0, 3),
        t1 in 0.0f64..50.0,
        dt in 0.0f64..50.0,
    ) {
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-3);
        let st = random_store(seed, 30, 3);
        // Walk outward from the point's nearest centroid, only while no
        // other centroid gets closer.
        let (_, _, c0) = st.centroids().next().unwrap();
        let c0 = c0.to_vec();
        let at = |t: f64| -> Vec<f64> { c0.iter().zip(&dir).map(|(c, u)| c + t * u / norm).collect() };
        let (a, b) = (at(t1), at(t1 + dt));
        let nearest_is_c0 = |x: &[f64]| {
            let d0 = c0.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            (d0 - min_distance(&st, x)).abs() < 1e-12
        };
        prop_assume!(nearest_is_c0(&a) && nearest_is_c0(&b));
        prop_assert!(score(&st, &b).unwrap().value() >= score(&st, &a).unwrap().value() - 1e-12);
    }

    #[test]
    fn adding_a_centroid_never_raises_a_score(seed in any::<u64>(), n in 1usize..30, extra in prop::collection::vec(-10.0f64..10.0, 3)) {
        let mut st = random_store(seed, n, 3);
        let probes = uniform_points(&mut rng(seed ^ 2), 30, 3, 15.0);
        let before: Vec<f64> = probes.iter().map(|x| score(&st, x).unwrap().value()).collect();
        st.process_sample(&sample(&extra, 99)).unwrap();
        for (x, b) in probes.iter().zip(before) {
            prop_assert!(score(&st, x).unwrap().value() <= b);
        }
    }

    #[test]
    fn top_k_matches_a_full_sort(seed in any::<u64>(), k in 0usize..1100) {
        let st = random_store(seed, 25, 2);
        let mut r = rng(seed ^ 3);
        // Duplicated points create exact score ties.
        let mut pool: Vec<FeatureVector> = uniform_points(&mut r, 900, 2, 30.0).iter().map(|x| fv(x)).collect();
        for i in 0..100 {
            pool.push(pool[i * 7].clone());
        }
        let res = select_informative(&st, &pool, k).unwrap();
        let scores: Vec<f64> = pool.iter().map(|x| min_distance(&st, x)).collect();
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        order.truncate(k);
        prop_assert_eq!(res.chosen_indices, order);
    }

    #[test]
    fn threshold_limits(seed in any::<u64>()) {
        let st = random_store(seed, 20, 2);
        let never = NoveltyConfig { unknown_threshold: f64::INFINITY };
        let always = NoveltyConfig { unknown_threshold: 0.0 };
        for x in uniform_points(&mut rng(seed ^ 4), 50, 2, 1e6) {
            prop_assert_ne!(detect_unknown(&st, &x, &never).unwrap(), Detection::Unknown);
            let on_centroid = st.centroids().any(|(_, _, c)| c == x.as_slice());
            prop_assert_eq!(detect_unknown(&st, &x, &always).unwrap() == Detection::Unknown, !on_centroid);
        }
        for (class, _, c) in st.centroids() {
            let got = detect_unknown(&st, c, &always).unwrap();
            let nearest = st.nearest_centroid(c, None).unwrap();
            prop_assert_eq!(got, Detection::Known(nearest.class));
            prop_assert!(nearest.distance == 0.0 && (nearest.class <= class));
        }
    }
}
