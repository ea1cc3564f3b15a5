#![allow(dead_code)]

use geln::dataset::LabelSchema;
use geln::models::{PredictionSet, Source};
use geln::nn::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AUC by comparing every positive with every negative, ties worth one half.
pub fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                good += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    if pairs == 0.0 {
        0.0
    } else {
        good / pairs
    }
}

pub fn objective(sets: &[&PredictionSet], labels: &Matrix<f64>, w: &[f64]) -> f64 {
    let (n, c) = labels.shape();
    let mut total = 0.0;
    for col in 0..c {
        let scores: Vec<f64> =
            (0..n).map(|r| sets.iter().zip(w).map(|(s, &wj)| wj * s.probs.get(r, col)).sum()).collect();
        let truth: Vec<bool> = (0..n).map(|r| labels.get(r, col) == 1.0).collect();
        total += pair_auc(&scores, &truth);
    }
    total / c as f64
}

/// Nested-loop enumeration over integer grid counts. The uniform point is
/// preferred when it ties the best; otherwise the lexicographically largest
/// weight vector among the best wins.
pub fn brute_force(sets: &[&PredictionSet], labels: &Matrix<f64>, n: usize) -> (Vec<f64>, f64) {
    let mut points: Vec<Vec<f64>> = Vec::new();
    match sets.len() {
        2 => {
            for i in 0..=n {
                points.push(vec![i as f64 / n as f64, (n - i) as f64 / n as f64]);
            }
        }
        3 => {
            for i in 0..=n {
                for j in 0..=n - i {
                    points.push(vec![i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64]);
                }
            }
        }
        _ => unreachable!(),
    }
    let k = sets.len();
    let uniform = vec![1.0 / k as f64; k];
    let u_score = objective(sets, labels, &uniform);
    let scored: Vec<(Vec<f64>, f64)> = points
        .into_iter()
        .map(|p| {
            let s = objective(sets, labels, &p);
            (p, s)
        })
        .collect();
    let best = scored.iter().map(|(_, s)| *s).fold(u_score, f64::max);
    if best - u_score <= 1e-12 {
        return (uniform, u_score);
    }
    scored.into_iter().filter(|(_, s)| best - s <= 1e-12).max_by(|a, b| a.0.partial_cmp(&b.0).unwrap()).unwrap()
}

/// `k` prediction sets with coarse values (so that ties occur) and matching one-hot labels.
pub fn random_sets(k: usize, n: usize, schema: &LabelSchema, seed: u64) -> (Vec<PredictionSet>, Matrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = schema.num_classes();
    let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut labels = Matrix::zeros(n, c);
    for r in 0..n {
        for range in schema.blocks().ranges() {
            labels.set(r, rng.random_range(range.clone()), 1.0);
        }
    }
    let sources = [Source::FusionClinical, Source::FusionDermoscopy, Source::FusionFused];
    let sets = (0..k)
        .map(|j| {
            let mut probs = Matrix::zeros(n, c);
            for r in 0..n {
                for range in schema.blocks().ranges() {
                    let raw: Vec<f64> = range.clone().map(|_| rng.random_range(1..5) as f64).collect();
                    let z: f64 = raw.iter().sum();
                    for (col, v) in range.clone().zip(raw) {
                        probs.set(r, col, v / z);
                    }
                }
            }
            PredictionSet { source: sources[j], case_ids: ids.clone(), probs }
        })
        .collect();
    (sets, labels)
}

/// Central differences of `f` at `x`, independent of the library helper.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let plus = f(&p);
            p[i] = x[i] - h;
            let minus = f(&p);
            p[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a − n| / max(1, |a|, |n|)`.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / 1f64.max(a.abs()).max(n.abs())).fold(0.0, f64::max)
}
