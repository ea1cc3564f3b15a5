//! One-vs-rest AUC and hard-label metrics per class, plus report assembly.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabelSchema;
use crate::ensemble::EnsembleWeights;
use crate::models::PredictionSet;
use crate::nn::Matrix;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("evaluation split is empty")]
    Empty,
    #[error("shape mismatch: predictions {predictions:?}, labels {labels:?}")]
    Shape { predictions: (usize, usize), labels: (usize, usize) },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Class name treated as "absent" and left out of the listed mean.
pub const ABSENT_CLASS: &str = "ABS";

/// Mann–Whitney AUC with half credit for tied pairs. Returns 0 when either
/// side has no cases.
pub fn auc_ovr(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the Mann–Whitney U, kept integral so the ratio is exact.
    let mut u2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < order.len() && scores[order[j]].total_cmp(&scores[order[i]]) == Ordering::Equal {
            if labels[order[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        u2 += 2 * p * neg_below + p * q;
        neg_below += q;
        i = j;
    }
    u2 as f64 / (2 * n_pos * n_neg) as f64
}

/// Confusion counts for one class against the rest of its category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub auc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub support: usize,
    pub confusion: Confusion,
}

/// Index of the largest value; the first wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_shapes(probs: &Matrix<f64>, labels: &Matrix<f64>) -> Result<(), MetricsError> {
    if probs.shape() != labels.shape() {
        return Err(MetricsError::Shape { predictions: probs.shape(), labels: labels.shape() });
    }
    Ok(())
}

/// AUC of every class column against its one-hot label column.
pub fn class_aucs(probs: &Matrix<f64>, labels: &Matrix<f64>) -> Result<Vec<f64>, MetricsError> {
    check_shapes(probs, labels)?;
    let n = probs.rows();
    Ok((0..probs.cols())
        .map(|c| {
            let scores: Vec<f64> = (0..n).map(|r| probs.get(r, c)).collect();
            let truth: Vec<bool> = (0..n).map(|r| labels.get(r, c) == 1.0).collect();
            auc_ovr(&scores, &truth)
        })
        .collect())
}

/// Unweighted mean of all class AUCs.
pub fn mean_auc(probs: &Matrix<f64>, labels: &Matrix<f64>) -> Result<f64, MetricsError> {
    let aucs = class_aucs(probs, labels)?;
    Ok(if aucs.is_empty() { 0.0 } else { aucs.iter().sum::<f64>() / aucs.len() as f64 })
}

/// Per-class AUC, precision, sensitivity and specificity, with hard labels
/// taken as the within-category argmax.
pub fn class_metrics(
    probs: &Matrix<f64>,
    labels: &Matrix<f64>,
    schema: &LabelSchema,
) -> Result<Vec<ClassMetrics>, MetricsError> {
    let aucs = class_aucs(probs, labels)?;
    let blocks = schema.blocks();
    let mut confusion = vec![Confusion::default(); schema.num_classes()];
    let mut support = vec![0usize; schema.num_classes()];
    for r in 0..probs.rows() {
        for range in blocks.ranges() {
            let predicted = range.start + argmax(&probs.row(r)[range.clone()]);
            let truth = range.start + argmax(&labels.row(r)[range.clone()]);
            support[truth] += 1;
            for c in range.clone() {
                let entry = &mut confusion[c];
                match (c == predicted, c == truth) {
                    (true, true) => entry.tp += 1,
                    (true, false) => entry.fp += 1,
                    (false, true) => entry.fn_ += 1,
                    (false, false) => entry.tn += 1,
                }
            }
        }
    }
    Ok((0..schema.num_classes())
        .map(|c| {
            let m = confusion[c];
            ClassMetrics {
                auc: aucs[c],
                precision: m.precision(),
                sensitivity: m.sensitivity(),
                specificity: m.specificity(),
                support: support[c],
                confusion: m,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub auc: f64,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub n_cases: usize,
    pub n_categories: usize,
    pub n_classes: usize,
    pub n_listed_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source: String,
    pub per_class: IndexMap<String, ClassReport>,
    pub per_category_mean_auc: IndexMap<String, f64>,
    pub overall_mean_auc: f64,
    pub listed_mean_auc: f64,
    /// The outermost weight search behind `source`, if any.
    pub ensemble_weights: Option<EnsembleWeights>,
    /// Inner searches that produced the combined inputs.
    #[serde(default)]
    pub component_weights: Vec<EnsembleWeights>,
    pub counts: ReportCounts,
}

pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Assembles the full report. Values are rounded to six decimals.
pub fn build_report(
    predictions: &PredictionSet,
    labels: &Matrix<f64>,
    schema: &LabelSchema,
    ensemble_weights: Option<EnsembleWeights>,
    component_weights: Vec<EnsembleWeights>,
) -> Result<MetricsReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    let metrics = class_metrics(&predictions.probs, labels, schema)?;
    let names = schema.class_labels();
    let per_class: IndexMap<String, ClassReport> = names
        .iter()
        .zip(&metrics)
        .map(|(name, m)| {
            let r = ClassReport {
                auc: round6(m.auc),
                precision: round6(m.precision),
                sensitivity: round6(m.sensitivity),
                specificity: round6(m.specificity),
                support: m.support,
            };
            (name.clone(), r)
        })
        .collect();
    let per_category_mean_auc = schema
        .categories()
        .iter()
        .enumerate()
        .map(|(i, cat)| {
            let range = schema.blocks().ranges()[i].clone();
            (cat.name.clone(), round6(mean(range.map(|c| metrics[c].auc))))
        })
        .collect();
    let listed: Vec<usize> = (0..schema.num_classes())
        .filter(|&c| {
            let (cat, k) = schema.locate(c);
            schema.categories()[cat].classes[k] != ABSENT_CLASS
        })
        .collect();
    Ok(MetricsReport {
        source: predictions.source.to_string(),
        per_class,
        per_category_mean_auc,
        overall_mean_auc: round6(mean(metrics.iter().map(|m| m.auc))),
        listed_mean_auc: round6(mean(listed.iter().map(|&c| metrics[c].auc))),
        ensemble_weights,
        component_weights,
        counts: ReportCounts {
            n_cases: predictions.len(),
            n_categories: schema.num_categories(),
            n_classes: schema.num_classes(),
            n_listed_classes: listed.len(),
        },
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// One row per class.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "auc", "precision", "sensitivity", "specificity", "support"]).expect("in-memory csv");
        for (name, r) in &self.per_class {
            w.write_record([
                name.clone(),
                format!("{:.6}", r.auc),
                format!("{:.6}", r.precision),
                format!("{:.6}", r.sensitivity),
                format!("{:.6}", r.specificity),
                r.support.to_string(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
    }

    pub fn save(&self, json_path: &Path, csv_path: Option<&Path>) -> Result<(), MetricsError> {
        let write = |p: &Path, text: String| {
            fs::write(p, text).map_err(|source| MetricsError::Io { path: p.display().to_string(), source })
        };
        write(json_path, self.to_json())?;
        if let Some(p) = csv_path {
            write(p, self.to_csv())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Source;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// All-pairs oracle.
    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut good, mut pairs) = (0.0, 0.0);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        good += 1.0;
                    } else if scores[i] == scores[j] {
                        good += 0.5;
                    }
                }
            }
        }
        if pairs == 0.0 {
            0.0
        } else {
            good / pairs
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_ovr(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false]), 1.0);
        assert_eq!(auc_ovr(&[0.9, 0.4, 0.6, 0.1], &[true, false, false, true]), 0.5);
        assert_eq!(auc_ovr(&[0.9, 0.4, 0.6], &[false, false, false]), 0.0);
        assert_eq!(auc_ovr(&[0.9, 0.4], &[true, true]), 0.0);
        assert_eq!(auc_ovr(&[0.5, 0.5], &[true, false]), 0.5);
    }

    #[test]
    fn binary_confusion_example() {
        let schema = LabelSchema::binary(1).unwrap();
        // predictions pos, pos, neg, neg against truth pos, neg, pos, neg
        let probs = Matrix::from_rows(&[[0.2, 0.8], [0.3, 0.7], [0.9, 0.1], [0.6, 0.4]]).unwrap();
        let labels = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        let m = class_metrics(&probs, &labels, &schema).unwrap()[1];
        assert_eq!(m.confusion, Confusion { tp: 1, fp: 1, fn_: 1, tn: 1 });
        assert_eq!((m.precision, m.sensitivity, m.specificity), (0.5, 0.5, 0.5));
    }

    #[test]
    fn perfect_and_never_predicted() {
        let schema = LabelSchema::new(vec![crate::dataset::Category::new("A", &["x", "y", "z"])]).unwrap();
        let labels = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]).unwrap();
        for m in class_metrics(&labels, &labels, &schema).unwrap() {
            assert_eq!((m.precision, m.sensitivity, m.specificity, m.auc), (1.0, 1.0, 1.0, 1.0));
        }
        // never outputs class z
        let probs = Matrix::from_rows(&[[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.6, 0.3, 0.1], [0.5, 0.4, 0.1]]).unwrap();
        let z = class_metrics(&probs, &labels, &schema).unwrap()[2];
        assert_eq!((z.sensitivity, z.specificity, z.precision), (0.0, 1.0, 0.0));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    fn random_set(schema: &LabelSchema, n: usize, seed: u64) -> (PredictionSet, Matrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = schema.num_classes();
        let mut probs = Matrix::zeros(n, c);
        let mut labels = Matrix::zeros(n, c);
        for r in 0..n {
            for range in schema.blocks().ranges() {
                let raw: Vec<f64> = range.clone().map(|_| rng.random::<f64>() + 1e-3).collect();
                let z: f64 = raw.iter().sum();
                for (c, v) in range.clone().zip(raw) {
                    probs.set(r, c, v / z);
                }
                labels.set(r, rng.random_range(range.clone()), 1.0);
            }
        }
        let ids = (0..n).map(|i| format!("c{i}")).collect();
        (PredictionSet { source: Source::Total, case_ids: ids, probs }, labels)
    }

    #[test]
    fn spc_report_shape_and_json_roundtrip() {
        let schema = LabelSchema::spc();
        let (preds, labels) = random_set(&schema, 50, 1);
        let report = build_report(&preds, &labels, &schema, None, vec![]).unwrap();
        assert_eq!(report.per_class.len(), 24);
        assert_eq!(report.counts.n_listed_classes, 17);
        assert_eq!(report.per_class.keys().next().unwrap(), "Diag/BCC");
        for range in schema.blocks().ranges() {
            let total: usize = report.per_class.values().skip(range.start).take(range.len()).map(|r| r.support).sum();
            assert_eq!(total, 50);
        }
        assert_eq!(MetricsReport::from_json(&report.to_json()).unwrap(), report);
        assert_eq!(report.to_csv().lines().count(), 25);
        let empty = PredictionSet { source: Source::Total, case_ids: vec![], probs: Matrix::zeros(0, 24) };
        assert!(matches!(build_report(&empty, &Matrix::zeros(0, 24), &schema, None, vec![]), Err(MetricsError::Empty)));
    }

    #[test]
    fn random_scores_give_chance_auc() {
        let schema = LabelSchema::binary(1).unwrap();
        for seed in 0..10 {
            let (preds, labels) = random_set(&schema, 10_000, seed);
            let r = build_report(&preds, &labels, &schema, None, vec![]).unwrap();
            assert!((0.47..=0.53).contains(&r.overall_mean_auc), "seed {seed}: {}", r.overall_mean_auc);
        }
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(data in prop::collection::vec((0u8..6, any::<bool>()), 1..200)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assert!((auc_ovr(&scores, &labels) - brute_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn negation_complements_and_monotone_invariance(data in prop::collection::vec((-5i32..5, any::<bool>()), 2..100)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = auc_ovr(&scores, &labels);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((auc_ovr(&neg, &labels) - (1.0 - a)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|s| (s / 3.0).exp() + s.powi(3)).collect();
            prop_assert_eq!(auc_ovr(&warped, &labels), a);
        }

        #[test]
        fn rates_reproduce_integer_counts(seed in any::<u64>()) {
            let schema = LabelSchema::spc();
            let (preds, labels) = random_set(&schema, 30, seed);
            for m in class_metrics(&preds.probs, &labels, &schema).unwrap() {
                let c = m.confusion;
                if c.tp + c.fn_ > 0 {
                    prop_assert!((m.sensitivity * (c.tp + c.fn_) as f64 - c.tp as f64).abs() < 1e-12);
                }
                if c.tn + c.fp > 0 {
                    prop_assert!((m.specificity * (c.tn + c.fp) as f64 - c.tn as f64).abs() < 1e-12);
                }
                prop_assert!([m.auc, m.precision, m.sensitivity, m.specificity].iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
