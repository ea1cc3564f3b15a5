//! Convex combination of prediction sets and grid search of the weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{mean_auc, MetricsError};
use crate::models::{validate_simplex, weighted_average, ModelError, PredictionSet, Source};
use crate::nn::Matrix;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no prediction sets given")]
    NoSources,
    #[error("prediction sets cover different cases")]
    CaseMismatch,
    #[error("expected {expected} weights, got {found}")]
    WeightCount { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("grid step {0} must divide 1 evenly")]
    InvalidStep(f64),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub const DEFAULT_STEP: f64 = 0.05;

/// Objective differences below this count as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub sources: Vec<Source>,
    pub weights: Vec<f64>,
    pub step: f64,
    /// Validation mean AUC at `weights`; absent when nothing was searched.
    pub objective: Option<f64>,
}

impl EnsembleWeights {
    pub fn uniform(sources: Vec<Source>, step: f64) -> Self {
        let k = sources.len();
        Self { sources, weights: vec![1.0 / k as f64; k], step, objective: None }
    }
}

fn check_aligned(sets: &[&PredictionSet]) -> Result<(), EnsembleError> {
    let first = sets.first().ok_or(EnsembleError::NoSources)?;
    for s in &sets[1..] {
        if s.case_ids != first.case_ids || s.probs.shape() != first.probs.shape() {
            return Err(EnsembleError::CaseMismatch);
        }
    }
    Ok(())
}

/// `Σ_j w_j · P_j`, tagged as `source`.
pub fn combine(sets: &[&PredictionSet], weights: &[f64], source: Source) -> Result<PredictionSet, EnsembleError> {
    check_aligned(sets)?;
    if weights.len() != sets.len() {
        return Err(EnsembleError::WeightCount { expected: sets.len(), found: weights.len() });
    }
    validate_simplex(weights)?;
    let mats: Vec<&Matrix<f64>> = sets.iter().map(|s| &s.probs).collect();
    let probs = weighted_average(&mats, weights).map_err(ModelError::from)?;
    Ok(PredictionSet { source, case_ids: sets[0].case_ids.clone(), probs })
}

/// Every way of writing `n` as an ordered sum of `k` nonnegative integers,
/// in lexicographic order.
pub fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            prefix.push(n);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in 0..=n {
            prefix.push(first);
            go(n - first, k - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        go(n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Simplex grid at resolution `step`, plus the uniform point.
pub fn weight_grid(k: usize, step: f64) -> Result<Vec<Vec<f64>>, EnsembleError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(EnsembleError::InvalidStep(step));
    }
    let n = (1.0 / step).round() as usize;
    if (n as f64 * step - 1.0).abs() > 1e-9 {
        return Err(EnsembleError::InvalidStep(step));
    }
    let mut grid: Vec<Vec<f64>> =
        compositions(n, k).into_iter().map(|c| c.into_iter().map(|i| i as f64 / n as f64).collect()).collect();
    let uniform = vec![1.0 / k as f64; k];
    if !grid.contains(&uniform) {
        grid.push(uniform);
    }
    Ok(grid)
}

/// True when `a` should replace `b` among equally scoring points: the
/// uniform point wins outright, then lexicographically larger weights
/// (so more weight on the first source first).
fn preferred(a: &[f64], b: &[f64]) -> bool {
    let k = a.len() as f64;
    let is_uniform = |w: &[f64]| w.iter().all(|&x| x == 1.0 / k);
    if is_uniform(b) {
        return false;
    }
    if is_uniform(a) {
        return true;
    }
    a.partial_cmp(b) == Some(std::cmp::Ordering::Greater)
}

/// Exhaustive search over the weight grid maximizing validation mean AUC.
pub fn search_weights(
    sets: &[&PredictionSet],
    val_labels: &Matrix<f64>,
    step: f64,
) -> Result<EnsembleWeights, EnsembleError> {
    check_aligned(sets)?;
    if sets[0].is_empty() || val_labels.rows() == 0 {
        return Err(EnsembleError::EmptyValidation);
    }
    let grid = weight_grid(sets.len(), step)?;
    let mats: Vec<&Matrix<f64>> = sets.iter().map(|s| &s.probs).collect();
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|w| -> Result<f64, EnsembleError> {
            let p = weighted_average(&mats, w).map_err(ModelError::from)?;
            Ok(mean_auc(&p, val_labels)?)
        })
        .collect::<Result<_, _>>()?;
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if max - s <= TIE_TOLERANCE && best.is_none_or(|b| preferred(&grid[i], &grid[b])) {
            best = Some(i);
        }
    }
    let best = best.expect("grid is never empty");
    Ok(EnsembleWeights {
        sources: sets.iter().map(|s| s.source).collect(),
        weights: grid[best].clone(),
        step,
        objective: Some(scores[best]),
    })
}

/// Searches on validation, or falls back to uniform weights when it is empty.
pub fn search_or_uniform(
    sets: &[&PredictionSet],
    val_labels: &Matrix<f64>,
    step: f64,
) -> Result<EnsembleWeights, EnsembleError> {
    match search_weights(sets, val_labels, step) {
        Err(EnsembleError::EmptyValidation) => {
            weight_grid(sets.len(), step)?;
            Ok(EnsembleWeights::uniform(sets.iter().map(|s| s.source).collect(), step))
        }
        other => other,
    }
}
