//! Fusion model, GCN graph model and prediction containers.

mod embedding;
mod fusion;
mod gcn;
mod graph;
mod prediction;

pub use embedding::LabelEmbedding;
pub use fusion::{Encoder, EncoderCache, FusionCache, FusionModel, FusionOutput};
pub use gcn::{Gcn, GcnActivation, GcnCache};
pub use graph::{GraphCache, GraphModel, GraphOutput, GraphTrunk, TrunkCache};
pub use prediction::{PredictionSet, Source};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{category_softmax_ce, CategoryBlocks, Matrix, NnError, Parameterized};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("branch weights must be nonnegative and sum to 1, got {0:?}")]
    BranchWeights(Vec<f64>),
    #[error("prediction sets disagree: {0}")]
    Mismatch(String),
    #[error("label embedding: {0}")]
    Embedding(String),
}

/// The three feature branches shared by both models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Clinical,
    Dermoscopy,
    Fused,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Clinical, Branch::Dermoscopy, Branch::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Clinical => "clinical",
            Branch::Dermoscopy => "dermoscopy",
            Branch::Fused => "fused",
        }
    }
}

/// Layer widths and options for both models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Encoder hidden width `H`.
    pub hidden: usize,
    /// Encoder output width `D`, also the GCN output width.
    pub encoder_dim: usize,
    /// Label embedding width `d`.
    pub embed_dim: usize,
    /// GCN hidden width `d1`.
    pub gcn_hidden: usize,
    /// Graph trunk width `H_g`.
    pub graph_hidden: usize,
    pub train_embedding: bool,
    /// Negative slope of the first GCN layer's activation.
    pub gcn_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            encoder_dim: 64,
            embed_dim: 32,
            gcn_hidden: 64,
            graph_hidden: 64,
            train_embedding: false,
            gcn_slope: 0.2,
        }
    }
}

/// Checks that `w` is a probability vector.
pub fn validate_simplex(w: &[f64]) -> Result<(), ModelError> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&v| !v.is_finite() || v < 0.0) || (sum - 1.0).abs() > 1e-12 {
        return Err(ModelError::BranchWeights(w.to_vec()));
    }
    Ok(())
}

pub const UNIFORM3: [f64; 3] = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];

/// `Σ_b w_b · P_b` over equally shaped probability matrices.
pub fn weighted_average<T: Scalar>(probs: &[&Matrix<T>], weights: &[f64]) -> Result<Matrix<T>, NnError> {
    assert_eq!(probs.len(), weights.len(), "one weight per source");
    let (rows, cols) = probs.first().map(|p| p.shape()).unwrap_or((0, 0));
    let mut out = Matrix::zeros(rows, cols);
    for (p, &w) in probs.iter().zip(weights) {
        out.axpy(T::of(w), p)?;
    }
    Ok(out)
}

/// Sum of the three per-branch category cross-entropies.
pub struct BranchLoss<T = f64> {
    pub total: T,
    pub branches: [T; 3],
    pub grad_logits: [Matrix<T>; 3],
}

pub type FusionLoss<T = f64> = BranchLoss<T>;
pub type GraphLoss<T = f64> = BranchLoss<T>;

pub fn branch_loss<T: Scalar>(
    logits: &[Matrix<T>; 3],
    targets: &Matrix<T>,
    blocks: &CategoryBlocks,
) -> Result<BranchLoss<T>, NnError> {
    let a = category_softmax_ce(&logits[0], targets, blocks)?;
    let b = category_softmax_ce(&logits[1], targets, blocks)?;
    let c = category_softmax_ce(&logits[2], targets, blocks)?;
    Ok(BranchLoss {
        total: a.loss + b.loss + c.loss,
        branches: [a.loss, b.loss, c.loss],
        grad_logits: [a.grad_logits, b.grad_logits, c.grad_logits],
    })
}

/// Adds every trainable tensor of `other` into `acc`.
pub fn accumulate<T: Scalar, P: Parameterized<T>>(acc: &mut P, other: &P) {
    let sum: Vec<T> = acc.flat_params().into_iter().zip(other.flat_params()).map(|(a, b)| a + b).collect();
    acc.set_flat_params(&sum);
}
