use std::ops::Range;

use super::{Matrix, NnError};
use crate::scalar::Scalar;

/// Contiguous column blocks, one per label category.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryBlocks {
    ranges: Vec<Range<usize>>,
}

impl CategoryBlocks {
    /// Blocks of the given sizes laid out left to right.
    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut start = 0;
        let ranges = sizes
            .iter()
            .map(|&k| {
                let r = start..start + k;
                start += k;
                r
            })
            .collect();
        Self { ranges }
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Total width `C`.
    pub fn width(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }

    /// Index of the block containing column `col`.
    pub fn block_of(&self, col: usize) -> Option<usize> {
        self.ranges.iter().position(|r| r.contains(&col))
    }
}

pub struct CeOutput<T = f64> {
    pub loss: T,
    pub probs: Matrix<T>,
    pub grad_logits: Matrix<T>,
}

/// Softmax applied independently inside each category block.
pub fn category_softmax<T: Scalar>(logits: &Matrix<T>, blocks: &CategoryBlocks) -> Result<Matrix<T>, NnError> {
    if logits.cols() != blocks.width() {
        return Err(NnError::ShapeMismatch {
            op: "category_softmax",
            left: logits.shape(),
            right: (1, blocks.width()),
        });
    }
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        for range in blocks.ranges() {
            let block = &mut row[range.clone()];
            let max = block.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in block.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            block.iter_mut().for_each(|v| *v /= z);
        }
    }
    Ok(probs)
}

/// Per-category softmax cross-entropy.
///
/// The loss is the batch mean of the per-case sum over categories; the
/// gradient with respect to the logits is `(probs − targets)/B`.
pub fn category_softmax_ce<T: Scalar>(
    logits: &Matrix<T>,
    targets: &Matrix<T>,
    blocks: &CategoryBlocks,
) -> Result<CeOutput<T>, NnError> {
    if logits.shape() != targets.shape() {
        return Err(NnError::ShapeMismatch { op: "category_softmax_ce", left: logits.shape(), right: targets.shape() });
    }
    validate_targets(targets, blocks)?;
    let probs = category_softmax(logits, blocks)?;
    let b = logits.rows();
    let n = T::of_usize(b);
    let mut loss = T::zero();
    for r in 0..b {
        let lrow = logits.row(r);
        let trow = targets.row(r);
        for range in blocks.ranges() {
            let block = &lrow[range.clone()];
            let max = block.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + block.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            let truth = range.clone().find(|&c| trow[c] == T::one()).expect("validated");
            loss += lse - lrow[truth];
        }
    }
    let grad_logits = probs.sub(targets)?.scale(T::one() / n);
    Ok(CeOutput { loss: loss / n, probs, grad_logits })
}

fn validate_targets<T: Scalar>(targets: &Matrix<T>, blocks: &CategoryBlocks) -> Result<(), NnError> {
    for r in 0..targets.rows() {
        let row = targets.row(r);
        for (i, range) in blocks.ranges().iter().enumerate() {
            let block = &row[range.clone()];
            let ones = block.iter().filter(|&&v| v == T::one()).count();
            let zeros = block.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros + 1 != block.len() {
                return Err(NnError::InvalidTargets(format!("row {r}, category block {i} is not one-hot")));
            }
        }
    }
    Ok(())
}
