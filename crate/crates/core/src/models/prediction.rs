use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::{CategoryBlocks, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "P_FC")]
    FusionClinical,
    #[serde(rename = "P_FD")]
    FusionDermoscopy,
    #[serde(rename = "P_FF")]
    FusionFused,
    #[serde(rename = "P_F")]
    Fusion,
    #[serde(rename = "P_GC")]
    GraphClinical,
    #[serde(rename = "P_GD")]
    GraphDermoscopy,
    #[serde(rename = "P_GF")]
    GraphFused,
    #[serde(rename = "P_G")]
    Graph,
    #[serde(rename = "P_total")]
    Total,
}

impl Source {
    pub const ALL: [Source; 9] = [
        Source::FusionClinical,
        Source::FusionDermoscopy,
        Source::FusionFused,
        Source::Fusion,
        Source::GraphClinical,
        Source::GraphDermoscopy,
        Source::GraphFused,
        Source::Graph,
        Source::Total,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Source::FusionClinical => "P_FC",
            Source::FusionDermoscopy => "P_FD",
            Source::FusionFused => "P_FF",
            Source::Fusion => "P_F",
            Source::GraphClinical => "P_GC",
            Source::GraphDermoscopy => "P_GD",
            Source::GraphFused => "P_GF",
            Source::Graph => "P_G",
            Source::Total => "P_total",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL.into_iter().find(|x| x.tag() == s).ok_or_else(|| format!("unknown prediction source `{s}`"))
    }
}

/// Per-case category-blocked probabilities from one source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub source: Source,
    pub case_ids: Vec<String>,
    /// `n_cases × C`
    pub probs: Matrix<f64>,
}

impl PredictionSet {
    pub fn new(
        source: Source,
        case_ids: Vec<String>,
        probs: Matrix<f64>,
        blocks: &CategoryBlocks,
    ) -> Result<Self, ModelError> {
        let set = Self { source, case_ids, probs };
        set.validate(blocks)?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.case_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.case_ids.is_empty()
    }

    /// Each row's category blocks must be distributions within `1e-9`.
    pub fn validate(&self, blocks: &CategoryBlocks) -> Result<(), ModelError> {
        let mismatch = |m: String| Err(ModelError::Mismatch(format!("{}: {m}", self.source)));
        if self.probs.rows() != self.case_ids.len() || self.probs.cols() != blocks.width() {
            return mismatch(format!(
                "shape {:?} for {} cases and {} classes",
                self.probs.shape(),
                self.case_ids.len(),
                blocks.width()
            ));
        }
        for r in 0..self.probs.rows() {
            let row = self.probs.row(r);
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return mismatch(format!("case {} has a value outside [0, 1]", self.case_ids[r]));
            }
            for (i, range) in blocks.ranges().iter().enumerate() {
                let s: f64 = row[range.clone()].iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return mismatch(format!("case {} category {i} sums to {s}", self.case_ids[r]));
                }
            }
        }
        Ok(())
    }
}
