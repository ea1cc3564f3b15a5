//! Multi-category label data model, manifest I/O and synthetic generation.

mod manifest;
mod schema;
mod synth;

pub use manifest::{load_manifest, manifest_from_str, manifest_to_string, save_manifest};
pub use schema::{Category, LabelSchema};
pub use synth::{synth_generate, SynthConfig};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Malformed(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("case `{case}`: labels.{category}: missing category label")]
    MissingLabel { case: String, category: String },
    #[error("case `{case}`: labels.{category}: unknown category")]
    UnknownCategory { case: String, category: String },
    #[error("case `{case}`: labels.{category}: unknown class name `{class}`")]
    UnknownClass { case: String, category: String, class: String },
    #[error("case `{case}`: features.{modality}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch { case: String, modality: Modality, expected: usize, found: usize },
    #[error("case `{case}`: features.{modality}[{index}]: value is not finite")]
    NonFinite { case: String, modality: Modality, index: usize },
    #[error("case `{0}`: id: duplicate case id")]
    DuplicateId(String),
    #[error("feature_dims.{0}: must be positive")]
    ZeroDimension(Modality),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Clinical,
    Dermoscopy,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Clinical, Modality::Dermoscopy];
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Clinical => "clinical",
            Modality::Dermoscopy => "dermoscopy",
        })
    }
}

/// Per-case feature vectors, one per modality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Features {
    pub clinical: Vec<f64>,
    pub dermoscopy: Vec<f64>,
}

impl Features {
    pub fn get(&self, m: Modality) -> &[f64] {
        match m {
            Modality::Clinical => &self.clinical,
            Modality::Dermoscopy => &self.dermoscopy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDims {
    pub clinical: usize,
    pub dermoscopy: usize,
}

impl FeatureDims {
    pub fn get(&self, m: Modality) -> usize {
        match m {
            Modality::Clinical => self.clinical,
            Modality::Dermoscopy => self.dermoscopy,
        }
    }
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self { clinical: 64, dermoscopy: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    pub id: String,
    pub split: Split,
    pub features: Features,
    /// category name → class name
    pub labels: BTreeMap<String, String>,
}

impl Case {
    /// Within-category class index for each schema category.
    pub fn class_indices(&self, schema: &LabelSchema) -> Result<Vec<usize>, DatasetError> {
        for name in self.labels.keys() {
            if schema.category_index(name).is_none() {
                return Err(DatasetError::UnknownCategory { case: self.id.clone(), category: name.clone() });
            }
        }
        schema
            .categories()
            .iter()
            .enumerate()
            .map(|(ci, cat)| {
                let class = self
                    .labels
                    .get(&cat.name)
                    .ok_or_else(|| DatasetError::MissingLabel { case: self.id.clone(), category: cat.name.clone() })?;
                schema.class_index(ci, class).ok_or_else(|| DatasetError::UnknownClass {
                    case: self.id.clone(),
                    category: cat.name.clone(),
                    class: class.clone(),
                })
            })
            .collect()
    }

    /// Global class indices carried by this case, one per category.
    pub fn positive_classes(&self, schema: &LabelSchema) -> Result<Vec<usize>, DatasetError> {
        Ok(self.class_indices(schema)?.into_iter().enumerate().map(|(ci, k)| schema.global_index(ci, k)).collect())
    }

    fn validate(&self, schema: &LabelSchema, dims: &FeatureDims) -> Result<(), DatasetError> {
        self.class_indices(schema)?;
        for m in Modality::ALL {
            let v = self.features.get(m);
            if v.len() != dims.get(m) {
                return Err(DatasetError::DimensionMismatch {
                    case: self.id.clone(),
                    modality: m,
                    expected: dims.get(m),
                    found: v.len(),
                });
            }
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(DatasetError::NonFinite { case: self.id.clone(), modality: m, index });
            }
        }
        Ok(())
    }
}

/// Binary label vector of length `C` with exactly one 1 per category block.
pub fn flatten_labels(case: &Case, schema: &LabelSchema) -> Result<Vec<u8>, DatasetError> {
    let mut out = vec![0u8; schema.num_classes()];
    for g in case.positive_classes(schema)? {
        out[g] = 1;
    }
    Ok(out)
}

/// Validated, immutable collection of cases.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: LabelSchema,
    feature_dims: FeatureDims,
    cases: Vec<Case>,
    positives: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(schema: LabelSchema, feature_dims: FeatureDims, cases: Vec<Case>) -> Result<Self, DatasetError> {
        for m in Modality::ALL {
            if feature_dims.get(m) == 0 {
                return Err(DatasetError::ZeroDimension(m));
            }
        }
        let mut ids = HashSet::new();
        let mut positives = Vec::with_capacity(cases.len());
        for case in &cases {
            if !ids.insert(case.id.as_str()) {
                return Err(DatasetError::DuplicateId(case.id.clone()));
            }
            case.validate(&schema, &feature_dims)?;
            positives.push(case.positive_classes(&schema)?);
        }
        Ok(Self { schema, feature_dims, cases, positives })
    }

    pub fn schema(&self) -> &LabelSchema {
        &self.schema
    }

    pub fn feature_dims(&self) -> FeatureDims {
        self.feature_dims
    }

    pub fn cases(&self) -> &[Case] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Global positive class indices of case `i`, one per category.
    pub fn positives(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    /// Cases satisfying `keep`, sharing the schema.
    pub fn filter(&self, mut keep: impl FnMut(&Case) -> bool) -> Dataset {
        let (cases, positives) = self
            .cases
            .iter()
            .zip(&self.positives)
            .filter(|(c, _)| keep(c))
            .map(|(c, p)| (c.clone(), p.clone()))
            .unzip();
        Dataset { schema: self.schema.clone(), feature_dims: self.feature_dims, cases, positives }
    }

    pub fn subset(&self, split: Split) -> Dataset {
        self.filter(|c| c.split == split)
    }

    /// Partition by split tag into `(train, val, test)`.
    pub fn split(&self) -> (Dataset, Dataset, Dataset) {
        (self.subset(Split::Train), self.subset(Split::Val), self.subset(Split::Test))
    }

    /// Cases whose split is train or val, the pool used for label statistics.
    pub fn train_and_val(&self) -> Dataset {
        self.filter(|c| c.split != Split::Test)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            feature_dims: self.feature_dims,
            cases: indices.iter().map(|&i| self.cases[i].clone()).collect(),
            positives: indices.iter().map(|&i| self.positives[i].clone()).collect(),
        }
    }

    /// `B × dim` feature matrix for one modality.
    pub fn feature_matrix<T: Scalar>(&self, modality: Modality) -> Matrix<T> {
        let dim = self.feature_dims.get(modality);
        Matrix::from_fn(self.cases.len(), dim, |r, c| T::of(self.cases[r].features.get(modality)[c]))
    }

    /// `B × C` one-hot-per-category target matrix.
    pub fn label_matrix<T: Scalar>(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.cases.len(), self.schema.num_classes());
        for (r, pos) in self.positives.iter().enumerate() {
            for &g in pos {
                m.set(r, g, T::one());
            }
        }
        m
    }
}
