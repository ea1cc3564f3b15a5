//! Label co-occurrence counting and the conditional-probability correlation matrix.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Split};
use crate::nn::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum CooccurError {
    #[error("no train or val cases to count")]
    Empty,
    #[error("normalization expects a raw conditional matrix")]
    NotRaw,
    #[error("unknown correlation matrix mode `{0}` (expected `raw` or `row-stochastic`)")]
    UnknownMode(String),
    #[error("correlation matrix csv: {0}")]
    Csv(String),
    #[error("correlation matrix csv: {0}")]
    Io(#[from] std::io::Error),
}

/// `M[i][j]`: cases carrying both labels; `M[i][i]`: cases carrying label `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    n_classes: usize,
    n_cases: u64,
    counts: Vec<u64>,
}

impl CooccurrenceCounts {
    pub fn zeros(n_classes: usize) -> Self {
        Self { n_classes, n_cases: 0, counts: vec![0; n_classes * n_classes] }
    }

    /// Adds one case given its positive class indices.
    pub fn add_case(&mut self, positives: &[usize]) {
        for &i in positives {
            for &j in positives {
                self.counts[i * self.n_classes + j] += 1;
            }
        }
        self.n_cases += 1;
    }

    pub fn from_positive_sets<S: AsRef<[usize]>>(n_classes: usize, sets: &[S]) -> Self {
        let mut c = Self::zeros(n_classes);
        for s in sets {
            c.add_case(s.as_ref());
        }
        c
    }

    /// Sums two count tables over disjoint case sets.
    pub fn merge(&self, other: &Self) -> Self {
        assert_eq!(self.n_classes, other.n_classes, "class count mismatch");
        Self {
            n_classes: self.n_classes,
            n_cases: self.n_cases + other.n_cases,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_cases(&self) -> u64 {
        self.n_cases
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n_classes + j]
    }

    /// `M_i`
    pub fn occurrences(&self, i: usize) -> u64 {
        self.get(i, i)
    }
}

/// Counts label pairs over the train and val cases of `dataset`.
pub fn count_cooccurrence(dataset: &Dataset) -> Result<CooccurrenceCounts, CooccurError> {
    let mut counts = CooccurrenceCounts::zeros(dataset.schema().num_classes());
    for (i, case) in dataset.cases().iter().enumerate() {
        if case.split != Split::Test {
            counts.add_case(dataset.positives(i));
        }
    }
    if counts.n_cases == 0 {
        return Err(CooccurError::Empty);
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmMode {
    #[default]
    #[serde(rename = "raw")]
    RawConditional,
    #[serde(rename = "row-stochastic")]
    RowStochastic,
}

impl FromStr for CmMode {
    type Err = CooccurError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" | "raw_conditional" => Ok(CmMode::RawConditional),
            "row-stochastic" | "row_stochastic" => Ok(CmMode::RowStochastic),
            other => Err(CooccurError::UnknownMode(other.to_string())),
        }
    }
}

impl fmt::Display for CmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmMode::RawConditional => "raw",
            CmMode::RowStochastic => "row-stochastic",
        })
    }
}

/// `C × C` matrix of conditional probabilities `p(L_j | L_i)`.
///
/// Generic over any numeric field so the same construction can run in
/// floating point or exact rationals.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix<T = f64> {
    size: usize,
    values: Vec<T>,
    mode: CmMode,
    source_counts: CooccurrenceCounts,
}

impl<T> CorrelationMatrix<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mode(&self) -> CmMode {
        self.mode
    }

    pub fn source_counts(&self) -> &CooccurrenceCounts {
        &self.source_counts
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.values[i * self.size + j]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::new(self.size, self.size, self.values.clone()).expect("square")
    }
}

/// `CM[i][j] = M_ij / M_i`; rows with `M_i = 0` are entirely zero.
pub fn build_conditional_matrix<T>(counts: &CooccurrenceCounts) -> CorrelationMatrix<T>
where
    T: Num + Clone + FromPrimitive,
{
    let n = counts.n_classes();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        let m_i = counts.occurrences(i);
        for j in 0..n {
            values.push(if m_i == 0 {
                T::zero()
            } else {
                T::from_u64(counts.get(i, j)).expect("count fits") / T::from_u64(m_i).expect("count fits")
            });
        }
    }
    CorrelationMatrix { size: n, values, mode: CmMode::RawConditional, source_counts: counts.clone() }
}

/// Re-expresses a raw conditional matrix in `mode`; row-stochastic divides
/// each nonzero row by its sum.
pub fn normalize_matrix<T>(cm: &CorrelationMatrix<T>, mode: CmMode) -> Result<CorrelationMatrix<T>, CooccurError>
where
    T: Num + Clone,
{
    if cm.mode != CmMode::RawConditional {
        return Err(CooccurError::NotRaw);
    }
    match mode {
        CmMode::RawConditional => Ok(cm.clone()),
        CmMode::RowStochastic => {
            let n = cm.size;
            let mut values = cm.values.clone();
            for row in values.chunks_mut(n) {
                let sum = row.iter().cloned().fold(T::zero(), |a, b| a + b);
                if !sum.is_zero() {
                    row.iter_mut().for_each(|v| *v = v.clone() / sum.clone());
                }
            }
            Ok(CorrelationMatrix { size: n, values, mode, source_counts: cm.source_counts.clone() })
        }
    }
}

/// Counts, builds and normalizes in one step.
pub fn correlation_from_dataset<T>(dataset: &Dataset, mode: CmMode) -> Result<CorrelationMatrix<T>, CooccurError>
where
    T: Num + Clone + FromPrimitive,
{
    let counts = count_cooccurrence(dataset)?;
    normalize_matrix(&build_conditional_matrix(&counts), mode)
}

/// CSV with a header row and a first column of `category/class` labels.
pub fn cm_to_csv(cm: &CorrelationMatrix<f64>, labels: &[String]) -> Result<String, CooccurError> {
    if labels.len() != cm.size {
        return Err(CooccurError::Csv(format!("{} labels for a {}x{} matrix", labels.len(), cm.size, cm.size)));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once("").chain(labels.iter().map(String::as_str)).collect();
    w.write_record(&header).map_err(|e| CooccurError::Csv(e.to_string()))?;
    for (i, label) in labels.iter().enumerate() {
        let mut record = vec![label.clone()];
        record.extend((0..cm.size).map(|j| format!("{:.16e}", cm.get(i, j))));
        w.write_record(&record).map_err(|e| CooccurError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CooccurError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf-8"))
}

/// Parses the CSV form back into `(labels, matrix)`.
pub fn cm_from_csv(text: &str) -> Result<(Vec<String>, Matrix<f64>), CooccurError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| CooccurError::Csv(e.to_string()))?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let n = labels.len();
    let mut data = Vec::with_capacity(n * n);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CooccurError::Csv(e.to_string()))?;
        if rec.len() != n + 1 || rec.get(0) != Some(labels.get(i).map_or("", String::as_str)) {
            return Err(CooccurError::Csv(format!("row {} does not match the header", i + 1)));
        }
        for cell in rec.iter().skip(1) {
            data.push(cell.trim().parse::<f64>().map_err(|e| CooccurError::Csv(format!("row {}: {e}", i + 1)))?);
        }
    }
    let m = Matrix::new(data.len() / n.max(1), n, data).map_err(|e| CooccurError::Csv(e.to_string()))?;
    if m.rows() != n {
        return Err(CooccurError::Csv(format!("expected {n} rows, found {}", m.rows())));
    }
    Ok((labels, m))
}

pub fn save_cm_csv(cm: &CorrelationMatrix<f64>, labels: &[String], path: &Path) -> Result<(), CooccurError> {
    std::fs::write(path, cm_to_csv(cm, labels)?)?;
    Ok(())
}

pub fn load_cm_csv(path: &Path) -> Result<(Vec<String>, Matrix<f64>), CooccurError> {
    cm_from_csv(&std::fs::read_to_string(path)?)
}
