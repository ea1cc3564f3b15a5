use rand::Rng;
use rand_distr::StandardNormal;

use super::ModelError;
use crate::dataset::LabelSchema;
use crate::nn::{component_rng, join, Matrix, Parameterized};
use crate::scalar::Scalar;

/// One feature row per class, shared by the three GCN branches.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelEmbedding<T = f64> {
    /// `C × d`
    pub lf: Matrix<T>,
    pub trainable: bool,
}

impl<T: Scalar> LabelEmbedding<T> {
    /// Gaussian rows with standard deviation `1/√d`.
    pub fn seeded(n_classes: usize, dim: usize, seed: u64, trainable: bool) -> Self {
        let mut rng = component_rng(seed, "graph.label_embedding");
        let std = 1.0 / (dim as f64).sqrt();
        let lf = Matrix::from_fn(n_classes, dim, |_, _| T::of(std * rng.sample::<f64, _>(StandardNormal)));
        Self { lf, trainable }
    }

    pub fn n_classes(&self) -> usize {
        self.lf.rows()
    }

    pub fn dim(&self) -> usize {
        self.lf.cols()
    }

    /// Reads a CSV with a header row and one row per class: the first column
    /// holds the `category/class` label, the rest the embedding values.
    /// Rows must follow the schema's class order.
    pub fn from_csv(text: &str, schema: &LabelSchema, trainable: bool) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Embedding(m);
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let expected = schema.class_labels().get(i).cloned().unwrap_or_default();
            let label = record.get(0).unwrap_or("");
            if label != expected {
                return Err(bad(format!("row {i}: expected label `{expected}`, found `{label}`")));
            }
            let values = record
                .iter()
                .skip(1)
                .map(|v| v.trim().parse::<f64>().map(T::of))
                .collect::<Result<Vec<T>, _>>()
                .map_err(|e| bad(format!("row {i}: {e}")))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("row {i}: non-finite value")));
            }
            rows.push(values);
        }
        if rows.len() != schema.num_classes() {
            return Err(bad(format!("expected {} rows, found {}", schema.num_classes(), rows.len())));
        }
        let lf = Matrix::from_rows(&rows).map_err(|e| bad(e.to_string()))?;
        if lf.cols() == 0 {
            return Err(bad("embedding has no columns".into()));
        }
        Ok(Self { lf, trainable })
    }

    pub fn to_csv(&self, schema: &LabelSchema) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("e{j}")));
        w.write_record(&header).expect("in-memory csv");
        for (r, label) in schema.class_labels().iter().enumerate() {
            let mut rec = vec![label.clone()];
            rec.extend(self.lf.row(r).iter().map(|v| format!("{:.16e}", v.to_f64_lossy())));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
    }
}

impl<T: Scalar> Parameterized<T> for LabelEmbedding<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        if self.trainable {
            f(&join(prefix, "lf"), &self.lf);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        if self.trainable {
            f(&join(prefix, "lf"), &mut self.lf);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        if !self.trainable {
            f(&join(prefix, "lf"), &self.lf);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        if !self.trainable {
            f(&join(prefix, "lf"), &mut self.lf);
        }
    }
}
