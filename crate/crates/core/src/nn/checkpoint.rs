use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{Matrix, NnError, Parameterized};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"GELNCKP1";

/// Named tensors (parameters and buffers) stored as `f64`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: IndexMap<String, Matrix<f64>>,
}

#[derive(Serialize, Deserialize)]
struct JsonEntry {
    path: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    entries: Vec<JsonEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds every parameter and buffer of `model` under `prefix`.
    pub fn insert_model<T: Scalar, P: Parameterized<T> + ?Sized>(&mut self, prefix: &str, model: &P) {
        let mut add = |name: &str, m: &Matrix<T>| {
            self.entries.insert(name.to_string(), m.cast());
        };
        model.visit_params(prefix, &mut add);
        model.visit_buffers(prefix, &mut add);
    }

    pub fn from_model<T: Scalar, P: Parameterized<T> + ?Sized>(prefix: &str, model: &P) -> Self {
        let mut c = Self::new();
        c.insert_model(prefix, model);
        c
    }

    /// Overwrites every tensor of `model` found under `prefix`; all must be present.
    pub fn load_into<T: Scalar, P: Parameterized<T> + ?Sized>(
        &self,
        prefix: &str,
        model: &mut P,
    ) -> Result<(), NnError> {
        let mut err = None;
        let mut set = |name: &str, m: &mut Matrix<T>| {
            if err.is_some() {
                return;
            }
            match self.entries.get(name) {
                None => err = Some(NnError::Checkpoint(format!("missing tensor `{name}`"))),
                Some(src) if src.shape() != m.shape() => {
                    err = Some(NnError::Checkpoint(format!(
                        "tensor `{name}` has shape {:?}, expected {:?}",
                        src.shape(),
                        m.shape()
                    )))
                }
                Some(src) => *m = src.cast(),
            }
        };
        model.visit_params_mut(prefix, &mut set);
        model.visit_buffers_mut(prefix, &mut set);
        err.map_or(Ok(()), Err)
    }

    /// Canonical little-endian binary form.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, m) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |what: &str| NnError::Checkpoint(format!("truncated or corrupt binary checkpoint ({what})"));
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| bad("magic"))?;
        if &magic != MAGIC {
            return Err(NnError::Checkpoint("not a checkpoint file".into()));
        }
        let mut u64buf = [0u8; 8];
        let mut u32buf = [0u8; 4];
        bytes.read_exact(&mut u64buf).map_err(|_| bad("count"))?;
        let count = u64::from_le_bytes(u64buf);
        let mut entries = IndexMap::new();
        for _ in 0..count {
            bytes.read_exact(&mut u32buf).map_err(|_| bad("name length"))?;
            let mut name = vec![0u8; u32::from_le_bytes(u32buf) as usize];
            bytes.read_exact(&mut name).map_err(|_| bad("name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name encoding"))?;
            bytes.read_exact(&mut u64buf).map_err(|_| bad("rows"))?;
            let rows = u64::from_le_bytes(u64buf) as usize;
            bytes.read_exact(&mut u64buf).map_err(|_| bad("cols"))?;
            let cols = u64::from_le_bytes(u64buf) as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| bad("shape"))?;
            if bytes.len() < n * 8 {
                return Err(bad("values"));
            }
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                bytes.read_exact(&mut u64buf).map_err(|_| bad("values"))?;
                values.push(f64::from_le_bytes(u64buf));
            }
            entries.insert(name, Matrix::new(rows, cols, values)?);
        }
        if !bytes.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { entries })
    }

    pub fn to_json(&self) -> String {
        let doc = JsonCheckpoint {
            entries: self
                .entries
                .iter()
                .map(|(path, m)| JsonEntry {
                    path: path.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    values: m.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let doc: JsonCheckpoint = serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut entries = IndexMap::new();
        for e in doc.entries {
            entries.insert(e.path, Matrix::new(e.rows, e.cols, e.values)?);
        }
        Ok(Self { entries })
    }

    /// Writes JSON when the extension is `.json`, binary otherwise.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut f = fs::File::create(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            f.write_all(self.to_json().as_bytes())?;
        } else {
            f.write_all(&self.to_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = fs::read(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&String::from_utf8_lossy(&bytes))
        } else {
            Self::from_bytes(&bytes)
        }
    }
}
