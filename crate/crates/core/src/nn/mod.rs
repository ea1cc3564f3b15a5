//! Dense building blocks with hand-written backward passes.

mod activation;
mod adam;
mod batchnorm;
mod checkpoint;
mod gradcheck;
mod linear;
mod loss;
mod matrix;
mod schedule;

pub use activation::{leaky_relu, leaky_relu_backward, sigmoid, swish, swish_backward, swish_derivative};
pub use adam::{adam_update, Adam, AdamConfig};
pub use batchnorm::{BatchNorm, BnCache, Mode};
pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, relative_error};
pub use linear::Linear;
pub use loss::{category_softmax, category_softmax_ce, CategoryBlocks, CeOutput};
pub use matrix::Matrix;
pub use schedule::CosineSchedule;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("batch norm in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid targets: {0}")]
    InvalidTargets(String),
    #[error("function value is not finite at coordinate {0}")]
    NonFinite(usize),
    #[error("backward pass needs a train-mode forward pass")]
    MissingCache,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything owning named parameter tensors.
///
/// Visit order is fixed per type, so two instances of the same architecture
/// can be zipped positionally (optimizer state, weight averaging, gradients).
pub trait Parameterized<T: Scalar> {
    /// Trainable tensors.
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>));

    /// Non-trainable state such as batch-norm running statistics.
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(&str, &Matrix<T>)) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut Matrix<T>)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, m| n += m.len());
        n
    }

    /// Flattened copy of all trainable values in visit order.
    fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit_params("", &mut |_, m| out.extend_from_slice(m.data()));
        out
    }

    /// Overwrites trainable values from a flat slice in visit order.
    fn set_flat_params(&mut self, values: &[T]) {
        let mut offset = 0;
        self.visit_params_mut("", &mut |_, m| {
            let n = m.len();
            m.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        });
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    /// Order-sensitive fingerprint over the bit patterns of every parameter and buffer.
    fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        let mut feed = |name: &str, m: &Matrix<T>| {
            h.write(name.as_bytes());
            for v in m.data() {
                h.write(&v.to_f64_lossy().to_bits().to_le_bytes());
            }
        };
        self.visit_params("", &mut feed);
        self.visit_buffers("", &mut feed);
        h.0
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

/// Deterministic RNG for one named component under a root seed.
pub fn component_rng(root_seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = Fnv::default();
    h.write(tag.as_bytes());
    ChaCha8Rng::seed_from_u64(root_seed ^ h.0)
}
