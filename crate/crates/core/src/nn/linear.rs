use rand::Rng;

use super::{join, Matrix, NnError, Parameterized};
use crate::scalar::Scalar;

/// Fully connected layer `y = x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = f64> {
    /// `in_dim × out_dim`
    pub w: Matrix<T>,
    /// `1 × out_dim`
    pub b: Matrix<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform weights in `±√(6/(in+out))`, zero bias.
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Matrix::from_fn(in_dim, out_dim, |_, _| T::of(rng.random_range(-bound..=bound)));
        Self { w, b: Matrix::zeros(1, out_dim) }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { w: Matrix::zeros(in_dim, out_dim), b: Matrix::zeros(1, out_dim) }
    }

    pub fn from_parts(w: Matrix<T>, b: Vec<T>) -> Result<Self, NnError> {
        if b.len() != w.cols() {
            return Err(NnError::ShapeMismatch { op: "linear", left: w.shape(), right: (1, b.len()) });
        }
        Ok(Self { w, b: Matrix::row_vector(b) })
    }

    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>, NnError> {
        x.matmul(&self.w)?.add_row_broadcast(self.b.data())
    }

    /// Returns `(grad_x, grads)` where `grads` holds `∂L/∂W` and `∂L/∂b`.
    pub fn backward(&self, x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, Linear<T>), NnError> {
        let grad_w = x.t_matmul(grad_out)?;
        let grad_b = Matrix::row_vector(grad_out.column_sums());
        let grad_x = grad_out.matmul_t(&self.w)?;
        Ok((grad_x, Linear { w: grad_w, b: grad_b }))
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        f(&join(prefix, "w"), &self.w);
        f(&join(prefix, "b"), &self.b);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        f(&join(prefix, "w"), &mut self.w);
        f(&join(prefix, "b"), &mut self.b);
    }
}
