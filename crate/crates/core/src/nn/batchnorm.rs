use super::{join, Matrix, NnError, Parameterized};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch normalization over the rows of a `B × dim` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T = f64> {
    pub gamma: Matrix<T>,
    pub beta: Matrix<T>,
    pub running_mean: Matrix<T>,
    pub running_var: Matrix<T>,
    pub eps: T,
    pub momentum: T,
}

/// Values saved by a train-mode forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache<T = f64> {
    x_hat: Matrix<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    /// `gamma = 1`, `beta = 0`, `eps = 1e-5`, `momentum = 0.1`.
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, dim, T::one()),
            beta: Matrix::zeros(1, dim),
            running_mean: Matrix::zeros(1, dim),
            running_var: Matrix::filled(1, dim, T::one()),
            eps: T::of(1e-5),
            momentum: T::of(0.1),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.cols()
    }

    /// Gradient container: zero gamma/beta and untouched statistics.
    pub fn zeros_like(&self) -> Self {
        let mut g = Self::new(self.dim());
        g.gamma.fill(T::zero());
        g
    }

    pub fn reset_running_stats(&mut self) {
        self.running_mean.fill(T::zero());
        self.running_var.fill(T::one());
    }

    pub fn forward(&mut self, x: &Matrix<T>, mode: Mode) -> Result<(Matrix<T>, Option<BnCache<T>>), NnError> {
        match mode {
            Mode::Train => {
                let momentum = self.momentum;
                let (y, cache) = self.forward_train_with(x, momentum)?;
                Ok((y, Some(cache)))
            }
            Mode::Eval => Ok((self.forward_eval(x)?, None)),
        }
    }

    pub fn forward_train(&mut self, x: &Matrix<T>) -> Result<(Matrix<T>, BnCache<T>), NnError> {
        let momentum = self.momentum;
        self.forward_train_with(x, momentum)
    }

    /// Train-mode pass with an explicit running-statistics momentum.
    ///
    /// A momentum of `1/(k+1)` on the k-th call (from 0) after
    /// [`reset_running_stats`](Self::reset_running_stats) yields the cumulative average.
    pub fn forward_train_with(&mut self, x: &Matrix<T>, momentum: T) -> Result<(Matrix<T>, BnCache<T>), NnError> {
        let (b, dim) = x.shape();
        if dim != self.dim() {
            return Err(NnError::ShapeMismatch { op: "batchnorm", left: x.shape(), right: (1, self.dim()) });
        }
        if b < 2 {
            return Err(NnError::BatchTooSmall(b));
        }
        let n = T::of_usize(b);
        let mean: Vec<T> = x.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![T::zero(); dim];
        for r in 0..b {
            for ((v, &xv), &m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                let d = xv - m;
                *v += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + self.eps).sqrt()).collect();

        let x_hat = Matrix::from_fn(b, dim, |r, c| (x.get(r, c) - mean[c]) * inv_std[c]);
        let y = Matrix::from_fn(b, dim, |r, c| x_hat.get(r, c) * self.gamma.get(0, c) + self.beta.get(0, c));

        let unbias = n / (n - T::one());
        let keep = T::one() - momentum;
        for c in 0..dim {
            let rm = keep * self.running_mean.get(0, c) + momentum * mean[c];
            let rv = keep * self.running_var.get(0, c) + momentum * var[c] * unbias;
            self.running_mean.set(0, c, rm);
            self.running_var.set(0, c, rv);
        }
        Ok((y, BnCache { x_hat, inv_std }))
    }

    pub fn forward_eval(&self, x: &Matrix<T>) -> Result<Matrix<T>, NnError> {
        if x.cols() != self.dim() {
            return Err(NnError::ShapeMismatch { op: "batchnorm", left: x.shape(), right: (1, self.dim()) });
        }
        let scale: Vec<T> =
            (0..self.dim()).map(|c| self.gamma.get(0, c) / (self.running_var.get(0, c) + self.eps).sqrt()).collect();
        Ok(Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            (x.get(r, c) - self.running_mean.get(0, c)) * scale[c] + self.beta.get(0, c)
        }))
    }

    /// Backward through batch statistics. Returns `(grad_x, grads)`.
    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Matrix<T>) -> Result<(Matrix<T>, BatchNorm<T>), NnError> {
        let (b, dim) = grad_out.shape();
        if cache.x_hat.shape() != (b, dim) {
            return Err(NnError::ShapeMismatch {
                op: "batchnorm_backward",
                left: cache.x_hat.shape(),
                right: (b, dim),
            });
        }
        let mut grads = self.zeros_like();
        let mut sum_dxhat = vec![T::zero(); dim];
        let mut sum_dxhat_xhat = vec![T::zero(); dim];
        for r in 0..b {
            for c in 0..dim {
                let g = grad_out.get(r, c);
                let xh = cache.x_hat.get(r, c);
                grads.gamma.data_mut()[c] += g * xh;
                grads.beta.data_mut()[c] += g;
                let dxh = g * self.gamma.get(0, c);
                sum_dxhat[c] += dxh;
                sum_dxhat_xhat[c] += dxh * xh;
            }
        }
        let n = T::of_usize(b);
        let grad_x = Matrix::from_fn(b, dim, |r, c| {
            let dxh = grad_out.get(r, c) * self.gamma.get(0, c);
            cache.inv_std[c] / n * (n * dxh - sum_dxhat[c] - cache.x_hat.get(r, c) * sum_dxhat_xhat[c])
        });
        Ok((grad_x, grads))
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}
