use rand::Rng;

use crate::nn::{join, leaky_relu, leaky_relu_backward, Matrix, NnError, Parameterized};
use crate::scalar::Scalar;

/// Nonlinearity after the first graph convolution. The second layer is linear.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GcnActivation {
    LeakyRelu(f64),
    Identity,
}

/// Two stacked graph convolutions `Z = CM · f(CM · LF · W1) · W2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gcn<T = f64> {
    /// `d × d1`
    pub w1: Matrix<T>,
    /// `d1 × D`
    pub w2: Matrix<T>,
    pub activation: GcnActivation,
}

#[derive(Clone, Debug)]
pub struct GcnCache<T = f64> {
    /// `CM · LF`
    a1: Matrix<T>,
    /// `CM · LF · W1`
    pre: Matrix<T>,
    /// `CM · f(pre)`
    a2: Matrix<T>,
}

impl<T: Scalar> Gcn<T> {
    pub fn init<R: Rng>(
        embed_dim: usize,
        hidden: usize,
        out_dim: usize,
        activation: GcnActivation,
        rng: &mut R,
    ) -> Self {
        let glorot = |r: usize, c: usize, rng: &mut R| {
            let bound = (6.0 / (r + c) as f64).sqrt();
            Matrix::from_fn(r, c, |_, _| T::of(rng.random_range(-bound..=bound)))
        };
        let w1 = glorot(embed_dim, hidden, rng);
        let w2 = glorot(hidden, out_dim, rng);
        Self { w1, w2, activation }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            activation: self.activation,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w2.cols()
    }

    fn act(&self, x: &Matrix<T>) -> Matrix<T> {
        match self.activation {
            GcnActivation::LeakyRelu(s) => leaky_relu(x, T::of(s)),
            GcnActivation::Identity => x.clone(),
        }
    }

    pub fn forward(&self, lf: &Matrix<T>, cm: &Matrix<T>) -> Result<(Matrix<T>, GcnCache<T>), NnError> {
        if cm.rows() != cm.cols() || cm.cols() != lf.rows() {
            return Err(NnError::ShapeMismatch { op: "gcn_forward", left: cm.shape(), right: lf.shape() });
        }
        let a1 = cm.matmul(lf)?;
        let pre = a1.matmul(&self.w1)?;
        let a2 = cm.matmul(&self.act(&pre))?;
        let z = a2.matmul(&self.w2)?;
        Ok((z, GcnCache { a1, pre, a2 }))
    }

    /// Returns `(∂L/∂LF, grads)` given `∂L/∂Z`.
    pub fn backward(
        &self,
        cm: &Matrix<T>,
        cache: &GcnCache<T>,
        grad_z: &Matrix<T>,
    ) -> Result<(Matrix<T>, Gcn<T>), NnError> {
        let w2 = cache.a2.t_matmul(grad_z)?;
        let g_a2 = grad_z.matmul_t(&self.w2)?;
        let g_h = cm.t_matmul(&g_a2)?;
        let g_pre = match self.activation {
            GcnActivation::LeakyRelu(s) => leaky_relu_backward(&cache.pre, &g_h, T::of(s))?,
            GcnActivation::Identity => g_h,
        };
        let w1 = cache.a1.t_matmul(&g_pre)?;
        let g_a1 = g_pre.matmul_t(&self.w1)?;
        let g_lf = cm.t_matmul(&g_a1)?;
        Ok((g_lf, Gcn { w1, w2, activation: self.activation }))
    }
}

impl<T: Scalar> Parameterized<T> for Gcn<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix<T>)) {
        f(&join(prefix, "w1"), &self.w1);
        f(&join(prefix, "w2"), &self.w2);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix<T>)) {
        f(&join(prefix, "w1"), &mut self.w1);
        f(&join(prefix, "w2"), &mut self.w2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn identity_gcn(n: usize) -> Gcn<f64> {
        Gcn { w1: Matrix::identity(n), w2: Matrix::identity(n), activation: GcnActivation::Identity }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn identities_pass_embedding_through() {
        let lf = random(3, 3, 1);
        let (z, _) = identity_gcn(3).forward(&lf, &Matrix::identity(3)).unwrap();
        assert_eq!(z, lf);
    }

    #[test]
    fn identity_weights_square_the_correlation_matrix() {
        let cm = Matrix::<f64>::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap();
        let (z, _) = identity_gcn(2).forward(&Matrix::identity(2), &cm).unwrap();
        assert_eq!(z, Matrix::from_rows(&[[1.25, 1.0], [1.0, 1.25]]).unwrap());
    }

    #[test]
    fn zero_row_in_cm_zeroes_preactivations() {
        let mut cm = random(4, 4, 2);
        cm.row_mut(2).fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gcn = Gcn::<f64>::init(3, 5, 2, GcnActivation::LeakyRelu(0.2), &mut rng);
        let (z, cache) = gcn.forward(&random(4, 3, 4), &cm).unwrap();
        assert!(cache.pre.row(2).iter().all(|&v| v == 0.0));
        assert!(cache.a2.row(2).iter().all(|&v| v == 0.0));
        assert!(z.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_mismatched_shapes() {
        assert!(identity_gcn(2).forward(&Matrix::identity(2), &Matrix::identity(3)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cm = random(4, 4, 5);
        let lf = random(4, 3, 6);
        let upstream = random(4, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gcn = Gcn::<f64>::init(3, 5, 2, GcnActivation::LeakyRelu(0.2), &mut rng);
        let (_, cache) = gcn.forward(&lf, &cm).unwrap();
        let (g_lf, grads) = gcn.backward(&cm, &cache, &upstream).unwrap();
        let objective =
            |g: &Gcn<f64>, lf: &Matrix<f64>| g.forward(lf, &cm).unwrap().0.hadamard(&upstream).unwrap().sum();
        let mut probe = gcn.clone();
        let err = grad_check(
            |p| {
                probe.set_flat_params(p);
                objective(&probe, &lf)
            },
            &grads.flat_params(),
            &gcn.flat_params(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "weights: {err}");
        let err =
            grad_check(|p| objective(&gcn, &Matrix::new(4, 3, p.to_vec()).unwrap()), g_lf.data(), lf.data(), 1e-6)
                .unwrap();
        assert!(err < 1e-6, "embedding: {err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn linear_in_embedding_without_activation(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gcn = Gcn::<f64>::init(3, 4, 2, GcnActivation::Identity, &mut rng);
            let cm = random(5, 5, seed ^ 1);
            let (l1, l2) = (random(5, 3, seed ^ 2), random(5, 3, seed ^ 3));
            let mut mixed = l1.scale(alpha);
            mixed.axpy(beta, &l2).unwrap();
            let z = gcn.forward(&mixed, &cm).unwrap().0;
            let mut expected = gcn.forward(&l1, &cm).unwrap().0.scale(alpha);
            expected.axpy(beta, &gcn.forward(&l2, &cm).unwrap().0).unwrap();
            prop_assert!(z.sub(&expected).unwrap().max_abs() < 1e-10);
        }
    }
}
