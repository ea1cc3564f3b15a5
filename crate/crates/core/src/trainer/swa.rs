use super::TrainError;
use crate::nn::Parameterized;
use crate::scalar::Scalar;

/// Running sum of parameter snapshots, averaged on demand.
#[derive(Clone, Debug, Default)]
pub struct SwaState {
    count: usize,
    sums: Vec<f64>,
    /// Whether batch-norm statistics must be recomputed after averaging.
    pub reestimate_bn: bool,
}

impl SwaState {
    pub fn new(reestimate_bn: bool) -> Self {
        Self { count: 0, sums: Vec::new(), reestimate_bn }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn snapshot<T: Scalar, P: Parameterized<T>>(&mut self, model: &P) {
        let flat = model.flat_params();
        if self.count == 0 {
            self.sums = flat.iter().map(|v| v.to_f64_lossy()).collect();
        } else {
            assert_eq!(flat.len(), self.sums.len(), "snapshot of a different architecture");
            self.sums.iter_mut().zip(&flat).for_each(|(s, v)| *s += v.to_f64_lossy());
        }
        self.count += 1;
    }

    /// Arithmetic mean of all snapshots.
    pub fn mean(&self) -> Result<Vec<f64>, TrainError> {
        if self.count == 0 {
            return Err(TrainError::NoSnapshots);
        }
        let n = self.count as f64;
        Ok(self.sums.iter().map(|s| s / n).collect())
    }

    /// Overwrites the model's trainable parameters with the snapshot mean.
    pub fn apply<T: Scalar, P: Parameterized<T>>(&self, model: &mut P) -> Result<(), TrainError> {
        let mean: Vec<T> = self.mean()?.into_iter().map(T::of).collect();
        model.set_flat_params(&mean);
        Ok(())
    }
}
