use std::f64::consts::PI;

/// Cosine annealing from `base_lr` at epoch 0 to `min_lr` at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub total_epochs: usize,
    pub min_lr: f64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_epochs: usize, min_lr: f64) -> Self {
        Self { base_lr, total_epochs, min_lr }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        if self.total_epochs == 0 {
            return self.base_lr;
        }
        let e = epoch.min(self.total_epochs) as f64;
        let c = 0.5 * (1.0 + (PI * e / self.total_epochs as f64).cos());
        // written as a convex blend so both endpoints are exact
        self.base_lr * c + self.min_lr * (1.0 - c)
    }
}
