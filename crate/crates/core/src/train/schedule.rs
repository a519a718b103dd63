use std::f64::consts::PI;

/// Linear warmup to `peak`, then half-cosine decay to `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub min_lr: f64,
    pub warmup_epochs: f64,
    pub max_epochs: f64,
}

/// Linear batch-size scaling of the base rate.
pub fn peak_lr(base_lr: f64, batch_size: usize) -> f64 {
    base_lr * batch_size as f64 / 256.0
}

impl LrSchedule {
    /// `min_lr` defaults to `peak / 100`.
    pub fn new(base_lr: f64, batch_size: usize, warmup_epochs: f64, max_epochs: f64, min_lr: Option<f64>) -> Self {
        let peak = peak_lr(base_lr, batch_size);
        LrSchedule {
            peak,
            min_lr: min_lr.unwrap_or(peak / 100.0),
            warmup_epochs,
            max_epochs,
        }
    }

    /// Learning rate at a (fractional) epoch in `[0, max_epochs]`.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let epoch = epoch.clamp(0.0, self.max_epochs);
        if epoch < self.warmup_epochs {
            return self.peak * epoch / self.warmup_epochs;
        }
        let span = self.max_epochs - self.warmup_epochs;
        if span <= 0.0 {
            return self.peak;
        }
        let progress = (epoch - self.warmup_epochs) / span;
        self.min_lr + (self.peak - self.min_lr) * (1.0 + (PI * progress).cos()) / 2.0
    }
}
