/// Patience-based stopping on a monitored loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopState {
    pub best_loss: f64,
    pub epochs_since_improve: usize,
    pub stopped: bool,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        EarlyStopState {
            best_loss: f64::INFINITY,
            epochs_since_improve: 0,
            stopped: false,
        }
    }
}

impl EarlyStopState {
    /// An epoch improves iff `best − loss ≥ min_delta`. Returns whether it did.
    pub fn update(&mut self, loss: f64, patience: usize, min_delta: f64) -> bool {
        let improved = self.best_loss == f64::INFINITY || self.best_loss - loss >= min_delta;
        if improved {
            self.best_loss = loss;
            self.epochs_since_improve = 0;
        } else {
            self.epochs_since_improve += 1;
        }
        self.stopped = self.epochs_since_improve >= patience;
        improved
    }
}

pub fn early_stop_update(state: EarlyStopState, epoch_loss: f64, patience: usize, min_delta: f64) -> EarlyStopState {
    let mut s = state;
    s.update(epoch_loss, patience, min_delta);
    s
}
