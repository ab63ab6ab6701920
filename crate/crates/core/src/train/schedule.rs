//! Plateau learning-rate reduction and early stopping.

/// Minimum decrease of the validation loss that counts as an improvement.
pub const IMPROVEMENT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub reduced: bool,
}

/// Tracks the best validation loss and two counters: epochs since the last
/// improvement (drives early stopping) and epochs since the last improvement
/// or reduction (drives plateau reductions).
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    best: f64,
    since_improvement: usize,
    plateau: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            since_improvement: 0,
            plateau: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    /// Records one epoch's validation loss, reducing the rate after
    /// `patience` consecutive epochs without improvement.
    pub fn observe(&mut self, val_loss: f64) -> Observation {
        if val_loss < self.best - IMPROVEMENT_EPSILON {
            self.best = val_loss;
            self.since_improvement = 0;
            self.plateau = 0;
            return Observation {
                improved: true,
                reduced: false,
            };
        }
        self.since_improvement += 1;
        self.plateau += 1;
        let reduced = self.plateau >= self.patience;
        if reduced {
            self.lr *= self.factor;
            self.plateau = 0;
        }
        Observation {
            improved: false,
            reduced,
        }
    }
}

/// Stop once `epochs_since_improvement` reaches `patience`.
pub fn early_stop_check(epochs_since_improvement: usize, patience: usize) -> bool {
    epochs_since_improvement >= patience
}
