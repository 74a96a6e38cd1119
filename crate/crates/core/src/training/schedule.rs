/// Multiplies the learning rate by `factor` once the best validation loss
/// has gone `patience` full epochs without strictly improving. No cooldown,
/// no floor; the wait counter restarts after each reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    wait: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            best: f64::INFINITY,
            wait: 0,
        }
    }

    /// Records one epoch's monitored loss and returns the learning rate for
    /// the next epoch.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.wait = 0;
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.patience {
            self.wait = 0;
            lr * self.factor
        } else {
            lr
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Replays a validation-loss history and returns the resulting learning rate.
pub fn reduce_lr_on_plateau(val_losses: &[f64], initial_lr: f64, factor: f64, patience: usize) -> f64 {
    let mut s = PlateauScheduler::new(factor, patience);
    val_losses.iter().fold(initial_lr, |lr, &l| s.observe(l, lr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fires_after_five_stalled_epochs() {
        let losses = [1.0, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99];
        assert_eq!(reduce_lr_on_plateau(&losses[..6], 1.8, 0.1, 5), 1.8);
        let lr = reduce_lr_on_plateau(&losses, 1.8, 0.1, 5);
        assert!((lr - 0.18).abs() < 1e-12);
    }

    #[test]
    fn steady_improvement_keeps_rate() {
        let losses: Vec<f64> = (0..200).map(|i| 2.0 - i as f64 * 1e-3).collect();
        assert_eq!(reduce_lr_on_plateau(&losses, 1.8, 0.1, 5), 1.8);
    }

    #[test]
    fn equal_loss_is_not_improvement() {
        let losses = [0.5; 6];
        assert!((reduce_lr_on_plateau(&losses, 1.0, 0.1, 5) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn repeated_plateaus_reduce_again() {
        let losses = [0.5; 11];
        assert!((reduce_lr_on_plateau(&losses, 1.8, 0.1, 5) - 0.018).abs() < 1e-12);
    }
}
