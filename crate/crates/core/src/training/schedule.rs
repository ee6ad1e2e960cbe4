use crate::error::{Error, Result};

/// Reduce-on-plateau learning rate: after `patience` consecutive epochs
/// without a strict improvement of the monitored loss, multiply by `gamma`
/// (never below `lr_min`) and restart the count.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr: f64,
    pub gamma: f64,
    pub patience: usize,
    pub lr_min: f64,
    pub best: Option<f64>,
    pub since_improvement: usize,
}

impl LrSchedule {
    pub fn new(lr: f64, gamma: f64, patience: usize, lr_min: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::config(format!(
                "step decay {gamma} must lie in (0, 1)"
            )));
        }
        if patience == 0 {
            return Err(Error::config("plateau patience must be at least 1"));
        }
        if !(lr_min >= 0.0 && lr >= lr_min) {
            return Err(Error::config(format!(
                "need 0 <= lr_min ({lr_min}) <= lr ({lr})"
            )));
        }
        Ok(LrSchedule {
            lr,
            gamma,
            patience,
            lr_min,
            best: None,
            since_improvement: 0,
        })
    }

    /// Records the loss of the epoch just finished and returns the rate for
    /// the next one. The first call only sets the baseline. NaN never counts
    /// as an improvement.
    pub fn step(&mut self, loss: f64) -> f64 {
        match self.best {
            Some(best) if loss < best => {
                self.best = Some(loss);
                self.since_improvement = 0;
            }
            None if !loss.is_nan() => self.best = Some(loss),
            _ => {
                self.since_improvement += 1;
                if self.since_improvement >= self.patience {
                    self.lr = (self.lr * self.gamma).max(self.lr_min);
                    self.since_improvement = 0;
                }
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improving_losses_keep_the_rate() {
        let mut s = LrSchedule::new(1e-4, 0.1, 6, 1e-8).unwrap();
        for e in 0..30 {
            assert_eq!(s.step(10.0 - e as f64), 1e-4);
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        assert!(LrSchedule::new(1e-4, 1.0, 6, 1e-8).is_err());
        assert!(LrSchedule::new(1e-4, 0.1, 0, 1e-8).is_err());
        assert!(LrSchedule::new(1e-9, 0.1, 6, 1e-8).is_err());
    }

    #[test]
    fn an_improvement_resets_the_count() {
        let mut s = LrSchedule::new(1e-4, 0.1, 3, 1e-8).unwrap();
        for loss in [1.0, 1.0, 1.0, 0.5, 0.5, 0.5] {
            s.step(loss);
        }
        assert_eq!(s.lr, 1e-4);
        s.step(0.5);
        assert!(s.lr < 1e-4);
    }
}
