use serde::{Deserialize, Serialize};

use super::DiffError;

/// Linear warmup from 0 to `base_rate`, then linear decay back to 0 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_rate: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_rate: f64, warmup_fraction: f64, total_steps: usize) -> Result<Self, DiffError> {
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(DiffError::Domain(format!(
                "warmup fraction {warmup_fraction} outside [0, 1)"
            )));
        }
        if !(base_rate >= 0.0) {
            return Err(DiffError::Domain(format!("negative base rate {base_rate}")));
        }
        Ok(Self {
            base_rate,
            warmup_fraction,
            total_steps,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    pub fn lr_at(&self, step: usize) -> Result<f64, DiffError> {
        if step > self.total_steps {
            return Err(DiffError::Domain(format!(
                "step {step} beyond schedule length {}",
                self.total_steps
            )));
        }
        let warmup = self.warmup_steps();
        let rate = if step < warmup {
            self.base_rate * step as f64 / warmup as f64
        } else if self.total_steps == warmup {
            0.0
        } else {
            self.base_rate * (self.total_steps - step) as f64 / (self.total_steps - warmup) as f64
        };
        Ok(rate)
    }
}
