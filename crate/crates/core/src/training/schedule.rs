use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrShape {
    Constant,
    /// Multiply by `factor` once progress reaches each listed epoch.
    StepDrops { epochs: Vec<f64>, factor: f64 },
    /// Half cosine from `base_lr` down to 0 at `total_epochs`.
    Cosine { total_epochs: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    #[serde(flatten)]
    pub shape: LrShape,
    #[serde(default)]
    pub warmup_epochs: f64,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            shape: LrShape::Constant,
            warmup_epochs: 0.0,
        }
    }

    pub fn with_warmup(mut self, epochs: f64) -> Self {
        self.warmup_epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            return bad(format!("base_lr {} must be finite and >= 0", self.base_lr));
        }
        if !(self.warmup_epochs.is_finite() && self.warmup_epochs >= 0.0) {
            return bad(format!("warmup_epochs {} must be >= 0", self.warmup_epochs));
        }
        match &self.shape {
            LrShape::Constant => Ok(()),
            LrShape::StepDrops { epochs, factor } => {
                if !(*factor >= 0.0 && factor.is_finite()) {
                    return bad(format!("step factor {factor} must be >= 0"));
                }
                if epochs.windows(2).any(|w| w[1] < w[0]) {
                    return bad("step epochs must be sorted".into());
                }
                Ok(())
            }
            LrShape::Cosine { total_epochs } => {
                if *total_epochs <= self.warmup_epochs {
                    return bad(format!(
                        "cosine total_epochs {total_epochs} must exceed warmup {}",
                        self.warmup_epochs
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Learning rate at fractional epoch `progress`.
pub fn lr_at(schedule: &LrSchedule, progress: f64) -> f64 {
    let progress = progress.max(0.0);
    let base = schedule.base_lr;
    let warm = schedule.warmup_epochs;
    if progress < warm {
        return base * progress / warm;
    }
    match &schedule.shape {
        LrShape::Constant => base,
        LrShape::StepDrops { epochs, factor } => {
            let drops = epochs.iter().filter(|&&e| progress >= e).count();
            base * factor.powi(drops as i32)
        }
        LrShape::Cosine { total_epochs } => {
            let span = total_epochs - warm;
            let t = ((progress - warm) / span).min(1.0);
            (0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())).max(0.0)
        }
    }
}
