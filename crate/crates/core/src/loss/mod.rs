//! Masked dice + focal objective and confusion-count metrics.
//!
//! Every quantity is restricted to valid pixels (mask = 1); pixels with
//! mask = 0 contribute nothing to losses, gradients or counts.

mod metrics;
mod ops;

pub use metrics::{binarize, confusion, confusion_slices, f1, iou, ConfusionCounts};
pub use ops::{LossSums, LossTerm, PROB_CLAMP};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the dice term; the focal term gets `1 - alpha`.
    pub alpha: f32,
    /// Focal focusing exponent.
    pub gamma: f32,
    /// Dice smoothing added to numerator and denominator.
    pub smooth: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            gamma: 2.0,
            smooth: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma {} must be finite and >= 0", self.gamma)));
        }
        if !(self.smooth > 0.0 && self.smooth.is_finite()) {
            return Err(Error::Config(format!("smooth {} must be finite and > 0", self.smooth)));
        }
        Ok(())
    }
}
