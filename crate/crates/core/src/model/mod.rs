//! Dual-stream Siamese encoder, scSE attention, concatenation fusion and
//! U-Net style decoder.
//!
//! Both acquisitions go through one encoder whose weights exist once in
//! [`ModelParams`]. Each of the four encoder taps (at S/2, S/4, S/8 and S/16)
//! is recalibrated per stream by the scSE block of its scale, the two
//! streams are concatenated along channels, and the decoder walks back up
//! from the deepest fused map with skip concatenations.

mod network;
mod params;

pub use network::Network;
pub use params::{ModelParams, ParamEntry, ParamVars};

use crate::error::{Error, Result};

/// Number of input channels: VV, VH and a blank channel.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Edge length S of the square input; divisible by 16.
    pub input_size: usize,
    /// Channel widths of the four encoder stages.
    pub widths: [usize; 4],
    /// scSE channel reduction ratio; divides every stage width.
    pub reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            widths: [16, 32, 64, 128],
            reduction: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of 16 (four 2x downsamplings)",
                self.input_size
            )));
        }
        if self.reduction == 0 {
            return Err(Error::Config("scSE reduction ratio must be at least 1".into()));
        }
        for &w in &self.widths {
            if w == 0 || w % self.reduction != 0 {
                return Err(Error::Config(format!(
                    "stage width {w} must be positive and divisible by the reduction ratio {}",
                    self.reduction
                )));
            }
        }
        Ok(())
    }

    /// Spatial size of encoder tap `stage` (1-based): S / 2^stage.
    pub fn tap_size(&self, stage: usize) -> usize {
        self.input_size >> stage
    }
}
