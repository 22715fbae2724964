use rand::Rng;

use super::Sample;
use crate::error::Result;
use crate::raster::Raster;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlipMode {
    None,
    /// Mirror columns: (r, c) ↦ (r, W−1−c).
    Horizontal,
    /// Mirror rows: (r, c) ↦ (H−1−r, c).
    Vertical,
    Both,
}

impl FlipMode {
    pub const ALL: [FlipMode; 4] = [FlipMode::None, FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Both];

    /// Uniform draw over the four modes.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.random_range(0..4)]
    }

    fn flips(self) -> (bool, bool) {
        match self {
            FlipMode::None => (false, false),
            FlipMode::Horizontal => (true, false),
            FlipMode::Vertical => (false, true),
            FlipMode::Both => (true, true),
        }
    }
}

/// Applies `mode` to every channel of `raster`.
pub fn flip_raster(raster: &Raster, mode: FlipMode) -> Result<Raster> {
    let (h_flip, v_flip) = mode.flips();
    if !h_flip && !v_flip {
        return Ok(raster.clone());
    }
    let (h, w) = (raster.height(), raster.width());
    let mut data = Vec::with_capacity(raster.data().len());
    for c in 0..raster.channels() {
        let plane = raster.channel(c);
        for r in 0..h {
            let src_r = if v_flip { h - 1 - r } else { r };
            let row = &plane[src_r * w..(src_r + 1) * w];
            if h_flip {
                data.extend(row.iter().rev());
            } else {
                data.extend_from_slice(row);
            }
        }
    }
    Raster::new(raster.channels(), h, w, raster.kind(), data)
}

/// Applies one flip consistently to both inputs, the target and the mask.
pub fn flip_augment(sample: &Sample, mode: FlipMode) -> Result<Sample> {
    Ok(Sample {
        id: sample.id.clone(),
        pre: flip_raster(&sample.pre, mode)?,
        post: flip_raster(&sample.post, mode)?,
        target: flip_raster(&sample.target, mode)?,
        mask: flip_raster(&sample.mask, mode)?,
    })
}
