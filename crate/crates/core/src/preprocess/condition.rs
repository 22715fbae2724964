use crate::error::{Error, Result};
use crate::raster::{Raster, RasterKind, TilePair};

/// Backscatter clip ranges in dB for the VV and VH bands.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipSpec {
    pub vv_lo: f32,
    pub vv_hi: f32,
    pub vh_lo: f32,
    pub vh_hi: f32,
}

impl Default for ClipSpec {
    fn default() -> Self {
        ClipSpec {
            vv_lo: -23.0,
            vv_hi: 0.0,
            vh_lo: -28.0,
            vh_hi: -5.0,
        }
    }
}

impl ClipSpec {
    pub fn validate(&self) -> Result<()> {
        for (band, lo, hi) in [("VV", self.vv_lo, self.vv_hi), ("VH", self.vh_lo, self.vh_hi)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(format!(
                    "{band} clip range [{lo}, {hi}] needs finite lo < hi"
                )));
            }
        }
        Ok(())
    }

    /// `(lo, hi)` for band 0 (VV) or 1 (VH).
    pub fn band(&self, band: usize) -> (f32, f32) {
        if band == 0 {
            (self.vv_lo, self.vv_hi)
        } else {
            (self.vh_lo, self.vh_hi)
        }
    }
}

/// Elementwise clamp to `[lo, hi]`. NaN passes through unchanged.
pub fn clip_db(band: &Raster, lo: f32, hi: f32) -> Result<Raster> {
    if !(lo < hi) {
        return Err(Error::Validation(format!("clip range [{lo}, {hi}] is empty")));
    }
    let data = band
        .data()
        .iter()
        .map(|&v| if v.is_nan() { v } else { v.clamp(lo, hi) })
        .collect();
    Raster::new(band.channels(), band.height(), band.width(), band.kind(), data)
}

/// Min-max map of the clip range onto `[0, 1]`: `(v - lo) / (hi - lo)`.
///
/// NaN (no data) maps to 0; finite values outside `[lo, hi]` are rejected.
pub fn normalize(band: &Raster, lo: f32, hi: f32) -> Result<Raster> {
    if band.kind() != RasterKind::BackscatterDb {
        return Err(Error::Validation(format!(
            "normalize expects a backscatter raster, got {:?}",
            band.kind()
        )));
    }
    if !(hi > lo) {
        return Err(Error::Validation(format!(
            "degenerate normalization range [{lo}, {hi}]"
        )));
    }
    let span = hi as f64 - lo as f64;
    let mut data = Vec::with_capacity(band.data().len());
    for (i, &v) in band.data().iter().enumerate() {
        if v.is_nan() {
            data.push(0.0);
            continue;
        }
        if v < lo || v > hi {
            return Err(Error::Validation(format!(
                "value {v} at index {i} lies outside [{lo}, {hi}]; clip first"
            )));
        }
        data.push((((v as f64) - lo as f64) / span).clamp(0.0, 1.0) as f32);
    }
    Raster::new(band.channels(), band.height(), band.width(), RasterKind::Normalized, data)
}

/// Clips and normalizes each band of a 2-channel (VV, VH) dB raster.
pub fn clip_normalize(tile: &Raster, clip: &ClipSpec) -> Result<Raster> {
    if tile.channels() != 2 {
        return Err(Error::dim(format!(
            "expected 2 bands (VV, VH), got {}",
            tile.channels()
        )));
    }
    let bands = (0..2)
        .map(|b| {
            let (lo, hi) = clip.band(b);
            normalize(&clip_db(&tile.channel_raster(b)?, lo, hi)?, lo, hi)
        })
        .collect::<Result<Vec<_>>>()?;
    Raster::stack(&bands)
}

/// Three-channel network input: VV, VH and an all-zero third channel.
pub fn assemble_input(vv: &Raster, vh: &Raster) -> Result<Raster> {
    if vv.channels() != 1 || vh.channels() != 1 || !vv.same_extent(vh) {
        return Err(Error::dim(format!(
            "assemble_input needs two single-channel rasters of one size, got {}x{}x{} and {}x{}x{}",
            vv.channels(),
            vv.height(),
            vv.width(),
            vh.channels(),
            vh.height(),
            vh.width()
        )));
    }
    let mut data = Vec::with_capacity(3 * vv.plane_len());
    data.extend_from_slice(vv.data());
    data.extend_from_slice(vh.data());
    data.resize(3 * vv.plane_len(), 0.0);
    Raster::new(3, vv.height(), vv.width(), vv.kind(), data)
}

/// Splits raw labels into a {0,1} target and a {0,1} validity mask; −1
/// (missing data) becomes target 0 with mask 0.
pub fn encode_labels(raw: &Raster) -> Result<(Raster, Raster)> {
    let mut target = Vec::with_capacity(raw.data().len());
    let mut mask = Vec::with_capacity(raw.data().len());
    for (index, &value) in raw.data().iter().enumerate() {
        let (t, m) = match value {
            v if v == 1.0 => (1.0, 1.0),
            v if v == 0.0 => (0.0, 1.0),
            v if v == -1.0 => (0.0, 0.0),
            _ => return Err(Error::LabelDomain { index, value }),
        };
        target.push(t);
        mask.push(m);
    }
    let (c, h, w) = (raw.channels(), raw.height(), raw.width());
    Ok((
        Raster::new(c, h, w, RasterKind::Label, target)?,
        Raster::new(c, h, w, RasterKind::Label, mask)?,
    ))
}

/// A tile ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// 3×H×W normalized pre-flood input.
    pub pre: Raster,
    /// 3×H×W normalized post-flood input.
    pub post: Raster,
    pub target: Raster,
    pub mask: Raster,
}

impl Sample {
    pub fn size(&self) -> (usize, usize) {
        (self.target.height(), self.target.width())
    }
}

/// Conditions a tile: dB inputs are clipped and normalized (already
/// normalized inputs pass through), the blank channel is appended and labels
/// are encoded.
pub fn condition_tile(tile: &TilePair, clip: &ClipSpec) -> Result<Sample> {
    let to_input = |r: &Raster| -> Result<Raster> {
        let norm = match r.kind() {
            RasterKind::BackscatterDb => clip_normalize(r, clip)?,
            RasterKind::Normalized => r.clone(),
            RasterKind::Label => {
                return Err(Error::Validation(format!(
                    "tile {}: label raster given as an image",
                    tile.id
                )))
            }
        };
        assemble_input(&norm.channel_raster(0)?, &norm.channel_raster(1)?)
    };
    let (target, mask) = encode_labels(&tile.label)?;
    Ok(Sample {
        id: tile.id.clone(),
        pre: to_input(&tile.pre)?,
        post: to_input(&tile.post)?,
        target,
        mask,
    })
}
