//! Rasters, the BRAS binary format, dataset manifests and split iteration.

mod bras;
mod manifest;

pub use bras::{decode_bras, encode_bras, read_bras, write_bras, BRAS_HEADER_LEN, BRAS_MAGIC, BRAS_VERSION};
pub use manifest::{iterate_split, load_manifest, split_order, write_manifest, DatasetManifest, ManifestEntry, Split};

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RasterKind {
    /// SAR backscatter in decibels.
    BackscatterDb,
    /// Values in `[0, 1]`.
    Normalized,
    /// Water labels: 0 dry, 1 water, -1 missing.
    Label,
}

impl RasterKind {
    pub fn code(self) -> u8 {
        match self {
            RasterKind::BackscatterDb => 0,
            RasterKind::Normalized => 1,
            RasterKind::Label => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RasterKind::BackscatterDb),
            1 => Some(RasterKind::Normalized),
            2 => Some(RasterKind::Label),
            _ => None,
        }
    }
}

/// C×H×W grid of `f32`, channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    kind: RasterKind,
    data: Vec<f32>,
}

pub(crate) fn is_label_value(v: f32) -> bool {
    v == 0.0 || v == 1.0 || v == -1.0
}

impl Raster {
    /// Builds a raster and checks the value domain of its kind.
    pub fn new(channels: usize, height: usize, width: usize, kind: RasterKind, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "raster extents must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::dim(format!(
                "raster {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        match kind {
            RasterKind::Label => {
                if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !is_label_value(**v)) {
                    return Err(Error::LabelDomain { index, value });
                }
            }
            RasterKind::Normalized => {
                if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Validation(format!(
                        "normalized raster value {v} at index {i} is outside [0, 1]"
                    )));
                }
            }
            RasterKind::BackscatterDb => {}
        }
        Ok(Raster {
            channels,
            height,
            width,
            kind,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, kind: RasterKind, value: f32) -> Result<Self> {
        Self::new(channels, height, width, kind, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> RasterKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn same_extent(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.plane_len()..(c + 1) * self.plane_len()]
    }

    /// Single channel `c` as its own raster.
    pub fn channel_raster(&self, c: usize) -> Result<Raster> {
        if c >= self.channels {
            return Err(Error::dim(format!(
                "channel {c} out of range for a {}-channel raster",
                self.channels
            )));
        }
        Raster::new(1, self.height, self.width, self.kind, self.channel(c).to_vec())
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Stacks single- or multi-channel rasters of one extent and kind.
    pub fn stack(parts: &[Raster]) -> Result<Raster> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("cannot stack zero rasters".into()))?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if !p.same_extent(first) || p.kind != first.kind {
                return Err(Error::dim(format!(
                    "cannot stack {}x{} {:?} with {}x{} {:?}",
                    p.height, p.width, p.kind, first.height, first.width, first.kind
                )));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Raster::new(channels, first.height, first.width, first.kind, data)
    }
}

/// Aligned pre-flood, post-flood and label rasters of one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct TilePair {
    pub id: String,
    /// VV then VH.
    pub pre: Raster,
    /// VV then VH.
    pub post: Raster,
    pub label: Raster,
}

impl TilePair {
    pub fn new(id: impl Into<String>, pre: Raster, post: Raster, label: Raster) -> Result<Self> {
        let id = id.into();
        if pre.channels() != 2 || post.channels() != 2 {
            return Err(Error::dim(format!(
                "tile {id}: pre/post need 2 channels (VV, VH), got {} and {}",
                pre.channels(),
                post.channels()
            )));
        }
        if label.channels() != 1 || label.kind() != RasterKind::Label {
            return Err(Error::Validation(format!(
                "tile {id}: label must be a single-channel label raster"
            )));
        }
        if !pre.same_extent(&post) || !pre.same_extent(&label) {
            return Err(Error::dim(format!(
                "tile {id}: pre {}x{}, post {}x{}, label {}x{} differ",
                pre.height(),
                pre.width(),
                post.height(),
                post.width(),
                label.height(),
                label.width()
            )));
        }
        if pre.kind() != post.kind() {
            return Err(Error::Validation(format!(
                "tile {id}: pre is {:?} but post is {:?}",
                pre.kind(),
                post.kind()
            )));
        }
        Ok(TilePair { id, pre, post, label })
    }

    pub fn load(entry: &ManifestEntry) -> Result<Self> {
        Self::new(
            entry.id.clone(),
            read_bras(&entry.pre)?,
            read_bras(&entry.post)?,
            read_bras(&entry.label)?,
        )
    }

    pub fn size(&self) -> (usize, usize) {
        (self.label.height(), self.label.width())
    }
}

pub(crate) fn ensure_exists(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Validation(format!("missing file {}", path.display())))
    }
}
