//! Synthetic bi-temporal tiles.
//!
//! The pre-flood tile is land backscatter plus speckle. The post-flood tile
//! repeats the land with fresh speckle and sets a few rectangular or
//! elliptical regions to the (darker) water level. Labels mark the regions
//! as water; a random fraction of pixels is flagged missing (−1).

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{write_bras, write_manifest, DatasetManifest, ManifestEntry, Raster, RasterKind, Split};
use crate::seed;

const MAX_LAYOUT_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    /// Tile edge length in pixels.
    pub size: usize,
    pub tiles: usize,
    pub regions_min: usize,
    pub regions_max: usize,
    pub land_vv: f32,
    pub land_vh: f32,
    pub water_vv: f32,
    pub water_vh: f32,
    /// Per-tile uniform offset range (±) applied to both land levels.
    pub land_jitter_db: f32,
    /// Standard deviation of the additive speckle, in dB.
    pub speckle_db: f32,
    /// Fraction of pixels labelled missing.
    pub missing_frac: f32,
    /// Bounds on the water fraction of valid pixels, per tile.
    pub water_frac_lo: f32,
    pub water_frac_hi: f32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            size: 64,
            tiles: 200,
            regions_min: 1,
            regions_max: 3,
            land_vv: -8.0,
            land_vh: -15.0,
            water_vv: -20.0,
            water_vh: -26.0,
            land_jitter_db: 1.5,
            speckle_db: 1.5,
            missing_frac: 0.02,
            water_frac_lo: 0.05,
            water_frac_hi: 0.5,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(format!("synthetic spec: {msg}")));
        if self.size == 0 || self.tiles == 0 {
            return bad(format!("size {} and tiles {} must be positive", self.size, self.tiles));
        }
        if self.water_vv >= self.land_vv || self.water_vh >= self.land_vh {
            return bad(format!(
                "water levels ({}, {}) must be below land levels ({}, {})",
                self.water_vv, self.water_vh, self.land_vv, self.land_vh
            ));
        }
        if self.regions_min > self.regions_max {
            return bad(format!(
                "regions_min {} exceeds regions_max {}",
                self.regions_min, self.regions_max
            ));
        }
        if !(self.speckle_db >= 0.0 && self.land_jitter_db >= 0.0) {
            return bad("speckle and jitter must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.missing_frac) {
            return bad(format!("missing_frac {} must lie in [0, 1)", self.missing_frac));
        }
        if !(0.0 <= self.water_frac_lo && self.water_frac_lo <= self.water_frac_hi && self.water_frac_hi <= 1.0) {
            return bad(format!(
                "water fraction bounds [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                self.water_frac_lo, self.water_frac_hi
            ));
        }
        if self.regions_max == 0 && self.water_frac_lo > 0.0 {
            return bad("zero water regions cannot reach a positive water fraction".into());
        }
        Ok(())
    }

    /// Number of validation tiles: the last fifth by index.
    pub fn val_count(&self) -> usize {
        self.tiles / 5
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { r0: f32, c0: f32, hr: f32, hc: f32 },
    Ellipse { r0: f32, c0: f32, hr: f32, hc: f32 },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let s = size as f32;
        let min_half = (s / 16.0).max(1.0);
        let max_half = (s / 4.0).max(min_half + 1.0);
        let r0 = rng.random_range(0.0..s);
        let c0 = rng.random_range(0.0..s);
        let hr = rng.random_range(min_half..max_half);
        let hc = rng.random_range(min_half..max_half);
        if rng.random_bool(0.5) {
            Shape::Rect { r0, c0, hr, hc }
        } else {
            Shape::Ellipse { r0, c0, hr, hc }
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        let (y, x) = (r as f32 + 0.5, c as f32 + 0.5);
        match *self {
            Shape::Rect { r0, c0, hr, hc } => (y - r0).abs() <= hr && (x - c0).abs() <= hc,
            Shape::Ellipse { r0, c0, hr, hc } => ((y - r0) / hr).powi(2) + ((x - c0) / hc).powi(2) <= 1.0,
        }
    }
}

/// One generated tile: pre/post (VV, VH) in dB and the raw label.
pub(crate) struct SynthTile {
    pub pre: Raster,
    pub post: Raster,
    pub label: Raster,
}

pub(crate) fn generate_tile(spec: &SynthSpec, index: usize) -> Result<SynthTile> {
    let mut rng = seed::rng(spec.seed, seed::STREAM_SYNTH, index as u64);
    let n = spec.size * spec.size;
    let missing: Vec<bool> = (0..n).map(|_| rng.random::<f32>() < spec.missing_frac).collect();
    let valid = missing.iter().filter(|m| !**m).count();

    let regions = rng.random_range(spec.regions_min..=spec.regions_max);
    let mut water = vec![false; n];
    let mut accepted = false;
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let shapes: Vec<Shape> = (0..regions).map(|_| Shape::random(&mut rng, spec.size)).collect();
        for (i, w) in water.iter_mut().enumerate() {
            let (r, c) = (i / spec.size, i % spec.size);
            *w = shapes.iter().any(|s| s.contains(r, c));
        }
        let wet = water.iter().zip(&missing).filter(|(w, m)| **w && !**m).count();
        let frac = if valid == 0 { 0.0 } else { wet as f32 / valid as f32 };
        if (spec.water_frac_lo..=spec.water_frac_hi).contains(&frac) {
            accepted = true;
            break;
        }
    }
    if !accepted {
        return Err(Error::Validation(format!(
            "tile {index}: no region layout met the water fraction bounds [{}, {}] in {MAX_LAYOUT_ATTEMPTS} attempts",
            spec.water_frac_lo, spec.water_frac_hi
        )));
    }

    let jitter = if spec.land_jitter_db > 0.0 {
        rng.random_range(-spec.land_jitter_db..=spec.land_jitter_db)
    } else {
        0.0
    };
    let speckle = Normal::new(0.0f32, spec.speckle_db)
        .map_err(|e| Error::Validation(format!("speckle distribution: {e}")))?;
    let land = [spec.land_vv + jitter, spec.land_vh + jitter];
    let wet_level = [spec.water_vv, spec.water_vh];

    let mut pre = Vec::with_capacity(2 * n);
    for level in land {
        pre.extend((0..n).map(|_| level + speckle.sample(&mut rng)));
    }
    let mut post = Vec::with_capacity(2 * n);
    for band in 0..2 {
        post.extend(water.iter().map(|&w| {
            let level = if w { wet_level[band] } else { land[band] };
            level + speckle.sample(&mut rng)
        }));
    }
    let label = water
        .iter()
        .zip(&missing)
        .map(|(&w, &m)| if m { -1.0 } else if w { 1.0 } else { 0.0 })
        .collect();
    let s = spec.size;
    Ok(SynthTile {
        pre: Raster::new(2, s, s, RasterKind::BackscatterDb, pre)?,
        post: Raster::new(2, s, s, RasterKind::BackscatterDb, post)?,
        label: Raster::new(1, s, s, RasterKind::Label, label)?,
    })
}

/// Writes `spec.tiles` tiles under `out/tiles/` and `out/manifest.tsv`.
///
/// The first four fifths of the tiles (by index) form the training split.
pub fn synth_generate(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out = out.as_ref();
    let tiles_dir = out.join("tiles");
    fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
    let n_train = spec.tiles - spec.val_count();
    let mut entries = Vec::with_capacity(spec.tiles);
    for i in 0..spec.tiles {
        let tile = generate_tile(spec, i)?;
        let id = format!("tile_{i:04}");
        let pre = tiles_dir.join(format!("{id}_pre.bras"));
        let post = tiles_dir.join(format!("{id}_post.bras"));
        let label = tiles_dir.join(format!("{id}_label.bras"));
        write_bras(&tile.pre, &pre)?;
        write_bras(&tile.post, &post)?;
        write_bras(&tile.label, &label)?;
        entries.push(ManifestEntry {
            id,
            split: if i < n_train { Split::Train } else { Split::Val },
            pre,
            post,
            label,
        });
    }
    let manifest = DatasetManifest {
        entries,
        seed: spec.seed,
    };
    write_manifest(&manifest, out.join("manifest.tsv"))?;
    Ok(manifest)
}
