//! `key=value` run configuration for `siamflood train`.
//!
//! Blank lines and `#` comments are ignored. Relative paths resolve against
//! the directory of the config file. Required keys: `manifest`, `out_dir`,
//! `max_epochs`; every other key falls back to its default.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

pub const REQUIRED_KEYS: [&str; 3] = ["manifest", "out_dir", "max_epochs"];

pub const OPTIONAL_KEYS: [&str; 17] = [
    "batch_size",
    "seed",
    "lr_init",
    "lr_floor",
    "plateau_factor",
    "plateau_patience",
    "alpha",
    "gamma",
    "smooth",
    "threshold",
    "input_size",
    "widths",
    "reduction",
    "clip_vv",
    "clip_vh",
    "augment",
    "threads",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    /// Worker threads for the kernels; `None` leaves the pool default.
    pub threads: Option<usize>,
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

/// `lo,hi` pair.
pub fn parse_range(key: &str, value: &str) -> Result<(f32, f32)> {
    match list::<f32>(key, value)?.as_slice() {
        &[lo, hi] => Ok((lo, hi)),
        _ => Err(Error::Config(format!("{key}: expected lo,hi, got {value:?}"))),
    }
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut manifest = None;
        let mut out_dir = None;
        let mut max_epochs = None;
        let mut threads = None;
        let mut t = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
            if !REQUIRED_KEYS.contains(&key) && !OPTIONAL_KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: key {key:?} given twice", lineno + 1)));
            }
            match key {
                "manifest" => manifest = Some(base.join(value)),
                "out_dir" => out_dir = Some(base.join(value)),
                "max_epochs" => max_epochs = Some(num(key, value)?),
                "batch_size" => t.batch_size = num(key, value)?,
                "seed" => t.seed = num(key, value)?,
                "lr_init" => t.lr_init = num(key, value)?,
                "lr_floor" => t.lr_floor = num(key, value)?,
                "plateau_factor" => t.plateau_factor = num(key, value)?,
                "plateau_patience" => t.plateau_patience = num(key, value)?,
                "alpha" => t.loss.alpha = num(key, value)?,
                "gamma" => t.loss.gamma = num(key, value)?,
                "smooth" => t.loss.smooth = num(key, value)?,
                "threshold" => t.threshold = num(key, value)?,
                "input_size" => t.model.input_size = num(key, value)?,
                "widths" => {
                    t.model.widths = list::<usize>(key, value)?
                        .try_into()
                        .map_err(|_| Error::Config(format!("widths: expected four values, got {value:?}")))?
                }
                "reduction" => t.model.reduction = num(key, value)?,
                "clip_vv" => (t.clip.vv_lo, t.clip.vv_hi) = parse_range(key, value)?,
                "clip_vh" => (t.clip.vh_lo, t.clip.vh_hi) = parse_range(key, value)?,
                "augment" => t.augment = boolean(key, value)?,
                "threads" => {
                    let n: usize = num(key, value)?;
                    if n == 0 {
                        return Err(Error::Config("threads must be at least 1".into()));
                    }
                    threads = Some(n);
                }
                _ => unreachable!("key list and match arms agree"),
            }
        }
        let missing = |k: &str| Error::Config(format!("missing required key {k:?}"));
        t.max_epochs = max_epochs.ok_or_else(|| missing("max_epochs"))?;
        let cfg = RunConfig {
            manifest: manifest.ok_or_else(|| missing("manifest"))?,
            out_dir: out_dir.ok_or_else(|| missing("out_dir"))?,
            train: t,
            threads,
        };
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Every key with its effective value, in config-file syntax.
    pub fn render(&self) -> String {
        let t = &self.train;
        let w = t.model.widths;
        let mut lines = vec![
            format!("manifest={}", self.manifest.display()),
            format!("out_dir={}", self.out_dir.display()),
            format!("max_epochs={}", t.max_epochs),
            format!("batch_size={}", t.batch_size),
            format!("seed={}", t.seed),
            format!("lr_init={}", t.lr_init),
            format!("lr_floor={}", t.lr_floor),
            format!("plateau_factor={}", t.plateau_factor),
            format!("plateau_patience={}", t.plateau_patience),
            format!("alpha={}", t.loss.alpha),
            format!("gamma={}", t.loss.gamma),
            format!("smooth={}", t.loss.smooth),
            format!("threshold={}", t.threshold),
            format!("input_size={}", t.model.input_size),
            format!("widths={},{},{},{}", w[0], w[1], w[2], w[3]),
            format!("reduction={}", t.model.reduction),
            format!("clip_vv={},{}", t.clip.vv_lo, t.clip.vv_hi),
            format!("clip_vh={},{}", t.clip.vh_lo, t.clip.vh_hi),
            format!("augment={}", t.augment),
        ];
        if let Some(n) = self.threads {
            lines.push(format!("threads={n}"));
        }
        lines.join("\n") + "\n"
    }
}
