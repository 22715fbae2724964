//! Dataset manifests.
//!
//! One tab-separated record per line:
//!
//! ```text
//! <id>\t<split>\t<pre_path>\t<post_path>\t<label_path>
//! ```
//!
//! `split` is `train` or `val`. Relative paths resolve against the
//! manifest's directory. Blank lines and lines starting with `#` are
//! skipped, except that a `# seed=<u64>` comment records the dataset seed.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::{ensure_exists, TilePair};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Validation(format!(
                "unknown split {other:?}, expected train or val"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub pre: PathBuf,
    pub post: PathBuf,
    pub label: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl DatasetManifest {
    /// Parses and validates manifest text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seed = 0;
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("seed=") {
                    seed = v.trim().parse().map_err(|_| {
                        Error::Validation(format!("manifest line {lineno}: bad seed {v:?}"))
                    })?;
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, split, pre, post, label] = fields.as_slice() else {
                return Err(Error::Validation(format!(
                    "manifest line {lineno}: expected 5 tab-separated fields, got {}",
                    fields.len()
                )));
            };
            if id.is_empty() {
                return Err(Error::Validation(format!("manifest line {lineno}: empty id")));
            }
            let split = split
                .parse::<Split>()
                .map_err(|e| Error::Validation(format!("manifest line {lineno}: {e}")))?;
            entries.push(ManifestEntry {
                id: id.to_string(),
                split,
                pre: base.join(pre),
                post: base.join(post),
                label: base.join(label),
            });
        }
        let manifest = DatasetManifest { entries, seed };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks id uniqueness, split disjointness and that every file exists.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for e in &self.entries {
            match seen.insert(e.id.as_str(), e.split) {
                Some(prev) if prev != e.split => {
                    return Err(Error::Validation(format!(
                        "id {} appears in both the {prev} and {} splits",
                        e.id, e.split
                    )))
                }
                Some(_) => {
                    return Err(Error::Validation(format!("duplicate id {}", e.id)));
                }
                None => {}
            }
        }
        for e in &self.entries {
            for path in [&e.pre, &e.post, &e.label] {
                ensure_exists(path)
                    .map_err(|_| Error::Validation(format!("id {}: missing file {}", e.id, path.display())))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    DatasetManifest::parse(&text, base)
}

/// Writes `entries` with paths made relative to the manifest directory when
/// they live below it.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut text = format!("# seed={}\n", manifest.seed);
    for e in &manifest.entries {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            e.id,
            e.split,
            rel(&e.pre),
            rel(&e.post),
            rel(&e.label)
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Positions (into `manifest.entries`) of one split in iteration order.
///
/// The training split is shuffled by a permutation that depends only on
/// `(seed, epoch)`; the validation split keeps manifest order.
pub fn split_order(manifest: &DatasetManifest, split: Split, seed: u64, epoch: u64) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = manifest
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == split)
        .map(|(i, _)| i)
        .collect();
    if order.is_empty() {
        return Err(Error::Usage(format!("the {split} split is empty")));
    }
    if split == Split::Train {
        order.shuffle(&mut seed::rng(seed, seed::STREAM_SHUFFLE, epoch));
    }
    Ok(order)
}

/// Loads the tiles of one split in [`split_order`] order.
pub fn iterate_split(
    manifest: &DatasetManifest,
    split: Split,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = Result<TilePair>> + '_> {
    let order = split_order(manifest, split, seed, epoch)?;
    Ok(order.into_iter().map(move |i| TilePair::load(&manifest.entries[i])))
}
