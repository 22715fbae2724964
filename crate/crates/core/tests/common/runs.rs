//! Small training runs shared by the training and acceptance tests.

use std::fs;
use std::path::Path;

use siamflood::model::ModelConfig;
use siamflood::preprocess::{synth_generate, SynthSpec};
use siamflood::raster::DatasetManifest;
use siamflood::train::{load_checkpoint, read_metrics, train, TrainConfig, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_FILE};

pub fn small_dataset(dir: &Path) -> DatasetManifest {
    let spec = SynthSpec {
        size: 16,
        tiles: 20,
        ..SynthSpec::default()
    };
    synth_generate(&spec, dir).unwrap()
}

pub fn small_config(max_epochs: u64) -> TrainConfig {
    TrainConfig {
        max_epochs,
        batch_size: 4,
        seed: 1,
        model: ModelConfig {
            input_size: 16,
            widths: [4, 4, 8, 8],
            reduction: 2,
        },
        ..TrainConfig::default()
    }
}

#[derive(Debug)]
pub struct DeterminismReport {
    /// metrics.csv, best.bfck and last.bfck are byte-identical across two runs.
    pub identical: [bool; 3],
    /// Largest per-metric gap between the resumed and uninterrupted logs.
    pub resume_gap: f64,
}

/// Two uninterrupted runs of `epochs` epochs, plus one stopped halfway and
/// resumed from its last checkpoint.
pub fn determinism(root: &Path, epochs: u64) -> DeterminismReport {
    let manifest = small_dataset(&root.join("data"));
    let cfg = small_config(epochs);
    let (a, b, c) = (root.join("a"), root.join("b"), root.join("c"));
    train(&manifest, &cfg, &a, None, |_| {}).unwrap();
    train(&manifest, &cfg, &b, None, |_| {}).unwrap();
    let identical = [METRICS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT]
        .map(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap());

    train(&manifest, &small_config(epochs / 2), &c, None, |_| {}).unwrap();
    let ck = load_checkpoint(c.join(LAST_CHECKPOINT)).unwrap();
    train(&manifest, &cfg, &c, Some(ck), |_| {}).unwrap();
    let full = read_metrics(a.join(METRICS_FILE)).unwrap();
    let resumed = read_metrics(c.join(METRICS_FILE)).unwrap();
    let mut resume_gap = if full.len() == resumed.len() { 0.0 } else { f64::INFINITY };
    for (x, y) in full.iter().zip(&resumed) {
        assert_eq!(x.epoch, y.epoch);
        for (p, q) in [
            (x.train_loss, y.train_loss),
            (x.val_loss, y.val_loss),
            (x.val_iou, y.val_iou),
            (x.val_f1, y.val_f1),
            (x.lr, y.lr),
        ] {
            resume_gap = resume_gap.max((p - q).abs());
        }
    }
    DeterminismReport { identical, resume_gap }
}
