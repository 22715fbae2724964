//! The `siamflood` command line front end.

mod config;

pub use config::{parse_range, RunConfig, OPTIONAL_KEYS, REQUIRED_KEYS};

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::loss::{binarize, LossConfig};
use crate::model::ModelConfig;
use crate::preprocess::{assemble_input, clip_normalize, synth_generate, temporal_median, ClipSpec, SynthSpec};
use crate::raster::{
    load_manifest, read_bras, write_bras, write_manifest, DatasetManifest, ManifestEntry, Raster, RasterKind, Split,
    TilePair,
};
use crate::tensor::Tensor;
use crate::train::{
    evaluate, load_checkpoint, load_checkpoint_for, load_samples, predict, train, MetricsRow, TrainConfig,
    LAST_CHECKPOINT,
};

/// Name of the file `train` writes its effective configuration to.
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

#[derive(Debug, Parser)]
#[command(name = "siamflood", version, about = "Bi-temporal SAR flood mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic bi-temporal dataset.
    Synth(SynthArgs),
    /// Clip and normalize a backscatter dataset.
    Preprocess(PreprocessArgs),
    /// Train a model from a key=value run config.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a manifest.
    Eval(EvalArgs),
    /// Predict a water map for one tile pair.
    Predict(PredictArgs),
}

fn range_arg(s: &str) -> std::result::Result<(f32, f32), String> {
    parse_range("range", s).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub tiles: usize,
    /// Tile edge length; must be a multiple of 16.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub water_frac_lo: Option<f32>,
    #[arg(long)]
    pub water_frac_hi: Option<f32>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Dataset directory holding manifest.tsv.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// VV clip range in dB as lo,hi.
    #[arg(long, value_parser = range_arg, allow_hyphen_values = true, default_value = "-23,0")]
    pub clip_vv: (f32, f32),
    /// VH clip range in dB as lo,hi.
    #[arg(long, value_parser = range_arg, allow_hyphen_values = true, default_value = "-28,-5")]
    pub clip_vh: (f32, f32),
    /// Directory with one subdirectory of pre-flood acquisitions per tile
    /// id; their per-pixel median replaces the pre-flood image.
    #[arg(long)]
    pub median_stack: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from a checkpoint; without a value, `<out_dir>/last.bfck`.
    #[arg(long, num_args = 0..=1)]
    pub resume: Option<Option<PathBuf>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Run config supplying loss weights, clip ranges, threshold and the
    /// expected architecture.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Also write the scores as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Normalized 2-band pre-flood raster.
    #[arg(long)]
    pub pre: PathBuf,
    /// Normalized 2-band post-flood raster.
    #[arg(long)]
    pub post: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write probabilities instead of the thresholded label map.
    #[arg(long)]
    pub prob: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth_cmd(&a),
        Command::Preprocess(a) => preprocess_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Predict(a) => predict_cmd(&a),
    }
}

fn is_nonempty_dir(path: &Path) -> Result<bool> {
    if !path.exists() {
        return Ok(false);
    }
    if !path.is_dir() {
        return Err(Error::Usage(format!("{} exists and is not a directory", path.display())));
    }
    let mut it = fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    Ok(it.next().is_some())
}

fn fresh_output(path: &Path, force: bool) -> Result<()> {
    if !force && is_nonempty_dir(path)? {
        return Err(Error::Usage(format!(
            "output directory {} is not empty; pass --force to write into it",
            path.display()
        )));
    }
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> Result<()> {
    if a.tiles == 0 {
        return Err(Error::Usage("--tiles must be at least 1".into()));
    }
    if a.size == 0 || a.size % 16 != 0 {
        return Err(Error::Config(format!(
            "--size {} must be a positive multiple of 16 (four 2x2 poolings)",
            a.size
        )));
    }
    fresh_output(&a.out, a.force)?;
    let defaults = SynthSpec::default();
    let spec = SynthSpec {
        size: a.size,
        tiles: a.tiles,
        seed: a.seed,
        water_frac_lo: a.water_frac_lo.unwrap_or(defaults.water_frac_lo),
        water_frac_hi: a.water_frac_hi.unwrap_or(defaults.water_frac_hi),
        ..defaults
    };
    let manifest = synth_generate(&spec, &a.out)?;
    println!(
        "wrote {} tiles ({} train, {} val) to {}",
        manifest.len(),
        manifest.split(Split::Train).count(),
        manifest.split(Split::Val).count(),
        a.out.display()
    );
    Ok(())
}

/// Median pre-flood image of one tile and the number of acquisitions used.
fn median_pre(stack_root: &Path, id: &str) -> Result<(Raster, usize)> {
    let dir = stack_root.join(id);
    let read = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = Vec::new();
    for entry in read {
        let p = entry.map_err(|e| Error::io(&dir, e))?.path();
        if p.extension().is_some_and(|x| x == "bras") {
            files.push(p);
        }
    }
    if files.is_empty() {
        return Err(Error::Usage(format!(
            "median stack for tile {id} in {} holds no .bras files",
            dir.display()
        )));
    }
    files.sort();
    let stack = files.iter().map(read_bras).collect::<Result<Vec<_>>>()?;
    Ok((temporal_median(&stack)?, stack.len()))
}

fn preprocess_cmd(a: &PreprocessArgs) -> Result<()> {
    let clip = ClipSpec {
        vv_lo: a.clip_vv.0,
        vv_hi: a.clip_vv.1,
        vh_lo: a.clip_vh.0,
        vh_hi: a.clip_vh.1,
    };
    clip.validate()?;
    let manifest = load_manifest(a.input.join("manifest.tsv"))?;
    fresh_output(&a.out, a.force)?;
    let tiles_dir = a.out.join("tiles");
    fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
    let mut entries = Vec::with_capacity(manifest.len());
    let mut stack_sizes = Vec::new();
    for e in &manifest.entries {
        let mut tile = TilePair::load(e)?;
        if tile.post.kind() != RasterKind::BackscatterDb {
            return Err(Error::Validation(format!(
                "tile {} is already normalized; preprocess expects backscatter in dB",
                e.id
            )));
        }
        if let Some(root) = &a.median_stack {
            let (pre, count) = median_pre(root, &e.id)?;
            stack_sizes.push(count);
            tile = TilePair::new(tile.id, pre, tile.post, tile.label)?;
        }
        let out = ManifestEntry {
            id: e.id.clone(),
            split: e.split,
            pre: tiles_dir.join(format!("{}_pre.bras", e.id)),
            post: tiles_dir.join(format!("{}_post.bras", e.id)),
            label: tiles_dir.join(format!("{}_label.bras", e.id)),
        };
        write_bras(&clip_normalize(&tile.pre, &clip)?, &out.pre)?;
        write_bras(&clip_normalize(&tile.post, &clip)?, &out.post)?;
        write_bras(&tile.label, &out.label)?;
        entries.push(out);
    }
    let out_manifest = DatasetManifest {
        entries,
        seed: manifest.seed,
    };
    write_manifest(&out_manifest, a.out.join("manifest.tsv"))?;
    println!("normalized {} tiles into {}", out_manifest.len(), a.out.display());
    if !stack_sizes.is_empty() {
        stack_sizes.sort_unstable();
        println!(
            "pre-flood medians over {}..{} acquisitions per tile (median {})",
            stack_sizes[0],
            stack_sizes[stack_sizes.len() - 1],
            stack_sizes[stack_sizes.len() / 2]
        );
    }
    Ok(())
}

fn print_row(r: &MetricsRow) {
    println!(
        "epoch {:>3}  train_loss {:.6}  val_loss {:.6}  val_iou {:.4}  val_f1 {:.4}  lr {:.2e}",
        r.epoch, r.train_loss, r.val_loss, r.val_iou, r.val_f1, r.lr
    );
    let _ = std::io::stdout().flush();
}

fn set_threads(n: Option<usize>) {
    if let Some(n) = n {
        // Fails only when the global pool already exists; keep it then.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let run = RunConfig::load(&a.config)?;
    set_threads(run.threads);
    let cfg: &TrainConfig = &run.train;
    let manifest = load_manifest(&run.manifest)?;
    let resume = match &a.resume {
        None => None,
        Some(p) => {
            let path = p.clone().unwrap_or_else(|| run.out_dir.join(LAST_CHECKPOINT));
            let ck = load_checkpoint_for(&path, &cfg.model)?;
            println!("resuming from {} at step {}", path.display(), ck.step);
            Some(ck)
        }
    };
    fs::create_dir_all(&run.out_dir).map_err(|e| Error::io(&run.out_dir, e))?;
    let echo = run.out_dir.join(RUN_CONFIG_FILE);
    fs::write(&echo, run.render()).map_err(|e| Error::io(&echo, e))?;
    println!(
        "loss: alpha={} (dice weight), 1-alpha={} (focal weight), gamma={}, smooth={}",
        cfg.loss.alpha,
        1.0 - cfg.loss.alpha,
        cfg.loss.gamma,
        cfg.loss.smooth
    );
    let outcome = train(&manifest, cfg, &run.out_dir, resume, print_row)?;
    if let Some(best) = outcome
        .rows
        .iter()
        .min_by(|x, y| x.val_loss.total_cmp(&y.val_loss))
    {
        println!(
            "best epoch {}: val_loss {:.6}, val_iou {:.4}, val_f1 {:.4}",
            best.epoch, best.val_loss, best.val_iou, best.val_f1
        );
    }
    println!("metrics: {}", outcome.metrics_path.display());
    Ok(())
}

/// Scores of one `eval` run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalScores {
    pub split: Split,
    pub tiles: usize,
    pub loss: f64,
    pub iou: f64,
    pub f1: f64,
}

impl EvalScores {
    pub const CSV_HEADER: &'static str = "split,tiles,loss,iou,f1";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6}",
            self.split, self.tiles, self.loss, self.iou, self.f1
        )
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let run = a.config.as_ref().map(RunConfig::load).transpose()?;
    let defaults = TrainConfig::default();
    let train_cfg = run.as_ref().map(|r| &r.train).unwrap_or(&defaults);
    set_threads(run.as_ref().and_then(|r| r.threads));
    let manifest = load_manifest(&a.manifest)?;
    let samples = load_samples(&manifest, split, &train_cfg.clip)?;
    let first = samples
        .first()
        .ok_or_else(|| Error::Usage(format!("split {split} of {} is empty", a.manifest.display())))?;
    let (h, w) = first.size();
    if h != w {
        return Err(Error::dim(format!("tile {} is {h}x{w}; tiles must be square", first.id)));
    }
    let mut ck = match &run {
        Some(r) => {
            let expected = ModelConfig {
                input_size: h,
                ..r.train.model.clone()
            };
            load_checkpoint_for(&a.model, &expected)?
        }
        None => load_checkpoint(&a.model)?,
    };
    ck.params.set_input_size(h)?;
    let loss: LossConfig = train_cfg.loss;
    let threshold = a.threshold.unwrap_or(train_cfg.threshold);
    let batch = a.batch_size.unwrap_or(train_cfg.batch_size).max(1);
    let report = evaluate(&mut ck.params, &samples, batch, &loss, threshold)?;
    let scores = EvalScores {
        split,
        tiles: samples.len(),
        loss: report.loss(&loss),
        iou: report.iou(),
        f1: report.f1(),
    };
    println!(
        "{split}: {} tiles  loss {:.6}  iou {:.4}  f1 {:.4}",
        scores.tiles, scores.loss, scores.iou, scores.f1
    );
    if let Some(path) = &a.csv {
        let text = format!("{}\n{}\n", EvalScores::CSV_HEADER, scores.to_csv());
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn network_input(path: &Path) -> Result<Raster> {
    let r = read_bras(path)?;
    if r.kind() != RasterKind::Normalized || r.channels() != 2 {
        return Err(Error::Validation(format!(
            "{} must be a normalized 2-band raster, got {} band(s) of {:?}",
            path.display(),
            r.channels(),
            r.kind()
        )));
    }
    assemble_input(&r.channel_raster(0)?, &r.channel_raster(1)?)
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(Error::Config(format!("threshold {} outside [0, 1]", a.threshold)));
    }
    let pre = network_input(&a.pre)?;
    let post = network_input(&a.post)?;
    if !pre.same_extent(&post) {
        return Err(Error::dim(format!(
            "pre is {}x{} but post is {}x{}",
            pre.height(),
            pre.width(),
            post.height(),
            post.width()
        )));
    }
    let (h, w) = (pre.height(), pre.width());
    if h != w {
        return Err(Error::dim(format!("input is {h}x{w}; tiles must be square")));
    }
    let mut ck = load_checkpoint(&a.model)?;
    ck.params.set_input_size(h)?;
    let probs = predict(
        &mut ck.params,
        &Tensor::new(&[1, 3, h, w], pre.into_data())?,
        &Tensor::new(&[1, 3, h, w], post.into_data())?,
    )?;
    let out = if a.prob {
        Raster::new(1, h, w, RasterKind::Normalized, probs.data().to_vec())?
    } else {
        Raster::new(1, h, w, RasterKind::Label, binarize(probs.data(), a.threshold))?
    };
    write_bras(&out, &a.out)?;
    let water = probs.data().iter().filter(|&&p| p >= a.threshold).count();
    println!("wrote {} ({water} of {} pixels water)", a.out.display(), h * w);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run(["siamflood", "--help"]), 0);
        assert_eq!(run(["siamflood", "--version"]), 0);
        assert_eq!(run(["siamflood", "train", "--help"]), 0);
    }

    #[test]
    fn bad_usage_exits_one() {
        assert_eq!(run(["siamflood"]), 1);
        assert_eq!(run(["siamflood", "bogus"]), 1);
        assert_eq!(run(["siamflood", "synth", "--out"]), 1);
    }

    #[test]
    fn negative_clip_ranges_parse() {
        let cli = Cli::try_parse_from(["siamflood", "preprocess", "--in", "a", "--out", "b", "--clip-vh", "-30,-4"]).unwrap();
        match cli.command {
            Command::Preprocess(p) => {
                assert_eq!(p.clip_vh, (-30.0, -4.0));
                assert_eq!(p.clip_vv, (-23.0, 0.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn resume_flag_value_is_optional() {
        let cli = Cli::try_parse_from(["siamflood", "train", "--config", "c", "--resume"]).unwrap();
        match cli.command {
            Command::Train(t) => assert_eq!(t.resume, Some(None)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
