//! The `stgan` command line: synth, train, translate, evaluate, reveal.
//!
//! Exit codes: 0 success, 2 configuration or flag error, 3 training
//! divergence, 4 I/O or data error, 5 checkpoint mismatch or corruption.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StganError};
use crate::inference::{self, Tiling};
use crate::ingest::{self, BitDepth, PatchOptions};
use crate::metrics;
use crate::synthetic::{self, SynthConfig, Transform};
use crate::trainer::{self, ModelBundle, TrainOptions};
use crate::types::{Direction, Domain, OutputMode, TrainConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_CHECKPOINT: u8 = 5;

pub const U_DIR: &str = "u";
pub const V_DIR: &str = "v";
pub const SYNTH_SIDECAR: &str = "synth.json";
pub const DATASET_MANIFEST: &str = "dataset.json";
pub const TRAIN_CONFIG_OUT: &str = "config.json";
pub const TRANSLATE_MANIFEST: &str = "manifest.json";
pub const PRED_SUFFIX: &str = "_pred";

#[derive(Parser, Debug)]
#[command(name = "stgan", version, about = "Spatial-temporal video translation between paired microscopy channels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a paired synthetic movie (U and V frame directories).
    Synth(SynthArgs),
    /// Train the six networks on a paired movie.
    Train(TrainArgs),
    /// Translate a frame directory with a trained checkpoint.
    Translate(TranslateArgs),
    /// Compare predicted frames to real frames (MSE, SSIM, PSNR).
    Evaluate(EvaluateArgs),
    /// Predict the V channel of a U movie and write it as `*_pred` frames.
    Reveal(RevealArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML file with synthetic-data keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives `u/`, `v/` and `synth.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of blobs [default: 6]
    #[arg(long)]
    pub n_blobs: Option<usize>,
    /// Blob standard deviation in pixels [default: 3]
    #[arg(long)]
    pub blob_sigma: Option<f64>,
    /// Per-axis speed bound in px/frame [default: 2]
    #[arg(long)]
    pub velocity_range: Option<f64>,
    /// Frame side in pixels [default: 128]
    #[arg(long)]
    pub frame_size: Option<usize>,
    /// Number of frames T [default: 60]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frames by which V lags U [default: 0]
    #[arg(long)]
    pub lag: Option<usize>,
    /// identity, halo, blur or threshold [default: identity]
    #[arg(long)]
    pub transform: Option<String>,
    /// Weight of the causal component in V [default: 1]
    #[arg(long)]
    pub strength: Option<f64>,
    /// Additive noise standard deviation, model units [default: 0]
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write 16-bit instead of 8-bit PNG frames.
    #[arg(long)]
    pub sixteen_bit: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML file with training keys; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of U-domain frames.
    #[arg(long)]
    pub u: PathBuf,
    /// Directory of V-domain frames.
    #[arg(long)]
    pub v: PathBuf,
    /// Output directory for checkpoints and the loss log.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint up to `steps`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Suppress the periodic progress line.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Args, Debug, Default)]
pub struct TrainOverrides {
    /// Causal duration in frames [default: 3]
    #[arg(long)]
    pub tau: Option<usize>,
    /// Time shift; positive means V lags U [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<i64>,
    /// Spatial reconstruction weight [default: 100]
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Temporal reconstruction weight [default: 10]
    #[arg(long)]
    pub lambda_t: Option<f64>,
    /// Adam learning rate [default: 0.0002]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Windows per batch [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Total optimization steps [default: 1000]
    #[arg(long)]
    pub steps: Option<u64>,
    /// Square crop side [default: 128]
    #[arg(long)]
    pub crop_size: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train only the spatial generators (temporal losses fixed at 0).
    #[arg(long)]
    pub spatial_only: bool,
    /// spatial or averaged [default: averaged]
    #[arg(long)]
    pub output_mode: Option<OutputMode>,
    /// U-Net depth [default: 7]
    #[arg(long)]
    pub gen_depth: Option<usize>,
    /// U-Net base width [default: 64]
    #[arg(long)]
    pub gen_width: Option<usize>,
    /// Discriminator base width [default: 64]
    #[arg(long)]
    pub disc_width: Option<usize>,
    /// Condition discriminators on the source frame.
    #[arg(long)]
    pub conditional_discriminator: bool,
    /// Training windows [default: 4000]
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Validation windows [default: 1000]
    #[arg(long)]
    pub n_val: Option<usize>,
    /// Take crop origins from a regular grid.
    #[arg(long)]
    pub grid_origins: bool,
    /// Steps between checkpoints [default: 500]
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Steps between progress lines [default: 50]
    #[arg(long)]
    pub log_every: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of source-domain frames.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// u2v or v2u [default: u2v]
    #[arg(long, default_value = "u2v")]
    pub direction: String,
    /// spatial or averaged [default: averaged]
    #[arg(long, default_value = "averaged")]
    pub mode: String,
    /// Translate in tiles of this side instead of whole frames.
    #[arg(long)]
    pub tile: Option<usize>,
    /// Tile overlap in pixels [default: 32]
    #[arg(long, default_value_t = inference::DEFAULT_OVERLAP)]
    pub overlap: usize,
    /// Suffix appended to output frame names [default: none]
    #[arg(long, default_value = "")]
    pub suffix: String,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory of predicted frames.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of real frames.
    #[arg(long)]
    pub real: PathBuf,
    /// Report path; JSON is written here and per-frame CSV beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RevealArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Directory of U-domain frames recorded with the other channels.
    #[arg(long)]
    pub input: PathBuf,
    /// Where the `*_pred` frames go; defaults to the input directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// spatial or averaged [default: averaged]
    #[arg(long, default_value = "averaged")]
    pub mode: String,
}

/// Exit code for an error.
pub fn exit_code(err: &StganError) -> u8 {
    use StganError::*;
    match err {
        NanLoss(_) => EXIT_DIVERGED,
        VersionMismatch(_) | CorruptFile(_) => EXIT_CHECKPOINT,
        Io(_) | Image { .. } | EmptyDirectory(_) | MixedDimensions(_) | UnsupportedBitDepth(_)
        | NonContiguousIndices { .. } | LengthMismatch(..) | FrameTooSmall { .. } | SequenceTooShort { .. }
        | Shape(_) | InvalidFrame(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Translate(a) => cmd_translate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Reveal(a) => cmd_reveal(&a),
    }
}

/// Reads a TOML config file into `T`; unknown keys are rejected by name.
pub fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| {
        let key = e.message().split('`').nth(1).unwrap_or("config").to_string();
        StganError::config(key, e.message().trim().to_string())
    })
}

fn parse_transform(s: &str) -> Result<Transform> {
    match s {
        "identity" => Ok(Transform::Identity),
        "halo" => Ok(Transform::Halo),
        "blur" => Ok(Transform::Blur),
        "threshold" => Ok(Transform::Threshold),
        other => Err(StganError::config("transform", format!("unknown transform `{other}`"))),
    }
}

pub fn synth_config(a: &SynthArgs) -> Result<SynthConfig> {
    let mut c: SynthConfig = read_config(a.config.as_deref())?;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { c.$f = v; })* };
    }
    set!(n_blobs, blob_sigma, velocity_range, frame_size, frames, lag, strength, noise_sigma, seed);
    if let Some(t) = &a.transform {
        c.transform = parse_transform(t)?;
    }
    c.validate()?;
    Ok(c)
}

pub fn train_config(path: Option<&Path>, o: &TrainOverrides) -> Result<TrainConfig> {
    let mut c: TrainConfig = read_config(path)?;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = o.$f { c.$f = v; })* };
    }
    set!(
        tau, shift, lambda_s, lambda_t, learning_rate, batch_size, steps, crop_size, seed, output_mode, gen_depth,
        gen_width, disc_width, n_train, n_val, checkpoint_every, log_every
    );
    c.spatial_only |= o.spatial_only;
    c.conditional_discriminator |= o.conditional_discriminator;
    c.grid_origins |= o.grid_origins;
    c.validate()?;
    Ok(c)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = synth_config(a)?;
    let (u, v) = synthetic::generate_pair(&cfg)?;
    let depth = if a.sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
    ingest::write_sequence(&u, &a.out.join(U_DIR), depth, "")?;
    ingest::write_sequence(&v, &a.out.join(V_DIR), depth, "")?;
    write_json(&a.out.join(SYNTH_SIDECAR), &cfg)?;
    println!("wrote {} frame pairs to {}", cfg.frames, a.out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = train_config(a.config.as_deref(), &a.overrides)?;
    let u = ingest::load_sequence(&a.u, Domain::U)?;
    let v = ingest::load_sequence(&a.v, Domain::V)?;
    let (u, v) = ingest::align_time_shift(&u, &v, cfg.shift)?;
    let opts = PatchOptions {
        crop: cfg.crop_size,
        n_train: cfg.n_train,
        n_val: cfg.n_val,
        tau: cfg.tau,
        seed: cfg.seed,
        grid: cfg.grid_origins,
    };
    let (train_set, val_set) = ingest::extract_patches(&u, &v, &opts)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join(DATASET_MANIFEST), &ingest::manifest(&train_set, &val_set, cfg.grid_origins))?;
    write_json(&a.out.join(TRAIN_CONFIG_OUT), &cfg)?;
    let mut bundle = match &a.resume {
        Some(path) => {
            let mut b = trainer::load_checkpoint_for(path, &cfg)?;
            b.config.steps = cfg.steps;
            b
        }
        None => ModelBundle::new(&cfg)?,
    };
    let opts = TrainOptions {
        out_dir: Some(a.out.clone()),
        progress: !a.quiet,
    };
    trainer::train(&mut bundle, &train_set, &opts)?;
    println!(
        "trained to step {}; checkpoint {}",
        bundle.step,
        a.out.join(trainer::FINAL_CHECKPOINT).display()
    );
    Ok(())
}

/// One output frame as recorded in a translation manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub index: usize,
    pub file: String,
    /// `"spatial"`, `"averaged"` or `"spatial-fallback"`.
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslateManifest {
    pub checkpoint: String,
    pub checkpoint_digest: String,
    pub config_digest: String,
    pub direction: Direction,
    pub mode: OutputMode,
    pub tau: usize,
    pub input: String,
    pub frames: Vec<ManifestFrame>,
}

fn translate_to_dir(
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    direction: Direction,
    mode: OutputMode,
    tiling: Tiling,
    suffix: &str,
) -> Result<TranslateManifest> {
    let digest = trainer::file_digest(checkpoint)?;
    let bundle = trainer::load_checkpoint(checkpoint)?;
    let (seq, depth) = ingest::load_sequence_with_depth(input, direction.source())?;
    let tr = inference::translate_with(&bundle, &seq, direction, mode, tiling)?;
    let paths = ingest::write_sequence(&tr.sequence, out, depth, suffix)?;
    let frames = paths
        .iter()
        .zip(&tr.spatial_fallback)
        .enumerate()
        .map(|(i, (p, fallback))| ManifestFrame {
            index: i,
            file: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            output: match (mode, fallback) {
                (OutputMode::Spatial, _) => "spatial",
                (OutputMode::Averaged, true) => "spatial-fallback",
                (OutputMode::Averaged, false) => "averaged",
            }
            .into(),
        })
        .collect();
    Ok(TranslateManifest {
        checkpoint: checkpoint.display().to_string(),
        checkpoint_digest: digest,
        config_digest: bundle.config_digest(),
        direction,
        mode,
        tau: bundle.config.tau,
        input: input.display().to_string(),
        frames,
    })
}

pub fn cmd_translate(a: &TranslateArgs) -> Result<()> {
    let direction: Direction = a.direction.parse()?;
    let mode: OutputMode = a.mode.parse()?;
    let tiling = match a.tile {
        Some(tile) => Tiling::Tiled {
            tile,
            overlap: a.overlap,
        },
        None => Tiling::Auto,
    };
    let manifest = translate_to_dir(&a.checkpoint, &a.input, &a.out, direction, mode, tiling, &a.suffix)?;
    write_json(&a.out.join(TRANSLATE_MANIFEST), &manifest)?;
    println!("translated {} frames ({direction}, {mode})", manifest.frames.len());
    Ok(())
}

pub fn cmd_reveal(a: &RevealArgs) -> Result<()> {
    let mode: OutputMode = a.mode.parse()?;
    let out = a.out.clone().unwrap_or_else(|| a.input.clone());
    let manifest = translate_to_dir(&a.checkpoint, &a.input, &out, Direction::U2V, mode, Tiling::Auto, PRED_SUFFIX)?;
    write_json(&out.join("reveal_manifest.json"), &manifest)?;
    println!("wrote {} predicted frames to {}", manifest.frames.len(), out.display());
    Ok(())
}

/// CSV path written alongside a JSON report path.
pub fn csv_path(report: &Path) -> PathBuf {
    report.with_extension("csv")
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let pred = ingest::load_sequence(&a.pred, Domain::V)?;
    let real = ingest::load_sequence(&a.real, Domain::V)?;
    let report = metrics::evaluate_sequences(&pred, &real)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_json(&a.out, &report)?;
    fs::write(csv_path(&a.out), report.to_csv())?;
    let agg = &report.aggregate;
    println!(
        "mse {:.6} ssim {:.4} psnr {:.2} over {} frames",
        agg.mse.mean,
        agg.ssim.mean,
        agg.psnr.mean,
        report.per_frame.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&StganError::NanLoss("d_g".into())), EXIT_DIVERGED);
        assert_eq!(exit_code(&StganError::CorruptFile("x".into())), EXIT_CHECKPOINT);
        assert_eq!(exit_code(&StganError::config("tau", "bad")), EXIT_CONFIG);
        assert_eq!(exit_code(&StganError::LengthMismatch(1, 2)), EXIT_IO);
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        fs::write(&path, "tau = 4\nsteps = 20\nlambda_s = 50.0\n").unwrap();
        let o = TrainOverrides {
            steps: Some(7),
            spatial_only: true,
            ..TrainOverrides::default()
        };
        let c = train_config(Some(&path), &o).unwrap();
        assert_eq!((c.tau, c.steps, c.lambda_s, c.spatial_only), (4, 7, 50.0, true));
        assert_eq!((c.lambda_t, c.learning_rate, c.batch_size, c.crop_size), (10.0, 2e-4, 8, 128));

        fs::write(&path, "tua = 4\n").unwrap();
        match train_config(Some(&path), &TrainOverrides::default()) {
            Err(StganError::Config { key, .. }) => assert_eq!(key, "tua"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synth_lag_error_names_key() {
        let a = Cli::try_parse_from(["stgan", "synth", "--out", "x", "--frames", "5", "--lag", "5"]).unwrap();
        let Command::Synth(a) = a.command else { panic!() };
        let err = synth_config(&a).unwrap_err();
        assert!(err.to_string().contains("lag"), "{err}");
        assert_eq!(exit_code(&err), EXIT_CONFIG);
    }

    #[test]
    fn bad_flags_exit_two() {
        assert_eq!(run(["stgan", "translate", "--bogus"]), EXIT_CONFIG);
        assert_eq!(run(["stgan", "--help"]), EXIT_OK);
    }
}
