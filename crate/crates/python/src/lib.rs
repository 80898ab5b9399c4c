//! Python bindings. Frames cross the boundary as nested lists of rows in
//! model space `[-1, 1]`; sequences are lists of frames.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

use stgan::ingest::{self, PatchOptions};
use stgan::losses::{self, GeneratorComponents};
use stgan::metrics;
use stgan::networks::ScoreMap;
use stgan::synthetic::{self, SynthConfig};
use stgan::trainer::{self, ModelBundle, TrainOptions};
use stgan::types::{self, Direction, Domain, Frame, OutputMode, TrainConfig, VideoSequence};

create_exception!(pystgan, StganError, PyException, "Errors raised by the stgan core.");
create_exception!(pystgan, CheckpointError, StganError, "Corrupt or incompatible checkpoint.");

pub type Rows = Vec<Vec<f64>>;

fn to_py(err: stgan::StganError) -> PyErr {
    use stgan::StganError as E;
    let msg = err.to_string();
    match err {
        E::Io(_) | E::Image { .. } | E::EmptyDirectory(_) => PyIOError::new_err(msg),
        E::VersionMismatch(_) | E::CorruptFile(_) => CheckpointError::new_err(msg),
        E::Config { .. } | E::TauTooSmall(_) | E::Shape(_) | E::InvalidFrame(_) => PyValueError::new_err(msg),
        _ => StganError::new_err(msg),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(format!("bad config JSON: {e}"))
}

fn frame(rows: Rows, t: usize, domain: Domain) -> PyResult<Frame> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("frame rows have unequal lengths"));
    }
    Frame::new(rows.into_iter().flatten().collect(), h, w, t, domain).map_err(to_py)
}

fn rows(f: &Frame) -> Rows {
    f.pixels().chunks(f.width()).map(<[f64]>::to_vec).collect()
}

fn sequence(frames: Vec<Rows>, domain: Domain) -> PyResult<VideoSequence> {
    let frames = frames
        .into_iter()
        .enumerate()
        .map(|(t, r)| frame(r, t, domain))
        .collect::<PyResult<Vec<_>>>()?;
    VideoSequence::new(frames, domain, "python").map_err(to_py)
}

fn sequence_rows(seq: &VideoSequence) -> Vec<Rows> {
    seq.frames().iter().map(rows).collect()
}

fn pair(a: Rows, b: Rows) -> PyResult<(Frame, Frame)> {
    Ok((frame(a, 0, Domain::V)?, frame(b, 0, Domain::V)?))
}

/// Mean squared error in `[0, 1]` units.
#[pyfunction]
pub fn mse(a: Rows, b: Rows) -> PyResult<f64> {
    let (a, b) = pair(a, b)?;
    metrics::mse(&a, &b).map_err(to_py)
}

/// Gaussian-window SSIM in `[0, 1]` units.
#[pyfunction]
pub fn ssim(a: Rows, b: Rows) -> PyResult<f64> {
    let (a, b) = pair(a, b)?;
    metrics::ssim(&a, &b).map_err(to_py)
}

/// PSNR in dB for a `[0, 1]`-unit MSE; `inf` when the MSE is 0.
#[pyfunction]
pub fn psnr_from_mse(mse: f64) -> f64 {
    metrics::psnr_from_mse(mse)
}

fn score_map(scores: Rows) -> PyResult<ScoreMap> {
    let h = scores.len();
    let w = scores.first().map_or(0, Vec::len);
    if h == 0 || scores.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("score map must be a non-empty rectangle"));
    }
    Ok(ScoreMap::new(h, w, scores.into_iter().flatten().collect()))
}

#[pyfunction]
pub fn discriminator_loss(real: Rows, fake: Rows) -> PyResult<f64> {
    losses::discriminator_loss(&score_map(real)?, &score_map(fake)?).map_err(to_py)
}

/// Non-saturating generator loss summed over a window of score maps.
#[pyfunction]
pub fn generator_adv_loss(fakes: Vec<Rows>) -> PyResult<f64> {
    let maps = fakes.into_iter().map(score_map).collect::<PyResult<Vec<_>>>()?;
    losses::generator_adv_loss(&maps).map_err(to_py)
}

#[pyfunction]
pub fn spatial_l1(pred: Vec<Rows>, real: Vec<Rows>) -> PyResult<f64> {
    let p = sequence(pred, Domain::V)?;
    let r = sequence(real, Domain::V)?;
    losses::spatial_l1(p.frames(), r.frames()).map_err(to_py)
}

#[pyfunction]
pub fn temporal_loss(pred_last: Rows, real_last: Rows) -> PyResult<f64> {
    let (a, b) = pair(pred_last, real_last)?;
    losses::temporal_loss(&a, &b).map_err(to_py)
}

/// Weighted objective from the eight generator terms, in the order
/// adv_Gs, adv_Fs, l1_Gs, l1_Fs, lt_Gt, lt_Ft, lts_GtGs, lts_FtFs.
#[pyfunction]
#[pyo3(signature = (components, lambda_s = 100.0, lambda_t = 10.0))]
pub fn full_generator_objective(components: [f64; 8], lambda_s: f64, lambda_t: f64) -> PyResult<f64> {
    let [adv_gs, adv_fs, l1_gs, l1_fs, lt_gt, lt_ft, lts_gtgs, lts_ftfs] = components;
    let c = GeneratorComponents {
        adv_gs,
        adv_fs,
        l1_gs,
        l1_fs,
        lt_gt,
        lt_ft,
        lts_gtgs,
        lts_ftfs,
    };
    losses::full_generator_objective(&c, lambda_s, lambda_t).map_err(to_py)
}

fn direction(s: &str) -> PyResult<Direction> {
    s.parse().map_err(to_py)
}

fn mode(s: &str) -> PyResult<OutputMode> {
    s.parse().map_err(to_py)
}

/// Source-frame indices feeding the window whose target is frame `t`.
#[pyfunction]
#[pyo3(signature = (length, t, tau, shift = 0, direction = "u2v"))]
pub fn causal_window_indices(length: usize, t: usize, tau: usize, shift: i64, direction: &str) -> PyResult<Vec<usize>> {
    let dir = self::direction(direction)?;
    let blank = |domain| {
        let frames = (0..length)
            .map(|i| Frame::filled(0.0, 16, 16, i, domain))
            .collect::<stgan::Result<Vec<_>>>()?;
        VideoSequence::new(frames, domain, "indices")
    };
    let u = blank(Domain::U).map_err(to_py)?;
    let v = blank(Domain::V).map_err(to_py)?;
    let w = types::make_causal_window(&u, &v, t, tau, shift, dir).map_err(to_py)?;
    Ok(w.input_indices())
}

/// Synthetic paired movie from a JSON config (missing keys take defaults).
/// Returns `(u_frames, v_frames)`.
#[pyfunction]
#[pyo3(signature = (config_json = "{}"))]
pub fn generate_pair(config_json: &str) -> PyResult<(Vec<Rows>, Vec<Rows>)> {
    let cfg: SynthConfig = serde_json::from_str(config_json).map_err(json_err)?;
    let (u, v) = synthetic::generate_pair(&cfg).map_err(to_py)?;
    Ok((sequence_rows(&u), sequence_rows(&v)))
}

/// Default training configuration as JSON.
#[pyfunction]
pub fn default_train_config() -> String {
    serde_json::to_string(&TrainConfig::default()).expect("config serializes")
}

/// The six networks with optimizer state.
#[pyclass(name = "Bundle", module = "pystgan")]
pub struct PyBundle {
    inner: ModelBundle,
}

#[pymethods]
impl PyBundle {
    /// Fresh bundle from a JSON training config (missing keys take defaults).
    #[new]
    #[pyo3(signature = (config_json = "{}"))]
    fn new(config_json: &str) -> PyResult<Self> {
        let cfg: TrainConfig = serde_json::from_str(config_json).map_err(json_err)?;
        Ok(PyBundle {
            inner: ModelBundle::new(&cfg).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyBundle {
            inner: trainer::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn tau(&self) -> usize {
        self.inner.config.tau
    }

    #[getter]
    fn config_digest(&self) -> String {
        self.inner.config_digest()
    }

    #[getter]
    fn config_json(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serializes")
    }

    /// Trains on a paired movie until `config.steps`; returns the
    /// total generator loss of each step run.
    fn train(&mut self, u_frames: Vec<Rows>, v_frames: Vec<Rows>) -> PyResult<Vec<f64>> {
        let cfg = self.inner.config.clone();
        let u = sequence(u_frames, Domain::U)?;
        let v = sequence(v_frames, Domain::V)?;
        let (u, v) = ingest::align_time_shift(&u, &v, cfg.shift).map_err(to_py)?;
        let opts = PatchOptions {
            crop: cfg.crop_size,
            n_train: cfg.n_train,
            n_val: 0,
            tau: cfg.tau,
            seed: cfg.seed,
            grid: cfg.grid_origins,
        };
        let (train, _) = ingest::extract_patches(&u, &v, &opts).map_err(to_py)?;
        let records = trainer::train(&mut self.inner, &train, &TrainOptions::default()).map_err(to_py)?;
        Ok(records.iter().map(|r| r.total_generator).collect())
    }

    /// Translates a sequence; returns `(frames, spatial_fallback_flags)`.
    #[pyo3(signature = (frames, direction = "u2v", mode = "averaged"))]
    fn translate(&self, frames: Vec<Rows>, direction: &str, mode: &str) -> PyResult<(Vec<Rows>, Vec<bool>)> {
        let dir = self::direction(direction)?;
        let seq = sequence(frames, dir.source())?;
        let tr = stgan::inference::translate(&self.inner, &seq, dir, self::mode(mode)?).map_err(to_py)?;
        Ok((sequence_rows(&tr.sequence), tr.spatial_fallback))
    }
}

#[pymodule]
pub fn pystgan(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StganError", m.py().get_type::<StganError>())?;
    m.add("CheckpointError", m.py().get_type::<CheckpointError>())?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr_from_mse, m)?)?;
    m.add_function(wrap_pyfunction!(discriminator_loss, m)?)?;
    m.add_function(wrap_pyfunction!(generator_adv_loss, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_l1, m)?)?;
    m.add_function(wrap_pyfunction!(temporal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(full_generator_objective, m)?)?;
    m.add_function(wrap_pyfunction!(causal_window_indices, m)?)?;
    m.add_function(wrap_pyfunction!(generate_pair, m)?)?;
    m.add_function(wrap_pyfunction!(default_train_config, m)?)?;
    m.add_class::<PyBundle>()?;
    Ok(())
}
