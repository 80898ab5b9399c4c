//! Frames, sequences, causal windows and the training configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, StganError};

pub const MIN_FRAME_SIDE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    U,
    V,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::U => Domain::V,
            Domain::V => Domain::U,
        }
    }
}

/// Translation direction between the two channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    U2V,
    V2U,
}

impl Direction {
    pub fn source(self) -> Domain {
        match self {
            Direction::U2V => Domain::U,
            Direction::V2U => Domain::V,
        }
    }

    pub fn target(self) -> Domain {
        self.source().other()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::U2V => "u2v",
            Direction::V2U => "v2u",
        })
    }
}

impl FromStr for Direction {
    type Err = StganError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u2v" => Ok(Direction::U2V),
            "v2u" => Ok(Direction::V2U),
            other => Err(StganError::config("direction", format!("expected u2v or v2u, got `{other}`"))),
        }
    }
}

/// Which of the translation outputs is reported as the final prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    /// Spatial generator output only.
    Spatial,
    /// Mean of the spatial output and the temporal generator applied to
    /// preceding spatial outputs.
    #[default]
    Averaged,
}

impl fmt::Display for OutputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputMode::Spatial => "spatial",
            OutputMode::Averaged => "averaged",
        })
    }
}

impl FromStr for OutputMode {
    type Err = StganError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(OutputMode::Spatial),
            "averaged" => Ok(OutputMode::Averaged),
            other => Err(StganError::config("output_mode", format!("expected spatial or averaged, got `{other}`"))),
        }
    }
}

/// One grayscale frame in model space `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Vec<f64>,
    height: usize,
    width: usize,
    pub t: usize,
    pub domain: Domain,
}

impl Frame {
    pub fn new(pixels: Vec<f64>, height: usize, width: usize, t: usize, domain: Domain) -> Result<Self> {
        if height < MIN_FRAME_SIDE || width < MIN_FRAME_SIDE {
            return Err(StganError::InvalidFrame(format!(
                "{height}x{width} is below the {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE} minimum"
            )));
        }
        if pixels.len() != height * width {
            return Err(StganError::InvalidFrame(format!(
                "{} pixels for a {height}x{width} frame",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite() || p.abs() > 1.0) {
            return Err(StganError::InvalidFrame(format!("pixel value {bad} outside [-1, 1]")));
        }
        Ok(Frame {
            pixels,
            height,
            width,
            t,
            domain,
        })
    }

    pub fn filled(value: f64, height: usize, width: usize, t: usize, domain: Domain) -> Result<Self> {
        Frame::new(vec![value; height * width], height, width, t, domain)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixels mapped to metric space `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| (p + 1.0) * 0.5).collect()
    }

    pub fn crop(&self, top: usize, left: usize, size_h: usize, size_w: usize) -> Result<Frame> {
        if top + size_h > self.height || left + size_w > self.width {
            return Err(StganError::shape(format!(
                "crop {size_h}x{size_w} at ({top}, {left}) exits a {}x{} frame",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(size_h * size_w);
        for y in top..top + size_h {
            pixels.extend_from_slice(&self.pixels[y * self.width + left..y * self.width + left + size_w]);
        }
        Frame::new(pixels, size_h, size_w, self.t, self.domain)
    }
}

/// Ordered frames of one domain with consecutive indices.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    frames: Vec<Frame>,
    pub domain: Domain,
    pub source_id: String,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>, domain: Domain, source_id: impl Into<String>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for (i, f) in frames.iter().enumerate() {
                if f.domain != domain {
                    return Err(StganError::DomainMismatch(format!(
                        "frame {} is {:?} in a {domain:?} sequence",
                        f.t, f.domain
                    )));
                }
                if f.dims() != first.dims() {
                    return Err(StganError::shape("all frames of a sequence must share a shape"));
                }
                if f.t != first.t + i {
                    return Err(StganError::IndexOutOfRange(format!(
                        "frame indices must increase by one; found {} at position {i}",
                        f.t
                    )));
                }
            }
        }
        Ok(VideoSequence {
            frames,
            domain,
            source_id: source_id.into(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::dims)
    }

    /// Frame at 0-based position `i`.
    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    /// Spatial crop applied to every frame.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<VideoSequence> {
        let frames = self
            .frames
            .iter()
            .map(|f| f.crop(top, left, size, size))
            .collect::<Result<Vec<_>>>()?;
        VideoSequence::new(frames, self.domain, self.source_id.clone())
    }
}

/// `tau` consecutive source frames and the target frame they condition.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalWindow {
    pub inputs: Vec<Frame>,
    pub target: Frame,
    pub tau: usize,
    pub shift: i64,
    pub direction: Direction,
}

impl CausalWindow {
    pub fn input_indices(&self) -> Vec<usize> {
        self.inputs.iter().map(|f| f.t).collect()
    }
}

/// Builds the training window for target position `t`.
///
/// U->V conditions `v_t` on `u_{t-s-tau+1} ..= u_{t-s}`; V->U conditions
/// `u_t` on `v_{t+s-tau+1} ..= v_{t+s}`. Positions are 0-based.
pub fn make_causal_window(
    u_seq: &VideoSequence,
    v_seq: &VideoSequence,
    t: usize,
    tau: usize,
    shift: i64,
    direction: Direction,
) -> Result<CausalWindow> {
    if tau < 2 {
        return Err(StganError::TauTooSmall(tau));
    }
    if u_seq.domain != Domain::U || v_seq.domain != Domain::V {
        return Err(StganError::DomainMismatch(format!(
            "expected (U, V) sequences, got ({:?}, {:?})",
            u_seq.domain, v_seq.domain
        )));
    }
    let (source, target) = match direction {
        Direction::U2V => (u_seq, v_seq),
        Direction::V2U => (v_seq, u_seq),
    };
    let last = match direction {
        Direction::U2V => t as i64 - shift,
        Direction::V2U => t as i64 + shift,
    };
    let first = last - tau as i64 + 1;
    if first < 0 || last >= source.len() as i64 {
        return Err(StganError::IndexOutOfRange(format!(
            "source frames {first}..={last} outside 0..{}",
            source.len()
        )));
    }
    if t >= target.len() {
        return Err(StganError::IndexOutOfRange(format!(
            "target frame {t} outside 0..{}",
            target.len()
        )));
    }
    let inputs = (first..=last).map(|i| source.frame(i as usize).clone()).collect();
    Ok(CausalWindow {
        inputs,
        target: target.frame(t).clone(),
        tau,
        shift,
        direction,
    })
}

/// Training hyperparameters. Field names double as config-file keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: usize,
    pub shift: i64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub crop_size: usize,
    pub seed: u64,
    pub spatial_only: bool,
    pub output_mode: OutputMode,
    /// U-Net encoder depth; input sides must be multiples of `2^gen_depth`.
    pub gen_depth: usize,
    pub gen_width: usize,
    pub disc_width: usize,
    /// Feed the source frame alongside the judged frame to the discriminators.
    pub conditional_discriminator: bool,
    pub n_train: usize,
    pub n_val: usize,
    pub grid_origins: bool,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 3,
            shift: 0,
            lambda_s: 100.0,
            lambda_t: 10.0,
            learning_rate: 2e-4,
            batch_size: 8,
            steps: 1000,
            crop_size: 128,
            seed: 0,
            spatial_only: false,
            output_mode: OutputMode::Averaged,
            gen_depth: 7,
            gen_width: 64,
            disc_width: 64,
            conditional_discriminator: false,
            n_train: 4000,
            n_val: 1000,
            grid_origins: false,
            checkpoint_every: 500,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: &str| Err(StganError::config(key, msg));
        if self.tau < 2 {
            return fail("tau", "must be at least 2");
        }
        if !(self.lambda_s >= 0.0) {
            return fail("lambda_s", "must be non-negative");
        }
        if !(self.lambda_t >= 0.0) {
            return fail("lambda_t", "must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate", "must be positive");
        }
        if self.batch_size < 1 {
            return fail("batch_size", "must be at least 1");
        }
        if self.crop_size < crate::networks::MIN_DISCRIMINATOR_INPUT {
            return fail("crop_size", "must be at least 64 (discriminator minimum)");
        }
        if self.gen_depth < 2 {
            return fail("gen_depth", "must be at least 2");
        }
        if self.crop_size % (1 << self.gen_depth) != 0 {
            return fail("crop_size", "must be a multiple of 2^gen_depth");
        }
        if self.gen_width < 1 {
            return fail("gen_width", "must be at least 1");
        }
        if self.disc_width < 1 {
            return fail("disc_width", "must be at least 1");
        }
        if self.n_train < 1 {
            return fail("n_train", "must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(domain: Domain, len: usize) -> VideoSequence {
        let frames = (0..len)
            .map(|t| Frame::filled(t as f64 / len as f64, 16, 16, t, domain).unwrap())
            .collect();
        VideoSequence::new(frames, domain, "test").unwrap()
    }

    #[test]
    fn window_without_shift() {
        let (u, v) = (seq(Domain::U, 60), seq(Domain::V, 60));
        let w = make_causal_window(&u, &v, 5, 3, 0, Direction::U2V).unwrap();
        assert_eq!(w.input_indices(), vec![3, 4, 5]);
        assert_eq!(w.target.t, 5);
        assert_eq!(w.target.domain, Domain::V);
        assert!(w.inputs.iter().all(|f| f.domain == Domain::U));
    }

    #[test]
    fn window_with_shift() {
        let (u, v) = (seq(Domain::U, 60), seq(Domain::V, 60));
        let w = make_causal_window(&u, &v, 5, 3, 2, Direction::U2V).unwrap();
        assert_eq!(w.input_indices(), vec![1, 2, 3]);
        assert_eq!(w.target.t, 5);
        let back = make_causal_window(&u, &v, 5, 3, 2, Direction::V2U).unwrap();
        assert_eq!(back.input_indices(), vec![5, 6, 7]);
        assert_eq!(back.target.domain, Domain::U);
    }

    #[test]
    fn window_errors() {
        let (u, v) = (seq(Domain::U, 60), seq(Domain::V, 60));
        assert!(matches!(
            make_causal_window(&u, &v, 1, 3, 0, Direction::U2V),
            Err(StganError::IndexOutOfRange(_))
        ));
        assert!(matches!(
            make_causal_window(&u, &v, 5, 1, 0, Direction::U2V),
            Err(StganError::TauTooSmall(1))
        ));
        assert!(matches!(
            make_causal_window(&v, &u, 5, 3, 0, Direction::U2V),
            Err(StganError::DomainMismatch(_))
        ));
        assert!(matches!(
            make_causal_window(&u, &v, 58, 3, -2, Direction::U2V),
            Err(StganError::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn window_count_matches_enumeration() {
        for len in 3..=10 {
            let (u, v) = (seq(Domain::U, len), seq(Domain::V, len));
            for tau in 2..=len {
                for s in 0..=(len - tau) as i64 {
                    let mut count = 0;
                    for t in 0..len {
                        if let Ok(w) = make_causal_window(&u, &v, t, tau, s, Direction::U2V) {
                            let idx = w.input_indices();
                            assert_eq!(idx.len(), tau);
                            assert!(idx.windows(2).all(|p| p[1] == p[0] + 1));
                            assert_eq!(*idx.last().unwrap() as i64 + s, t as i64);
                            assert_eq!(w.target.t, t);
                            count += 1;
                        }
                    }
                    assert_eq!(count as i64, len as i64 - tau as i64 + 1 - s, "T={len} tau={tau} s={s}");
                }
            }
        }
    }

    #[test]
    fn window_is_pure() {
        let (u, v) = (seq(Domain::U, 12), seq(Domain::V, 12));
        let a = make_causal_window(&u, &v, 7, 4, 1, Direction::V2U).unwrap();
        let b = make_causal_window(&u, &v, 7, 4, 1, Direction::V2U).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frame_invariants() {
        assert!(Frame::filled(0.0, 15, 16, 0, Domain::U).is_err());
        assert!(Frame::filled(1.5, 16, 16, 0, Domain::U).is_err());
        assert!(Frame::new(vec![f64::NAN; 256], 16, 16, 0, Domain::U).is_err());
        assert!(Frame::filled(-1.0, 16, 16, 0, Domain::U).is_ok());
    }

    #[test]
    fn sequence_rejects_gaps() {
        let a = Frame::filled(0.0, 16, 16, 0, Domain::U).unwrap();
        let b = Frame::filled(0.0, 16, 16, 2, Domain::U).unwrap();
        assert!(VideoSequence::new(vec![a, b], Domain::U, "x").is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lambda_s, 100.0);
        assert_eq!(cfg.lambda_t, 10.0);
        assert_eq!(cfg.learning_rate, 2e-4);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.crop_size, 128);
        cfg.validate().unwrap();
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        match bad.validate() {
            Err(StganError::Config { key, .. }) => assert_eq!(key, "learning_rate"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(cfg.digest(), TrainConfig::default().digest());
        assert_ne!(cfg.digest(), bad.digest());
    }
}
