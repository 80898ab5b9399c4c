//! Paired synthetic videos with a known causal link from U to V.
//!
//! The source channel is a field of Gaussian blobs drifting at constant
//! velocity and reflecting off the frame edges. The target channel is a
//! transform of the source `lag` frames earlier, mixed with an independent
//! blob field and additive noise. Because every ingredient is seeded, the
//! noise-free part of the target is available exactly and serves as the
//! performance ceiling for any translator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StganError};
use crate::types::{Domain, Frame, VideoSequence, MIN_FRAME_SIDE};

/// Intensity of empty space, in `[0, 1]` units.
pub const BACKGROUND: f64 = 0.1;
/// Blob peak amplitudes are drawn from this range (above background).
pub const AMPLITUDE_RANGE: (f64, f64) = (0.5, 0.8);
/// Per-blob sigma is the configured sigma times a factor from this range.
pub const SIGMA_JITTER: (f64, f64) = (0.8, 1.2);
/// Intensity level of the binarizing transform.
pub const THRESHOLD: f64 = 0.35;
pub const HALO_RADIUS: usize = 3;
pub const BLUR_SIGMA: f64 = 2.0;

const INDEPENDENT_STREAM: u64 = 0x1d8e_4e27_c47d_124f;
const NOISE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    /// Grey dilation by a disk minus the original: a ring around each blob.
    Halo,
    Blur,
    /// Binarization; many sources map to the same target.
    Threshold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_blobs: usize,
    /// Blob standard deviation in pixels.
    pub blob_sigma: f64,
    /// Per-axis velocities are uniform in `[-velocity_range, velocity_range]` px/frame.
    pub velocity_range: f64,
    pub frame_size: usize,
    #[serde(alias = "T")]
    pub frames: usize,
    pub lag: usize,
    pub transform: Transform,
    pub strength: f64,
    /// Standard deviation of additive noise in model units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_blobs: 6,
            blob_sigma: 3.0,
            velocity_range: 2.0,
            frame_size: 128,
            frames: 60,
            lag: 0,
            transform: Transform::Identity,
            strength: 1.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(StganError::config(key, msg));
        if self.frames < 1 {
            return fail("frames", "must be at least 1".into());
        }
        if self.lag + 1 >= self.frames {
            return fail("lag", format!("lag {} needs lag + 1 < frames ({})", self.lag, self.frames));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return fail("strength", format!("{} is outside [0, 1]", self.strength));
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma", "must be non-negative".into());
        }
        if !(self.blob_sigma > 0.0) {
            return fail("blob_sigma", "must be positive".into());
        }
        if !(self.velocity_range >= 0.0) {
            return fail("velocity_range", "must be non-negative".into());
        }
        if self.frame_size < MIN_FRAME_SIDE {
            return fail("frame_size", format!("must be at least {MIN_FRAME_SIDE}"));
        }
        Ok(())
    }

    fn source_id(&self) -> String {
        format!("synthetic-seed{}", self.seed)
    }
}

/// A Gaussian blob moving at constant velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, cfg: &SynthConfig, h: usize, w: usize) -> Blob {
        let v = cfg.velocity_range;
        let velocity = |rng: &mut ChaCha8Rng| if v > 0.0 { rng.random_range(-v..=v) } else { 0.0 };
        Blob {
            x: rng.random_range(0.0..(w - 1) as f64),
            y: rng.random_range(0.0..(h - 1) as f64),
            vx: velocity(rng),
            vy: velocity(rng),
            amplitude: rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
            sigma: cfg.blob_sigma * rng.random_range(SIGMA_JITTER.0..=SIGMA_JITTER.1),
        }
    }

    /// Centre at time `t`, reflected into `[0, w-1] x [0, h-1]`.
    pub fn position(&self, t: usize, h: usize, w: usize) -> (f64, f64) {
        (
            reflect(self.x + self.vx * t as f64, w),
            reflect(self.y + self.vy * t as f64, h),
        )
    }
}

fn reflect(p: f64, len: usize) -> f64 {
    let extent = (len - 1) as f64;
    if extent <= 0.0 {
        return 0.0;
    }
    let m = p.rem_euclid(2.0 * extent);
    if m > extent {
        2.0 * extent - m
    } else {
        m
    }
}

/// Renders blobs at time `t` as `[0, 1]` intensities.
pub fn render_blobs(blobs: &[Blob], t: usize, h: usize, w: usize) -> Vec<f64> {
    let mut img = vec![BACKGROUND; h * w];
    for b in blobs {
        let (cx, cy) = b.position(t, h, w);
        let reach = 5.0 * b.sigma;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(h - 1);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(w - 1);
        let inv = 1.0 / (2.0 * b.sigma * b.sigma);
        for y in y0..=y1 {
            let dy = y as f64 - cy;
            for x in x0..=x1 {
                let dx = x as f64 - cx;
                img[y * w + x] += b.amplitude * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

fn to_model(intensity: &[f64]) -> Vec<f64> {
    intensity.iter().map(|v| (2.0 * v - 1.0).clamp(-1.0, 1.0)).collect()
}

fn to_intensity(frame: &Frame) -> Vec<f64> {
    frame.to_unit()
}

/// Applies a target-channel transform to `[0, 1]` intensities.
pub fn apply_transform(img: &[f64], h: usize, w: usize, transform: Transform) -> Vec<f64> {
    match transform {
        Transform::Identity => img.to_vec(),
        Transform::Halo => {
            let r = HALO_RADIUS as isize;
            let mut out = vec![0.0; h * w];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut m = f64::MIN;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (yy, xx) = (y + dy, x + dx);
                            if dy * dy + dx * dx > r * r || yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize
                            {
                                continue;
                            }
                            m = m.max(img[yy as usize * w + xx as usize]);
                        }
                    }
                    let i = y as usize * w + x as usize;
                    out[i] = m - img[i];
                }
            }
            out
        }
        Transform::Blur => gaussian_blur(img, h, w, BLUR_SIGMA),
        Transform::Threshold => img.iter().map(|v| if *v > THRESHOLD { 1.0 } else { 0.0 }).collect(),
    }
}

fn gaussian_blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let idx = |i: isize, n: usize| crate::tensor::reflect_index(i, n);
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * img[y * w + idx(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[idx(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

fn random_blobs(rng: &mut ChaCha8Rng, cfg: &SynthConfig, h: usize, w: usize) -> Vec<Blob> {
    (0..cfg.n_blobs).map(|_| Blob::random(rng, cfg, h, w)).collect()
}

/// Blobs of the source channel for `cfg`.
pub fn source_blobs(cfg: &SynthConfig) -> Vec<Blob> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    random_blobs(&mut rng, cfg, cfg.frame_size, cfg.frame_size)
}

fn independent_blobs(cfg: &SynthConfig, h: usize, w: usize) -> Vec<Blob> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INDEPENDENT_STREAM);
    random_blobs(&mut rng, cfg, h, w)
}

/// Source (U) video: drifting Gaussian blobs.
pub fn gen_source_video(cfg: &SynthConfig) -> Result<VideoSequence> {
    cfg.validate()?;
    let s = cfg.frame_size;
    let blobs = source_blobs(cfg);
    let frames = (0..cfg.frames)
        .map(|t| Frame::new(to_model(&render_blobs(&blobs, t, s, s)), s, s, t, Domain::U))
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, Domain::U, cfg.source_id())
}

fn check_lag(u: &VideoSequence, cfg: &SynthConfig) -> Result<(usize, usize)> {
    if cfg.lag >= u.len() {
        return Err(StganError::LagTooLarge {
            lag: cfg.lag,
            len: u.len(),
        });
    }
    u.dims().ok_or_else(|| StganError::shape("empty source sequence"))
}

/// The transformed, lagged source for target position `t`, in `[0, 1]` units.
fn causal_part(u: &VideoSequence, cfg: &SynthConfig, t: usize, h: usize, w: usize) -> Vec<f64> {
    let src = u.frame(t.saturating_sub(cfg.lag));
    apply_transform(&to_intensity(src), h, w, cfg.transform)
}

/// Target (V) video:
/// `v_t = strength * T(u_{t-lag}) + (1 - strength) * independent_t + noise`,
/// clipped to the model range. Frames before `lag` use `u_0`.
pub fn derive_target_video(u: &VideoSequence, cfg: &SynthConfig) -> Result<VideoSequence> {
    cfg.validate()?;
    let (h, w) = check_lag(u, cfg)?;
    let indep = independent_blobs(cfg, h, w);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_STREAM);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let s = cfg.strength;
    let mut frames = Vec::with_capacity(u.len());
    for t in 0..u.len() {
        let causal = causal_part(u, cfg, t, h, w);
        let other = if s < 1.0 { render_blobs(&indep, t, h, w) } else { vec![0.0; h * w] };
        let pixels = causal
            .iter()
            .zip(&other)
            .map(|(c, o)| {
                let mut v = 2.0 * (s * c + (1.0 - s) * o) - 1.0;
                if cfg.noise_sigma > 0.0 {
                    v += noise.sample(&mut noise_rng);
                }
                v.clamp(-1.0, 1.0)
            })
            .collect();
        frames.push(Frame::new(pixels, h, w, u.frame(t).t, Domain::V)?);
    }
    VideoSequence::new(frames, Domain::V, u.source_id.clone())
}

/// Per-pixel expectation of an independent blob field over random seeds,
/// ignoring saturation at full intensity.
pub fn independent_field_expectation(cfg: &SynthConfig, h: usize, w: usize) -> Vec<f64> {
    const NODES: usize = 16;
    let mean_amp = 0.5 * (AMPLITUDE_RANGE.0 + AMPLITUDE_RANGE.1);
    // Positions are uniform on [0, len-1] at every time (reflection keeps
    // the uniform law stationary), so the mean blob profile is separable.
    let profile = |x: f64, len: usize, sigma: f64| -> f64 {
        let extent = (len - 1) as f64;
        let phi = |z: f64| 0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2));
        sigma * (2.0 * std::f64::consts::PI).sqrt() / extent * (phi((extent - x) / sigma) - phi(-x / sigma))
    };
    let mut out = vec![0.0; h * w];
    for node in 0..NODES {
        let frac = (node as f64 + 0.5) / NODES as f64;
        let sigma = cfg.blob_sigma * (SIGMA_JITTER.0 + frac * (SIGMA_JITTER.1 - SIGMA_JITTER.0));
        let gx: Vec<f64> = (0..w).map(|x| profile(x as f64, w, sigma)).collect();
        let gy: Vec<f64> = (0..h).map(|y| profile(y as f64, h, sigma)).collect();
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] += gy[y] * gx[x] / NODES as f64;
            }
        }
    }
    out.iter()
        .map(|g| (BACKGROUND + cfg.n_blobs as f64 * mean_amp * g).min(1.0))
        .collect()
}

/// Noise-free, strength-weighted deterministic component of the target:
/// the best prediction available to a translator that sees only U.
pub fn oracle_translate(u: &VideoSequence, cfg: &SynthConfig) -> Result<VideoSequence> {
    cfg.validate()?;
    let (h, w) = check_lag(u, cfg)?;
    if u.source_id.starts_with("synthetic-seed") && u.source_id != cfg.source_id() {
        return Err(StganError::ConfigMismatch(format!(
            "sequence `{}` was not generated with seed {}",
            u.source_id, cfg.seed
        )));
    }
    if (h, w) != (cfg.frame_size, cfg.frame_size) || u.len() != cfg.frames {
        return Err(StganError::ConfigMismatch(format!(
            "sequence is {}x{}x{}, config describes {}x{}x{}",
            u.len(),
            h,
            w,
            cfg.frames,
            cfg.frame_size,
            cfg.frame_size
        )));
    }
    let s = cfg.strength;
    let expected = if s < 1.0 { independent_field_expectation(cfg, h, w) } else { vec![0.0; h * w] };
    let frames = (0..u.len())
        .map(|t| {
            let causal = causal_part(u, cfg, t, h, w);
            let pixels = causal
                .iter()
                .zip(&expected)
                .map(|(c, e)| (2.0 * (s * c + (1.0 - s) * e) - 1.0).clamp(-1.0, 1.0))
                .collect();
            Frame::new(pixels, h, w, u.frame(t).t, Domain::V)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, Domain::V, u.source_id.clone())
}

/// Source and target videos for `cfg`.
pub fn generate_pair(cfg: &SynthConfig) -> Result<(VideoSequence, VideoSequence)> {
    let u = gen_source_video(cfg)?;
    let v = derive_target_video(&u, cfg)?;
    Ok((u, v))
}
