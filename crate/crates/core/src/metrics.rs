//! MSE, PSNR and SSIM in `[0, 1]` metric space, per frame and per sequence.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Result, StganError};
use crate::types::{Direction, Frame, OutputMode, VideoSequence};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DATA_RANGE: f64 = 1.0;

fn check_shapes(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(StganError::shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean squared error of two `[0, 1]` images of equal length.
pub fn mse_unit(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(mse_unit(&a.to_unit(), &b.to_unit()))
}

/// `10 log10(L^2 / mse)`; `+inf` for identical inputs.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (DATA_RANGE * DATA_RANGE / mse).log10()
    }
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two `[0, 1]` images (11x11 Gaussian window, sigma 1.5,
/// no padding).
pub fn ssim_unit(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(StganError::FrameTooSmall { height: h, width: w });
    }
    let k = gaussian_kernel();
    let c1 = (SSIM_K1 * DATA_RANGE).powi(2);
    let c2 = (SSIM_K2 * DATA_RANGE).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = a.dims();
    ssim_unit(&a.to_unit(), &b.to_unit(), h, w)
}

fn serialize_real<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn deserialize_real<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Real {
        Num(f64),
        Text(String),
    }
    match Real::deserialize(d)? {
        Real::Num(v) => Ok(v),
        Real::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub index: usize,
    pub mse: f64,
    pub ssim: f64,
    /// `+inf` when `mse == 0`.
    #[serde(serialize_with = "serialize_real", deserialize_with = "deserialize_real")]
    pub psnr: f64,
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(serialize_with = "serialize_real", deserialize_with = "deserialize_real")]
    pub mean: f64,
    #[serde(serialize_with = "serialize_real", deserialize_with = "deserialize_real")]
    pub std: f64,
}

impl Stat {
    /// Infinite entries make the mean infinite; the spread is zero only when
    /// every entry is the same infinity.
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Stat {
        let n = values.clone().count();
        if n == 0 {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        if !mean.is_finite() {
            let all_inf = values.clone().all(|v| v == mean);
            return Stat {
                mean,
                std: if all_inf { 0.0 } else { f64::NAN },
            };
        }
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Stat { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mse: Stat,
    pub ssim: Stat,
    pub psnr: Stat,
}

/// Conventions the numbers in a report were computed with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConventions {
    pub value_space: String,
    pub data_range: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    pub ssim_boundary: String,
    pub std: String,
}

impl Default for MetricConventions {
    fn default() -> Self {
        MetricConventions {
            value_space: "[0, 1] (model values mapped by (x + 1) / 2)".into(),
            data_range: DATA_RANGE,
            ssim_window: SSIM_WINDOW,
            ssim_sigma: SSIM_SIGMA,
            ssim_k1: SSIM_K1,
            ssim_k2: SSIM_K2,
            ssim_boundary: "valid (no padding)".into(),
            std: "population".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub conventions: MetricConventions,
    pub direction: Option<Direction>,
    pub mode: Option<OutputMode>,
    pub aggregate: Aggregate,
    pub per_frame: Vec<FrameMetrics>,
}

impl MetricReport {
    pub fn from_rows(per_frame: Vec<FrameMetrics>) -> Self {
        let aggregate = Aggregate {
            mse: Stat::of(per_frame.iter().map(|r| r.mse)),
            ssim: Stat::of(per_frame.iter().map(|r| r.ssim)),
            psnr: Stat::of(per_frame.iter().map(|r| r.psnr)),
        };
        MetricReport {
            conventions: MetricConventions::default(),
            direction: None,
            mode: None,
            aggregate,
            per_frame,
        }
    }

    pub fn with_context(mut self, direction: Option<Direction>, mode: Option<OutputMode>) -> Self {
        self.direction = direction;
        self.mode = mode;
        self
    }

    /// Per-frame rows as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,mse,ssim,psnr\n");
        for r in &self.per_frame {
            out.push_str(&format!("{},{:e},{:e},{}\n", r.index, r.mse, r.ssim, fmt_real(r.psnr)));
        }
        out
    }

    /// Parses rows written by [`MetricReport::to_csv`].
    pub fn rows_from_csv(text: &str) -> Result<Vec<FrameMetrics>> {
        let parse = |s: &str| -> Result<f64> {
            match s {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                s => s
                    .parse()
                    .map_err(|_| StganError::config("csv", format!("bad number `{s}`"))),
            }
        };
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() != 4 {
                    return Err(StganError::config("csv", format!("expected 4 columns in `{line}`")));
                }
                Ok(FrameMetrics {
                    index: cols[0]
                        .parse()
                        .map_err(|_| StganError::config("csv", format!("bad index `{}`", cols[0])))?,
                    mse: parse(cols[1])?,
                    ssim: parse(cols[2])?,
                    psnr: parse(cols[3])?,
                })
            })
            .collect()
    }
}

fn fmt_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Per-frame and aggregate metrics of a predicted sequence against the real one.
pub fn evaluate_sequences(pred: &VideoSequence, real: &VideoSequence) -> Result<MetricReport> {
    if pred.len() != real.len() {
        return Err(StganError::LengthMismatch(pred.len(), real.len()));
    }
    let rows = pred
        .frames()
        .iter()
        .zip(real.frames())
        .map(|(p, r)| {
            check_shapes(p, r)?;
            let (h, w) = p.dims();
            let (pu, ru) = (p.to_unit(), r.to_unit());
            let m = mse_unit(&pu, &ru);
            Ok(FrameMetrics {
                index: r.t,
                mse: m,
                ssim: ssim_unit(&pu, &ru, h, w)?,
                psnr: psnr_from_mse(m),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_rows(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(pixels: Vec<f64>, side: usize) -> Frame {
        Frame::new(pixels, side, side, 0, Domain::V).unwrap()
    }

    fn random_frame(rng: &mut ChaCha8Rng, side: usize) -> Frame {
        frame((0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect(), side)
    }

    #[test]
    fn mse_examples() {
        let zero = frame(vec![-1.0; 256], 16);
        let one = frame(vec![1.0; 256], 16);
        assert_eq!(mse(&zero, &zero).unwrap(), 0.0);
        assert_eq!(mse(&zero, &one).unwrap(), 1.0);
        assert_eq!(mse_unit(&[0.0, 0.5], &[0.5, 0.5]), 0.125);
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        let f = frame(vec![0.2; 256], 16);
        assert_eq!(psnr(&f, &f).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_frame(&mut rng, 32);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let zero = frame(vec![-1.0; 256], 16);
        let one = frame(vec![1.0; 256], 16);
        let c1 = (SSIM_K1 * DATA_RANGE).powi(2);
        assert!((ssim(&zero, &one).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!(matches!(
            ssim_unit(&[0.0; 100], &[0.0; 100], 10, 10),
            Err(StganError::FrameTooSmall { .. })
        ));
    }

    #[test]
    fn symmetry_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, b) = (random_frame(&mut rng, 24), random_frame(&mut rng, 24));
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for m in [1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0] {
            let p = psnr_from_mse(m);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn noise_increases_mse_on_average() {
        let normal = rand_distr::Normal::new(0.0, 0.05).unwrap();
        let mut worse = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_frame(&mut rng, 16);
            let a = frame(b.pixels().iter().map(|p| (p * 0.9).clamp(-1.0, 1.0)).collect(), 16);
            let noisy = frame(
                a.pixels()
                    .iter()
                    .map(|p| (p + rand_distr::Distribution::sample(&normal, &mut rng)).clamp(-1.0, 1.0))
                    .collect(),
                16,
            );
            if mse(&noisy, &b).unwrap() >= mse(&a, &b).unwrap() {
                worse += 1;
            }
        }
        assert!(worse >= 18, "{worse}/20");
    }

    #[test]
    fn report_aggregates_and_csv() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames = |rng: &mut ChaCha8Rng| {
            (0..4)
                .map(|t| {
                    let f = random_frame(rng, 16);
                    Frame::new(f.into_pixels(), 16, 16, t, Domain::V).unwrap()
                })
                .collect::<Vec<_>>()
        };
        let real = VideoSequence::new(frames(&mut rng), Domain::V, "r").unwrap();
        let pred = VideoSequence::new(frames(&mut rng), Domain::V, "p").unwrap();
        let report = evaluate_sequences(&pred, &real).unwrap();
        let rows = MetricReport::rows_from_csv(&report.to_csv()).unwrap();
        assert_eq!(rows, report.per_frame);
        assert_eq!(MetricReport::from_rows(rows).aggregate, report.aggregate);

        let same = evaluate_sequences(&real, &real).unwrap();
        assert!(same.per_frame.iter().all(|r| r.mse == 0.0 && (r.ssim - 1.0).abs() < 1e-12));
        assert_eq!(same.aggregate.psnr.mean, f64::INFINITY);
        let json = serde_json::to_string(&same).unwrap();
        assert!(json.contains("\"inf\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.aggregate.psnr.mean, f64::INFINITY);

        let short = VideoSequence::new(real.frames()[..2].to_vec(), Domain::V, "s").unwrap();
        assert!(matches!(evaluate_sequences(&short, &real), Err(StganError::LengthMismatch(2, 4))));
    }
}
