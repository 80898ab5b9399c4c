//! Adversarial, reconstruction and composed temporal-spatial objectives.
//!
//! Reductions are per-pixel (or per-score-cell) means, summed over the
//! window frames where the objective sums over time. The plain functions
//! here operate on frames and score maps; [`tape`] records the same
//! quantities on an autograd tape for training.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StganError};
use crate::networks::ScoreMap;
use crate::types::Frame;

/// Scores are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const SCORE_EPS: f64 = 1e-7;

/// One training step's objective components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub adv_gs: f64,
    pub adv_fs: f64,
    pub d_g: f64,
    pub d_f: f64,
    pub l1_gs: f64,
    pub l1_fs: f64,
    pub lt_gt: f64,
    pub lt_ft: f64,
    pub lts_gtgs: f64,
    pub lts_ftfs: f64,
    pub total_generator: f64,
}

impl LossRecord {
    pub const FIELDS: [&'static str; 11] = [
        "adv_gs",
        "adv_fs",
        "d_g",
        "d_f",
        "l1_gs",
        "l1_fs",
        "lt_gt",
        "lt_ft",
        "lts_gtgs",
        "lts_ftfs",
        "total_generator",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.adv_gs,
            self.adv_fs,
            self.d_g,
            self.d_f,
            self.l1_gs,
            self.l1_fs,
            self.lt_gt,
            self.lt_ft,
            self.lts_gtgs,
            self.lts_ftfs,
            self.total_generator,
        ]
    }

    pub fn from_values(v: [f64; 11]) -> Self {
        LossRecord {
            adv_gs: v[0],
            adv_fs: v[1],
            d_g: v[2],
            d_f: v[3],
            l1_gs: v[4],
            l1_fs: v[5],
            lt_gt: v[6],
            lt_ft: v[7],
            lts_gtgs: v[8],
            lts_ftfs: v[9],
            total_generator: v[10],
        }
    }

    pub fn components(&self) -> GeneratorComponents {
        GeneratorComponents {
            adv_gs: self.adv_gs,
            adv_fs: self.adv_fs,
            l1_gs: self.l1_gs,
            l1_fs: self.l1_fs,
            lt_gt: self.lt_gt,
            lt_ft: self.lt_ft,
            lts_gtgs: self.lts_gtgs,
            lts_ftfs: self.lts_ftfs,
        }
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::FIELDS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(name, _)| *name)
    }
}

/// The eight generator-side terms of the full objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GeneratorComponents {
    pub adv_gs: f64,
    pub adv_fs: f64,
    pub l1_gs: f64,
    pub l1_fs: f64,
    pub lt_gt: f64,
    pub lt_ft: f64,
    pub lts_gtgs: f64,
    pub lts_ftfs: f64,
}

fn clamp(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(StganError::NanLoss(name.to_string()))
    }
}

fn check_scores(name: &str, map: &ScoreMap) -> Result<()> {
    if map.scores.iter().any(|s| !s.is_finite()) {
        return Err(StganError::NanLoss(name.to_string()));
    }
    Ok(())
}

/// Mean over cells of `ln D(real) + ln(1 - D(fake))`. The discriminator
/// ascends this; it is at most zero.
pub fn discriminator_loss(score_real: &ScoreMap, score_fake: &ScoreMap) -> Result<f64> {
    check_scores("discriminator_loss", score_real)?;
    check_scores("discriminator_loss", score_fake)?;
    let real = score_real.scores.iter().map(|s| clamp(*s).ln()).sum::<f64>() / score_real.scores.len() as f64;
    let fake =
        score_fake.scores.iter().map(|s| (1.0 - clamp(*s)).ln()).sum::<f64>() / score_fake.scores.len() as f64;
    finite("discriminator_loss", real + fake)
}

/// Non-saturating generator loss: per frame the mean of `-ln D(fake)`,
/// summed over the window's frames.
pub fn generator_adv_loss(score_fakes: &[ScoreMap]) -> Result<f64> {
    let mut total = 0.0;
    for map in score_fakes {
        check_scores("generator_adv_loss", map)?;
        total += -map.scores.iter().map(|s| clamp(*s).ln()).sum::<f64>() / map.scores.len() as f64;
    }
    finite("generator_adv_loss", total)
}

fn same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(StganError::shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn mean_abs(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

fn mean_sq(a: &Frame, b: &Frame) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// Sum over the window of per-frame mean absolute differences.
pub fn spatial_l1(pred: &[Frame], real: &[Frame]) -> Result<f64> {
    if pred.len() != real.len() {
        return Err(StganError::shape(format!("{} predicted vs {} real frames", pred.len(), real.len())));
    }
    let mut total = 0.0;
    for (p, r) in pred.iter().zip(real) {
        total += mean_abs(p, r)?;
    }
    finite("spatial_l1", total)
}

/// Mean squared error of the next-frame prediction made from real frames.
pub fn temporal_loss(pred_last: &Frame, real_last: &Frame) -> Result<f64> {
    finite("temporal_loss", mean_sq(pred_last, real_last)?)
}

/// Mean squared error of the next-frame prediction made from generated
/// frames. Numerically identical to [`temporal_loss`]; the difference lies in
/// which inputs produced `pred_last`, and hence where gradients flow.
pub fn temporal_spatial_loss(pred_last: &Frame, real_last: &Frame) -> Result<f64> {
    finite("temporal_spatial_loss", mean_sq(pred_last, real_last)?)
}

/// `adv_Gs + adv_Fs + lambda_s (l1_Gs + l1_Fs) + lambda_t (lt_Gt + lt_Ft + lts_GtGs + lts_FtFs)`.
pub fn full_generator_objective(c: &GeneratorComponents, lambda_s: f64, lambda_t: f64) -> Result<f64> {
    let total = c.adv_gs
        + c.adv_fs
        + lambda_s * (c.l1_gs + c.l1_fs)
        + lambda_t * (c.lt_gt + c.lt_ft + c.lts_gtgs + c.lts_ftfs);
    finite("total_generator", total)
}

/// Tape-recorded versions of the objectives over batched tensors.
///
/// Window tensors are laid out `[batch * tau, 1, h, w]` (window-major), so
/// "sum over the window, mean over the batch" equals `tau` times the mean
/// over every element.
pub mod tape {
    use crate::autograd::{Tape, Var};

    use super::SCORE_EPS;

    /// Discriminator objective `tau * (mean ln D(real) + mean ln(1 - D(fake)))`.
    pub fn discriminator(tape: &mut Tape<'_>, real: Var, fake: Var, tau: usize) -> Var {
        let r = tape.mean_log(real, SCORE_EPS);
        let f = tape.mean_log1m(fake, SCORE_EPS);
        tape.linear(&[(r, tau as f64), (f, tau as f64)])
    }

    pub fn generator_adv(tape: &mut Tape<'_>, fake: Var, tau: usize) -> Var {
        let l = tape.mean_log(fake, SCORE_EPS);
        tape.linear(&[(l, -(tau as f64))])
    }

    pub fn spatial_l1(tape: &mut Tape<'_>, pred: Var, real: Var, tau: usize) -> Var {
        let l = tape.mean_abs_diff(pred, real);
        tape.linear(&[(l, tau as f64)])
    }

    pub fn temporal(tape: &mut Tape<'_>, pred: Var, real: Var) -> Var {
        tape.mean_sq_diff(pred, real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Domain;

    fn frame(value: f64) -> Frame {
        Frame::filled(value, 16, 16, 0, Domain::V).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn discriminator_loss_examples() {
        let half = ScoreMap::uniform(3, 3, 0.5);
        assert!(close(discriminator_loss(&half, &half).unwrap(), -1.386_294_361));
        let perfect = discriminator_loss(&ScoreMap::uniform(2, 2, 1.0), &ScoreMap::uniform(2, 2, 0.0)).unwrap();
        assert!(perfect.abs() < 1e-6 && perfect <= 0.0);
        let v = discriminator_loss(&ScoreMap::uniform(1, 1, 0.9), &ScoreMap::uniform(1, 1, 0.1)).unwrap();
        assert!(close(v, -0.210_721_031));
        let nan = ScoreMap::uniform(1, 1, f64::NAN);
        assert!(matches!(discriminator_loss(&nan, &half), Err(StganError::NanLoss(_))));
    }

    #[test]
    fn generator_adv_examples() {
        assert!(close(generator_adv_loss(&[ScoreMap::uniform(2, 2, 0.5)]).unwrap(), 0.693_147_18));
        assert!(generator_adv_loss(&[ScoreMap::uniform(2, 2, 1.0)]).unwrap().abs() < 1e-6);
        let window = vec![ScoreMap::uniform(2, 2, 0.5); 3];
        assert!(close(generator_adv_loss(&window).unwrap(), 2.079_441_54));
    }

    #[test]
    fn spatial_l1_examples() {
        assert_eq!(spatial_l1(&[frame(0.3)], &[frame(0.3)]).unwrap(), 0.0);
        assert!(close(spatial_l1(&[frame(0.2)], &[frame(0.5)]).unwrap(), 0.3));
        let two = spatial_l1(&[frame(0.3), frame(0.1)], &[frame(0.0), frame(0.0)]).unwrap();
        assert!(close(two, 0.4));
        let small = Frame::filled(0.0, 16, 17, 0, Domain::V).unwrap();
        assert!(matches!(spatial_l1(&[small], &[frame(0.0)]), Err(StganError::Shape(_))));
    }

    #[test]
    fn temporal_loss_examples() {
        assert_eq!(temporal_loss(&frame(0.4), &frame(0.4)).unwrap(), 0.0);
        assert!(close(temporal_loss(&frame(0.5), &frame(0.1)).unwrap(), 0.16));
        assert!(close(temporal_spatial_loss(&frame(0.5), &frame(0.1)).unwrap(), 0.16));
        // half the pixels differ by one, half agree
        let mut pix = vec![0.0; 256];
        pix[128..].fill(1.0);
        let a = Frame::new(pix, 16, 16, 0, Domain::V).unwrap();
        assert!(close(temporal_loss(&a, &frame(1.0)).unwrap(), 0.5));
    }

    #[test]
    fn full_objective_examples() {
        let c = GeneratorComponents {
            adv_gs: 0.7,
            adv_fs: 0.7,
            l1_gs: 0.05,
            l1_fs: 0.04,
            lt_gt: 0.01,
            lt_ft: 0.02,
            lts_gtgs: 0.03,
            lts_ftfs: 0.01,
        };
        assert!(close(full_generator_objective(&c, 100.0, 10.0).unwrap(), 11.1));
        assert_eq!(full_generator_objective(&GeneratorComponents::default(), 100.0, 10.0).unwrap(), 0.0);
        assert!(close(full_generator_objective(&c, 0.0, 0.0).unwrap(), 1.4));
        let bad = GeneratorComponents {
            adv_gs: f64::INFINITY,
            ..c
        };
        assert!(matches!(full_generator_objective(&bad, 100.0, 10.0), Err(StganError::NanLoss(_))));
    }

    #[test]
    fn record_round_trips_through_values() {
        let r = LossRecord {
            adv_gs: 1.0,
            lts_ftfs: 2.0,
            total_generator: 3.0,
            ..Default::default()
        };
        assert_eq!(LossRecord::from_values(r.values()), r);
        let nan = LossRecord {
            lt_ft: f64::NAN,
            ..r
        };
        assert_eq!(nan.first_non_finite(), Some("lt_ft"));
    }
}
