use proptest::prelude::*;

use stgan::ingest::{denormalize, normalize, BitDepth};
use stgan::losses::{self, LossRecord};
use stgan::metrics;
use stgan::networks::ScoreMap;
use stgan::types::{make_causal_window, Direction, Domain, Frame, VideoSequence};

const SIDE: usize = 16;

fn frame_strategy() -> impl Strategy<Value = Frame> {
    prop::collection::vec(-1.0f64..=1.0, SIDE * SIDE).prop_map(|px| Frame::new(px, SIDE, SIDE, 0, Domain::V).unwrap())
}

fn scores_strategy() -> impl Strategy<Value = ScoreMap> {
    prop::collection::vec(0.0f64..=1.0, 9).prop_map(|s| ScoreMap::new(3, 3, s))
}

fn permuted(f: &Frame, perm: &[usize]) -> Frame {
    let px = perm.iter().map(|&i| f.pixels()[i]).collect();
    Frame::new(px, SIDE, SIDE, f.t, f.domain).unwrap()
}

fn blank(len: usize, domain: Domain) -> VideoSequence {
    let frames = (0..len).map(|t| Frame::filled(0.0, SIDE, SIDE, t, domain).unwrap()).collect();
    VideoSequence::new(frames, domain, "blank").unwrap()
}

#[test]
fn eight_bit_normalization_round_trips_exhaustively() {
    for raw in 0..=255u16 {
        assert_eq!(denormalize(normalize(raw, BitDepth::Eight), BitDepth::Eight), raw);
    }
}

proptest! {
    #[test]
    fn sixteen_bit_normalization_round_trips(raw in any::<u16>()) {
        let x = normalize(raw, BitDepth::Sixteen);
        prop_assert!((-1.0..=1.0).contains(&x));
        prop_assert_eq!(denormalize(x, BitDepth::Sixteen), raw);
    }

    #[test]
    fn metrics_are_symmetric(a in frame_strategy(), b in frame_strategy()) {
        prop_assert_eq!(metrics::mse(&a, &b).unwrap(), metrics::mse(&b, &a).unwrap());
        let (ab, ba) = (metrics::ssim(&a, &b).unwrap(), metrics::ssim(&b, &a).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn psnr_strictly_decreases_in_mse(m in 1e-9f64..1.0, factor in 1.0001f64..100.0) {
        prop_assert!(metrics::psnr_from_mse(m * factor) < metrics::psnr_from_mse(m));
    }

    #[test]
    fn pixelwise_losses_ignore_joint_permutations(
        a in frame_strategy(),
        b in frame_strategy(),
        perm in Just((0..SIDE * SIDE).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let (pa, pb) = (permuted(&a, &perm), permuted(&b, &perm));
        let l1 = losses::spatial_l1(&[a.clone()], &[b.clone()]).unwrap();
        let l1p = losses::spatial_l1(&[pa.clone()], &[pb.clone()]).unwrap();
        prop_assert!((l1 - l1p).abs() < 1e-12);
        let lt = losses::temporal_loss(&a, &b).unwrap();
        let ltp = losses::temporal_loss(&pa, &pb).unwrap();
        prop_assert!((lt - ltp).abs() < 1e-12);
    }

    #[test]
    fn loss_signs_and_bounds(real in scores_strategy(), fake in scores_strategy(), a in frame_strategy(), b in frame_strategy()) {
        // clamping at 1e-7 bounds each log term by ln(1e-7)
        let bound = -2.0 * 1e-7f64.ln();
        let d = losses::discriminator_loss(&real, &fake).unwrap();
        prop_assert!(d <= 0.0 && d >= -bound);
        let g = losses::generator_adv_loss(&[fake.clone()]).unwrap();
        prop_assert!(g >= 0.0 && g <= bound / 2.0);
        prop_assert!(losses::spatial_l1(&[a.clone()], &[b.clone()]).unwrap() >= 0.0);
        prop_assert!(losses::temporal_loss(&a, &b).unwrap() >= 0.0);
        prop_assert!(losses::temporal_spatial_loss(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn total_generator_recomputes_from_components(
        parts in prop::array::uniform8(0.0f64..10.0),
        ls in 0.0f64..200.0,
        lt in 0.0f64..20.0,
    ) {
        let [adv_gs, adv_fs, l1_gs, l1_fs, lt_gt, lt_ft, lts_gtgs, lts_ftfs] = parts;
        let c = losses::GeneratorComponents { adv_gs, adv_fs, l1_gs, l1_fs, lt_gt, lt_ft, lts_gtgs, lts_ftfs };
        let total = losses::full_generator_objective(&c, ls, lt).unwrap();
        let direct = adv_gs + adv_fs + ls * (l1_gs + l1_fs) + lt * (lt_gt + lt_ft + lts_gtgs + lts_ftfs);
        prop_assert!((total - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        let mut values = [0.0; 11];
        values[..10].copy_from_slice(&[adv_gs, adv_fs, 0.0, 0.0, l1_gs, l1_fs, lt_gt, lt_ft, lts_gtgs, lts_ftfs]);
        values[10] = total;
        let record = LossRecord::from_values(values);
        prop_assert_eq!(record.components(), c);
    }

    #[test]
    fn causal_windows_are_consecutive_runs(len in 2usize..12, tau in 2usize..5, shift in 0i64..3, t in 0usize..12, dir in prop::bool::ANY) {
        let dir = if dir { Direction::U2V } else { Direction::V2U };
        let (u, v) = (blank(len, Domain::U), blank(len, Domain::V));
        let last = match dir {
            Direction::U2V => t as i64 - shift,
            Direction::V2U => t as i64 + shift,
        };
        let first = last - tau as i64 + 1;
        let valid = first >= 0 && last < len as i64 && t < len;
        match make_causal_window(&u, &v, t, tau, shift, dir) {
            Ok(w) => {
                prop_assert!(valid);
                let expected: Vec<usize> = (first as usize..=last as usize).collect();
                prop_assert_eq!(w.input_indices(), expected);
                prop_assert_eq!(w.target.t, t);
                prop_assert_eq!(&w, &make_causal_window(&u, &v, t, tau, shift, dir).unwrap());
            }
            Err(_) => prop_assert!(!valid),
        }
    }
}
