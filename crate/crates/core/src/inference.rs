//! Whole-sequence translation with a trained bundle.
//!
//! Spatial mode applies the spatial generator frame by frame. Averaged mode
//! also runs the target-domain temporal generator over the spatial outputs
//! of the preceding `tau - 1` frames and averages the two predictions; the
//! first `tau - 1` frames fall back to the spatial output.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StganError};
use crate::networks::UNet;
use crate::tensor::Tensor;
use crate::trainer::ModelBundle;
use crate::types::{Direction, Frame, OutputMode, VideoSequence};

/// Frames larger than this many pixels are translated in overlapping tiles.
pub const MAX_WHOLE_PIXELS: usize = 512 * 512;
pub const DEFAULT_TILE: usize = 128;
pub const DEFAULT_OVERLAP: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tiling {
    #[default]
    /// Whole frames up to [`MAX_WHOLE_PIXELS`], tiles beyond.
    Auto,
    Whole,
    Tiled { tile: usize, overlap: usize },
}

/// A translated sequence plus, per frame, whether it fell back to the
/// spatial output in averaged mode.
#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub sequence: VideoSequence,
    pub mode: OutputMode,
    pub direction: Direction,
    pub spatial_fallback: Vec<bool>,
}

fn nets(bundle: &ModelBundle, direction: Direction) -> (&UNet, &UNet) {
    // the temporal net lives in the target domain
    match direction {
        Direction::U2V => (&bundle.g_s, &bundle.g_t),
        Direction::V2U => (&bundle.f_s, &bundle.f_t),
    }
}

fn check_direction(seq: &VideoSequence, direction: Direction) -> Result<()> {
    if seq.domain != direction.source() {
        return Err(StganError::DirectionMismatch(format!(
            "{direction} expects a {:?}-domain sequence, got {:?}",
            direction.source(),
            seq.domain
        )));
    }
    Ok(())
}

fn stack(frames: &[&Frame]) -> Tensor {
    let (h, w) = frames[0].dims();
    let data = frames.iter().flat_map(|f| f.pixels().iter().copied()).collect();
    Tensor::from_vec([1, frames.len(), h, w], data)
}

/// Tile start offsets covering `len` with the last tile flush to the end.
fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * stride).take_while(|s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Blend weight along one axis: ramps up over `overlap` pixels at edges
/// shared with a neighbouring tile, flat at the frame border.
fn ramp(i: usize, tile: usize, overlap: usize, at_start: bool, at_end: bool) -> f64 {
    let mut w: f64 = 1.0;
    if !at_start && overlap > 0 {
        w = w.min((i + 1) as f64 / (overlap + 1) as f64);
    }
    if !at_end && overlap > 0 {
        w = w.min((tile - i) as f64 / (overlap + 1) as f64);
    }
    w
}

/// Runs `net` over a `[1, c, h, w]` input in feathered overlapping tiles.
pub fn tiled_infer(net: &UNet, input: &Tensor, tile: usize, overlap: usize) -> Result<Tensor> {
    let [_, c, h, w] = input.shape();
    if overlap >= tile {
        return Err(StganError::config("overlap", "must be smaller than the tile"));
    }
    let (th, tw) = (tile.min(h), tile.min(w));
    let (ys, xs) = (tile_starts(h, th, overlap), tile_starts(w, tw, overlap));
    let mut acc = vec![0.0; h * w];
    let mut weight = vec![0.0; h * w];
    for (yi, &y0) in ys.iter().enumerate() {
        for (xi, &x0) in xs.iter().enumerate() {
            let mut patch = Vec::with_capacity(c * th * tw);
            for ch in 0..c {
                let plane = input.plane(0, ch);
                for y in y0..y0 + th {
                    patch.extend_from_slice(&plane[y * w + x0..y * w + x0 + tw]);
                }
            }
            let out = net.infer(Tensor::from_vec([1, c, th, tw], patch));
            for y in 0..th {
                let wy = ramp(y, th, overlap, yi == 0, yi + 1 == ys.len());
                for x in 0..tw {
                    let wgt = wy * ramp(x, tw, overlap, xi == 0, xi + 1 == xs.len());
                    let idx = (y0 + y) * w + x0 + x;
                    acc[idx] += wgt * out.data()[y * tw + x];
                    weight[idx] += wgt;
                }
            }
        }
    }
    let data = acc.iter().zip(&weight).map(|(a, w)| a / w).collect();
    Ok(Tensor::from_vec([1, 1, h, w], data))
}

fn run(net: &UNet, input: Tensor, tiling: Tiling) -> Result<Tensor> {
    let (h, w) = (input.h(), input.w());
    match tiling {
        Tiling::Whole => Ok(net.infer(input)),
        Tiling::Auto if h * w <= MAX_WHOLE_PIXELS => Ok(net.infer(input)),
        Tiling::Auto => {
            let tile = DEFAULT_TILE.max(net.spec().multiple());
            tiled_infer(net, &input, tile, DEFAULT_OVERLAP.min(tile / 2))
        }
        Tiling::Tiled { tile, overlap } => tiled_infer(net, &input, tile, overlap),
    }
}

fn to_frame(y: Tensor, h: usize, w: usize, t: usize, like: &Frame) -> Result<Frame> {
    let pixels = y.into_vec().into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Frame::new(pixels, h, w, t, like.domain)
}

/// Spatial outputs for every frame (in the target domain).
fn spatial_frames(net: &UNet, seq: &VideoSequence, tiling: Tiling) -> Result<Vec<Frame>> {
    seq.frames()
        .iter()
        .map(|f| {
            let (h, w) = f.dims();
            let y = run(net, stack(&[f]), tiling)?;
            let pixels = y.into_vec().into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            Frame::new(pixels, h, w, f.t, f.domain.other())
        })
        .collect()
}

pub fn translate_spatial(bundle: &ModelBundle, seq: &VideoSequence, direction: Direction) -> Result<VideoSequence> {
    translate_spatial_with(bundle, seq, direction, Tiling::Auto)
}

pub fn translate_spatial_with(
    bundle: &ModelBundle,
    seq: &VideoSequence,
    direction: Direction,
    tiling: Tiling,
) -> Result<VideoSequence> {
    check_direction(seq, direction)?;
    let frames = spatial_frames(nets(bundle, direction).0, seq, tiling)?;
    VideoSequence::new(frames, direction.target(), seq.source_id.clone())
}

/// Spatial outputs and, for `t >= tau - 1`, the temporal prediction made from
/// the spatial outputs of frames `t - tau + 1 ..= t - 1`.
pub fn averaged_components(
    bundle: &ModelBundle,
    seq: &VideoSequence,
    direction: Direction,
    tiling: Tiling,
) -> Result<(Vec<Frame>, Vec<Option<Frame>>)> {
    check_direction(seq, direction)?;
    let tau = bundle.config.tau;
    if seq.len() < tau {
        return Err(StganError::SequenceTooShort { len: seq.len(), tau });
    }
    let (spatial_net, temporal_net) = nets(bundle, direction);
    let spatial = spatial_frames(spatial_net, seq, tiling)?;
    let mut temporal = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        if t + 1 < tau {
            temporal.push(None);
            continue;
        }
        let inputs: Vec<&Frame> = spatial[t + 1 - tau..t].iter().collect();
        let (h, w) = inputs[0].dims();
        let y = run(temporal_net, stack(&inputs), tiling)?;
        temporal.push(Some(to_frame(y, h, w, t, &spatial[t])?));
    }
    Ok((spatial, temporal))
}

pub fn translate_averaged(bundle: &ModelBundle, seq: &VideoSequence, direction: Direction) -> Result<VideoSequence> {
    Ok(translate(bundle, seq, direction, OutputMode::Averaged)?.sequence)
}

pub fn translate(bundle: &ModelBundle, seq: &VideoSequence, direction: Direction, mode: OutputMode) -> Result<Translation> {
    translate_with(bundle, seq, direction, mode, Tiling::Auto)
}

pub fn translate_with(
    bundle: &ModelBundle,
    seq: &VideoSequence,
    direction: Direction,
    mode: OutputMode,
    tiling: Tiling,
) -> Result<Translation> {
    let (frames, spatial_fallback) = match mode {
        OutputMode::Spatial => {
            let s = translate_spatial_with(bundle, seq, direction, tiling)?;
            (s.into_frames(), vec![false; seq.len()])
        }
        OutputMode::Averaged => {
            let (spatial, temporal) = averaged_components(bundle, seq, direction, tiling)?;
            let fallback = temporal.iter().map(Option::is_none).collect();
            let frames = spatial
                .into_iter()
                .zip(temporal)
                .map(|(s, t)| match t {
                    None => Ok(s),
                    Some(t) => {
                        let (h, w) = s.dims();
                        let pixels = s.pixels().iter().zip(t.pixels()).map(|(a, b)| 0.5 * (a + b)).collect();
                        Frame::new(pixels, h, w, s.t, s.domain)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            (frames, fallback)
        }
    };
    Ok(Translation {
        sequence: VideoSequence::new(frames, direction.target(), seq.source_id.clone())?,
        mode,
        direction,
        spatial_fallback,
    })
}

/// Predicts the V channel for a U-domain movie recorded alongside other
/// channels; the caller writes it next to the real channels.
pub fn translate_third_channel(bundle: &ModelBundle, seq: &VideoSequence, mode: OutputMode) -> Result<Translation> {
    translate(bundle, seq, Direction::U2V, mode)
}
