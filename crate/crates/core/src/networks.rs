//! U-Net generators and the 70x70 patch discriminator.
//!
//! Spatial generators take one frame; temporal generators take the
//! `tau - 1` preceding frames stacked on the channel axis. Both share the
//! same encoder-decoder body with skip connections. Discriminators score
//! every 70x70 receptive field of a frame with a probability of being real.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamKey, Tape, Var};
use crate::error::{Result, StganError};
use crate::tensor::{ConvGeom, Tensor};
use crate::types::Frame;

const DOWN: ConvGeom = ConvGeom::new(4, 2, 1);
const FLAT: ConvGeom = ConvGeom::new(4, 1, 1);
const LEAKY_SLOPE: f64 = 0.2;
const INIT_STD: f64 = 0.02;

/// Receptive field of one discriminator output cell, in input pixels.
pub const RECEPTIVE_FIELD: usize = 70;
/// Smallest input side the discriminator accepts.
pub const MIN_DISCRIMINATOR_INPUT: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Instance,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub base_width: usize,
    pub norm: Norm,
}

impl UNetSpec {
    pub fn spatial(depth: usize, base_width: usize) -> Self {
        UNetSpec {
            in_channels: 1,
            out_channels: 1,
            depth,
            base_width,
            norm: Norm::Instance,
        }
    }

    /// Temporal generator for causal duration `tau`: `tau - 1` input frames.
    pub fn temporal(tau: usize, depth: usize, base_width: usize) -> Self {
        UNetSpec {
            in_channels: tau - 1,
            ..UNetSpec::spatial(depth, base_width)
        }
    }

    /// Channels produced by encoder level `i`.
    fn width(&self, i: usize) -> usize {
        self.base_width << i.min(3)
    }

    /// Input sides must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << self.depth
    }
}

fn init_conv(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| normal.sample(rng)).collect())
}

fn param_rng(seed: u64, group: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0x5851_f42d_4c95_7f2d_u64.wrapping_mul(group as u64 + 1)))
}

/// Encoder-decoder with skip connections.
///
/// Parameters are stored as `[w, b]` pairs: encoder levels first, then the
/// decoder levels in the same level order.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    spec: UNetSpec,
    group: usize,
    params: Vec<Tensor>,
}

impl UNet {
    pub fn new(spec: UNetSpec, group: usize, seed: u64) -> Self {
        assert!(spec.depth >= 2, "U-Net depth must be at least 2");
        let mut rng = param_rng(seed, group);
        let d = spec.depth;
        let mut params = Vec::with_capacity(4 * d);
        for i in 0..d {
            let c_in = if i == 0 { spec.in_channels } else { spec.width(i - 1) };
            let c_out = spec.width(i);
            params.push(init_conv([c_out, c_in, 4, 4], &mut rng));
            params.push(Tensor::zeros([1, c_out, 1, 1]));
        }
        for i in 0..d {
            let c_in = if i == d - 1 { spec.width(i) } else { 2 * spec.width(i) };
            let c_out = if i == 0 { spec.out_channels } else { spec.width(i - 1) };
            params.push(init_conv([c_in, c_out, 4, 4], &mut rng));
            params.push(Tensor::zeros([1, c_out, 1, 1]));
        }
        UNet { spec, group, params }
    }

    pub fn from_params(spec: UNetSpec, group: usize, params: Vec<Tensor>) -> Result<Self> {
        let reference = UNet::new(spec, group, 0);
        check_param_shapes(&reference.params, &params)?;
        Ok(UNet { spec, group, params })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    fn weights<'a>(&'a self, tape: &mut Tape<'a>, slot: usize) -> (Var, Var) {
        let key = |index| ParamKey {
            group: self.group,
            index,
        };
        let w = tape.param(&self.params[2 * slot], key(2 * slot));
        let b = tape.param(&self.params[2 * slot + 1], key(2 * slot + 1));
        (w, b)
    }

    fn norm<'a>(&self, tape: &mut Tape<'a>, x: Var) -> Var {
        match self.spec.norm {
            Norm::Instance => tape.instance_norm(x),
            Norm::None => x,
        }
    }

    /// Records the forward pass on `tape`. Input is `[n, in_channels, h, w]`
    /// with `h` and `w` multiples of `2^depth`.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Var {
        let [_, c, h, w] = tape.value(x).shape();
        assert_eq!(c, self.spec.in_channels, "U-Net input channel mismatch");
        assert!(
            h % self.spec.multiple() == 0 && w % self.spec.multiple() == 0,
            "U-Net input {h}x{w} not a multiple of {}",
            self.spec.multiple()
        );
        self.level(tape, 0, x)
    }

    fn level<'a>(&'a self, tape: &mut Tape<'a>, i: usize, input: Var) -> Var {
        let d = self.spec.depth;
        let mut h = input;
        if i > 0 {
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        let (w, b) = self.weights(tape, i);
        h = tape.conv2d(h, w, b, DOWN);
        if i > 0 && i < d - 1 {
            h = self.norm(tape, h);
        }
        let inner = if i == d - 1 { h } else { self.level(tape, i + 1, h) };
        let mut o = tape.relu(inner);
        let (w, b) = self.weights(tape, d + i);
        o = tape.conv_transpose2d(o, w, b, DOWN);
        if i == 0 {
            tape.tanh(o)
        } else {
            o = self.norm(tape, o);
            tape.concat(input, o)
        }
    }

    /// Forward pass for arbitrary sides: mirror-pads up to the next multiple
    /// of `2^depth` and crops the output back.
    pub fn forward_padded<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Var {
        let [_, _, h, w] = tape.value(x).shape();
        let m = self.spec.multiple();
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        if (ph, pw) == (h, w) {
            return self.forward(tape, x);
        }
        let (top, left) = ((ph - h) / 2, (pw - w) / 2);
        let padded = tape.reflect_pad(x, top, left, ph, pw);
        let y = self.forward(tape, padded);
        tape.crop(y, top, left, h, w)
    }

    /// Inference on a `[n, c, h, w]` tensor without recording gradients.
    pub fn infer(&self, x: Tensor) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = self.forward_padded(&mut tape, v);
        tape.value(y).clone()
    }
}

/// Patch discriminator: C64-C128-C256-C512 then a one-channel head, with
/// strides 2, 2, 2, 1, 1 and a sigmoid on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchDiscriminator {
    in_channels: usize,
    base_width: usize,
    norm: Norm,
    group: usize,
    params: Vec<Tensor>,
}

impl PatchDiscriminator {
    const GEOMS: [ConvGeom; 5] = [DOWN, DOWN, DOWN, FLAT, FLAT];

    pub fn new(in_channels: usize, base_width: usize, norm: Norm, group: usize, seed: u64) -> Self {
        let mut rng = param_rng(seed, group);
        let widths = Self::widths(in_channels, base_width);
        let mut params = Vec::with_capacity(10);
        for pair in widths.windows(2) {
            params.push(init_conv([pair[1], pair[0], 4, 4], &mut rng));
            params.push(Tensor::zeros([1, pair[1], 1, 1]));
        }
        PatchDiscriminator {
            in_channels,
            base_width,
            norm,
            group,
            params,
        }
    }

    pub fn from_params(
        in_channels: usize,
        base_width: usize,
        norm: Norm,
        group: usize,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let reference = PatchDiscriminator::new(in_channels, base_width, norm, group, 0);
        check_param_shapes(&reference.params, &params)?;
        Ok(PatchDiscriminator {
            params,
            ..reference
        })
    }

    fn widths(in_channels: usize, w: usize) -> [usize; 6] {
        [in_channels, w, 2 * w, 4 * w, 8 * w, 1]
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Score-map size for an input side, or `None` below the minimum.
    pub fn output_side(side: usize) -> Option<usize> {
        if side < MIN_DISCRIMINATOR_INPUT {
            return None;
        }
        Self::GEOMS.iter().try_fold(side, |s, g| g.conv_out(s))
    }

    /// Inclusive range of input rows (or columns) seen by output cell `i`,
    /// before clipping to the frame.
    pub fn receptive_range(i: usize) -> (isize, isize) {
        Self::GEOMS.iter().rev().fold((i as isize, i as isize), |(lo, hi), g| {
            let (s, p, k) = (g.stride as isize, g.pad as isize, g.kernel as isize);
            (lo * s - p, hi * s - p + k - 1)
        })
    }

    /// Records the forward pass; returns scores in (0, 1).
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Var {
        let mut h = x;
        for (i, geom) in Self::GEOMS.iter().enumerate() {
            let key = |index| ParamKey {
                group: self.group,
                index,
            };
            let w = tape.param(&self.params[2 * i], key(2 * i));
            let b = tape.param(&self.params[2 * i + 1], key(2 * i + 1));
            h = tape.conv2d(h, w, b, *geom);
            if i == 4 {
                break;
            }
            if i > 0 && self.norm == Norm::Instance {
                h = tape.instance_norm(h);
            }
            h = tape.leaky_relu(h, LEAKY_SLOPE);
        }
        tape.sigmoid(h)
    }
}

fn check_param_shapes(expected: &[Tensor], got: &[Tensor]) -> Result<()> {
    if expected.len() != got.len() {
        return Err(StganError::shape(format!(
            "expected {} parameter tensors, got {}",
            expected.len(),
            got.len()
        )));
    }
    for (i, (e, g)) in expected.iter().zip(got).enumerate() {
        if e.shape() != g.shape() {
            return Err(StganError::shape(format!(
                "parameter {i}: expected {:?}, got {:?}",
                e.shape(),
                g.shape()
            )));
        }
    }
    Ok(())
}

/// Real-vs-fake probabilities for each patch of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub scores: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), height * width);
        ScoreMap { height, width, scores }
    }

    pub fn uniform(height: usize, width: usize, score: f64) -> Self {
        ScoreMap::new(height, width, vec![score; height * width])
    }
}

fn frames_tensor(frames: &[&Frame]) -> Tensor {
    let (h, w) = frames[0].dims();
    let data = frames.iter().flat_map(|f| f.pixels().iter().copied()).collect();
    Tensor::from_vec([1, frames.len(), h, w], data)
}

fn output_frame(y: Tensor, like: &Frame) -> Result<Frame> {
    let (h, w) = like.dims();
    let pixels = y.into_vec().into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Frame::new(pixels, h, w, like.t, like.domain.other())
}

/// Translates one frame with a spatial generator. The output frame keeps the
/// input's time index and belongs to the other domain.
pub fn spatial_forward(net: &UNet, frame: &Frame) -> Result<Frame> {
    if net.spec.in_channels != 1 {
        return Err(StganError::shape(format!(
            "spatial generator needs 1 input channel, network has {}",
            net.spec.in_channels
        )));
    }
    output_frame(net.infer(frames_tensor(&[frame])), frame)
}

/// Predicts the next frame from the `tau - 1` preceding ones. The output
/// stays in the input domain, at the index following the last input.
pub fn temporal_forward(net: &UNet, frames: &[Frame]) -> Result<Frame> {
    let expected = net.spec.in_channels;
    if frames.len() != expected {
        return Err(StganError::Arity {
            expected,
            got: frames.len(),
        });
    }
    let dims = frames[0].dims();
    if frames.iter().any(|f| f.dims() != dims) {
        return Err(StganError::shape("temporal inputs must share one shape"));
    }
    let refs: Vec<&Frame> = frames.iter().collect();
    let y = net.infer(frames_tensor(&refs));
    let last = frames.last().expect("at least one frame");
    let pixels = y.into_vec().into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Frame::new(pixels, dims.0, dims.1, last.t + 1, last.domain)
}

/// Scores one frame (unconditional discriminator).
pub fn discriminator_forward(net: &PatchDiscriminator, frame: &Frame) -> Result<ScoreMap> {
    discriminator_forward_frames(net, &[frame])
}

/// Scores a stack of frames on the channel axis; the conditional
/// discriminator takes `[source, judged]`.
pub fn discriminator_forward_frames(net: &PatchDiscriminator, frames: &[&Frame]) -> Result<ScoreMap> {
    if frames.len() != net.in_channels {
        return Err(StganError::Arity {
            expected: net.in_channels,
            got: frames.len(),
        });
    }
    let (h, w) = frames[0].dims();
    let (Some(oh), Some(ow)) = (PatchDiscriminator::output_side(h), PatchDiscriminator::output_side(w)) else {
        return Err(StganError::InputTooSmall {
            height: h,
            width: w,
            min: MIN_DISCRIMINATOR_INPUT,
        });
    };
    let mut tape = Tape::new();
    let x = tape.constant(frames_tensor(frames));
    let y = net.forward(&mut tape, x);
    Ok(ScoreMap::new(oh, ow, tape.value(y).data().to_vec()))
}
