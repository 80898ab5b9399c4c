//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! A [`Tape`] lives for one forward/backward pass. Parameters are borrowed,
//! not copied, so the networks that own them must outlive the tape.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::tensor::{col2im, gemm, im2col, reflect_index, ConvGeom, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Identifies one parameter tensor of one network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub group: usize,
    pub index: usize,
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Param(ParamKey),
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    ConvTranspose2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    InstanceNorm { x: usize, inv_std: Vec<f64> },
    LeakyRelu { x: usize, slope: f64 },
    Relu { x: usize },
    Tanh { x: usize },
    Sigmoid { x: usize },
    Concat { a: usize, b: usize },
    Gather { x: usize, src: Vec<usize> },
    ReflectPad { x: usize, top: usize, left: usize },
    Crop { x: usize, top: usize, left: usize },
    MeanAbsDiff { a: usize, b: usize },
    MeanSqDiff { a: usize, b: usize },
    MeanLog { x: usize, eps: f64 },
    MeanLog1m { x: usize, eps: f64 },
    Linear { terms: Vec<(usize, f64)> },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    frozen: Vec<usize>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: BTreeMap<ParamKey, Tensor>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded node, if any flowed there.
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.nodes[var.0].as_ref()
    }

    pub fn param(&self, key: ParamKey) -> Option<&Tensor> {
        self.params.get(&key)
    }

    pub fn params(&self) -> &BTreeMap<ParamKey, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<ParamKey, Tensor> {
        self.params
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.value(var).item()
    }

    /// A constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    /// An input whose gradient is recorded (see [`Gradients::wrt`]).
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn param(&mut self, value: &'a Tensor, key: ParamKey) -> Var {
        if self.frozen.contains(&key.group) {
            return self.push(Cow::Borrowed(value), Op::Leaf, false);
        }
        self.push(Cow::Borrowed(value), Op::Param(key), true)
    }

    /// Parameters of `group` recorded after this call act as constants.
    pub fn freeze_group(&mut self, group: usize) {
        self.frozen.push(group);
    }

    /// 2-D convolution; `w` is `[out, in, k, k]`, `b` is `[1, out, 1, 1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, c, h, wd] = xv.shape();
        let out_c = wv.n();
        assert_eq!(wv.c(), c, "conv2d channel mismatch");
        assert_eq!(wv.h(), geom.kernel);
        let oh = geom.conv_out(h).expect("conv2d input too small");
        let ow = geom.conv_out(wd).expect("conv2d input too small");
        let ckk = c * geom.kernel * geom.kernel;
        let cols_len = oh * ow;
        let mut cols = vec![0.0; ckk * cols_len];
        let mut out = Tensor::zeros([n, out_c, oh, ow]);
        let bias = self.value(b).data();
        let out_len = out_c * cols_len;
        for s in 0..n {
            im2col(xv.sample(s), c, h, wd, geom, oh, ow, &mut cols);
            let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
            for (o, row) in dst.chunks_mut(cols_len).enumerate() {
                row.fill(bias[o]);
            }
            gemm(out_c, ckk, cols_len, wv.data(), false, &cols, false, 1.0, dst);
        }
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        self.push(
            Cow::Owned(out),
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
            },
            rg,
        )
    }

    /// Transposed convolution; `w` is `[in, out, k, k]`, `b` is `[1, out, 1, 1]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let [n, c, h, wd] = xv.shape();
        assert_eq!(wv.n(), c, "conv_transpose2d channel mismatch");
        let out_c = wv.c();
        let oh = geom.transpose_out(h);
        let ow = geom.transpose_out(wd);
        let okk = out_c * geom.kernel * geom.kernel;
        let in_len = h * wd;
        let mut cols = vec![0.0; okk * in_len];
        let mut out = Tensor::zeros([n, out_c, oh, ow]);
        let bias = self.value(b).data();
        let out_len = out_c * oh * ow;
        for s in 0..n {
            gemm(okk, c, in_len, wv.data(), true, xv.sample(s), false, 0.0, &mut cols);
            let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
            for (o, plane) in dst.chunks_mut(oh * ow).enumerate() {
                plane.fill(bias[o]);
            }
            col2im(&cols, out_c, oh, ow, geom, h, wd, dst);
        }
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        self.push(
            Cow::Owned(out),
            Op::ConvTranspose2d {
                x: x.0,
                w: w.0,
                b: b.0,
                geom,
            },
            rg,
        )
    }

    /// Per-sample, per-channel normalization to zero mean and unit variance.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let plane = xv.plane_len();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.n() * xv.c());
        for p in out.data_mut().chunks_mut(plane) {
            let mean = p.iter().sum::<f64>() / plane as f64;
            let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
            let is = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
            for v in p.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::InstanceNorm { x: x.0, inv_std }, rg)
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = f(*v));
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), op, rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.map(
            x,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu { x: x.0, slope },
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu { x: x.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh { x: x.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid { x: x.0 })
    }

    /// Concatenates along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let [n, ca, h, w] = av.shape();
        assert_eq!(bv.n(), n);
        assert_eq!((bv.h(), bv.w()), (h, w), "concat spatial mismatch");
        let cb = bv.c();
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            data.extend_from_slice(av.sample(s));
            data.extend_from_slice(bv.sample(s));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Cow::Owned(out), Op::Concat { a: a.0, b: b.0 }, rg)
    }

    /// Builds a `[n, c, h, w]` tensor whose planes are copies of source planes.
    /// `src[i]` is the flat plane index (`sample * channels + channel`) of
    /// output plane `i`.
    pub fn gather(&mut self, x: Var, src: Vec<usize>, n: usize, c: usize) -> Var {
        assert_eq!(src.len(), n * c);
        let xv = self.value(x);
        let (h, w) = (xv.h(), xv.w());
        let plane = h * w;
        let mut data = Vec::with_capacity(n * c * plane);
        for &p in &src {
            data.extend_from_slice(&xv.data()[p * plane..(p + 1) * plane]);
        }
        let out = Tensor::from_vec([n, c, h, w], data);
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::Gather { x: x.0, src }, rg)
    }

    /// Mirror padding to `(out_h, out_w)` with `top`/`left` rows/columns before the content.
    pub fn reflect_pad(&mut self, x: Var, top: usize, left: usize, out_h: usize, out_w: usize) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let mut out = Tensor::zeros([n, c, out_h, out_w]);
        let src = xv.data();
        for (p, dst) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
            let sp = &src[p * h * w..(p + 1) * h * w];
            for y in 0..out_h {
                let sy = reflect_index(y as isize - top as isize, h);
                for xx in 0..out_w {
                    let sx = reflect_index(xx as isize - left as isize, w);
                    dst[y * out_w + xx] = sp[sy * w + sx];
                }
            }
        }
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::ReflectPad { x: x.0, top, left }, rg)
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, out_h: usize, out_w: usize) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        assert!(top + out_h <= h && left + out_w <= w, "crop out of bounds");
        let mut out = Tensor::zeros([n, c, out_h, out_w]);
        let src = xv.data();
        for (p, dst) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
            for y in 0..out_h {
                let s = p * h * w + (y + top) * w + left;
                dst[y * out_w..(y + 1) * out_w].copy_from_slice(&src[s..s + out_w]);
            }
        }
        let rg = self.rg(x.0);
        self.push(Cow::Owned(out), Op::Crop { x: x.0, top, left }, rg)
    }

    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.shape(), bv.shape());
            av.data().iter().zip(bv.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / av.len() as f64
        };
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::MeanAbsDiff { a: a.0, b: b.0 }, rg)
    }

    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Var {
        let v = {
            let (av, bv) = (self.value(a), self.value(b));
            assert_eq!(av.shape(), bv.shape());
            av.data().iter().zip(bv.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / av.len() as f64
        };
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::MeanSqDiff { a: a.0, b: b.0 }, rg)
    }

    /// Mean of `ln(clamp(x, eps, 1 - eps))`.
    pub fn mean_log(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let v = xv.data().iter().map(|s| s.clamp(eps, 1.0 - eps).ln()).sum::<f64>() / xv.len() as f64;
        let rg = self.rg(x.0);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::MeanLog { x: x.0, eps }, rg)
    }

    /// Mean of `ln(1 - clamp(x, eps, 1 - eps))`.
    pub fn mean_log1m(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let v = xv
            .data()
            .iter()
            .map(|s| (1.0 - s.clamp(eps, 1.0 - eps)).ln())
            .sum::<f64>()
            / xv.len() as f64;
        let rg = self.rg(x.0);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::MeanLog1m { x: x.0, eps }, rg)
    }

    /// Weighted sum of scalar nodes.
    pub fn linear(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms.iter().map(|(t, c)| c * self.scalar(*t)).sum::<f64>();
        let rg = terms.iter().any(|(t, _)| self.rg(t.0));
        let terms = terms.iter().map(|(t, c)| (t.0, *c)).collect();
        self.push(Cow::Owned(Tensor::scalar(v)), Op::Linear { terms }, rg)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut params = BTreeMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(key) => {
                    params
                        .entry(*key)
                        .and_modify(|acc: &mut Tensor| acc.add_assign(&g))
                        .or_insert_with(|| g.clone());
                }
                Op::Conv2d { x, w, b, geom } => self.conv2d_backward(&g, *x, *w, *b, *geom, &mut grads),
                Op::ConvTranspose2d { x, w, b, geom } => {
                    self.conv_transpose2d_backward(&g, *x, *w, *b, *geom, &mut grads)
                }
                Op::InstanceNorm { x, inv_std } => {
                    if self.rg(*x) {
                        let y = &node.value;
                        let plane = y.plane_len();
                        let mut gx = Tensor::zeros(y.shape());
                        for (p, is) in inv_std.iter().enumerate() {
                            let r = p * plane..(p + 1) * plane;
                            let gy = &g.data()[r.clone()];
                            let yy = &y.data()[r.clone()];
                            let mean_g = gy.iter().sum::<f64>() / plane as f64;
                            let mean_gy = gy.iter().zip(yy).map(|(a, b)| a * b).sum::<f64>() / plane as f64;
                            for ((d, gv), yv) in gx.data_mut()[r].iter_mut().zip(gy).zip(yy) {
                                *d = is * (gv - mean_g - yv * mean_gy);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::LeakyRelu { x, slope } => {
                    let xv = self.value(Var(*x));
                    let gx = zip_map(&g, xv, |gv, v| if v > 0.0 { gv } else { slope * gv });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu { x } => {
                    let xv = self.value(Var(*x));
                    let gx = zip_map(&g, xv, |gv, v| if v > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh { x } => {
                    let gx = zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let gx = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat { a, b } => {
                    let ca = self.nodes[*a].value.c();
                    let [n, c, h, w] = g.shape();
                    let plane = h * w;
                    let mut ga = Vec::with_capacity(n * ca * plane);
                    let mut gb = Vec::with_capacity(n * (c - ca) * plane);
                    for s in 0..n {
                        let sample = g.sample(s);
                        ga.extend_from_slice(&sample[..ca * plane]);
                        gb.extend_from_slice(&sample[ca * plane..]);
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, Tensor::from_vec([n, ca, h, w], ga));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, Tensor::from_vec([n, c - ca, h, w], gb));
                    }
                }
                Op::Gather { x, src } => {
                    let xv = self.value(Var(*x));
                    let plane = xv.plane_len();
                    let mut gx = Tensor::zeros(xv.shape());
                    for (o, &p) in src.iter().enumerate() {
                        let dst = &mut gx.data_mut()[p * plane..(p + 1) * plane];
                        for (d, s) in dst.iter_mut().zip(&g.data()[o * plane..(o + 1) * plane]) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ReflectPad { x, top, left } => {
                    let xv = self.value(Var(*x));
                    let [_, _, h, w] = xv.shape();
                    let (oh, ow) = (g.h(), g.w());
                    let mut gx = Tensor::zeros(xv.shape());
                    for (p, gp) in g.data().chunks(oh * ow).enumerate() {
                        let dst = &mut gx.data_mut()[p * h * w..(p + 1) * h * w];
                        for y in 0..oh {
                            let sy = reflect_index(y as isize - *top as isize, h);
                            for xx in 0..ow {
                                let sx = reflect_index(xx as isize - *left as isize, w);
                                dst[sy * w + sx] += gp[y * ow + xx];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Crop { x, top, left } => {
                    let xv = self.value(Var(*x));
                    let [_, _, h, w] = xv.shape();
                    let (oh, ow) = (g.h(), g.w());
                    let mut gx = Tensor::zeros(xv.shape());
                    for (p, gp) in g.data().chunks(oh * ow).enumerate() {
                        for y in 0..oh {
                            let d = p * h * w + (y + top) * w + left;
                            gx.data_mut()[d..d + ow].copy_from_slice(&gp[y * ow..(y + 1) * ow]);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanAbsDiff { a, b } => {
                    let (av, bv) = (self.value(Var(*a)), self.value(Var(*b)));
                    let scale = g.item() / av.len() as f64;
                    let ga = zip_map(av, bv, |x, y| {
                        let d = x - y;
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    });
                    self.accumulate_pair(&mut grads, *a, *b, ga);
                }
                Op::MeanSqDiff { a, b } => {
                    let (av, bv) = (self.value(Var(*a)), self.value(Var(*b)));
                    let scale = 2.0 * g.item() / av.len() as f64;
                    let ga = zip_map(av, bv, |x, y| scale * (x - y));
                    self.accumulate_pair(&mut grads, *a, *b, ga);
                }
                Op::MeanLog { x, eps } => {
                    let xv = self.value(Var(*x));
                    let scale = g.item() / xv.len() as f64;
                    let mut gx = xv.clone();
                    gx.data_mut().iter_mut().for_each(|s| {
                        *s = if *s < *eps || *s > 1.0 - eps { 0.0 } else { scale / *s };
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanLog1m { x, eps } => {
                    let xv = self.value(Var(*x));
                    let scale = g.item() / xv.len() as f64;
                    let mut gx = xv.clone();
                    gx.data_mut().iter_mut().for_each(|s| {
                        *s = if *s < *eps || *s > 1.0 - eps {
                            0.0
                        } else {
                            -scale / (1.0 - *s)
                        };
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Linear { terms } => {
                    for (t, c) in terms {
                        if self.rg(*t) {
                            accumulate(&mut grads, *t, Tensor::scalar(c * g.item()));
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn accumulate_pair(&self, grads: &mut [Option<Tensor>], a: usize, b: usize, ga: Tensor) {
        if self.rg(b) {
            let mut gb = ga.clone();
            gb.data_mut().iter_mut().for_each(|v| *v = -*v);
            accumulate(grads, b, gb);
        }
        if self.rg(a) {
            accumulate(grads, a, ga);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        g: &Tensor,
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
        grads: &mut [Option<Tensor>],
    ) {
        let xv = self.value(Var(x));
        let wv = self.value(Var(w));
        let [n, c, h, wd] = xv.shape();
        let out_c = wv.n();
        let (oh, ow) = (g.h(), g.w());
        let ckk = c * geom.kernel * geom.kernel;
        let cols_len = oh * ow;
        let out_len = out_c * cols_len;
        let need_w = self.rg(w);
        let need_x = self.rg(x);
        let mut gw = Tensor::zeros(wv.shape());
        let mut gx = if need_x { Some(Tensor::zeros(xv.shape())) } else { None };
        let mut cols = vec![0.0; ckk * cols_len];
        let sample_len = xv.sample_len();
        for s in 0..n {
            let gs = &g.data()[s * out_len..(s + 1) * out_len];
            if need_w {
                im2col(xv.sample(s), c, h, wd, geom, oh, ow, &mut cols);
                gemm(out_c, cols_len, ckk, gs, false, &cols, true, 1.0, gw.data_mut());
            }
            if let Some(gx) = gx.as_mut() {
                gemm(ckk, out_c, cols_len, wv.data(), true, gs, false, 0.0, &mut cols);
                let dst = &mut gx.data_mut()[s * sample_len..(s + 1) * sample_len];
                col2im(&cols, c, h, wd, geom, oh, ow, dst);
            }
        }
        if self.rg(b) {
            accumulate(grads, b, channel_sums(g));
        }
        if need_w {
            accumulate(grads, w, gw);
        }
        if let Some(gx) = gx {
            accumulate(grads, x, gx);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_transpose2d_backward(
        &self,
        g: &Tensor,
        x: usize,
        w: usize,
        b: usize,
        geom: ConvGeom,
        grads: &mut [Option<Tensor>],
    ) {
        let xv = self.value(Var(x));
        let wv = self.value(Var(w));
        let [n, c, h, wd] = xv.shape();
        let out_c = wv.c();
        let (oh, ow) = (g.h(), g.w());
        let okk = out_c * geom.kernel * geom.kernel;
        let in_len = h * wd;
        let out_len = out_c * oh * ow;
        let need_w = self.rg(w);
        let need_x = self.rg(x);
        let mut gw = Tensor::zeros(wv.shape());
        let mut gx = if need_x { Some(Tensor::zeros(xv.shape())) } else { None };
        let mut cols = vec![0.0; okk * in_len];
        let sample_len = xv.sample_len();
        if need_w || need_x {
            for s in 0..n {
                let gs = &g.data()[s * out_len..(s + 1) * out_len];
                im2col(gs, out_c, oh, ow, geom, h, wd, &mut cols);
                if need_w {
                    gemm(c, in_len, okk, xv.sample(s), false, &cols, true, 1.0, gw.data_mut());
                }
                if let Some(gx) = gx.as_mut() {
                    let dst = &mut gx.data_mut()[s * sample_len..(s + 1) * sample_len];
                    gemm(c, okk, in_len, wv.data(), false, &cols, false, 0.0, dst);
                }
            }
        }
        if self.rg(b) {
            accumulate(grads, b, channel_sums(g));
        }
        if need_w {
            accumulate(grads, w, gw);
        }
        if let Some(gx) = gx {
            accumulate(grads, x, gx);
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn channel_sums(g: &Tensor) -> Tensor {
    let [n, c, _, _] = g.shape();
    let mut sums = vec![0.0; c];
    for s in 0..n {
        for (ch, sum) in sums.iter_mut().enumerate() {
            *sum += g.plane(s, ch).iter().sum::<f64>();
        }
    }
    Tensor::from_vec([1, c, 1, 1], sums)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::from_vec(a.shape(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Checks d(loss)/d(input) of `build` against central differences.
    fn check_input_grad(shape: [usize; 4], build: impl Fn(&mut Tape, Var) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = random(shape, &mut rng);
        let mut tape = Tape::new();
        let x = tape.variable(x0.clone());
        let loss = build(&mut tape, x);
        let grads = tape.backward(loss);
        let analytic = grads.wrt(x).unwrap().clone();
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let mut t = Tape::new();
                let v = t.constant(xp);
                let l = build(&mut t, v);
                t.scalar(l)
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            assert!(err < 1e-5, "element {i}: analytic {a} numeric {numeric}");
        }
    }

    fn weights(tape: &mut Tape, shape: [usize; 4], bias: usize, seed: u64) -> (Var, Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random(shape, &mut rng);
        let b = random([1, bias, 1, 1], &mut rng);
        (tape.constant(w), tape.constant(b))
    }

    fn probe(tape: &mut Tape, y: Var) -> Var {
        // fixed random projection so every output element matters
        let shape = tape.value(y).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let target = tape.constant(random(shape, &mut rng));
        tape.mean_sq_diff(y, target)
    }

    #[test]
    fn conv2d_input_gradient() {
        check_input_grad([2, 2, 6, 6], |t, x| {
            let (w, b) = weights(t, [3, 2, 4, 4], 3, 1);
            let y = t.conv2d(x, w, b, ConvGeom::new(4, 2, 1));
            probe(t, y)
        });
    }

    #[test]
    fn conv_transpose2d_input_gradient() {
        check_input_grad([2, 3, 3, 3], |t, x| {
            let (w, b) = weights(t, [3, 2, 4, 4], 2, 2);
            let y = t.conv_transpose2d(x, w, b, ConvGeom::new(4, 2, 1));
            probe(t, y)
        });
    }

    #[test]
    fn instance_norm_and_activations_gradient() {
        check_input_grad([2, 2, 4, 4], |t, x| {
            let y = t.instance_norm(x);
            let y = t.leaky_relu(y, 0.2);
            let y = t.tanh(y);
            let y = t.sigmoid(y);
            probe(t, y)
        });
    }

    #[test]
    fn structural_ops_gradient() {
        check_input_grad([2, 2, 5, 5], |t, x| {
            let g = t.gather(x, vec![3, 0, 0], 1, 3);
            let p = t.reflect_pad(g, 2, 1, 9, 8);
            let c = t.crop(p, 1, 2, 6, 5);
            let cat = t.concat(c, c);
            let r = t.relu(cat);
            probe(t, r)
        });
    }

    #[test]
    fn weight_gradient_of_conv_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([2, 2, 6, 6], &mut rng);
        let w0 = random([3, 2, 4, 4], &mut rng);
        let wt0 = random([3, 1, 4, 4], &mut rng);
        let build = |t: &mut Tape<'_>, w: Var, wt: Var| {
            let xin = t.constant(x.clone());
            let b = t.constant(Tensor::zeros([1, 3, 1, 1]));
            let bt = t.constant(Tensor::zeros([1, 1, 1, 1]));
            let y = t.conv2d(xin, w, b, ConvGeom::new(4, 2, 1));
            let y = t.conv_transpose2d(y, wt, bt, ConvGeom::new(4, 2, 1));
            probe(t, y)
        };
        let mut tape = Tape::new();
        let w = tape.variable(w0.clone());
        let wt = tape.variable(wt0.clone());
        let loss = build(&mut tape, w, wt);
        let grads = tape.backward(loss);
        let h = 1e-6;
        for (which, base) in [(0, &w0), (1, &wt0)] {
            let analytic = grads.wrt(if which == 0 { w } else { wt }).unwrap();
            for i in (0..base.len()).step_by(7) {
                let eval = |delta: f64| {
                    let (mut a, mut b) = (w0.clone(), wt0.clone());
                    if which == 0 {
                        a.data_mut()[i] += delta;
                    } else {
                        b.data_mut()[i] += delta;
                    }
                    let mut t = Tape::new();
                    let (va, vb) = (t.constant(a), t.constant(b));
                    let l = build(&mut t, va, vb);
                    t.scalar(l)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic.data()[i];
                assert!((a - numeric).abs() <= 1e-5 * a.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full([1, 1, 2, 2], 0.5));
        let b = tape.variable(Tensor::full([1, 1, 2, 2], 0.1));
        let l = tape.mean_abs_diff(a, b);
        let grads = tape.backward(l);
        assert!(grads.wrt(a).is_none());
        assert_eq!(grads.wrt(b).unwrap().data(), &[-0.25; 4]);
    }
}
