//! Reverse-mode differentiation over a fixed operation set.
//!
//! The tape records eagerly-evaluated tensor operations — affine maps
//! (convolution and its transpose), pointwise nonlinearity, add, scale,
//! exp, clamp, channel concat/slice, elementwise multiply by a constant,
//! and the loss heads (CRPS, KL, L1, MSE) — and replays them backward to
//! accumulate gradients. There is no graph compiler; every op is a closed
//! form with a hand-written adjoint.

use crate::error::{Error, Result};
use crate::losses::{
    crps_loss_grad, gaussian_kl_grad, l1_loss_grad, CrpsEstimator, GaussianLatent, KlGrads,
};

/// A dense tensor with explicit dimensions (activations are `[c, h, w]`,
/// conv weights `[oc, ic, kh, kw]`, biases `[c]`, scalars `[1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                format!("{dims:?} = {len} entries"),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![v],
        }
    }

    pub fn chw(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![c, h, w], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn c(&self) -> usize {
        self.dims[0]
    }

    fn h(&self) -> usize {
        self.dims[1]
    }

    fn w(&self) -> usize {
        self.dims[2]
    }
}

/// Boundary handling for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; used by the patchify encoder where kernel = stride.
    Valid,
    /// Same-size output: zero-pad rows, wrap columns. Stride must be 1.
    SameWrapLon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Conv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: (usize, usize),
        padding: Padding,
    },
    ConvT {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: (usize, usize),
    },
    Silu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        k: f64,
    },
    Exp {
        x: NodeId,
    },
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    ConcatC {
        xs: Vec<NodeId>,
    },
    SliceC {
        x: NodeId,
        from: usize,
    },
    MulConst {
        x: NodeId,
        k: Vec<f64>,
    },
    MeanScalars {
        xs: Vec<NodeId>,
    },
    Crps {
        members: Vec<NodeId>,
        grads: Vec<Vec<f64>>,
    },
    Kl {
        mu_q: NodeId,
        lv_q: NodeId,
        mu_p: NodeId,
        lv_p: NodeId,
        grads: Box<KlGrads>,
    },
    L1 {
        x: NodeId,
        grad: Vec<f64>,
    },
    Mse {
        x: NodeId,
        grad: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The recording tape. Create leaves, apply ops, then call
/// [`Tape::backward`] on a scalar node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient buffers per node, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// True if every entry of the node's value is finite.
    pub fn is_finite(&self, id: NodeId) -> bool {
        self.nodes[id.0].value.data.iter().all(|v| v.is_finite())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// 2D convolution: activations `[ic, h, w]`, weight `[oc, ic, kh, kw]`,
    /// bias `[oc]`.
    pub fn conv(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (ic, h, wd) = (xv.c(), xv.h(), xv.w());
        let (oc, wic, kh, kw) = (wv.dims[0], wv.dims[1], wv.dims[2], wv.dims[3]);
        if wic != ic || bv.dims != vec![oc] {
            return Err(Error::shape(
                format!("conv weight [oc, {ic}, kh, kw] + bias [oc]"),
                format!("weight {:?}, bias {:?}", wv.dims, bv.dims),
            ));
        }
        let (sh, sw) = stride;
        let (out_h, out_w, ph, pw) = match padding {
            Padding::Valid => {
                if h < kh || wd < kw || (h - kh) % sh != 0 || (wd - kw) % sw != 0 {
                    return Err(Error::invalid(format!(
                        "valid conv: kernel {kh}x{kw} stride {sh}x{sw} does not tile {h}x{wd}"
                    )));
                }
                ((h - kh) / sh + 1, (wd - kw) / sw + 1, 0, 0)
            }
            Padding::SameWrapLon => {
                if sh != 1 || sw != 1 || kh % 2 == 0 || kw % 2 == 0 {
                    return Err(Error::invalid(
                        "same conv requires stride 1 and odd kernel dims",
                    ));
                }
                (h, wd, (kh - 1) / 2, (kw - 1) / 2)
            }
        };

        let mut out = vec![0.0; oc * out_h * out_w];
        for o in 0..oc {
            let bias = bv.data[o];
            for oy in 0..out_h {
                for ox in 0..out_w {
                    let mut acc = bias;
                    for i in 0..ic {
                        for ky in 0..kh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for kx in 0..kw {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                let ix = match padding {
                                    Padding::Valid => ix as usize,
                                    Padding::SameWrapLon => ix.rem_euclid(wd as isize) as usize,
                                };
                                acc += wv.data[((o * ic + i) * kh + ky) * kw + kx]
                                    * xv.data[(i * h + iy) * wd + ix];
                            }
                        }
                    }
                    out[(o * out_h + oy) * out_w + ox] = acc;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::chw(oc, out_h, out_w, out)?,
            Op::Conv {
                x,
                w,
                b,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Transposed convolution with kernel = stride (patchify inverse):
    /// input `[ic, h, w]`, weight `[ic, oc, kh, kw]`, output
    /// `[oc, h·kh, w·kw]`.
    pub fn conv_transpose(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: (usize, usize),
    ) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (ic, h, wd) = (xv.c(), xv.h(), xv.w());
        let (wic, oc, kh, kw) = (wv.dims[0], wv.dims[1], wv.dims[2], wv.dims[3]);
        if wic != ic || bv.dims != vec![oc] || (kh, kw) != stride {
            return Err(Error::shape(
                format!("convT weight [{ic}, oc, sh, sw] + bias [oc]"),
                format!("weight {:?}, bias {:?}", wv.dims, bv.dims),
            ));
        }
        let (out_h, out_w) = (h * kh, wd * kw);
        let mut out = vec![0.0; oc * out_h * out_w];
        for o in 0..oc {
            let bias = bv.data[o];
            for v in out[o * out_h * out_w..(o + 1) * out_h * out_w].iter_mut() {
                *v = bias;
            }
        }
        for i in 0..ic {
            for y in 0..h {
                for xcol in 0..wd {
                    let v = xv.data[(i * h + y) * wd + xcol];
                    for o in 0..oc {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                out[(o * out_h + y * kh + ky) * out_w + xcol * kw + kx] +=
                                    wv.data[((i * oc + o) * kh + ky) * kw + kx] * v;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(
            Tensor::chw(oc, out_h, out_w, out)?,
            Op::ConvT { x, w, b, stride },
            rg,
        ))
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self
            .value(x)
            .data
            .iter()
            .map(|&v| v / (1.0 + (-v).exp()))
            .collect();
        let dims = self.value(x).dims.clone();
        let rg = self.rg(x);
        self.push(Tensor { dims, data: out }, Op::Silu { x }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).dims != self.value(b).dims {
            return Err(Error::shape(
                format!("{:?}", self.value(a).dims),
                format!("{:?}", self.value(b).dims),
            ));
        }
        let data: Vec<f64> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let dims = self.value(a).dims.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { dims, data }, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data.iter().map(|v| v * k).collect();
        let dims = self.value(x).dims.clone();
        let rg = self.rg(x);
        self.push(Tensor { dims, data }, Op::Scale { x, k }, rg)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(x).data.iter().map(|v| v.exp()).collect();
        let dims = self.value(x).dims.clone();
        let rg = self.rg(x);
        self.push(Tensor { dims, data }, Op::Exp { x }, rg)
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let data: Vec<f64> = self.value(x).data.iter().map(|v| v.clamp(lo, hi)).collect();
        let dims = self.value(x).dims.clone();
        let rg = self.rg(x);
        self.push(Tensor { dims, data }, Op::Clamp { x, lo, hi }, rg)
    }

    /// Concatenate along the channel axis; all inputs share h and w.
    pub fn concat_c(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let (h, w) = (self.value(xs[0]).h(), self.value(xs[0]).w());
        let mut c_total = 0;
        for &x in xs {
            let v = self.value(x);
            if v.dims.len() != 3 || v.h() != h || v.w() != w {
                return Err(Error::shape(
                    format!("[*, {h}, {w}]"),
                    format!("{:?}", v.dims),
                ));
            }
            c_total += v.c();
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &x in xs {
            data.extend_from_slice(&self.value(x).data);
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Tensor::chw(c_total, h, w, data)?,
            Op::ConcatC { xs: xs.to_vec() },
            rg,
        ))
    }

    /// Channel slice `[from, to)`.
    pub fn slice_c(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let v = self.value(x);
        if v.dims.len() != 3 || from >= to || to > v.c() {
            return Err(Error::invalid(format!(
                "slice [{from}, {to}) of {:?}",
                v.dims
            )));
        }
        let (h, w) = (v.h(), v.w());
        let data = v.data[from * h * w..to * h * w].to_vec();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::chw(to - from, h, w, data)?,
            Op::SliceC { x, from },
            rg,
        ))
    }

    /// Elementwise multiply by a constant tensor (e.g. reparameterization
    /// noise).
    pub fn mul_const(&mut self, x: NodeId, k: Vec<f64>) -> Result<NodeId> {
        let v = self.value(x);
        if k.len() != v.len() {
            return Err(Error::shape(
                format!("{} entries", v.len()),
                format!("{}", k.len()),
            ));
        }
        let data: Vec<f64> = v.data.iter().zip(&k).map(|(a, b)| a * b).collect();
        let dims = v.dims.clone();
        let rg = self.rg(x);
        Ok(self.push(Tensor { dims, data }, Op::MulConst { x, k }, rg))
    }

    /// Mean of scalar nodes.
    pub fn mean_scalars(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("mean of zero scalars"));
        }
        let mut sum = 0.0;
        for &x in xs {
            let v = self.value(x);
            if v.len() != 1 {
                return Err(Error::shape("scalar".to_string(), format!("{:?}", v.dims)));
            }
            sum += v.data[0];
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Tensor::scalar(sum / xs.len() as f64),
            Op::MeanScalars { xs: xs.to_vec() },
            rg,
        ))
    }

    /// Ensemble CRPS loss over member nodes against a constant target;
    /// member gradients are computed during the forward pass.
    pub fn crps_loss(
        &mut self,
        members: &[NodeId],
        target: &[f64],
        estimator: CrpsEstimator,
    ) -> Result<NodeId> {
        let rows: Vec<&[f64]> = members
            .iter()
            .map(|&m| self.value(m).data.as_slice())
            .collect();
        let (loss, grads) = crps_loss_grad(&rows, target, estimator)?;
        let rg = members.iter().any(|&m| self.rg(m));
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Crps {
                members: members.to_vec(),
                grads,
            },
            rg,
        ))
    }

    /// KL(q‖p) between diagonal Gaussians given as four nodes.
    pub fn kl_loss(
        &mut self,
        mu_q: NodeId,
        lv_q: NodeId,
        mu_p: NodeId,
        lv_p: NodeId,
    ) -> Result<NodeId> {
        let q = GaussianLatent {
            mu: self.value(mu_q).data.clone(),
            log_var: self.value(lv_q).data.clone(),
        };
        let p = GaussianLatent {
            mu: self.value(mu_p).data.clone(),
            log_var: self.value(lv_p).data.clone(),
        };
        let (kl, grads) = gaussian_kl_grad(&q, &p)?;
        let rg = self.rg(mu_q) || self.rg(lv_q) || self.rg(mu_p) || self.rg(lv_p);
        Ok(self.push(
            Tensor::scalar(kl),
            Op::Kl {
                mu_q,
                lv_q,
                mu_p,
                lv_p,
                grads: Box::new(grads),
            },
            rg,
        ))
    }

    /// Mean absolute error against a constant target.
    pub fn l1_loss(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId> {
        let (loss, grad) = l1_loss_grad(&self.value(x).data, target)?;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(loss), Op::L1 { x, grad }, rg))
    }

    /// Mean squared error against a constant target (smooth surrogate used
    /// by gradient checks).
    pub fn mse_loss(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId> {
        let xv = &self.value(x).data;
        if xv.len() != target.len() {
            return Err(Error::shape(
                format!("{} entries", target.len()),
                format!("{}", xv.len()),
            ));
        }
        let inv = 1.0 / xv.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; xv.len()];
        for i in 0..xv.len() {
            let d = xv[i] - target[i];
            loss += d * d;
            grad[i] = 2.0 * d * inv;
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(loss * inv), Op::Mse { x, grad }, rg))
    }

    /// Backpropagate from a scalar node; returns per-node gradient buffers.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid("backward requires a scalar loss node"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g_out = grads[idx].take().unwrap();
            self.backprop_node(idx, &g_out, &mut grads);
            grads[idx] = Some(g_out);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Vec<f64>>],
        id: NodeId,
        update: impl FnOnce(&mut [f64]),
    ) {
        if !self.rg(id) {
            return;
        }
        let buf = grads[id.0].get_or_insert_with(|| vec![0.0; self.value(id).len()]);
        update(buf);
    }

    fn backprop_node(&self, idx: usize, g_out: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (ic, h, wd) = (xv.c(), xv.h(), xv.w());
                let (oc, _, kh, kw) = (wv.dims[0], wv.dims[1], wv.dims[2], wv.dims[3]);
                let (sh, sw) = *stride;
                let out = &self.nodes[idx].value;
                let (out_h, out_w) = (out.h(), out.w());
                let (ph, pw) = match padding {
                    Padding::Valid => (0usize, 0usize),
                    Padding::SameWrapLon => ((kh - 1) / 2, (kw - 1) / 2),
                };

                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let need_b = self.rg(*b);
                let mut dx = if need_x { vec![0.0; xv.len()] } else { Vec::new() };
                let mut dw = if need_w { vec![0.0; wv.len()] } else { Vec::new() };
                let mut db = if need_b { vec![0.0; oc] } else { Vec::new() };

                for o in 0..oc {
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            let g = g_out[(o * out_h + oy) * out_w + ox];
                            if g == 0.0 {
                                continue;
                            }
                            if need_b {
                                db[o] += g;
                            }
                            for i in 0..ic {
                                for ky in 0..kh {
                                    let iy = (oy * sh + ky) as isize - ph as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let iy = iy as usize;
                                    for kx in 0..kw {
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        let ix = match padding {
                                            Padding::Valid => ix as usize,
                                            Padding::SameWrapLon => {
                                                ix.rem_euclid(wd as isize) as usize
                                            }
                                        };
                                        let wi = ((o * ic + i) * kh + ky) * kw + kx;
                                        let xi = (i * h + iy) * wd + ix;
                                        if need_x {
                                            dx[xi] += wv.data[wi] * g;
                                        }
                                        if need_w {
                                            dw[wi] += xv.data[xi] * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, |buf| {
                        for (b, v) in buf.iter_mut().zip(&dx) {
                            *b += v;
                        }
                    });
                }
                if need_w {
                    self.accumulate(grads, *w, |buf| {
                        for (b, v) in buf.iter_mut().zip(&dw) {
                            *b += v;
                        }
                    });
                }
                if need_b {
                    self.accumulate(grads, *b, |buf| {
                        for (b, v) in buf.iter_mut().zip(&db) {
                            *b += v;
                        }
                    });
                }
            }
            Op::ConvT { x, w, b, stride } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (ic, h, wd) = (xv.c(), xv.h(), xv.w());
                let (_, oc, kh, kw) = (wv.dims[0], wv.dims[1], wv.dims[2], wv.dims[3]);
                let _ = stride;
                let (out_h, out_w) = (h * kh, wd * kw);

                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let need_b = self.rg(*b);
                let mut dx = if need_x { vec![0.0; xv.len()] } else { Vec::new() };
                let mut dw = if need_w { vec![0.0; wv.len()] } else { Vec::new() };
                let mut db = if need_b { vec![0.0; oc] } else { Vec::new() };

                if need_b {
                    for o in 0..oc {
                        for cell in 0..out_h * out_w {
                            db[o] += g_out[o * out_h * out_w + cell];
                        }
                    }
                }
                for i in 0..ic {
                    for y in 0..h {
                        for xcol in 0..wd {
                            let xi = (i * h + y) * wd + xcol;
                            for o in 0..oc {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let g = g_out
                                            [(o * out_h + y * kh + ky) * out_w + xcol * kw + kx];
                                        let wi = ((i * oc + o) * kh + ky) * kw + kx;
                                        if need_x {
                                            dx[xi] += wv.data[wi] * g;
                                        }
                                        if need_w {
                                            dw[wi] += xv.data[xi] * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, |buf| {
                        for (b, v) in buf.iter_mut().zip(&dx) {
                            *b += v;
                        }
                    });
                }
                if need_w {
                    self.accumulate(grads, *w, |buf| {
                        for (b, v) in buf.iter_mut().zip(&dw) {
                            *b += v;
                        }
                    });
                }
                if need_b {
                    self.accumulate(grads, *b, |buf| {
                        for (b, v) in buf.iter_mut().zip(&db) {
                            *b += v;
                        }
                    });
                }
            }
            Op::Silu { x } => {
                let xv = &self.value(*x).data;
                self.accumulate(grads, *x, |buf| {
                    for ((b, &v), g) in buf.iter_mut().zip(xv).zip(g_out) {
                        let s = 1.0 / (1.0 + (-v).exp());
                        *b += g * s * (1.0 + v * (1.0 - s));
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |buf| {
                    for (x, g) in buf.iter_mut().zip(g_out) {
                        *x += g;
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for (x, g) in buf.iter_mut().zip(g_out) {
                        *x += g;
                    }
                });
            }
            Op::Scale { x, k } => {
                let k = *k;
                self.accumulate(grads, *x, |buf| {
                    for (b, g) in buf.iter_mut().zip(g_out) {
                        *b += k * g;
                    }
                });
            }
            Op::Exp { x } => {
                let yv = &self.nodes[idx].value.data;
                self.accumulate(grads, *x, |buf| {
                    for ((b, &y), g) in buf.iter_mut().zip(yv).zip(g_out) {
                        *b += y * g;
                    }
                });
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &self.value(*x).data;
                let (lo, hi) = (*lo, *hi);
                self.accumulate(grads, *x, |buf| {
                    for ((b, &v), g) in buf.iter_mut().zip(xv).zip(g_out) {
                        if v >= lo && v <= hi {
                            *b += g;
                        }
                    }
                });
            }
            Op::ConcatC { xs } => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    let part = &g_out[offset..offset + n];
                    self.accumulate(grads, x, |buf| {
                        for (b, g) in buf.iter_mut().zip(part) {
                            *b += g;
                        }
                    });
                    offset += n;
                }
            }
            Op::SliceC { x, from } => {
                let v = self.value(*x);
                let plane = v.h() * v.w();
                let start = from * plane;
                self.accumulate(grads, *x, |buf| {
                    for (b, g) in buf[start..start + g_out.len()].iter_mut().zip(g_out) {
                        *b += g;
                    }
                });
            }
            Op::MulConst { x, k } => {
                self.accumulate(grads, *x, |buf| {
                    for ((b, g), kv) in buf.iter_mut().zip(g_out).zip(k) {
                        *b += g * kv;
                    }
                });
            }
            Op::MeanScalars { xs } => {
                let g = g_out[0] / xs.len() as f64;
                for &x in xs {
                    self.accumulate(grads, x, |buf| {
                        buf[0] += g;
                    });
                }
            }
            Op::Crps { members, grads: mg } => {
                let g = g_out[0];
                for (m, row) in members.iter().zip(mg) {
                    self.accumulate(grads, *m, |buf| {
                        for (b, v) in buf.iter_mut().zip(row) {
                            *b += g * v;
                        }
                    });
                }
            }
            Op::Kl {
                mu_q,
                lv_q,
                mu_p,
                lv_p,
                grads: kg,
            } => {
                let g = g_out[0];
                for (id, row) in [
                    (*mu_q, &kg.d_mu_q),
                    (*lv_q, &kg.d_log_var_q),
                    (*mu_p, &kg.d_mu_p),
                    (*lv_p, &kg.d_log_var_p),
                ] {
                    self.accumulate(grads, id, |buf| {
                        for (b, v) in buf.iter_mut().zip(row) {
                            *b += g * v;
                        }
                    });
                }
            }
            Op::L1 { x, grad } | Op::Mse { x, grad } => {
                let g = g_out[0];
                self.accumulate(grads, *x, |buf| {
                    for (b, v) in buf.iter_mut().zip(grad) {
                        *b += g * v;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>, scale: f64) -> Tensor {
        let len = dims.iter().product();
        Tensor {
            dims,
            data: (0..len).map(|_| rng.gen_range(-scale..scale)).collect(),
        }
    }

    /// Finite-difference check of d loss / d leaf for every entry of one
    /// leaf, rebuilding the tape per evaluation. The builder must create
    /// leaves from the passed tensors in order.
    fn fd_check(
        build: impl Fn(&mut Tape, &[Tensor]) -> NodeId,
        leaves: &[Tensor],
        which: usize,
        eps: f64,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let loss = build(&mut tape, leaves);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(NodeId(which)).unwrap().to_vec();

        for e in 0..leaves[which].len() {
            let mut eval = |v: f64| {
                let mut l2: Vec<Tensor> = leaves.to_vec();
                l2[which].data[e] = v;
                let mut t2 = Tape::new();
                let loss2 = build(&mut t2, &l2);
                t2.value(loss2).data[0]
            };
            let x0 = leaves[which].data[e];
            let fd = (eval(x0 + eps) - eval(x0 - eps)) / (2.0 * eps);
            let denom = fd.abs().max(analytic[e].abs()).max(1e-8);
            assert!(
                (fd - analytic[e]).abs() / denom < tol,
                "leaf {which} entry {e}: fd {fd} vs analytic {}",
                analytic[e]
            );
        }
    }

    #[test]
    fn conv_valid_patchify_shapes_and_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, vec![2, 4, 6], 1.0);
        let w = rand_tensor(&mut rng, vec![3, 2, 2, 2], 0.5);
        let b = rand_tensor(&mut rng, vec![3], 0.5);
        let target: Vec<f64> = (0..3 * 2 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |tape: &mut Tape, leaves: &[Tensor]| {
            let x = tape.leaf(leaves[0].clone(), true);
            let w = tape.leaf(leaves[1].clone(), true);
            let b = tape.leaf(leaves[2].clone(), true);
            let y = tape.conv(x, w, b, (2, 2), Padding::Valid).unwrap();
            assert_eq!(tape.value(y).dims, vec![3, 2, 3]);
            tape.mse_loss(y, &target).unwrap()
        };
        let leaves = vec![x, w, b];
        for which in 0..3 {
            fd_check(build, &leaves, which, 1e-5, 1e-7);
        }
    }

    #[test]
    fn conv_same_wrap_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, vec![2, 3, 5], 1.0);
        let w = rand_tensor(&mut rng, vec![2, 2, 3, 3], 0.5);
        let b = rand_tensor(&mut rng, vec![2], 0.5);
        let target: Vec<f64> = (0..2 * 3 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |tape: &mut Tape, leaves: &[Tensor]| {
            let x = tape.leaf(leaves[0].clone(), true);
            let w = tape.leaf(leaves[1].clone(), true);
            let b = tape.leaf(leaves[2].clone(), true);
            let y = tape.conv(x, w, b, (1, 1), Padding::SameWrapLon).unwrap();
            assert_eq!(tape.value(y).dims, vec![2, 3, 5]);
            tape.mse_loss(y, &target).unwrap()
        };
        let leaves = vec![x, w, b];
        for which in 0..3 {
            fd_check(build, &leaves, which, 1e-5, 1e-7);
        }
    }

    #[test]
    fn conv_transpose_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, vec![3, 2, 3], 1.0);
        let w = rand_tensor(&mut rng, vec![3, 2, 2, 2], 0.5);
        let b = rand_tensor(&mut rng, vec![2], 0.5);
        let target: Vec<f64> = (0..2 * 4 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |tape: &mut Tape, leaves: &[Tensor]| {
            let x = tape.leaf(leaves[0].clone(), true);
            let w = tape.leaf(leaves[1].clone(), true);
            let b = tape.leaf(leaves[2].clone(), true);
            let y = tape.conv_transpose(x, w, b, (2, 2)).unwrap();
            assert_eq!(tape.value(y).dims, vec![2, 4, 6]);
            tape.mse_loss(y, &target).unwrap()
        };
        let leaves = vec![x, w, b];
        for which in 0..3 {
            fd_check(build, &leaves, which, 1e-5, 1e-7);
        }
    }

    #[test]
    fn pointwise_chain_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, vec![1, 2, 3], 1.5);
        let target: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |tape: &mut Tape, leaves: &[Tensor]| {
            let x = tape.leaf(leaves[0].clone(), true);
            let s = tape.silu(x);
            let sc = tape.scale(s, 0.5);
            let ex = tape.exp(sc);
            let cl = tape.clamp(ex, 0.2, 5.0);
            tape.mse_loss(cl, &target).unwrap()
        };
        fd_check(build, &[x], 0, 1e-6, 1e-6);
    }

    #[test]
    fn concat_slice_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, vec![1, 2, 2], 1.0);
        let b = rand_tensor(&mut rng, vec![2, 2, 2], 1.0);
        let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = |tape: &mut Tape, leaves: &[Tensor]| {
            let a = tape.leaf(leaves[0].clone(), true);
            let b = tape.leaf(leaves[1].clone(), true);
            let cat = tape.concat_c(&[a, b]).unwrap();
            assert_eq!(tape.value(cat).dims, vec![3, 2, 2]);
            let mid = tape.slice_c(cat, 1, 2).unwrap();
            tape.mse_loss(mid, &target).unwrap()
        };
        let leaves = vec![a, b];
        fd_check(build, &leaves, 0, 1e-6, 1e-6);
        fd_check(build, &leaves, 1, 1e-6, 1e-6);
    }

    #[test]
    fn reparameterized_sample_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mu = rand_tensor(&mut rng, vec![2, 2, 2], 1.0);
        let lv = rand_tensor(&mut rng, vec![2, 2, 2], 1.0);
        let eps: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = move |tape: &mut Tape, leaves: &[Tensor]| {
            let mu = tape.leaf(leaves[0].clone(), true);
            let lv = tape.leaf(leaves[1].clone(), true);
            let half = tape.scale(lv, 0.5);
            let sigma = tape.exp(half);
            let noise = tape.mul_const(sigma, eps.clone()).unwrap();
            let z = tape.add(mu, noise).unwrap();
            tape.mse_loss(z, &target).unwrap()
        };
        let leaves = vec![mu, lv];
        fd_check(&build, &leaves, 0, 1e-6, 1e-6);
        fd_check(&build, &leaves, 1, 1e-6, 1e-6);
    }

    #[test]
    fn loss_heads_through_tape_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m1 = rand_tensor(&mut rng, vec![1, 1, 4], 1.0);
        let m2 = rand_tensor(&mut rng, vec![1, 1, 4], 1.0);
        let mu_q = rand_tensor(&mut rng, vec![1, 1, 4], 1.0);
        let lv_q = rand_tensor(&mut rng, vec![1, 1, 4], 1.0);
        let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let build = move |tape: &mut Tape, leaves: &[Tensor]| {
            let m1 = tape.leaf(leaves[0].clone(), true);
            let m2 = tape.leaf(leaves[1].clone(), true);
            let mu_q = tape.leaf(leaves[2].clone(), true);
            let lv_q = tape.leaf(leaves[3].clone(), true);
            let mu_p = tape.constant(Tensor::zeros(vec![1, 1, 4]));
            let lv_p = tape.constant(Tensor::zeros(vec![1, 1, 4]));
            let crps = tape.crps_loss(&[m1, m2], &target, CrpsEstimator::Fair).unwrap();
            let kl = tape.kl_loss(mu_q, lv_q, mu_p, lv_p).unwrap();
            let kl_scaled = tape.scale(kl, 0.3);
            let l1 = tape.l1_loss(m1, &target).unwrap();
            let l1s = tape.scale(l1, 0.1);
            let partial = tape.add(crps, kl_scaled).unwrap();
            tape.add(partial, l1s).unwrap()
        };
        let leaves = vec![m1, m2, mu_q, lv_q];
        for which in 0..4 {
            fd_check(&build, &leaves, which, 1e-5, 1e-4);
        }
    }

    #[test]
    fn grads_flow_only_where_required() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(2.0), true);
        let c = tape.constant(Tensor::scalar(3.0));
        let sum = tape.add(a, c).unwrap();
        let loss = tape.mse_loss(sum, &[0.0]).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(a).is_some());
        assert!(grads.get(c).is_none());
        // d/da (a + 3)^2 = 2(a+3) = 10
        assert!((grads.get(a).unwrap()[0] - 10.0).abs() < 1e-12);
    }
}
