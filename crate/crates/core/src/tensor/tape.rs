//! The gradient tape: forward operations record themselves in execution
//! order, and [`Tape::backward`] replays them in reverse exactly once each.

use std::ops::Deref;
use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{
    col2im_add, dot_f64, gemm, gemm_strided, im2col, sq_dev_f64, sum_f64, upsample_taps, ConvGeom, Layout,
};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Spatial padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` so the output keeps the input size (odd `k`).
    Same,
    None,
}

/// Outcome of a reverse sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardReport {
    /// Recorded nodes visited by the sweep, each exactly once.
    pub nodes_visited: usize,
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Deref for Value<'_> {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
        cols: Option<Vec<f32>>,
    },
    GroupNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        xhat: Vec<f32>,
        rstd: Vec<f64>,
    },
    Silu {
        input: usize,
        sigmoid: Vec<f32>,
    },
    MaxPool {
        input: usize,
        argmax: Vec<u32>,
    },
    Upsample {
        input: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sum {
        input: usize,
    },
    Mse {
        pred: usize,
        target: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::GroupNorm { .. } => "group_norm",
            Op::Silu { .. } => "silu",
            Op::MaxPool { .. } => "maxpool2x2",
            Op::Upsample { .. } => "bilinear_upsample2x",
            Op::Concat { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Sum { .. } => "sum",
            Op::Mse { .. } => "mse_loss",
        }
    }
}

struct Node<'a> {
    value: Value<'a>,
    requires_grad: bool,
    op: Op,
}

/// A single-use record of one forward computation.
///
/// Leaves may borrow their tensors (`'a`), which lets model parameters take
/// part in a step without being copied.
pub struct Tape<'a> {
    id: u32,
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, tensor: Tensor, requires_grad: bool) -> Var {
        self.record(Value::Owned(tensor), requires_grad, Op::Leaf)
    }

    /// Borrowed leaf that receives a gradient.
    pub fn param(&mut self, tensor: &'a Tensor) -> Var {
        self.record(Value::Borrowed(tensor), true, Op::Leaf)
    }

    /// Borrowed leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: &'a Tensor) -> Var {
        self.record(Value::Borrowed(tensor), false, Op::Leaf)
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v)?.clone();
        Ok(self.leaf(t, false))
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v).is_ok() && self.nodes[v.index].requires_grad
    }

    /// Accumulated gradient of `v`, if the last backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.check(v).ok()?;
        self.grads[v.index].as_deref()
    }

    /// Moves the gradient of `v` out as a tensor shaped like its value.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.check(v).ok()?;
        let g = self.grads[v.index].take()?;
        Some(Tensor {
            shape: self.nodes[v.index].value.shape.clone(),
            data: g,
        })
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Autodiff(format!("variable {v:?} is not on this tape")));
        }
        Ok(())
    }

    fn record(&mut self, value: Value<'a>, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        Ok(self.record(Value::Owned(value), requires_grad, op))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Stride-1 cross-correlation of a `[C_in, H, W]` input with `[C_out, C_in, k, k]` weights plus a per-channel bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: Padding) -> Result<Var> {
        let (c_in, h, w) = self.value(input)?.chw()?;
        let wt = self.value(weight)?;
        let (c_out, k) = match *wt.shape() {
            [c_out, wc, k, k2] if wc == c_in && k == k2 && k > 0 => (c_out, k),
            ref s => {
                return Err(Error::dim(format!(
                    "conv2d weight {s:?} incompatible with input channels {c_in}"
                )))
            }
        };
        if self.value(bias)?.shape() != [c_out] {
            return Err(Error::dim(format!(
                "conv2d bias {:?} does not match {c_out} output channels",
                self.value(bias)?.shape()
            )));
        }
        let pad = match padding {
            Padding::Same if k % 2 == 1 => (k - 1) / 2,
            Padding::Same => return Err(Error::dim("same padding needs an odd kernel")),
            Padding::None => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::dim(format!("kernel {k} larger than padded input {h}x{w}")));
        }
        let geom = ConvGeom {
            c_in,
            h,
            w,
            k,
            pad,
            h_out: h + 2 * pad - k + 1,
            w_out: w + 2 * pad - k + 1,
        };
        let np = geom.out_pixels();
        let x = self.value(input)?.data();
        let cols = (!geom.is_pointwise()).then(|| im2col(x, &geom));
        let mut out = vec![0.0f32; c_out * np];
        {
            // computed as out^T = cols^T * w^T, the fastest operand arrangement for small planes
            let patch = geom.patch_len();
            let src = cols.as_deref().unwrap_or(x);
            gemm_strided(
                src,
                Layout::transposed(patch, np),
                self.value(weight)?.data(),
                Layout::transposed(c_out, patch),
                &mut out,
                Layout::transposed(c_out, np),
                0.0,
            );
        }
        let b = self.value(bias)?.data();
        for (row, &bv) in out.chunks_mut(np).zip(b) {
            for v in row {
                *v += bv;
            }
        }
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let keep_cols = if self.rg(weight) { cols } else { None };
        let value = Tensor::new(vec![c_out, geom.h_out, geom.w_out], out)?;
        self.push(
            value,
            rg,
            Op::Conv2d {
                input: input.index,
                weight: weight.index,
                bias: bias.index,
                geom,
                cols: keep_cols,
            },
        )
    }

    /// Group normalization over `[C, H, W]` with a per-channel affine map.
    pub fn group_norm(&mut self, input: Var, groups: usize, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let (c, h, w) = self.value(input)?.chw()?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::config(format!(
                "{c} channels cannot be split into {groups} groups"
            )));
        }
        if !(eps > 0.0) {
            return Err(Error::config("group_norm eps must be positive"));
        }
        if self.value(gamma)?.shape() != [c] || self.value(beta)?.shape() != [c] {
            return Err(Error::dim(format!(
                "group_norm affine parameters must have shape [{c}]"
            )));
        }
        let x = self.value(input)?.data();
        let gm = self.value(gamma)?.data();
        let bt = self.value(beta)?.data();
        let per_group = (c / groups) * h * w;
        let plane = h * w;
        let mut xhat = vec![0.0f32; x.len()];
        let mut rstd = Vec::with_capacity(groups);
        for g in 0..groups {
            let span = g * per_group..(g + 1) * per_group;
            let xs = &x[span.clone()];
            let mean = sum_f64(xs) / per_group as f64;
            let var = sq_dev_f64(xs, mean) / per_group as f64;
            let r = 1.0 / (var + eps as f64).sqrt();
            for (o, &v) in xhat[span].iter_mut().zip(xs) {
                *o = ((v as f64 - mean) * r) as f32;
            }
            rstd.push(r);
        }
        let mut out = vec![0.0f32; x.len()];
        for ch in 0..c {
            let span = ch * plane..(ch + 1) * plane;
            for (o, &xh) in out[span.clone()].iter_mut().zip(&xhat[span]) {
                *o = xh * gm[ch] + bt[ch];
            }
        }
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let value = Tensor::new(vec![c, h, w], out)?;
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        self.push(
            value,
            rg,
            Op::GroupNorm {
                input: input.index,
                gamma: gamma.index,
                beta: beta.index,
                groups,
                xhat,
                rstd,
            },
        )
    }

    /// Elementwise `x * sigmoid(x)`.
    pub fn silu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input)?;
        let sig: Vec<f32> = x.data().iter().map(|&v| sigmoid(v)).collect();
        let out = x.data().iter().zip(&sig).map(|(&v, &s)| v * s).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(input);
        let sigmoid = if rg { sig } else { Vec::new() };
        self.push(
            value,
            rg,
            Op::Silu {
                input: input.index,
                sigmoid,
            },
        )
    }

    /// 2x2 max pooling; ties resolve to the first element in row-major order.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input)?.chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("maxpool2x2 needs even spatial dims, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input)?.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = ch * h * w + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ch * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.rg(input);
        let value = Tensor::new(vec![c, ho, wo], out)?;
        self.push(
            value,
            rg,
            Op::MaxPool {
                input: input.index,
                argmax: if rg { argmax } else { Vec::new() },
            },
        )
    }

    /// Doubles both spatial dims by bilinear interpolation with half-pixel centers.
    pub fn bilinear_upsample2x(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input)?.chw()?;
        if h == 0 || w == 0 {
            return Err(Error::dim("bilinear_upsample2x needs non-empty spatial dims"));
        }
        let ty = upsample_taps(h);
        let tx = upsample_taps(w);
        let x = self.value(input)?.data();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let p = &x[ch * h * w..(ch + 1) * h * w];
            for y in &ty {
                let r0 = &p[y.i0 * w..(y.i0 + 1) * w];
                let r1 = &p[y.i1 * w..(y.i1 + 1) * w];
                for t in &tx {
                    let top = t.w0 * r0[t.i0] + t.w1 * r0[t.i1];
                    let bot = t.w0 * r1[t.i0] + t.w1 * r1[t.i1];
                    out.push(y.w0 * top + y.w1 * bot);
                }
            }
        }
        let rg = self.rg(input);
        let value = Tensor::new(vec![c, ho, wo], out)?;
        self.push(value, rg, Op::Upsample { input: input.index })
    }

    /// Channel-axis concatenation, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a)?.chw()?;
        let (cb, hb, wb) = self.value(b)?.chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::dim(format!(
                "concat_channels spatial mismatch {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a)?.data());
        data.extend_from_slice(self.value(b)?.data());
        let rg = self.rg(a) || self.rg(b);
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        self.push(value, rg, Op::Concat { a: a.index, b: b.index })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        if ta.shape() != tb.shape() {
            return Err(Error::dim(format!(
                "add shape mismatch {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, rg, Op::Add { a: a.index, b: b.index })
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: f64 = self.value(input)?.data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(input);
        self.push(Tensor::scalar(s as f32), rg, Op::Sum { input: input.index })
    }

    /// Mean squared difference, as a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred)?, self.value(target)?);
        if p.shape() != t.shape() {
            return Err(Error::dim(format!(
                "mse_loss shape mismatch {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        if p.is_empty() {
            return Err(Error::Empty("mse_loss over zero elements".into()));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        let mse = s / p.len() as f64;
        let rg = self.rg(pred) || self.rg(target);
        self.push(
            Tensor::scalar(mse as f32),
            rg,
            Op::Mse {
                pred: pred.index,
                target: target.index,
            },
        )
    }

    /// Reverse sweep from a scalar `loss`, accumulating (`+=`) into every
    /// gradient-requiring node that contributed to it.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardReport> {
        self.check(loss)?;
        if self.nodes[loss.index].value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.index].value.shape()
            )));
        }
        let Tape { nodes, grads, .. } = self;
        // Only leaves accumulate across sweeps; interior gradients are per-sweep.
        for (node, g) in nodes.iter().zip(grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *g = None;
            }
        }
        if nodes[loss.index].requires_grad {
            grads[loss.index].get_or_insert_with(|| vec![0.0])[0] += 1.0;
        }
        let mut visited = 0;
        for i in (0..=loss.index).rev() {
            visited += 1;
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            backprop_node(nodes, grads, node, &g);
            grads[i] = Some(g);
        }
        // non-finite interior gradients reach the leaves they feed, so checking leaves suffices
        for (i, (node, g)) in nodes.iter().zip(grads.iter()).enumerate() {
            if let (Op::Leaf, Some(g)) = (&node.op, g) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of leaf {i}")));
                }
            }
        }
        Ok(BackwardReport { nodes_visited: visited })
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Gradient buffer of node `i`, created zeroed on first touch; `None` if it takes no gradient.
fn grad_buf<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f32>>], i: usize) -> Option<&'g mut [f32]> {
    if !nodes[i].requires_grad {
        return None;
    }
    let n = nodes[i].value.len();
    Some(grads[i].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Vec<f32>>], node: &Node, g: &[f32]) {
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            cols,
        } => {
            let c_out = nodes[*bias].value.len();
            let np = geom.out_pixels();
            let patch = geom.patch_len();
            if let Some(db) = grad_buf(nodes, grads, *bias) {
                for (d, row) in db.iter_mut().zip(g.chunks(np)) {
                    *d += sum_f64(row) as f32;
                }
            }
            if let Some(dw) = grad_buf(nodes, grads, *weight) {
                let x = nodes[*input].value.data();
                let src = cols.as_deref().unwrap_or(x);
                gemm_strided(
                    src,
                    Layout::row_major(patch, np),
                    g,
                    Layout::transposed(c_out, np),
                    dw,
                    Layout::transposed(c_out, patch),
                    1.0,
                );
            }
            let w = nodes[*weight].value.data();
            if let Some(dx) = grad_buf(nodes, grads, *input) {
                if geom.is_pointwise() {
                    gemm(
                        w,
                        Layout::transposed(c_out, patch),
                        g,
                        Layout::row_major(c_out, np),
                        dx,
                        1.0,
                    );
                } else {
                    let mut dcols = vec![0.0f32; patch * np];
                    gemm_strided(
                        g,
                        Layout::transposed(c_out, np),
                        w,
                        Layout::row_major(c_out, patch),
                        &mut dcols,
                        Layout::transposed(patch, np),
                        0.0,
                    );
                    col2im_add(&dcols, geom, dx);
                }
            }
        }
        Op::GroupNorm {
            input,
            gamma,
            beta,
            groups,
            xhat,
            rstd,
        } => {
            let (c, h, w) = nodes[*input].value.chw().expect("recorded as CHW");
            let plane = h * w;
            let gm = nodes[*gamma].value.data();
            if let Some(dg) = grad_buf(nodes, grads, *gamma) {
                for ch in 0..c {
                    let span = ch * plane..(ch + 1) * plane;
                    dg[ch] += dot_f64(&g[span.clone()], &xhat[span]) as f32;
                }
            }
            if let Some(db) = grad_buf(nodes, grads, *beta) {
                for ch in 0..c {
                    db[ch] += sum_f64(&g[ch * plane..(ch + 1) * plane]) as f32;
                }
            }
            if let Some(dx) = grad_buf(nodes, grads, *input) {
                let cpg = c / groups;
                let n = (cpg * plane) as f64;
                for grp in 0..*groups {
                    let mut sum_d = 0.0f64;
                    let mut sum_dx = 0.0f64;
                    for ch in grp * cpg..(grp + 1) * cpg {
                        let span = ch * plane..(ch + 1) * plane;
                        sum_d += gm[ch] as f64 * sum_f64(&g[span.clone()]);
                        sum_dx += gm[ch] as f64 * dot_f64(&g[span.clone()], &xhat[span]);
                    }
                    let (mean_d, mean_dx) = (sum_d / n, sum_dx / n);
                    let r = rstd[grp];
                    for ch in grp * cpg..(grp + 1) * cpg {
                        for i in ch * plane..(ch + 1) * plane {
                            let d = g[i] as f64 * gm[ch] as f64;
                            dx[i] += (r * (d - mean_d - xhat[i] as f64 * mean_dx)) as f32;
                        }
                    }
                }
            }
        }
        Op::Silu { input, sigmoid } => {
            let x = nodes[*input].value.data();
            if let Some(dx) = grad_buf(nodes, grads, *input) {
                for (((d, &xv), &gv), &s) in dx.iter_mut().zip(x).zip(g).zip(sigmoid) {
                    *d += gv * s * (1.0 + xv * (1.0 - s));
                }
            }
        }
        Op::MaxPool { input, argmax } => {
            if let Some(dx) = grad_buf(nodes, grads, *input) {
                for (&idx, &gv) in argmax.iter().zip(g) {
                    dx[idx as usize] += gv;
                }
            }
        }
        Op::Upsample { input } => {
            let (c, h, w) = nodes[*input].value.chw().expect("recorded as CHW");
            if let Some(dx) = grad_buf(nodes, grads, *input) {
                let ty = upsample_taps(h);
                let tx = upsample_taps(w);
                let wo = 2 * w;
                for ch in 0..c {
                    let gp = &g[ch * 4 * h * w..(ch + 1) * 4 * h * w];
                    let dp = &mut dx[ch * h * w..(ch + 1) * h * w];
                    for (oy, y) in ty.iter().enumerate() {
                        for (ox, t) in tx.iter().enumerate() {
                            let gv = gp[oy * wo + ox];
                            dp[y.i0 * w + t.i0] += y.w0 * t.w0 * gv;
                            dp[y.i0 * w + t.i1] += y.w0 * t.w1 * gv;
                            dp[y.i1 * w + t.i0] += y.w1 * t.w0 * gv;
                            dp[y.i1 * w + t.i1] += y.w1 * t.w1 * gv;
                        }
                    }
                }
            }
        }
        Op::Concat { a, b } => {
            let na = nodes[*a].value.len();
            if let Some(da) = grad_buf(nodes, grads, *a) {
                for (d, &gv) in da.iter_mut().zip(&g[..na]) {
                    *d += gv;
                }
            }
            if let Some(db) = grad_buf(nodes, grads, *b) {
                for (d, &gv) in db.iter_mut().zip(&g[na..]) {
                    *d += gv;
                }
            }
        }
        Op::Add { a, b } => {
            for side in [*a, *b] {
                if let Some(d) = grad_buf(nodes, grads, side) {
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                }
            }
        }
        Op::Sum { input } => {
            if let Some(dx) = grad_buf(nodes, grads, *input) {
                for d in dx {
                    *d += g[0];
                }
            }
        }
        Op::Mse { pred, target } => {
            let p = nodes[*pred].value.data();
            let t = nodes[*target].value.data();
            let scale = 2.0 * g[0] as f64 / p.len() as f64;
            if let Some(dp) = grad_buf(nodes, grads, *pred) {
                for ((d, &a), &b) in dp.iter_mut().zip(p).zip(t) {
                    *d += (scale * (a as f64 - b as f64)) as f32;
                }
            }
            if let Some(dt) = grad_buf(nodes, grads, *target) {
                for ((d, &a), &b) in dt.iter_mut().zip(p).zip(t) {
                    *d -= (scale * (a as f64 - b as f64)) as f32;
                }
            }
        }
    }
}
