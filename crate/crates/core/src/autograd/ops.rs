//! Forward operations and their backward rules.

use rayon::prelude::*;

use super::kernels::{gemm, ConvGeometry, Layout, Padding};
use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Elementwise single-input functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Cos,
    Sin,
    Tanh,
    Relu,
    Square,
    Sqrt,
    Reciprocal,
    Abs,
    Exp,
    Log,
    Neg,
    Softplus,
    Sigmoid,
    /// Multiplication by a constant.
    Scale(f64),
    /// Addition of a constant.
    Offset(f64),
    /// Power with a constant exponent.
    Pow(f64),
}

impl UnaryOp {
    pub fn name(&self) -> &'static str {
        match self {
            UnaryOp::Cos => "cos",
            UnaryOp::Sin => "sin",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Relu => "relu",
            UnaryOp::Square => "square",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Reciprocal => "reciprocal",
            UnaryOp::Abs => "abs",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Neg => "neg",
            UnaryOp::Softplus => "softplus",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Scale(_) => "scale",
            UnaryOp::Offset(_) => "offset",
            UnaryOp::Pow(_) => "pow",
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let bad = match self {
            UnaryOp::Sqrt => x < 0.0,
            UnaryOp::Log => x <= 0.0,
            UnaryOp::Reciprocal => x == 0.0,
            UnaryOp::Pow(e) => x < 0.0 && e.fract() != 0.0,
            _ => false,
        };
        if bad {
            Err(Error::numeric(format!("{} is undefined at {x}", self.name())))
        } else {
            Ok(())
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            UnaryOp::Cos => x.cos(),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Tanh => x.tanh(),
            UnaryOp::Relu => x * step(x),
            UnaryOp::Square => x * x,
            UnaryOp::Sqrt => x.sqrt(),
            UnaryOp::Reciprocal => 1.0 / x,
            UnaryOp::Abs => x.abs(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Neg => -x,
            UnaryOp::Softplus => softplus(x),
            UnaryOp::Sigmoid => sigmoid(x),
            UnaryOp::Scale(s) => s * x,
            UnaryOp::Offset(c) => x + c,
            UnaryOp::Pow(e) => x.powf(e),
        }
    }

    /// dy/dx given input `x` and output `y`.
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            UnaryOp::Cos => -x.sin(),
            UnaryOp::Sin => x.cos(),
            UnaryOp::Tanh => 1.0 - y * y,
            UnaryOp::Relu => step(x),
            UnaryOp::Square => 2.0 * x,
            UnaryOp::Sqrt => 0.5 / y,
            UnaryOp::Reciprocal => -y * y,
            UnaryOp::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Exp => y,
            UnaryOp::Log => 1.0 / x,
            UnaryOp::Neg => -1.0,
            UnaryOp::Softplus => sigmoid(x),
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Scale(s) => s,
            UnaryOp::Offset(_) => 1.0,
            UnaryOp::Pow(e) => e * x.powf(e - 1.0),
        }
    }
}

/// Elementwise two-input functions with NCHW broadcasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn name(&self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    fn apply(&self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }

    /// (d/da, d/db).
    fn partials(&self, a: f64, b: f64) -> (f64, f64) {
        match self {
            BinaryOp::Add => (1.0, 1.0),
            BinaryOp::Sub => (1.0, -1.0),
            BinaryOp::Mul => (b, a),
            BinaryOp::Div => (1.0 / b, -a / (b * b)),
        }
    }
}

/// Heaviside step with `step(0) = 0`.
pub(crate) fn step(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Strides of `shape` when read as broadcast into `out`: zero along broadcast axes.
fn broadcast_strides(shape: Shape, out: Shape) -> [usize; 4] {
    let s = shape.strides();
    let mut r = [0; 4];
    for i in 0..4 {
        r[i] = if shape.0[i] == out.0[i] { s[i] } else { 0 };
    }
    r
}

/// Calls `f(out_index, a_index, b_index)` over every output element.
fn for_each_broadcast(a: Shape, b: Shape, out: Shape, mut f: impl FnMut(usize, usize, usize)) {
    let sa = broadcast_strides(a, out);
    let sb = broadcast_strides(b, out);
    let [n, c, h, w] = out.0;
    let mut o = 0;
    for i0 in 0..n {
        for i1 in 0..c {
            for i2 in 0..h {
                let ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
                let bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
                for i3 in 0..w {
                    f(o, ba + i3 * sa[3], bb + i3 * sb[3]);
                    o += 1;
                }
            }
        }
    }
}

fn check_bias(g: &Graph, bias: Option<Var>, channels: usize, what: &str) -> Result<()> {
    if let Some(b) = bias {
        let s = g.shape(b);
        if s.numel() != channels {
            return Err(Error::config(format!(
                "{what}: bias of shape {s} does not match {channels} output channels"
            )));
        }
    }
    Ok(())
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>, plane: usize) {
    if let Some(b) = bias {
        for (row, &bv) in out.chunks_mut(plane).zip(b.data()) {
            for v in row {
                *v += bv;
            }
        }
    }
}

fn bias_grad(grad: &Tensor, channels: usize) -> Tensor {
    let plane = grad.shape().plane();
    let mut db = vec![0.0; channels];
    for item in grad.data().chunks(channels * plane) {
        for (c, row) in item.chunks(plane).enumerate() {
            db[c] += row.iter().sum::<f64>();
        }
    }
    Tensor::channel_vector(&db)
}

/// Sums per-batch-item weight gradients in item order.
fn sum_in_order(parts: Vec<Vec<f64>>, shape: Shape) -> Tensor {
    let mut acc = vec![0.0; shape.numel()];
    for p in parts {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    Tensor::from_vec(shape, acc).expect("weight gradient shape")
}

fn concat_items(items: Vec<Vec<f64>>, shape: Shape) -> Tensor {
    let data: Vec<f64> = items.into_iter().flatten().collect();
    Tensor::from_vec(shape, data).expect("batched output shape")
}

impl Graph {
    /// Strided 2-D convolution. `weight` is `[out_ch, in_ch, kh, kw]`, `bias` has `out_ch` entries.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let [c_out, c_in, kh, kw] = ws.dims();
        if xs.channels() != c_in {
            return Err(Error::config(format!(
                "conv2d: input {xs} has {} channels but weight {ws} expects {c_in}",
                xs.channels()
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive"));
        }
        check_bias(self, bias, c_out, "conv2d")?;
        let geometry = ConvGeometry::new(c_in, xs.height(), xs.width(), kh, kw, stride, padding)
            .ok_or_else(|| {
                Error::config(format!("conv2d: kernel {kh}x{kw} does not fit input {xs}"))
            })?;
        let out_shape = Shape::new(xs.batch(), c_out, geometry.out_h, geometry.out_w);
        let value = {
            let x = self.value(input);
            let w = self.value(weight);
            let b = bias.map(|b| self.value(b));
            let (k, p) = (geometry.patch_len(), geometry.out_plane());
            let items: Vec<Vec<f64>> = (0..xs.batch())
                .into_par_iter()
                .map(|bi| {
                    let mut cols = vec![0.0; k * p];
                    geometry.im2col(x.item_slice(bi), &mut cols);
                    let mut out = vec![0.0; c_out * p];
                    gemm(c_out, k, p, w.data(), Layout::Normal, &cols, Layout::Normal, 0.0, &mut out);
                    add_bias(&mut out, b, p);
                    out
                })
                .collect();
            concat_items(items, out_shape)
        };
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            value,
            &inputs,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry: Box::new(geometry),
            },
        )
    }

    /// Transposed convolution, the adjoint of [`conv2d`](Self::conv2d) with the same weight.
    ///
    /// `weight` is `[in_ch, out_ch, kh, kw]`; zero padding `padding` and
    /// `output_padding` extra rows/columns on the bottom/right select the
    /// output extent `(H - 1) * stride - 2 * padding + kh + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let [c_in, c_out, kh, kw] = ws.dims();
        if xs.channels() != c_in {
            return Err(Error::config(format!(
                "conv_transpose2d: input {xs} has {} channels but weight {ws} expects {c_in}",
                xs.channels()
            )));
        }
        if stride == 0 || output_padding >= stride.max(1) {
            return Err(Error::config(format!(
                "conv_transpose2d: invalid stride {stride} / output padding {output_padding}"
            )));
        }
        check_bias(self, bias, c_out, "conv_transpose2d")?;
        let extent = |n: usize, k: usize| -> Result<usize> {
            ((n.max(1) - 1) * stride + k + output_padding)
                .checked_sub(2 * padding)
                .filter(|&e| e > 0 && n > 0)
                .ok_or_else(|| Error::config("conv_transpose2d: empty output"))
        };
        let (out_h, out_w) = (extent(xs.height(), kh)?, extent(xs.width(), kw)?);
        let geometry =
            ConvGeometry::new(c_out, out_h, out_w, kh, kw, stride, Padding::Zero(padding))
                .filter(|g| g.out_h == xs.height() && g.out_w == xs.width())
                .ok_or_else(|| Error::config("conv_transpose2d: inconsistent geometry"))?;
        let out_shape = Shape::new(xs.batch(), c_out, out_h, out_w);
        let value = {
            let x = self.value(input);
            let w = self.value(weight);
            let b = bias.map(|b| self.value(b));
            let (k, p) = (geometry.patch_len(), geometry.out_plane());
            let items: Vec<Vec<f64>> = (0..xs.batch())
                .into_par_iter()
                .map(|bi| {
                    let mut cols = vec![0.0; k * p];
                    gemm(k, c_in, p, w.data(), Layout::Transposed, x.item_slice(bi), Layout::Normal, 0.0, &mut cols);
                    let mut out = vec![0.0; c_out * geometry.in_plane()];
                    geometry.col2im(&cols, &mut out);
                    add_bias(&mut out, b, geometry.in_plane());
                    out
                })
                .collect();
            concat_items(items, out_shape)
        };
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            value,
            &inputs,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geometry: Box::new(geometry),
            },
        )
    }

    /// Per-pixel affine channel map. `weight` is `[out_ch, in_ch, 1, 1]`.
    pub fn dense_channelwise(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let [c_out, c_in, kh, kw] = ws.dims();
        if (kh, kw) != (1, 1) || xs.channels() != c_in {
            return Err(Error::config(format!(
                "dense_channelwise: weight {ws} incompatible with input {xs}"
            )));
        }
        check_bias(self, bias, c_out, "dense_channelwise")?;
        let p = xs.plane();
        let out_shape = Shape::new(xs.batch(), c_out, xs.height(), xs.width());
        let value = {
            let x = self.value(input);
            let w = self.value(weight);
            let b = bias.map(|b| self.value(b));
            let items: Vec<Vec<f64>> = (0..xs.batch())
                .into_par_iter()
                .map(|bi| {
                    let mut out = vec![0.0; c_out * p];
                    gemm(c_out, c_in, p, w.data(), Layout::Normal, x.item_slice(bi), Layout::Normal, 0.0, &mut out);
                    add_bias(&mut out, b, p);
                    out
                })
                .collect();
            concat_items(items, out_shape)
        };
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(value, &inputs, Op::Dense { input, weight, bias })
    }

    pub fn unary(&mut self, input: Var, op: UnaryOp) -> Result<Var> {
        let x = self.value(input);
        for &v in x.data() {
            op.check_domain(v)?;
        }
        let value = x.map(|v| op.apply(v));
        self.push(value, &[input], Op::Unary { input, op })
    }

    pub fn binary(&mut self, lhs: Var, rhs: Var, op: BinaryOp) -> Result<Var> {
        let (sa, sb) = (self.shape(lhs), self.shape(rhs));
        let out = sa.broadcast(&sb).ok_or_else(|| {
            Error::config(format!("{}: shapes {sa} and {sb} do not broadcast", op.name()))
        })?;
        let (a, b) = (self.value(lhs).data(), self.value(rhs).data());
        if op == BinaryOp::Div {
            if let Some(z) = b.iter().position(|&v| v == 0.0) {
                return Err(Error::numeric(format!("div: zero divisor at flat index {z}")));
            }
        }
        let mut data = vec![0.0; out.numel()];
        if sa == sb {
            for ((o, &x), &y) in data.iter_mut().zip(a).zip(b) {
                *o = op.apply(x, y);
            }
        } else {
            for_each_broadcast(sa, sb, out, |o, ia, ib| data[o] = op.apply(a[ia], b[ib]));
        }
        let value = Tensor::from_vec(out, data)?;
        self.push(value, &[lhs, rhs], Op::Binary { lhs, rhs, op })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryOp::Div)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryOp::Cos)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryOp::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryOp::Relu)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryOp::Square)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, UnaryOp::Sqrt)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, UnaryOp::Scale(factor))
    }

    pub fn offset(&mut self, x: Var, constant: f64) -> Result<Var> {
        self.unary(x, UnaryOp::Offset(constant))
    }

    /// Sum of all entries as a one-element tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(value, &[input], Op::Sum { input })
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let value = Tensor::scalar(x.sum() / x.numel() as f64);
        self.push(value, &[input], Op::Mean { input })
    }

    /// Mean over height and width: `[B, C, H, W] -> [B, C, 1, 1]`.
    pub fn mean_spatial(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        let plane = s.plane();
        let data = x
            .data()
            .chunks(plane)
            .map(|row| row.iter().sum::<f64>() / plane as f64)
            .collect();
        let value = Tensor::from_vec(Shape::new(s.batch(), s.channels(), 1, 1), data)?;
        self.push(value, &[input], Op::MeanSpatial { input })
    }

    pub fn reshape(&mut self, input: Var, shape: Shape) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        self.push(value, &[input], Op::Reshape { input })
    }

    /// `max(x, bound)`. The gradient passes where `x >= bound`, and also below
    /// the bound when descent would push `x` back up.
    pub fn lower_bound(&mut self, input: Var, bound: f64) -> Result<Var> {
        let value = self.value(input).map(|v| v.max(bound));
        self.push(value, &[input], Op::LowerBound { input, bound })
    }
}

/// Input-gradient contributions of node `idx` given its output gradient.
pub(crate) fn backward_rule(g: &Graph, idx: usize, grad: &Tensor) -> Result<Vec<(Var, Tensor)>> {
    let node = &g.nodes[idx];
    let needs = |v: Var| g.requires_grad(v);
    let mut out = Vec::with_capacity(3);
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geometry,
        } => {
            let x = g.value(*input);
            let w = g.value(*weight);
            let [c_out, ..] = w.shape().dims();
            let (k, p) = (geometry.patch_len(), geometry.out_plane());
            let (want_x, want_w) = (needs(*input), needs(*weight));
            let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..x.shape().batch())
                .into_par_iter()
                .map(|bi| {
                    let dy = grad.item_slice(bi);
                    let mut dx = Vec::new();
                    let mut dw = Vec::new();
                    if want_w {
                        let mut cols = vec![0.0; k * p];
                        geometry.im2col(x.item_slice(bi), &mut cols);
                        dw = vec![0.0; c_out * k];
                        gemm(c_out, p, k, dy, Layout::Normal, &cols, Layout::Transposed, 0.0, &mut dw);
                    }
                    if want_x {
                        let mut dcols = vec![0.0; k * p];
                        gemm(k, c_out, p, w.data(), Layout::Transposed, dy, Layout::Normal, 0.0, &mut dcols);
                        dx = vec![0.0; geometry.channels * geometry.in_plane()];
                        geometry.col2im(&dcols, &mut dx);
                    }
                    (dx, dw)
                })
                .collect();
            let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            if want_x {
                out.push((*input, concat_items(dxs, x.shape())));
            }
            if want_w {
                out.push((*weight, sum_in_order(dws, w.shape())));
            }
            if let Some(b) = bias.filter(|b| needs(*b)) {
                out.push((b, bias_grad(grad, c_out).reshape(g.shape(b))?));
            }
        }
        Op::ConvTranspose2d {
            input,
            weight,
            bias,
            geometry,
        } => {
            let x = g.value(*input);
            let w = g.value(*weight);
            let [c_in, c_out, ..] = w.shape().dims();
            let (k, p) = (geometry.patch_len(), geometry.out_plane());
            let (want_x, want_w) = (needs(*input), needs(*weight));
            let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..x.shape().batch())
                .into_par_iter()
                .map(|bi| {
                    let mut cols = vec![0.0; k * p];
                    geometry.im2col(grad.item_slice(bi), &mut cols);
                    let mut dx = Vec::new();
                    let mut dw = Vec::new();
                    if want_x {
                        dx = vec![0.0; c_in * p];
                        gemm(c_in, k, p, w.data(), Layout::Normal, &cols, Layout::Normal, 0.0, &mut dx);
                    }
                    if want_w {
                        dw = vec![0.0; c_in * k];
                        gemm(c_in, p, k, x.item_slice(bi), Layout::Normal, &cols, Layout::Transposed, 0.0, &mut dw);
                    }
                    (dx, dw)
                })
                .collect();
            let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            if want_x {
                out.push((*input, concat_items(dxs, x.shape())));
            }
            if want_w {
                out.push((*weight, sum_in_order(dws, w.shape())));
            }
            if let Some(b) = bias.filter(|b| needs(*b)) {
                out.push((b, bias_grad(grad, c_out).reshape(g.shape(b))?));
            }
        }
        Op::Dense {
            input,
            weight,
            bias,
        } => {
            let x = g.value(*input);
            let w = g.value(*weight);
            let [c_out, c_in, ..] = w.shape().dims();
            let p = x.shape().plane();
            let (want_x, want_w) = (needs(*input), needs(*weight));
            let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..x.shape().batch())
                .into_par_iter()
                .map(|bi| {
                    let dy = grad.item_slice(bi);
                    let mut dx = Vec::new();
                    let mut dw = Vec::new();
                    if want_x {
                        dx = vec![0.0; c_in * p];
                        gemm(c_in, c_out, p, w.data(), Layout::Transposed, dy, Layout::Normal, 0.0, &mut dx);
                    }
                    if want_w {
                        dw = vec![0.0; c_out * c_in];
                        gemm(c_out, p, c_in, dy, Layout::Normal, x.item_slice(bi), Layout::Transposed, 0.0, &mut dw);
                    }
                    (dx, dw)
                })
                .collect();
            let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            if want_x {
                out.push((*input, concat_items(dxs, x.shape())));
            }
            if want_w {
                out.push((*weight, sum_in_order(dws, w.shape())));
            }
            if let Some(b) = bias.filter(|b| needs(*b)) {
                out.push((b, bias_grad(grad, c_out).reshape(g.shape(b))?));
            }
        }
        Op::Unary { input, op } => {
            let x = g.value(*input);
            let y = &node.value;
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(grad.data())
                .map(|((&xv, &yv), &gv)| gv * op.derivative(xv, yv))
                .collect();
            out.push((*input, Tensor::from_vec(x.shape(), data)?));
        }
        Op::Binary { lhs, rhs, op } => {
            let (ta, tb) = (g.value(*lhs), g.value(*rhs));
            let (sa, sb) = (ta.shape(), tb.shape());
            let (a, b) = (ta.data(), tb.data());
            let mut ga = vec![0.0; sa.numel()];
            let mut gb = vec![0.0; sb.numel()];
            let gd = grad.data();
            if sa == sb {
                for i in 0..gd.len() {
                    let (pa, pb) = op.partials(a[i], b[i]);
                    ga[i] = gd[i] * pa;
                    gb[i] = gd[i] * pb;
                }
            } else {
                for_each_broadcast(sa, sb, grad.shape(), |o, ia, ib| {
                    let (pa, pb) = op.partials(a[ia], b[ib]);
                    ga[ia] += gd[o] * pa;
                    gb[ib] += gd[o] * pb;
                });
            }
            if needs(*lhs) {
                out.push((*lhs, Tensor::from_vec(sa, ga)?));
            }
            if needs(*rhs) {
                out.push((*rhs, Tensor::from_vec(sb, gb)?));
            }
        }
        Op::Sum { input } => {
            out.push((*input, Tensor::full(g.shape(*input), grad.item())));
        }
        Op::Mean { input } => {
            let s = g.shape(*input);
            out.push((*input, Tensor::full(s, grad.item() / s.numel() as f64)));
        }
        Op::MeanSpatial { input } => {
            let s = g.shape(*input);
            let plane = s.plane();
            let inv = 1.0 / plane as f64;
            let data = grad
                .data()
                .iter()
                .flat_map(|&gv| std::iter::repeat(gv * inv).take(plane))
                .collect();
            out.push((*input, Tensor::from_vec(s, data)?));
        }
        Op::Reshape { input } => {
            out.push((*input, grad.clone().reshape(g.shape(*input))?));
        }
        Op::LowerBound { input, bound } => {
            let x = g.value(*input);
            let data = x
                .data()
                .iter()
                .zip(grad.data())
                .map(|(&xv, &gv)| if xv >= *bound || gv < 0.0 { gv } else { 0.0 })
                .collect();
            out.push((*input, Tensor::from_vec(x.shape(), data)?));
        }
    }
    Ok(out)
}
