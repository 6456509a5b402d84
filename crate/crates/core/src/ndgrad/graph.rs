//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, so the node vector is already a topological order and
//! `backward` is a single reverse sweep.

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that made it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Relu,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Affine(Var, f64),
    Unary(Unary, Var),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernels: Var,
        stride: usize,
        padding: usize,
    },
    ChannelBias(Var, Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    GatherColumn {
        volume: Var,
        row: usize,
        col: usize,
    },
    MinMaxNormalize {
        input: Var,
        lo: usize,
        hi: usize,
        range: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    needs_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: false,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that accumulates a gradient on `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf, requires_grad);
        self.nodes[v.0].requires_grad = requires_grad;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a `requires_grad` leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    // ---- elementwise ------------------------------------------------------

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let name = match op {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let out_shape = if sa == sb || self.value(b).is_scalar() {
            sa.to_vec()
        } else if self.value(a).is_scalar() {
            sb.to_vec()
        } else {
            return Err(Error::dim(name, sa, sb));
        };
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = va.len().max(vb.len());
        let f = |x: f64, y: f64| match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let data: Vec<f64> = if va.len() == vb.len() {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else if vb.len() == 1 {
            va.iter().map(|&x| f(x, vb[0])).collect()
        } else {
            vb.iter().map(|&y| f(va[0], y)).collect()
        };
        debug_assert_eq!(data.len(), n);
        let value = Tensor::new(out_shape, data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Binary(op, a, b), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// `scale * a`.
    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        let value = self.value(a).map(|x| x * scale);
        let needs = self.needs(a);
        self.push(value, Op::Affine(a, scale), needs)
    }

    /// `a + shift`, with unit gradient.
    pub fn shift(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a).map(|x| x + shift);
        let needs = self.needs(a);
        self.push(value, Op::Affine(a, 1.0), needs)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let x = self.value(a);
        let value = match op {
            Unary::Sigmoid => x.map(sigmoid),
            Unary::Tanh => x.map(f64::tanh),
            Unary::Exp => x.map(f64::exp),
            Unary::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive argument {bad}"),
                    });
                }
                x.map(f64::ln)
            }
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::Square => x.map(|v| v * v),
        };
        let needs = self.needs(a);
        Ok(self.push(value, Op::Unary(op, a), needs))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a).expect("infallible")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a).expect("infallible")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a).expect("infallible")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a).expect("infallible")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a).expect("infallible")
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(&da[i * k..(i + 1) * k], db);
            }
        } else {
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = da[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    axpy(aip, &db[p * n..(p + 1) * n], row);
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    /// `w · x + b` for a weight matrix `[m×k]`, vector `[k]` and bias `[m]`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let k = self.value(x).len();
        let col = self.reshape(x, &[k, 1])?;
        let y = self.matmul(w, col)?;
        let m = self.shape(w)[0];
        let y = self.reshape(y, &[m])?;
        self.add(y, b)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input), self.shape(kernels));
        if si.len() != 3 || sk.len() != 4 || si[0] != sk[1] {
            return Err(Error::dim("conv2d", si, sk));
        }
        if stride == 0 {
            return Err(Error::usage("conv2d stride must be at least 1"));
        }
        let geo = ConvGeometry::new(si, sk, stride, padding)
            .ok_or_else(|| Error::dim("conv2d", si, sk))?;
        let mut out = vec![0.0; geo.c_out * geo.h_out * geo.w_out];
        conv_forward(&geo, self.value(input).data(), self.value(kernels).data(), &mut out);
        let value = Tensor::new(vec![geo.c_out, geo.h_out, geo.w_out], out)?;
        let needs = self.needs(input) || self.needs(kernels);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernels,
                stride,
                padding,
            },
            needs,
        ))
    }

    /// Adds `bias[c]` to every spatial entry of channel `c` of a `[C×H×W]` volume.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 3 || sb != [sx[0]] {
            return Err(Error::dim("channel_bias", sx, sb));
        }
        let plane = sx[1] * sx[2];
        let b = self.value(bias).data();
        let mut value = self.value(x).clone();
        for (c, chunk) in value.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v += b[c];
            }
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::ChannelBias(x, bias), needs))
    }

    // ---- reductions and reshaping -----------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        check_finite("softmax", x)?;
        let mx = x.max();
        let e: Vec<f64> = x.data().iter().map(|&v| (v - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let value = Tensor::new(x.shape().to_vec(), e.into_iter().map(|v| v / z).collect())?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Softmax(a), needs))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        check_finite("log_softmax", x)?;
        let mx = x.max();
        let lse = mx + x.data().iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
        let value = x.map(|v| v - lse);
        let needs = self.needs(a);
        Ok(self.push(value, Op::LogSoftmax(a), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    pub fn flatten(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.reshape(a, &[n]).expect("same element count")
    }

    /// Flat concatenation into a vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::usage("concat of zero tensors"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), needs))
    }

    /// Flat sub-range `[start, start + len)` as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if len == 0 || start + len > x.len() {
            return Err(Error::Bounds {
                op: "slice",
                index: vec![start, start + len],
                bounds: vec![x.len()],
            });
        }
        let value = Tensor::vector(x.data()[start..start + len].to_vec());
        let needs = self.needs(a);
        Ok(self.push(value, Op::Slice(a, start), needs))
    }

    /// Single entry as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        self.slice(a, index, 1)
    }

    /// Channel column `V[·, row, col]` of a `[C×H×W]` volume.
    pub fn gather_column(&mut self, volume: Var, row: usize, col: usize) -> Result<Var> {
        let s = self.shape(volume);
        if s.len() != 3 {
            return Err(Error::dim("gather_column", s, &[0, 0, 0]));
        }
        if row >= s[1] || col >= s[2] {
            return Err(Error::Bounds {
                op: "gather_column",
                index: vec![row, col],
                bounds: vec![s[1], s[2]],
            });
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let d = self.value(volume).data();
        let column = (0..c).map(|ch| d[ch * h * w + row * w + col]).collect();
        let needs = self.needs(volume);
        Ok(self.push(
            Tensor::vector(column),
            Op::GatherColumn { volume, row, col },
            needs,
        ))
    }

    /// `(x − min x) / (max x − min x)`; a constant input maps to zeros.
    pub fn minmax_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (lo, hi) = (argmin(x.data()), x.argmax());
        let range = x.data()[hi] - x.data()[lo];
        let value = if range > 0.0 {
            let mn = x.data()[lo];
            x.map(|v| (v - mn) / range)
        } else {
            Tensor::zeros(x.shape())
        };
        let needs = self.needs(a);
        self.push(
            value,
            Op::MinMaxNormalize {
                input: a,
                lo,
                hi,
                range,
            },
            needs,
        )
    }

    // ---- reverse sweep ----------------------------------------------------

    /// Accumulates `d loss / d leaf` into every `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    grads[i] = Some(g);
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let node = &mut self.nodes[i];
            let g = Tensor::new(node.value.shape().to_vec(), g)?;
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary(op, a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    match op {
                        Binary::Add | Binary::Sub => reduce_into(ga, g.iter().copied()),
                        Binary::Mul => reduce_into(
                            ga,
                            g.iter().enumerate().map(|(j, &gj)| gj * bcast(vb, j)),
                        ),
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    match op {
                        Binary::Add => reduce_into(gb, g.iter().copied()),
                        Binary::Sub => reduce_into(gb, g.iter().map(|&gj| -gj)),
                        Binary::Mul => reduce_into(
                            gb,
                            g.iter().enumerate().map(|(j, &gj)| gj * bcast(va, j)),
                        ),
                    }
                }
            }
            Op::Affine(a, scale) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(*scale, g, ga);
                }
            }
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for j in 0..g.len() {
                        let d = match op {
                            Unary::Sigmoid => y[j] * (1.0 - y[j]),
                            Unary::Tanh => 1.0 - y[j] * y[j],
                            Unary::Exp => y[j],
                            Unary::Log => 1.0 / x[j],
                            Unary::Relu => {
                                if x[j] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Square => 2.0 * x[j],
                        };
                        ga[j] += g[j] * d;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    // ga[i,p] += Σ_j g[i,j] b[p,j]
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        let row = &mut ga[i * k..(i + 1) * k];
                        if n == 1 {
                            axpy(gi[0], db, row);
                        } else {
                            for (p, r) in row.iter_mut().enumerate() {
                                *r += dot(gi, &db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    // gb[p,j] += Σ_i a[i,p] g[i,j]
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = da[i * k + p];
                            if aip != 0.0 {
                                axpy(aip, gi, &mut gb[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
                padding,
            } => {
                let geo = ConvGeometry::new(self.shape(*input), self.shape(*kernels), *stride, *padding)
                    .expect("validated in forward");
                let (din, dk) = (self.value(*input).data(), self.value(*kernels).data());
                if let Some(gi) = self.slot(grads, *input) {
                    conv_backward_input(&geo, dk, g, gi);
                }
                if let Some(gk) = self.slot(grads, *kernels) {
                    conv_backward_kernels(&geo, din, g, gk);
                }
            }
            Op::ChannelBias(x, b) => {
                if let Some(gx) = self.slot(grads, *x) {
                    axpy(1.0, g, gx);
                }
                let s = self.shape(*x);
                let plane = s[1] * s[2];
                if let Some(gb) = self.slot(grads, *b) {
                    for (c, chunk) in g.chunks(plane).enumerate() {
                        gb[c] += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for v in ga {
                        *v += g[0];
                    }
                }
            }
            Op::Softmax(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let gy = dot(g, y);
                    for j in 0..y.len() {
                        ga[j] += y[j] * (g[j] - gy);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let gs: f64 = g.iter().sum();
                    for j in 0..y.len() {
                        ga[j] += g[j] - y[j].exp() * gs;
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(1.0, g, ga);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        axpy(1.0, &g[off..off + n], gp);
                    }
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = self.slot(grads, *a) {
                    axpy(1.0, g, &mut ga[*start..*start + g.len()]);
                }
            }
            Op::GatherColumn { volume, row, col } => {
                let s = self.shape(*volume);
                let (h, w) = (s[1], s[2]);
                if let Some(gv) = self.slot(grads, *volume) {
                    for (c, &gc) in g.iter().enumerate() {
                        gv[c * h * w + row * w + col] += gc;
                    }
                }
            }
            Op::MinMaxNormalize {
                input,
                lo,
                hi,
                range,
            } => {
                if *range <= 0.0 {
                    return;
                }
                if let Some(ga) = self.slot(grads, *input) {
                    let gs: f64 = g.iter().sum();
                    let gy = dot(g, y);
                    for (a, &gj) in ga.iter_mut().zip(g) {
                        *a += gj / range;
                    }
                    ga[*lo] += (gy - gs) / range;
                    ga[*hi] -= gy / range;
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.needs(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(op: &'static str, x: &Tensor) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            op,
            detail: "non-finite input".into(),
        })
    }
}

fn argmin(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v < x[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn bcast(x: &[f64], j: usize) -> f64 {
    if x.len() == 1 {
        x[0]
    } else {
        x[j]
    }
}

/// Adds `src` into `dst`, summing everything when `dst` is a broadcast scalar.
fn reduce_into(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    if dst.len() == 1 {
        dst[0] += src.sum::<f64>();
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

struct ConvGeometry {
    c_in: usize,
    h_in: usize,
    w_in: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeometry {
    fn new(si: &[usize], sk: &[usize], stride: usize, padding: usize) -> Option<Self> {
        let (c_in, h_in, w_in) = (si[0], si[1], si[2]);
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > h_in + 2 * padding || kw > w_in + 2 * padding {
            return None;
        }
        Some(ConvGeometry {
            c_in,
            h_in,
            w_in,
            c_out,
            kh,
            kw,
            h_out: (h_in + 2 * padding - kh) / stride + 1,
            w_out: (w_in + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        })
    }

    /// Output positions `o` for which `o*stride + k - padding` lands in `[0, extent)`.
    fn valid(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        // o*s + k - p <= extent - 1
        let hi = if extent + p > k {
            ((extent + p - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

fn conv_forward(geo: &ConvGeometry, input: &[f64], kernels: &[f64], out: &mut [f64]) {
    let ConvGeometry {
        c_in,
        h_in,
        w_in,
        c_out,
        kh,
        kw,
        h_out,
        w_out,
        stride,
        padding,
    } = *geo;
    for co in 0..c_out {
        let oplane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
        for ci in 0..c_in {
            let iplane = &input[ci * h_in * w_in..(ci + 1) * h_in * w_in];
            for ky in 0..kh {
                let (oy0, oy1) = geo.valid(ky, h_in, h_out);
                for kx in 0..kw {
                    let w = kernels[((co * c_in + ci) * kh + ky) * kw + kx];
                    let (ox0, ox1) = geo.valid(kx, w_in, w_out);
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        let irow = &iplane[iy * w_in..(iy + 1) * w_in];
                        let orow = &mut oplane[oy * w_out..(oy + 1) * w_out];
                        for ox in ox0..ox1 {
                            orow[ox] += w * irow[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_input(geo: &ConvGeometry, kernels: &[f64], g: &[f64], gin: &mut [f64]) {
    let ConvGeometry {
        c_in,
        h_in,
        w_in,
        c_out,
        kh,
        kw,
        h_out,
        w_out,
        stride,
        padding,
    } = *geo;
    for co in 0..c_out {
        let gplane = &g[co * h_out * w_out..(co + 1) * h_out * w_out];
        for ci in 0..c_in {
            let iplane = &mut gin[ci * h_in * w_in..(ci + 1) * h_in * w_in];
            for ky in 0..kh {
                let (oy0, oy1) = geo.valid(ky, h_in, h_out);
                for kx in 0..kw {
                    let w = kernels[((co * c_in + ci) * kh + ky) * kw + kx];
                    let (ox0, ox1) = geo.valid(kx, w_in, w_out);
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        let grow = &gplane[oy * w_out..(oy + 1) * w_out];
                        let irow = &mut iplane[iy * w_in..(iy + 1) * w_in];
                        for ox in ox0..ox1 {
                            irow[ox * stride + kx - padding] += w * grow[ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_kernels(geo: &ConvGeometry, input: &[f64], g: &[f64], gk: &mut [f64]) {
    let ConvGeometry {
        c_in,
        h_in,
        w_in,
        c_out,
        kh,
        kw,
        h_out,
        w_out,
        stride,
        padding,
    } = *geo;
    for co in 0..c_out {
        let gplane = &g[co * h_out * w_out..(co + 1) * h_out * w_out];
        for ci in 0..c_in {
            let iplane = &input[ci * h_in * w_in..(ci + 1) * h_in * w_in];
            for ky in 0..kh {
                let (oy0, oy1) = geo.valid(ky, h_in, h_out);
                for kx in 0..kw {
                    let (ox0, ox1) = geo.valid(kx, w_in, w_out);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        let grow = &gplane[oy * w_out..(oy + 1) * w_out];
                        let irow = &iplane[iy * w_in..(iy + 1) * w_in];
                        for ox in ox0..ox1 {
                            acc += grow[ox] * irow[ox * stride + kx - padding];
                        }
                    }
                    gk[((co * c_in + ci) * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }
}
