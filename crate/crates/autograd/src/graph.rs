//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so a reverse sweep over the node list is a valid
//! topological order for backpropagation.

use crate::kernels::{self, ConvGeom};
use crate::{AutogradError, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    Sum(Var),
    Mean(Var),
    Silu(Var),
    Exp(Var),
    Log { x: Var, floor: f64 },
    Conv3d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Upsample2 { x: Var, channels: usize, dims: [usize; 3] },
    Concat(Vec<Var>),
    Narrow { x: Var, start: usize, len: usize },
    RotateZ { x: Var, n: usize, quarter_turns: u8 },
    GlobalAvgPool(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape(Var),
    SoftmaxRows { x: Var, cols: usize },
    LogSoftmaxRows { x: Var, cols: usize },
    L2Normalize { x: Var, norm: f64 },
    Gather { x: Var, indices: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(AutogradError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
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
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the tape (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "div", |x, y| x / y)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::Div(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).scale(c);
        let ng = self.grad_of(&[a]);
        self.push(t, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|v| v + c);
        let ng = self.grad_of(&[a]);
        self.push(t, Op::AddScalar(a), ng)
    }

    /// Multiply every element of `a` by the one-element tensor `s`.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(AutogradError::shape("mul_scalar_var", &[1], self.shape(s)));
        }
        let c = self.value(s).item();
        let t = self.value(a).scale(c);
        let ng = self.grad_of(&[a, s]);
        Ok(self.push(t, Op::MulScalarVar(a, s), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let ng = self.grad_of(&[a]);
        self.push(t, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).mean());
        let ng = self.grad_of(&[a]);
        self.push(t, Op::Mean(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(silu);
        let ng = self.grad_of(&[a]);
        self.push(t, Op::Silu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        let ng = self.grad_of(&[a]);
        self.push(t, Op::Exp(a), ng)
    }

    /// `ln(max(x, floor))`; clamped elements receive zero gradient.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let t = self.value(a).map(|v| v.max(floor).ln());
        let ng = self.grad_of(&[a]);
        self.push(t, Op::Log { x: a, floor }, ng)
    }

    /// Cubic-kernel convolution of a `[C, D, H, W]` input with weight
    /// `[O, C, k, k, k]` and bias `[O]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 5 || ws[2] != ws[3] || ws[3] != ws[4] {
            return Err(AutogradError::shape("conv3d", &ws, &xs));
        }
        if ws[1] != xs[0] {
            return Err(AutogradError::shape("conv3d input channels", &[ws[1]], &[xs[0]]));
        }
        if self.shape(b) != [ws[0]] {
            return Err(AutogradError::shape("conv3d bias", &[ws[0]], self.shape(b)));
        }
        let geom = ConvGeom {
            in_channels: xs[0],
            out_channels: ws[0],
            in_dims: [xs[1], xs[2], xs[3]],
            kernel: ws[2],
            stride,
            pad,
        };
        let out = geom
            .out_dims()
            .ok_or_else(|| AutogradError::shape("conv3d geometry", &ws, &xs))?;
        let y = kernels::conv3d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let t = Tensor::new(vec![ws[0], out[0], out[1], out[2]], y)?;
        let ng = self.grad_of(&[x, w, b]);
        Ok(self.push(t, Op::Conv3d { x, w, b, geom }, ng))
    }

    /// Trilinear 2x upsampling of a `[C, D, H, W]` tensor.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(AutogradError::Rank { op: "upsample2", expected: 4, got: s.len() });
        }
        let dims = [s[1], s[2], s[3]];
        let y = kernels::upsample2_forward(self.value(x).data(), s[0], dims);
        let t = Tensor::new(vec![s[0], 2 * s[1], 2 * s[2], 2 * s[3]], y)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::Upsample2 { x, channels: s[0], dims }, ng))
    }

    /// Concatenate along the first axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(AutogradError::Empty("concat"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(AutogradError::shape("concat", &tail, s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let t = Tensor::new(shape, data)?;
        let ng = self.grad_of(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec()), ng))
    }

    /// Slice `len` entries starting at `start` along the first axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.is_empty() || start + len > s[0] {
            return Err(AutogradError::shape("narrow", &[start + len], &s));
        }
        let per: usize = s[1..].iter().product();
        let data = self.value(x).data()[start * per..(start + len) * per].to_vec();
        let mut shape = s.clone();
        shape[0] = len;
        let t = Tensor::new(shape, data)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::Narrow { x, start, len }, ng))
    }

    /// Quarter-turn rotation of the two trailing (square) axes.
    pub fn rotate_z(&mut self, x: Var, quarter_turns: u8) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(AutogradError::NonSquarePlane(s));
        }
        let n = s[s.len() - 1];
        let data = kernels::rotate_planes(self.value(x).data(), n, quarter_turns);
        let t = Tensor::new(s, data)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::RotateZ { x, n, quarter_turns: quarter_turns % 4 }, ng))
    }

    /// Mean over every axis but the first: `[C, ...] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(AutogradError::Rank { op: "global_avg_pool", expected: 2, got: s.len() });
        }
        let c = s[0];
        let t = Tensor::new(vec![c], (0..c).map(|i| {
            let ch = self.value(x).channel(i);
            ch.iter().sum::<f64>() / ch.len() as f64
        }).collect())?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::GlobalAvgPool(x), ng))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutogradError::shape("matmul", &sa, &sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        let t = Tensor::new(vec![m, n], out)?;
        let ng = self.grad_of(&[a, b]);
        Ok(self.push(t, Op::MatMul { a, b, m, k, n }, ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(AutogradError::Rank { op: "transpose", expected: 2, got: s.len() });
        }
        let (rows, cols) = (s[0], s[1]);
        let t = Tensor::new(vec![cols, rows], transpose(self.value(x).data(), rows, cols))?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::Transpose { x, rows, cols }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::Reshape(x), ng))
    }

    fn rows_cols(&self, op: &'static str, x: Var) -> Result<usize> {
        let s = self.shape(x);
        match s.len() {
            1 | 2 => Ok(*s.last().unwrap()),
            n => Err(AutogradError::Rank { op, expected: 2, got: n }),
        }
    }

    /// Softmax along the last axis of a 1D or 2D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let cols = self.rows_cols("softmax_rows", x)?;
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(cols) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::SoftmaxRows { x, cols }, ng))
    }

    /// Log-softmax along the last axis of a 1D or 2D tensor.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let cols = self.rows_cols("log_softmax_rows", x)?;
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(cols) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::LogSoftmaxRows { x, cols }, ng))
    }

    /// Unit-norm rescaling of a whole tensor. Errors on an all-zero input.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let norm = self.value(x).norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(AutogradError::DegenerateNorm);
        }
        let t = self.value(x).scale(1.0 / norm);
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::L2Normalize { x, norm }, ng))
    }

    /// Flat-index gather into a 1D tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            data.push(*src.get(i).ok_or(AutogradError::Index { index: i, len: src.len() })?);
        }
        let t = Tensor::from_vec(data);
        let ng = self.grad_of(&[x]);
        Ok(self.push(t, Op::Gather { x, indices: indices.to_vec() }, ng))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(AutogradError::shape("backward", &[1], self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads)?;
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.nodes[v.0].needs_grad {
            let g = f();
            self.acc(grads, v, g);
        }
    }

    fn propagate(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_with(grads, *a, || dy.clone());
                self.acc_with(grads, *b, || dy.clone());
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, || dy.clone());
                self.acc_with(grads, *b, || dy.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc_with(grads, *a, || zip_map(dy, vb, |g, x| g * x));
                self.acc_with(grads, *b, || zip_map(dy, va, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc_with(grads, *a, || zip_map(dy, vb, |g, x| g / x));
                self.acc_with(grads, *b, || {
                    let t = zip_map(dy, va, |g, x| g * x);
                    zip_map(&t, vb, |t, x| -t / (x * x))
                });
            }
            Op::Scale(a, c) => self.acc_with(grads, *a, || dy.scale(*c)),
            Op::AddScalar(a) => self.acc_with(grads, *a, || dy.clone()),
            Op::MulScalarVar(a, s) => {
                let c = self.value(*s).item();
                self.acc_with(grads, *a, || dy.scale(c));
                self.acc_with(grads, *s, || {
                    let dot: f64 = dy.data().iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    Tensor::full(self.shape(*s), dot)
                });
            }
            Op::Sum(a) => self.acc_with(grads, *a, || Tensor::full(self.shape(*a), dy.item())),
            Op::Mean(a) => self.acc_with(grads, *a, || {
                let n = self.value(*a).len() as f64;
                Tensor::full(self.shape(*a), dy.item() / n)
            }),
            Op::Silu(a) => self.acc_with(grads, *a, || zip_map(dy, self.value(*a), |g, x| g * silu_grad(x))),
            Op::Exp(a) => self.acc_with(grads, *a, || zip_map(dy, y, |g, e| g * e)),
            Op::Log { x, floor } => self.acc_with(grads, *x, || {
                zip_map(dy, self.value(*x), |g, v| if v > *floor { g / v } else { 0.0 })
            }),
            Op::Conv3d { x, w, b, geom } => {
                let need_dx = self.nodes[x.0].needs_grad;
                let (dx, dw, db) = kernels::conv3d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dy.data(),
                    geom,
                    need_dx,
                );
                if let Some(dx) = dx {
                    self.acc(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
                }
                self.acc(grads, *w, Tensor::new(self.shape(*w).to_vec(), dw)?);
                self.acc(grads, *b, Tensor::new(self.shape(*b).to_vec(), db)?);
            }
            Op::Upsample2 { x, channels, dims } => {
                let dx = kernels::upsample2_backward(dy.data(), *channels, *dims);
                self.acc(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    let slice = dy.data()[offset..offset + n].to_vec();
                    offset += n;
                    self.acc(grads, *p, Tensor::new(self.shape(*p).to_vec(), slice)?);
                }
            }
            Op::Narrow { x, start, len } => {
                let s = self.shape(*x);
                let per: usize = s[1..].iter().product();
                let mut g = Tensor::zeros(s);
                g.data_mut()[start * per..(start + len) * per].copy_from_slice(dy.data());
                self.acc(grads, *x, g);
            }
            Op::RotateZ { x, n, quarter_turns } => {
                let inv = (4 - quarter_turns) % 4;
                let dx = kernels::rotate_planes(dy.data(), *n, inv);
                self.acc(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let per: usize = s[1..].iter().product();
                let mut g = Tensor::zeros(s);
                for (c, chunk) in g.data_mut().chunks_mut(per).enumerate() {
                    let v = dy.data()[c] / per as f64;
                    chunk.iter_mut().for_each(|e| *e = v);
                }
                self.acc(grads, *x, g);
            }
            Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc_with(grads, *a, || {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(*m, *n, *k, dy.data(), false, vb.data(), true, 0.0, &mut da);
                    Tensor::new(vec![*m, *k], da).expect("matmul grad shape")
                });
                self.acc_with(grads, *b, || {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(*k, *m, *n, va.data(), true, dy.data(), false, 0.0, &mut db);
                    Tensor::new(vec![*k, *n], db).expect("matmul grad shape")
                });
            }
            Op::Transpose { x, rows, cols } => {
                let dx = transpose(dy.data(), *cols, *rows);
                self.acc(grads, *x, Tensor::new(vec![*rows, *cols], dx)?);
            }
            Op::Reshape(x) => {
                let g = dy.clone().reshape(self.shape(*x))?;
                self.acc(grads, *x, g);
            }
            Op::SoftmaxRows { x, cols } => {
                let mut dx = dy.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(*cols).zip(y.data().chunks(*cols)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(g, p)| g * p).sum();
                    for (g, p) in drow.iter_mut().zip(yrow) {
                        *g = p * (*g - dot);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::LogSoftmaxRows { x, cols } => {
                let mut dx = dy.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(*cols).zip(y.data().chunks(*cols)) {
                    let total: f64 = drow.iter().sum();
                    for (g, ly) in drow.iter_mut().zip(yrow) {
                        *g -= ly.exp() * total;
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::L2Normalize { x, norm } => {
                let dot: f64 = dy.data().iter().zip(y.data()).map(|(g, u)| g * u).sum();
                let dx = zip_map(dy, y, |g, u| (g - u * dot) / norm);
                self.acc(grads, *x, dx);
            }
            Op::Gather { x, indices } => {
                let mut g = Tensor::zeros(self.shape(*x));
                for (&idx, v) in indices.iter().zip(dy.data()) {
                    g.data_mut()[idx] += v;
                }
                self.acc(grads, *x, g);
            }
        }
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map operands share a shape")
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}
