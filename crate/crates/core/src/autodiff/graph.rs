//! Define-by-run computation tape.
//!
//! A [`Graph`] is rebuilt for every forward pass: each operation appends a
//! node holding its value and the inputs it needs for the backward sweep.
//! [`Graph::backward`] walks the tape in reverse and writes gradients for
//! every registered parameter into a [`ParameterSet`].

use rand::Rng;

use super::tensor::gemm;
use super::{ParameterSet, Tensor, TensorError};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Unary(Var, Unary),
    Softmax(Var),
    SumLast(Var),
    SumAll(Var),
    MeanAll(Var),
    StdAll(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let needs_grad = match &kind {
            Op::Leaf => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddBias(a, b)
            | Op::MatMul(a, b)
            | Op::BatchMatMul(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::Transpose(a)
            | Op::Unary(a, _)
            | Op::Softmax(a)
            | Op::SumLast(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::StdAll(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Reshape(a)
            | Op::Dropout(a, _)
            | Op::Slice { x: a, .. } => self.nodes[a.0].needs_grad,
            Op::Concat(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::LayerNorm { x, gamma, beta, .. } => [x, gamma, beta]
                .iter()
                .any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that receives no gradient (inputs, targets, masks).
    pub fn constant(&mut self, value: Tensor) -> Result<Var, TensorError> {
        self.push("constant", value, Op::Leaf)
    }

    /// Registers parameter `name` from `params` as a differentiable leaf.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<Var, TensorError> {
        let value = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?
            .clone();
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: "param" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        kind: Op,
    ) -> Result<Var, TensorError> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let t = Tensor::from_vec(x.shape().to_vec(), data)?;
        self.push(op, t, kind)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_with("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Adds a vector along the last axis of `x` (bias broadcast over rows).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(shape_err(
                "add_bias",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            row.iter_mut().zip(b).for_each(|(v, c)| *v += c);
        }
        self.push("add_bias", out, Op::AddBias(x, bias))
    }

    /// `m x k` by `k x n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut c, false);
        self.push("matmul", Tensor::from_vec(vec![m, n], c)?, Op::MatMul(a, b))
    }

    /// `B x m x k` by `B x k x n`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(shape_err("batch_matmul", format!("{sa:?} x {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut c = vec![0.0; bs * m * n];
        let (x, y) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &x[i * m * k..(i + 1) * m * k],
                false,
                &y[i * k * n..(i + 1) * k * n],
                false,
                &mut c[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        self.push(
            "batch_matmul",
            Tensor::from_vec(vec![bs, m, n], c)?,
            Op::BatchMatMul(a, b),
        )
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(shape_err("transpose", format!("{s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let mut out_shape = s.clone();
        out_shape.swap(s.len() - 2, s.len() - 1);
        let out = transpose_blocks(self.value(a).data(), r, c);
        self.push("transpose", Tensor::from_vec(out_shape, out)?, Op::Transpose(a))
    }

    fn unary(&mut self, a: Var, kind: Unary) -> Result<Var, TensorError> {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            Unary::Tanh => f64::tanh,
            Unary::Relu => |x| x.max(0.0),
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
        };
        let name = match kind {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
        };
        let x = self.value(a);
        let t = Tensor::from_vec(x.shape().to_vec(), x.data().iter().map(|v| f(*v)).collect())?;
        self.push(name, t, Op::Unary(a, kind))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Unary::Exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(a, Unary::Log)
    }

    /// Row-wise softmax over the last axis, max-shifted for stability.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let d = x.last_dim();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            softmax_in_place(row, d);
        }
        self.push("softmax", out, Op::Softmax(a))
    }

    /// Softmax over the last axis of a `... x T x T` score tensor where row
    /// `i` may only attend to columns `j <= i`. Masked entries are exactly 0.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 || s[s.len() - 1] != s[s.len() - 2] {
            return Err(shape_err("causal_softmax", format!("{s:?}")));
        }
        let t = s[s.len() - 1];
        let mut out = self.value(a).clone();
        for (r, row) in out.data_mut().chunks_mut(t).enumerate() {
            let visible = r % t + 1;
            softmax_in_place(row, visible);
            row[visible..].iter_mut().for_each(|v| *v = 0.0);
        }
        self.push("causal_softmax", out, Op::Softmax(a))
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let s = x.shape();
        if s.is_empty() {
            return Err(shape_err("sum_last", "scalar input".into()));
        }
        let d = x.last_dim();
        let data = x.data().chunks(d).map(|r| r.iter().sum()).collect();
        let t = Tensor::from_vec(s[..s.len() - 1].to_vec(), data)?;
        self.push("sum_last", t, Op::SumLast(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(shape_err("mean", "empty input".into()));
        }
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::MeanAll(a))
    }

    /// Population standard deviation over all elements.
    pub fn std_population(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(shape_err("std", "empty input".into()));
        }
        let sd = crate::market_data::population_std(x.data());
        self.push("std", Tensor::scalar(sd), Op::StdAll(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let x = self.value(a);
        let t = Tensor::from_vec(x.shape().to_vec(), x.data().iter().map(|v| v * c).collect())?;
        self.push("scale", t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, TensorError> {
        let x = self.value(a);
        let t = Tensor::from_vec(x.shape().to_vec(), x.data().iter().map(|v| v + c).collect())?;
        self.push("add_scalar", t, Op::AddScalar(a))
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len().saturating_sub(1)].to_vec();
        if self.shape(*first).is_empty() {
            return Err(shape_err("concat", "scalar input".into()));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat", format!("{:?} vs lead {lead:?}", s)));
            }
            widths.push(s[lead.len()]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push("concat", Tensor::from_vec(shape, out)?, Op::Concat(parts.to_vec()))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(shape_err(
                "slice",
                format!("{s:?} axis {axis} range {start}..{end}"),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let width = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + width * inner]);
        }
        let mut shape = s;
        shape[axis] = width;
        self.push(
            "slice",
            Tensor::from_vec(shape, out)?,
            Op::Slice { x, axis, start },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(x).reshaped(shape)?;
        self.push("reshape", t, Op::Reshape(x))
    }

    /// Normalizes each row over the last axis, then applies `gamma` and
    /// `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, TensorError> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("{:?} with gamma {:?}", self.shape(x), self.shape(gamma)),
            ));
        }
        let src = self.value(x);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(src.len() / d);
        let mut out = Vec::with_capacity(src.len());
        for row in src.data().chunks(d) {
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (v + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - m) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor::from_vec(src.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `rate` and survivors are scaled by `1 / (1 - rate)`; identity in eval.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate(rate));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::from_vec(src.shape().to_vec(), data)?;
        self.push("dropout", t, Op::Dropout(x, mask))
    }

    /// Reverse sweep from scalar `output`. Every parameter registered on this
    /// graph gets its gradient written into `params`; parameters of `params`
    /// that never appeared on the tape get zero gradients.
    pub fn backward(&self, output: Var, params: &mut ParameterSet) -> Result<(), TensorError> {
        if self.value(output).len() != 1 {
            return Err(TensorError::NotScalar(self.shape(output).to_vec()));
        }
        if !self.nodes[output.0].needs_grad {
            return Err(TensorError::Disconnected);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            // keep leaf gradients for the parameter read-out below
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        params.zero_grads();
        for (name, v) in &self.params {
            if let Some(g) = &grads[v.0] {
                let shape = self.shape(*v).to_vec();
                params.accumulate_grad(name, &Tensor::from_vec(shape, g.clone())?)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: &Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * va[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(a), val(b));
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] / vb[k];
                    }
                });
                acc(*b, &mut |s| {
                    for k in 0..s.len() {
                        s[k] -= g[k] * va[k] / (vb[k] * vb[k]);
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |s| add_into(s, g));
                let d = self.nodes[b.0].value.len();
                acc(*b, &mut |s| {
                    for row in g.chunks(d) {
                        add_into(s, row);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (val(a), val(b));
                // dA = G B^T, dB = A^T G
                acc(*a, &mut |s| gemm(m, n, k, g, false, vb, true, s, true));
                acc(*b, &mut |s| gemm(k, m, n, va, true, g, false, s, true));
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (val(a), val(b));
                acc(*a, &mut |s| {
                    for i in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &vb[i * k * n..(i + 1) * k * n],
                            true,
                            &mut s[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            &va[i * m * k..(i + 1) * m * k],
                            true,
                            &g[i * m * n..(i + 1) * m * n],
                            false,
                            &mut s[i * k * n..(i + 1) * k * n],
                            true,
                        );
                    }
                });
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let back = transpose_blocks(g, c, r);
                acc(*a, &mut |s| add_into(s, &back));
            }
            Op::Unary(a, kind) => {
                let x = val(a);
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        let d = match kind {
                            Unary::Sigmoid => y[k] * (1.0 - y[k]),
                            Unary::Tanh => 1.0 - y[k] * y[k],
                            Unary::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => y[k],
                            Unary::Log => 1.0 / x[k],
                        };
                        s[k] += g[k] * d;
                    }
                });
            }
            Op::Softmax(a) => {
                let d = node.value.last_dim();
                acc(*a, &mut |s| {
                    for ((srow, yrow), grow) in s.chunks_mut(d).zip(y.chunks(d)).zip(g.chunks(d)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(p, q)| p * q).sum();
                        for j in 0..d {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::SumLast(a) => {
                let d = self.nodes[a.0].value.last_dim();
                acc(*a, &mut |s| {
                    for (row, gv) in s.chunks_mut(d).zip(g) {
                        row.iter_mut().for_each(|x| *x += gv);
                    }
                });
            }
            Op::SumAll(a) => acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::MeanAll(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc(*a, &mut |s| s.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::StdAll(a) => {
                let x = val(a);
                let n = x.len() as f64;
                let m = x.iter().sum::<f64>() / n;
                let sd = y[0];
                // zero spread: use the zero subgradient
                if sd > 0.0 {
                    acc(*a, &mut |s| {
                        for k in 0..s.len() {
                            s[k] += g[0] * (x[k] - m) / (n * sd);
                        }
                    });
                }
            }
            Op::Scale(a, c) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += c * d)),
            Op::AddScalar(a) | Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Concat(parts) => {
                let widths: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.last_dim()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (p, w) in parts.iter().zip(&widths) {
                    acc(*p, &mut |s| {
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + w];
                            add_into(&mut s[r * w..(r + 1) * w], src);
                        }
                    });
                    offset += w;
                }
            }
            Op::Slice { x, axis, start } => {
                let s_in = self.shape(*x).to_vec();
                let outer: usize = s_in[..*axis].iter().product();
                let inner: usize = s_in[axis + 1..].iter().product();
                let width = node.value.shape()[*axis];
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let base = (o * s_in[*axis] + start) * inner;
                        let src = &g[o * width * inner..(o + 1) * width * inner];
                        add_into(&mut s[base..base + width * inner], src);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gam = val(gamma);
                acc(*gamma, &mut |s| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            s[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for grow in g.chunks(d) {
                        add_into(s, grow);
                    }
                });
                acc(*x, &mut |s| {
                    let df = d as f64;
                    for (r, ((srow, grow), hrow)) in s
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let dh: Vec<f64> = (0..d).map(|j| grow[j] * gam[j]).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            srow[j] += inv_std[r] / df * (df * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => {
                acc(*a, &mut |s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * mask[k];
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn softmax_in_place(row: &mut [f64], visible: usize) {
    let max = row[..visible].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in &mut row[..visible] {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in &mut row[..visible] {
        *v /= total;
    }
}

/// Transposes consecutive `r x c` blocks.
fn transpose_blocks(src: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for (blk, chunk) in src.chunks(r * c).enumerate() {
        let dst = &mut out[blk * r * c..(blk + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = chunk[i * c + j];
            }
        }
    }
    out
}
