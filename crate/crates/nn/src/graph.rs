//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] walks the tape in reverse and accumulates adjoints.
//! Primitive ops assume well-formed shapes and panic otherwise; the checked
//! entry points live in [`crate::layers`].

use std::collections::HashMap;
use std::rc::Rc;

use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Constant,
    Param,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    LogSigmoid(Var),
    Softmax(Var, Rc<[bool]>),
    LogSoftmax(Var, Rc<[bool]>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    Transpose(Var),
    MeanAxis1(Var),
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    Gather(Var, Rc<[usize]>),
    SelectRows(Var, Rc<[usize]>),
    ScatterRows(Var, Rc<[usize]>),
    Clip(Var, f64, f64),
    Min(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe views that stay inside the provided slices,
    // and `c` is a distinct, contiguous m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable leaf (gradients are reported for it).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Leaf bound to a parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    /// Copies the value into a constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shape mismatch {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            &mut out,
            false,
        );
        self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b))
    }

    /// `[B, m, k] x [B, k, n] -> [B, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
            "batch_matmul shape mismatch {sa:?} x {sb:?}"
        );
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..],
                (k as isize, 1),
                &bv[i * k * n..],
                (n as isize, 1),
                &mut out[i * m * n..],
                false,
            );
        }
        self.push(Tensor::from_parts(vec![bs, m, n], out), Op::BatchMatMul(a, b))
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, f64::min, Op::Min(a, b))
    }

    /// Adds a bias row (`[n]` or `[1, n]`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(bias));
        let n = ta.cols();
        assert_eq!(tb.len(), n, "add_row bias length mismatch");
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let shape = ta.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::AddRow(a, bias))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        self.push(t, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    /// `log(sigmoid(a))`, stable for large |a|.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clip(a, lo, hi))
    }

    fn softmax_rows(logits: &Tensor, mask: &[bool], log: bool) -> Tensor {
        let n = logits.cols();
        let mut out = vec![0.0; logits.len()];
        for (r, (row, dst)) in logits.data().chunks(n).zip(out.chunks_mut(n)).enumerate() {
            let m = &mask[r * n..(r + 1) * n];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max.is_finite(), "softmax row {r} has no unmasked entry");
            let sum: f64 = row
                .iter()
                .zip(m)
                .filter(|(_, &ok)| ok)
                .map(|(&x, _)| (x - max).exp())
                .sum();
            let log_sum = sum.ln();
            for ((d, &x), &ok) in dst.iter_mut().zip(row).zip(m) {
                if ok {
                    *d = if log { x - max - log_sum } else { (x - max).exp() / sum };
                }
            }
        }
        Tensor::from_parts(logits.shape().to_vec(), out)
    }

    /// Softmax over the last axis. `mask[i] == false` pins entry `i` to 0.
    pub fn softmax(&mut self, a: Var, mask: Option<Rc<[bool]>>) -> Var {
        let mask = mask.unwrap_or_else(|| vec![true; self.value(a).len()].into());
        assert_eq!(mask.len(), self.value(a).len(), "softmax mask length");
        let t = Self::softmax_rows(self.value(a), &mask, false);
        self.push(t, Op::Softmax(a, mask))
    }

    /// Log-softmax over the last axis; masked entries are reported as 0 and
    /// receive no gradient.
    pub fn log_softmax(&mut self, a: Var, mask: Option<Rc<[bool]>>) -> Var {
        let mask = mask.unwrap_or_else(|| vec![true; self.value(a).len()].into());
        assert_eq!(mask.len(), self.value(a).len(), "log_softmax mask length");
        let t = Self::softmax_rows(self.value(a), &mask, true);
        self.push(t, Op::LogSoftmax(a, mask))
    }

    /// Concatenates along the last axis; all parts must share their row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            assert_eq!(self.value(p).rows(), rows, "concat row mismatch");
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let mut shape = self.shape(parts[0]).to_vec();
        if shape.len() < 2 {
            shape = vec![rows, total];
        } else {
            *shape.last_mut().unwrap() = total;
        }
        self.push(Tensor::from_parts(shape, out), Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let n = t.cols();
        assert!(start + len <= n, "slice out of range");
        let mut out = Vec::with_capacity(t.rows() * len);
        for row in t.data().chunks(n) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push(Tensor::from_parts(shape, out), Op::Slice(a, start))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self
            .value(a)
            .clone()
            .reshaped(shape.to_vec())
            .expect("reshape element count mismatch");
        self.push(t, Op::Reshape(a))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.shape().to_vec();
        assert!(s.len() == 2 || s.len() == 3, "transpose needs rank 2 or 3");
        let (bs, m, n) = if s.len() == 2 {
            (1, s[0], s[1])
        } else {
            (s[0], s[1], s[2])
        };
        let mut out = vec![0.0; t.len()];
        let d = t.data();
        for b in 0..bs {
            let off = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[off + j * m + i] = d[off + i * n + j];
                }
            }
        }
        let shape = if s.len() == 2 { vec![n, m] } else { vec![bs, n, m] };
        self.push(Tensor::from_parts(shape, out), Op::Transpose(a))
    }

    /// `[B, T, d] -> [B, d]`, averaging over `T`.
    pub fn mean_axis1(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.shape().to_vec();
        assert_eq!(s.len(), 3, "mean_axis1 needs rank 3");
        let (bs, tn, d) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; bs * d];
        for b in 0..bs {
            for k in 0..tn {
                let src = &t.data()[(b * tn + k) * d..(b * tn + k + 1) * d];
                for (o, x) in out[b * d..(b + 1) * d].iter_mut().zip(src) {
                    *o += x;
                }
            }
        }
        let inv = 1.0 / tn as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::from_parts(vec![bs, d], out), Op::MeanAxis1(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::MeanAll(a))
    }

    /// Row sums: `[rows, n] -> [rows, 1]`.
    pub fn sum_last(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let out: Vec<f64> = t.data().chunks(n).map(|r| r.iter().sum()).collect();
        let rows = out.len();
        self.push(Tensor::from_parts(vec![rows, 1], out), Op::SumLast(a))
    }

    /// Picks column `idx[r]` from each row `r`: `[rows, n] -> [rows, 1]`.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), idx.len(), "gather index count");
        let out: Vec<f64> = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        self.push(Tensor::from_parts(vec![idx.len(), 1], out), Op::Gather(a, idx.into()))
    }

    /// Row subset of a rank-2 tensor, in the given order.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = self.value(a);
        assert!(!idx.is_empty(), "select_rows needs at least one row");
        let n = t.cols();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &r in idx {
            out.extend_from_slice(t.row_slice(r));
        }
        self.push(
            Tensor::from_parts(vec![idx.len(), n], out),
            Op::SelectRows(a, idx.into()),
        )
    }

    /// Inverse of [`Graph::select_rows`]: row `k` of `a` lands in row
    /// `idx[k]` of a zero `[rows, n]` tensor (duplicates add up).
    pub fn scatter_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), idx.len(), "scatter_rows index count");
        let n = t.cols();
        let mut out = vec![0.0; rows * n];
        for (k, &r) in idx.iter().enumerate() {
            for (o, &x) in out[r * n..(r + 1) * n].iter_mut().zip(t.row_slice(k)) {
                *o += x;
            }
        }
        self.push(Tensor::from_parts(vec![rows, n], out), Op::ScatterRows(a, idx.into()))
    }

    /// Reverse pass from a scalar (or any) output seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::full(self.value(output).shape(), 1.0);
        grads[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        let val = |v: Var| &self.nodes[v.0].value;
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(val(v).shape().to_vec(), data);

        match &node.op {
            Op::Input | Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        gy.data(),
                        (n as isize, 1),
                        tb.data(),
                        (1, n as isize),
                        &mut ga,
                        false,
                    );
                    acc(*a, like(*a, ga));
                }
                if self.needs_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        ta.data(),
                        (1, k as isize),
                        gy.data(),
                        (n as isize, 1),
                        &mut gb,
                        false,
                    );
                    acc(*b, like(*b, gb));
                }
            }
            Op::BatchMatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (bs, m, k, n) = (ta.shape()[0], ta.shape()[1], ta.shape()[2], tb.shape()[2]);
                let mut ga = vec![0.0; bs * m * k];
                let mut gb = vec![0.0; bs * k * n];
                for s in 0..bs {
                    let g = &gy.data()[s * m * n..];
                    gemm(
                        m,
                        n,
                        k,
                        g,
                        (n as isize, 1),
                        &tb.data()[s * k * n..],
                        (1, n as isize),
                        &mut ga[s * m * k..],
                        false,
                    );
                    gemm(
                        k,
                        m,
                        n,
                        &ta.data()[s * m * k..],
                        (1, k as isize),
                        g,
                        (n as isize, 1),
                        &mut gb[s * k * n..],
                        false,
                    );
                }
                acc(*a, like(*a, ga));
                acc(*b, like(*b, gb));
            }
            Op::Add(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, gy.clone());
                acc(*b, gy.map(|g| -g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = gy.data().iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let gb = gy.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                acc(*a, like(*a, ga));
                acc(*b, like(*b, gb));
            }
            Op::Min(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = vec![0.0; gy.len()];
                let mut gb = vec![0.0; gy.len()];
                for j in 0..gy.len() {
                    if ta.data()[j] <= tb.data()[j] {
                        ga[j] = gy.data()[j];
                    } else {
                        gb[j] = gy.data()[j];
                    }
                }
                acc(*a, like(*a, ga));
                acc(*b, like(*b, gb));
            }
            Op::AddRow(a, bias) => {
                let n = gy.cols();
                let mut gb = vec![0.0; n];
                for row in gy.data().chunks(n) {
                    for (s, g) in gb.iter_mut().zip(row) {
                        *s += g;
                    }
                }
                acc(*a, gy.clone());
                acc(*bias, like(*bias, gb));
            }
            Op::Scale(a, c) => acc(*a, gy.map(|g| g * c)),
            Op::AddScalar(a) => acc(*a, gy.clone()),
            Op::Relu(a) => {
                let g = gy
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(*a, like(*a, g));
            }
            Op::Sigmoid(a) => {
                let g = gy.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                acc(*a, like(*a, g));
            }
            Op::Tanh(a) => {
                let g = gy.data().iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                acc(*a, like(*a, g));
            }
            Op::Exp(a) => {
                let g = gy.data().iter().zip(y.data()).map(|(g, e)| g * e).collect();
                acc(*a, like(*a, g));
            }
            Op::Ln(a) => {
                let g = gy.data().iter().zip(val(*a).data()).map(|(g, x)| g / x).collect();
                acc(*a, like(*a, g));
            }
            Op::LogSigmoid(a) => {
                let g = gy
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| g * sigmoid(-x))
                    .collect();
                acc(*a, like(*a, g));
            }
            Op::Clip(a, lo, hi) => {
                let g = gy
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                    .collect();
                acc(*a, like(*a, g));
            }
            Op::Softmax(a, mask) => {
                let n = y.cols();
                let mut g = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let span = r * n..(r + 1) * n;
                    let (yr, gr) = (&y.data()[span.clone()], &gy.data()[span.clone()]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        if mask[r * n + j] {
                            g[r * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                acc(*a, like(*a, g));
            }
            Op::LogSoftmax(a, mask) => {
                let n = y.cols();
                let mut g = vec![0.0; y.len()];
                for r in 0..y.rows() {
                    let off = r * n;
                    let total: f64 = (0..n).filter(|&j| mask[off + j]).map(|j| gy.data()[off + j]).sum();
                    for j in 0..n {
                        if mask[off + j] {
                            g[off + j] = gy.data()[off + j] - y.data()[off + j].exp() * total;
                        }
                    }
                }
                acc(*a, like(*a, g));
            }
            Op::Concat(parts) => {
                let total = gy.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut g = Vec::with_capacity(val(p).len());
                    for row in gy.data().chunks(total) {
                        g.extend_from_slice(&row[offset..offset + w]);
                    }
                    acc(p, like(p, g));
                    offset += w;
                }
            }
            Op::Slice(a, start) => {
                let n = val(*a).cols();
                let w = gy.cols();
                let mut g = vec![0.0; val(*a).len()];
                for (dst, src) in g.chunks_mut(n).zip(gy.data().chunks(w)) {
                    dst[*start..*start + w].copy_from_slice(src);
                }
                acc(*a, like(*a, g));
            }
            Op::Reshape(a) => acc(*a, like(*a, gy.data().to_vec())),
            Op::Transpose(a) => {
                let s = val(*a).shape();
                let (bs, m, n) = if s.len() == 2 {
                    (1, s[0], s[1])
                } else {
                    (s[0], s[1], s[2])
                };
                let mut g = vec![0.0; gy.len()];
                for b in 0..bs {
                    let off = b * m * n;
                    for i in 0..m {
                        for j in 0..n {
                            g[off + i * n + j] = gy.data()[off + j * m + i];
                        }
                    }
                }
                acc(*a, like(*a, g));
            }
            Op::MeanAxis1(a) => {
                let s = val(*a).shape();
                let (bs, tn, d) = (s[0], s[1], s[2]);
                let inv = 1.0 / tn as f64;
                let mut g = vec![0.0; bs * tn * d];
                for b in 0..bs {
                    for k in 0..tn {
                        for j in 0..d {
                            g[(b * tn + k) * d + j] = gy.data()[b * d + j] * inv;
                        }
                    }
                }
                acc(*a, like(*a, g));
            }
            Op::SumAll(a) => {
                let gv = gy.item();
                acc(*a, val(*a).map(|_| gv));
            }
            Op::MeanAll(a) => {
                let gv = gy.item() / val(*a).len() as f64;
                acc(*a, val(*a).map(|_| gv));
            }
            Op::SumLast(a) => {
                let n = val(*a).cols();
                let mut g = Vec::with_capacity(val(*a).len());
                for &gr in gy.data() {
                    g.extend(std::iter::repeat_n(gr, n));
                }
                acc(*a, like(*a, g));
            }
            Op::Gather(a, idx) => {
                let n = val(*a).cols();
                let mut g = vec![0.0; val(*a).len()];
                for (r, &c) in idx.iter().enumerate() {
                    g[r * n + c] += gy.data()[r];
                }
                acc(*a, like(*a, g));
            }
            Op::SelectRows(a, idx) => {
                let n = val(*a).cols();
                let mut g = vec![0.0; val(*a).len()];
                for (k, &r) in idx.iter().enumerate() {
                    for j in 0..n {
                        g[r * n + j] += gy.data()[k * n + j];
                    }
                }
                acc(*a, like(*a, g));
            }
            Op::ScatterRows(a, idx) => {
                let n = val(*a).cols();
                let mut g = Vec::with_capacity(val(*a).len());
                for &r in idx.iter() {
                    g.extend_from_slice(&gy.data()[r * n..(r + 1) * n]);
                }
                acc(*a, like(*a, g));
            }
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Constant)
    }

    /// Parameter gradients aligned with `params`; untouched parameters get zeros.
    pub fn param_grads(&self, grads: &Gradients, params: &ParamSet) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for (&id, &v) in &self.params {
            if let Some(g) = grads.wrt(v) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_undoes_select() {
        let mut g = Graph::new();
        let x = g.input(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let picked = g.select_rows(x, &[2, 0]);
        let back = g.scatter_rows(picked, &[2, 0], 3);
        assert_eq!(g.value(back).data(), &[1.0, 2.0, 0.0, 0.0, 5.0, 6.0]);
        let s = g.sum(back);
        let grads = g.backward(s);
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
