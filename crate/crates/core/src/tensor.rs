//! Dense f64 tensors and a reverse-mode differentiation tape.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the adjoint of every node. Nodes are appended in evaluation order, so the
//! tape is always a topologically sorted DAG.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }
}

/// `out[r×c] = a[r×k] · b[k×c]`, row-major, accumulating into `out`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[k×c] += aᵀ · g` where `a` is `r×k` and `g` is `r×c`.
fn matmul_at_b(a: &[f64], g: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * c..(p + 1) * c];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// `out[r×k] += g · bᵀ` where `g` is `r×c` and `b` is `k×c`.
fn matmul_a_bt(g: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let brow = &b[p * c..(p + 1) * c];
            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
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

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `[r, c] + [c]`, the bias row broadcast over every row.
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Relu(usize),
    Silu(usize),
    Square(usize),
    Sqrt(usize),
    Log(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    /// Columns `start..start+len` along the last axis.
    Slice {
        src: usize,
        start: usize,
        len: usize,
    },
    /// Concatenation along the last axis.
    Concat(Vec<usize>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Records operations for reverse-mode differentiation. Single-threaded.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Adds an input (parameter, data, or constant) to the tape.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(Op::Leaf, value)
    }

    pub fn vector(&self, data: Vec<f64>) -> Var<'_> {
        self.leaf(Tensor::vector(data))
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.leaf(Tensor::scalar(value))
    }

    fn push(&self, op: Op, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Propagates adjoints from a scalar `root` back to every node.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, has shape {:?}", nodes[root.id].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let mut acc = |target: usize, contrib: &dyn Fn(&mut [f64])| {
                let slot = grads[target]
                    .get_or_insert_with(|| vec![0.0; nodes[target].value.len()]);
                contrib(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                    acc(*b, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                    acc(*b, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s -= g));
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    acc(*a, &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * bv[i];
                        }
                    });
                    acc(*b, &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * av[i];
                        }
                    });
                }
                Op::AddRow(a, b) => {
                    let c = nodes[*b].value.len();
                    acc(*a, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                    acc(*b, &|s| {
                        for row in g.chunks(c) {
                            s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                        }
                    });
                }
                Op::Scale(a, k) => {
                    acc(*a, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += k * g));
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    acc(*a, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s += g));
                }
                Op::MatMul(a, b) => {
                    let at = &nodes[*a].value;
                    let bt = &nodes[*b].value;
                    let (r, k, c) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
                    acc(*a, &|s| matmul_a_bt(&g, bt.data(), s, r, k, c));
                    acc(*b, &|s| matmul_at_b(at.data(), &g, s, r, k, c));
                }
                Op::Relu(a) => {
                    let av = nodes[*a].value.data();
                    acc(*a, &|s| {
                        for i in 0..s.len() {
                            if av[i] > 0.0 {
                                s[i] += g[i];
                            }
                        }
                    });
                }
                Op::Silu(a) => {
                    let av = nodes[*a].value.data();
                    acc(*a, &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * silu_grad(av[i]);
                        }
                    });
                }
                Op::Square(a) => {
                    let av = nodes[*a].value.data();
                    acc(*a, &|s| {
                        for i in 0..s.len() {
                            s[i] += 2.0 * av[i] * g[i];
                        }
                    });
                }
                Op::Sqrt(a) => {
                    let out = node.value.data();
                    acc(*a, &|s| {
                        for i in 0..s.len() {
                            // d√x/dx is unbounded at 0; treat as 0 there.
                            if out[i] > 0.0 {
                                s[i] += g[i] / (2.0 * out[i]);
                            }
                        }
                    });
                }
                Op::Log(a) => {
                    let av = nodes[*a].value.data();
                    acc(*a, &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] / av[i];
                        }
                    });
                }
                Op::Sum(a) => {
                    acc(*a, &|s| s.iter_mut().for_each(|s| *s += g[0]));
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.len() as f64;
                    acc(*a, &|s| s.iter_mut().for_each(|s| *s += g[0] / n));
                }
                Op::Slice { src, start, len } => {
                    let src_cols = nodes[*src].value.cols();
                    acc(*src, &|s| {
                        for (row, grow) in s.chunks_mut(src_cols).zip(g.chunks(*len)) {
                            row[*start..start + len]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(s, g)| *s += g);
                        }
                    });
                }
                Op::Concat(parts) => {
                    let out_cols = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = nodes[p].value.cols();
                        acc(p, &|s| {
                            for (row, grow) in s.chunks_mut(pc).zip(g.chunks(out_cols)) {
                                row.iter_mut()
                                    .zip(&grow[offset..offset + pc])
                                    .for_each(|(s, g)| *s += g);
                            }
                        });
                        offset += pc;
                    }
                }
            }
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros if the root does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Tensor {
        let shape = self.shapes[var.id].clone();
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    /// Value of a one-element node.
    pub fn item(&self) -> f64 {
        self.tape.with_value(self.id, |t| t.data()[0])
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.tape.with_value(self.id, |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        });
        self.tape.push(op, value)
    }

    fn elementwise(
        &self,
        other: &Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape != b.shape {
                return Err(Error::shape(
                    name,
                    format!("{:?} vs {:?}", a.shape, b.shape),
                ));
            }
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
            }
        };
        Ok(self.tape.push(op, value))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    /// Adds a bias vector `[c]` to every row of a `[r, c]` matrix.
    pub fn add_row(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let c = b.len();
            if a.cols() != c || a.len() % c.max(1) != 0 {
                return Err(Error::shape(
                    "add_row",
                    format!("{:?} + row {:?}", a.shape, b.shape),
                ));
            }
            let mut data = a.data.clone();
            for row in data.chunks_mut(c) {
                row.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
            }
            Tensor {
                shape: a.shape.clone(),
                data,
            }
        };
        Ok(self.tape.push(Op::AddRow(self.id, bias.id), value))
    }

    pub fn scale(&self, k: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |v| k * v)
    }

    pub fn add_scalar(&self, k: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + k)
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?}", a.shape, b.shape),
                ));
            }
            let (r, k, c) = (a.shape[0], a.shape[1], b.shape[1]);
            let mut out = vec![0.0; r * c];
            matmul_into(&a.data, &b.data, &mut out, r, k, c);
            Tensor {
                shape: vec![r, c],
                data: out,
            }
        };
        Ok(self.tape.push(Op::MatMul(self.id, other.id), value))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn silu(&self) -> Var<'t> {
        self.unary(Op::Silu(self.id), silu)
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(Op::Square(self.id), |v| v * v)
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        if self.tape.with_value(self.id, |t| t.data.iter().any(|&v| v < 0.0)) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: "negative operand".into(),
            });
        }
        Ok(self.unary(Op::Sqrt(self.id), f64::sqrt))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        if self.tape.with_value(self.id, |t| t.data.iter().any(|&v| v <= 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: "non-positive operand".into(),
            });
        }
        Ok(self.unary(Op::Log(self.id), f64::ln))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.tape.with_value(self.id, |t| t.data.iter().sum());
        self.tape.push(Op::Sum(self.id), Tensor::scalar(s))
    }

    pub fn mean(&self) -> Var<'t> {
        let m = self
            .tape
            .with_value(self.id, |t| t.data.iter().sum::<f64>() / t.len() as f64);
        self.tape.push(Op::Mean(self.id), Tensor::scalar(m))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self
            .tape
            .with_value(self.id, |t| Tensor::new(shape.to_vec(), t.data.clone()))?;
        Ok(self.tape.push(Op::Reshape(self.id), value))
    }

    /// Columns `start..start + len` along the last axis (rank 1 or 2).
    pub fn slice(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| {
            let cols = t.cols();
            if start + len > cols || t.shape.len() > 2 {
                return Err(Error::shape(
                    "slice",
                    format!("{start}..{} of {:?}", start + len, t.shape),
                ));
            }
            let data = t
                .data
                .chunks(cols)
                .flat_map(|row| row[start..start + len].iter().copied())
                .collect();
            let mut shape = t.shape.clone();
            *shape.last_mut().unwrap() = len;
            Ok(Tensor { shape, data })
        })?;
        Ok(self.tape.push(
            Op::Slice {
                src: self.id,
                start,
                len,
            },
            value,
        ))
    }

    /// Concatenates along the last axis. All parts must share rank and
    /// leading dimension.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or(Error::Empty("concat"))?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let lead = &nodes[first.id].value.shape;
            let rank = lead.len();
            if rank > 2 {
                return Err(Error::shape("concat", "rank above 2"));
            }
            let rows = nodes[first.id].value.rows();
            let mut total = 0;
            for p in parts {
                let t = &nodes[p.id].value;
                if t.shape.len() != rank || t.rows() != rows {
                    return Err(Error::shape(
                        "concat",
                        format!("{:?} vs {:?}", lead, t.shape),
                    ));
                }
                total += t.cols();
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    let t = &nodes[p.id].value;
                    let c = t.cols();
                    data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
                }
            }
            let shape = if rank == 2 {
                vec![rows, total]
            } else {
                vec![total]
            };
            Tensor { shape, data }
        };
        Ok(tape.push(Op::Concat(parts.iter().map(|p| p.id).collect()), value))
    }
}
