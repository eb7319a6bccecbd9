//! Tape-based reverse-mode differentiation over whole-tensor operations.
//!
//! A [`Graph`] records every operation executed during a forward pass. A
//! single call to [`Graph::backward`] replays the record in reverse and
//! returns the gradient of a scalar loss with respect to every node that
//! depends on a gradient-tracking leaf.

use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{dims2, Tensor};
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Binary, usize, usize),
    AddRow(usize, usize),
    Unary(Unary, usize),
    Affine(usize, f64),
    SumRows(usize),
    ConcatCols(Vec<usize>),
    Column(usize, usize),
    MulCol(usize, usize),
    SoftmaxRows(usize),
    Mse(usize, usize),
    CrossEntropy(usize, usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// The computation record of one forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::with_capacity(256),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Detached);
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        let i = self.check(v)?;
        Ok(&self.nodes[i])
    }

    /// Records a leaf; gradients are tracked iff the tensor requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    /// Records a leaf that always tracks gradients.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(&self.node(v)?.value)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.node(v)?.shape)
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let node = self.node(v)?;
        if node.value.len() != 1 {
            return Err(Error::NonScalarLoss(node.shape.clone()));
        }
        Ok(node.value[0])
    }

    pub fn tensor(&self, v: Var) -> Result<Tensor> {
        let node = self.node(v)?;
        Tensor::new(node.shape.clone(), node.value.clone())
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        dims2(&self.nodes[i].shape)
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (na, nb) = (&self.nodes[ia], &self.nodes[ib]);
        if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
            return Err(Error::Shape {
                op: "matmul",
                left: na.shape.clone(),
                right: nb.shape.clone(),
            });
        }
        let (p, q, r) = (na.shape[0], na.shape[1], nb.shape[1]);
        let out = matmul_raw(&na.value, &nb.value, p, q, r);
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(vec![p, r], out, Op::MatMul(ia, ib), rg))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (na, nb) = (&self.nodes[ia], &self.nodes[ib]);
        if na.shape != nb.shape {
            return Err(Error::Shape {
                op: match op {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                left: na.shape.clone(),
                right: nb.shape.clone(),
            });
        }
        let f: fn(f64, f64) -> f64 = match op {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let out = na
            .value
            .iter()
            .zip(&nb.value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(na.shape.clone(), out, Op::Binary(op, ia, ib), rg))
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

    /// Adds a bias vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let (rows, cols) = self.dims(ia);
        let (brows, bcols) = self.dims(ib);
        if brows != 1 || bcols != cols {
            return Err(Error::Shape {
                op: "add_row",
                left: self.nodes[ia].shape.clone(),
                right: self.nodes[ib].shape.clone(),
            });
        }
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(
                va[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| x + y),
            );
        }
        let rg = self.rg(ia) || self.rg(ib);
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::AddRow(ia, ib), rg))
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let na = &self.nodes[ia];
        let out = match op {
            Unary::Sigmoid => na.value.iter().map(|&x| sigmoid(x)).collect(),
            Unary::Tanh => na.value.iter().map(|&x| x.tanh()).collect(),
        };
        let (shape, rg) = (na.shape.clone(), na.requires_grad);
        Ok(self.push(shape, out, Op::Unary(op, ia), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let na = &self.nodes[ia];
        let out = na.value.iter().map(|&x| scale * x + shift).collect();
        let (shape, rg) = (na.shape.clone(), na.requires_grad);
        Ok(self.push(shape, out, Op::Affine(ia, scale), rg))
    }

    /// Row sums: `[p x q] -> [p x 1]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (rows, cols) = self.dims(ia);
        let va = &self.nodes[ia].value;
        let out = (0..rows)
            .map(|r| va[r * cols..(r + 1) * cols].iter().sum())
            .collect();
        let rg = self.rg(ia);
        Ok(self.push(vec![rows, 1], out, Op::SumRows(ia), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of zero tensors"));
        }
        let idx = parts
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>>>()?;
        let rows = self.dims(idx[0]).0;
        let mut total = 0;
        for &i in &idx {
            let (r, c) = self.dims(i);
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: self.nodes[idx[0]].shape.clone(),
                    right: self.nodes[i].shape.clone(),
                });
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idx {
                let c = self.dims(i).1;
                out.extend_from_slice(&self.nodes[i].value[r * c..(r + 1) * c]);
            }
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(idx), rg))
    }

    /// Extracts column `j` as a `[p x 1]` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let (rows, cols) = self.dims(ia);
        if j >= cols {
            return Err(Error::Shape {
                op: "column",
                left: self.nodes[ia].shape.clone(),
                right: vec![j],
            });
        }
        let va = &self.nodes[ia].value;
        let out = (0..rows).map(|r| va[r * cols + j]).collect();
        let rg = self.rg(ia);
        Ok(self.push(vec![rows, 1], out, Op::Column(ia, j), rg))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ia, ic) = (self.check(a)?, self.check(col)?);
        let (rows, cols) = self.dims(ia);
        let (crows, ccols) = self.dims(ic);
        if crows != rows || ccols != 1 {
            return Err(Error::Shape {
                op: "mul_col",
                left: self.nodes[ia].shape.clone(),
                right: self.nodes[ic].shape.clone(),
            });
        }
        let (va, vc) = (&self.nodes[ia].value, &self.nodes[ic].value);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(va[r * cols..(r + 1) * cols].iter().map(|x| x * vc[r]));
        }
        let rg = self.rg(ia) || self.rg(ic);
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::MulCol(ia, ic), rg))
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let (rows, cols) = self.dims(ia);
        if cols == 0 {
            return Err(Error::invalid("softmax of an empty vector"));
        }
        let va = &self.nodes[ia].value;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            out.extend(softmax(&va[r * cols..(r + 1) * cols]));
        }
        let (shape, rg) = (self.nodes[ia].shape.clone(), self.rg(ia));
        Ok(self.push(shape, out, Op::SoftmaxRows(ia), rg))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (na, nb) = (&self.nodes[ia], &self.nodes[ib]);
        if na.shape != nb.shape || na.value.is_empty() {
            return Err(Error::Shape {
                op: "mse",
                left: na.shape.clone(),
                right: nb.shape.clone(),
            });
        }
        let loss = mse(&na.value, &nb.value);
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(Vec::new(), vec![loss], Op::Mse(ia, ib), rg))
    }

    /// Cross-entropy of each logit row against a target distribution row,
    /// averaged over rows. The target is treated as a constant.
    pub fn cross_entropy(&mut self, logits: Var, target: Var) -> Result<Var> {
        let (il, it) = (self.check(logits)?, self.check(target)?);
        let (nl, nt) = (&self.nodes[il], &self.nodes[it]);
        if nl.shape != nt.shape || nl.value.is_empty() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: nl.shape.clone(),
                right: nt.shape.clone(),
            });
        }
        let (rows, cols) = dims2(&nl.shape);
        let mut total = 0.0;
        for r in 0..rows {
            let z = &nl.value[r * cols..(r + 1) * cols];
            let t = &nt.value[r * cols..(r + 1) * cols];
            total += cross_entropy(z, t).map_err(|e| match e {
                Error::NonNormalizedTarget { sum, .. } => {
                    Error::NonNormalizedTarget { row: r, sum }
                }
                other => other,
            })?;
        }
        let rg = nl.requires_grad;
        Ok(self.push(
            Vec::new(),
            vec![total / rows as f64],
            Op::CrossEntropy(il, it),
            rg,
        ))
    }

    /// Runs the reverse pass from a scalar `loss`.
    ///
    /// Fails if the record was already reverse-traversed, if `loss` belongs
    /// to a different record, or if it is not a scalar.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        if self.consumed {
            return Err(Error::AlreadyBackpropagated);
        }
        if self.nodes[il].value.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[il].shape.clone()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        let mut visited = Vec::new();
        if self.nodes[il].requires_grad {
            grads[il] = Some(vec![1.0]);
        }
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            requires_grad: self.nodes.iter().map(|n| n.requires_grad).collect(),
            lens: self.nodes.iter().map(|n| n.value.len()).collect(),
            grads,
            visited,
        })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (p, q) = self.dims(a);
                let r = self.dims(b).1;
                if self.rg(a) {
                    // dA = G · Bᵀ
                    let vb = &self.nodes[b].value;
                    let acc = slot(grads, a, p * q);
                    for i in 0..p {
                        for k in 0..q {
                            let mut s = 0.0;
                            for j in 0..r {
                                s += g[i * r + j] * vb[k * r + j];
                            }
                            acc[i * q + k] += s;
                        }
                    }
                }
                if self.rg(b) {
                    // dB = Aᵀ · G
                    let va = &self.nodes[a].value;
                    let acc = slot(grads, b, q * r);
                    for i in 0..p {
                        for k in 0..q {
                            let x = va[i * q + k];
                            for j in 0..r {
                                acc[k * r + j] += x * g[i * r + j];
                            }
                        }
                    }
                }
            }
            Op::Binary(op, a, b) => {
                let n = g.len();
                match op {
                    Binary::Add | Binary::Sub => {
                        if self.rg(a) {
                            add_into(slot(grads, a, n), g, 1.0);
                        }
                        if self.rg(b) {
                            let s = if op == Binary::Add { 1.0 } else { -1.0 };
                            add_into(slot(grads, b, n), g, s);
                        }
                    }
                    Binary::Mul => {
                        if self.rg(a) {
                            let vb = &self.nodes[b].value;
                            let acc = slot(grads, a, n);
                            for k in 0..n {
                                acc[k] += g[k] * vb[k];
                            }
                        }
                        if self.rg(b) {
                            let va = &self.nodes[a].value;
                            let acc = slot(grads, b, n);
                            for k in 0..n {
                                acc[k] += g[k] * va[k];
                            }
                        }
                    }
                }
            }
            Op::AddRow(a, bias) => {
                let (rows, cols) = self.dims(a);
                if self.rg(a) {
                    add_into(slot(grads, a, g.len()), g, 1.0);
                }
                if self.rg(bias) {
                    let acc = slot(grads, bias, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            acc[c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Unary(op, a) => {
                if self.rg(a) {
                    let y = &node.value;
                    let acc = slot(grads, a, g.len());
                    match op {
                        Unary::Sigmoid => {
                            for k in 0..g.len() {
                                acc[k] += g[k] * y[k] * (1.0 - y[k]);
                            }
                        }
                        Unary::Tanh => {
                            for k in 0..g.len() {
                                acc[k] += g[k] * (1.0 - y[k] * y[k]);
                            }
                        }
                    }
                }
            }
            Op::Affine(a, scale) => {
                if self.rg(a) {
                    add_into(slot(grads, a, g.len()), g, scale);
                }
            }
            Op::SumRows(a) => {
                if self.rg(a) {
                    let (rows, cols) = self.dims(a);
                    let acc = slot(grads, a, rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            acc[r * cols + c] += g[r];
                        }
                    }
                }
            }
            Op::ConcatCols(ref parts) => {
                let (rows, total) = dims2(&node.shape);
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.rg(p) {
                        let acc = slot(grads, p, rows * c);
                        for r in 0..rows {
                            for k in 0..c {
                                acc[r * c + k] += g[r * total + offset + k];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Column(a, j) => {
                if self.rg(a) {
                    let (rows, cols) = self.dims(a);
                    let acc = slot(grads, a, rows * cols);
                    for r in 0..rows {
                        acc[r * cols + j] += g[r];
                    }
                }
            }
            Op::MulCol(a, col) => {
                let (rows, cols) = self.dims(a);
                if self.rg(a) {
                    let vc = &self.nodes[col].value;
                    let acc = slot(grads, a, rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            acc[r * cols + c] += g[r * cols + c] * vc[r];
                        }
                    }
                }
                if self.rg(col) {
                    let va = &self.nodes[a].value;
                    let acc = slot(grads, col, rows);
                    for r in 0..rows {
                        let mut s = 0.0;
                        for c in 0..cols {
                            s += g[r * cols + c] * va[r * cols + c];
                        }
                        acc[r] += s;
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if self.rg(a) {
                    let (rows, cols) = self.dims(a);
                    let y = &node.value;
                    let acc = slot(grads, a, rows * cols);
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for c in 0..cols {
                            acc[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let scale = 2.0 * g[0] / va.len() as f64;
                if self.rg(a) {
                    let acc = slot(grads, a, va.len());
                    for k in 0..va.len() {
                        acc[k] += scale * (va[k] - vb[k]);
                    }
                }
                if self.rg(b) {
                    let acc = slot(grads, b, va.len());
                    for k in 0..va.len() {
                        acc[k] -= scale * (va[k] - vb[k]);
                    }
                }
            }
            Op::CrossEntropy(logits, target) => {
                if self.rg(logits) {
                    let (rows, cols) = self.dims(logits);
                    let (vz, vt) = (&self.nodes[logits].value, &self.nodes[target].value);
                    let scale = g[0] / rows as f64;
                    let acc = slot(grads, logits, rows * cols);
                    for r in 0..rows {
                        let p = softmax(&vz[r * cols..(r + 1) * cols]);
                        let t = &vt[r * cols..(r + 1) * cols];
                        let tsum: f64 = t.iter().sum();
                        for c in 0..cols {
                            acc[r * cols + c] += scale * (tsum * p[c] - t[c]);
                        }
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, &x) in acc.iter_mut().zip(g) {
        *a += scale * x;
    }
}

/// Gradients produced by one reverse pass.
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    requires_grad: Vec<bool>,
    lens: Vec<usize>,
    grads: Vec<Option<Vec<f64>>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`. Tracked values the loss does not
    /// depend on get an all-zero gradient.
    pub fn get(&self, v: Var) -> Result<Vec<f64>> {
        if v.graph != self.graph || v.index >= self.grads.len() {
            return Err(Error::Detached);
        }
        if !self.requires_grad[v.index] {
            return Err(Error::invalid("value does not track gradients"));
        }
        Ok(self.grads[v.index]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.lens[v.index]]))
    }

    /// Node indices in the order the reverse pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let row = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let x = a[i * q + k];
            if x == 0.0 {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&b[k * r..(k + 1) * r]) {
                *o += x * y;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max subtraction. Panics on an empty slice; use
/// [`stable_softmax`] for a checked version.
pub(crate) fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn stable_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("softmax input must be finite"));
    }
    Ok(softmax(v))
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// `-Σ target_c log softmax(logits)_c` for a single row.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> Result<f64> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(Error::Shape {
            op: "cross_entropy",
            left: vec![logits.len()],
            right: vec![target.len()],
        });
    }
    let sum: f64 = target.iter().sum();
    if target.iter().any(|&t| t < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::NonNormalizedTarget { row: 0, sum });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok(target
        .iter()
        .zip(logits)
        .filter(|(&t, _)| t != 0.0)
        .map(|(&t, &z)| -t * (z - lse))
        .sum())
}
