//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and the ids of its inputs, and [`Graph::backward`] walks the tape in
//! reverse accumulating vector-Jacobian products. Graphs are rebuilt for
//! every evaluation, so memory is proportional to one forward pass.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor shape does not match data");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::new(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(1, 1, vec![value])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a (r×k) · b (k×c)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions differ");
    let (r, k, c) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for (p, &aip) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            let b_row = &b.data[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(r, c, out)
}

/// `a (r×c) · bᵀ` where `b` is `k×c`.
fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, c, k) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0; r * k];
    for i in 0..r {
        let a_row = &a.data[i * c..(i + 1) * c];
        for j in 0..k {
            let b_row = &b.data[j * c..(j + 1) * c];
            out[i * k + j] = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(r, k, out)
}

/// `aᵀ · b` where `a` is `r×k` and `b` is `r×c`.
fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (r, k, c) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0; k * c];
    for i in 0..r {
        let b_row = &b.data[i * c..(i + 1) * c];
        for (p, &aip) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            let out_row = &mut out[p * c..(p + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(k, c, out)
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row standardization; returns the output and each row's `1/σ`.
pub fn layer_normalize(x: &Tensor) -> (Tensor, Vec<f64>) {
    let c = x.cols as f64;
    let mut out = vec![0.0; x.len()];
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (o, v) in out[r * x.cols..(r + 1) * x.cols].iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    (Tensor::new(x.rows, x.cols, out), inv_std)
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + bias` with `bias` of shape `1×c` broadcast over rows.
    AddRow(Var, Var),
    /// `a ⊙ gain` with `gain` of shape `1×c` broadcast over rows.
    MulRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LayerNorm { input: Var, inv_std: Vec<f64> },
    Sum(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    /// `out[r] = f(in[r, :])` with a precomputed Jacobian `∂out[r]/∂in[r, :]`.
    RowReduce { input: Var, jacobian: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` does not
    /// influence the root.
    pub fn wrt(&self, v: Var, shape: (usize, usize)) -> Tensor {
        self.0[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    /// Parameters and constants alike enter as leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = matmul(self.value(a), self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((1, x.cols), b.shape(), "row bias shape");
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols) {
            for (o, bv) in row.iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    pub fn mul_row(&mut self, a: Var, gain: Var) -> Var {
        let (x, g) = (self.value(a), self.value(gain));
        assert_eq!((1, x.cols), g.shape(), "row gain shape");
        let mut out = x.clone();
        for row in out.data.chunks_mut(x.cols) {
            for (o, gv) in row.iter_mut().zip(&g.data) {
                *o *= gv;
            }
        }
        self.push(out, Op::MulRow(a, gain))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.rows, x.cols, data);
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.rows, x.cols, data);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows, x.cols, x.data.iter().map(|v| v * factor).collect());
        self.push(value, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let value = Tensor::new(x.rows, x.cols, x.data.iter().map(|v| v.max(0.0)).collect());
        self.push(value, Op::Relu(a))
    }

    /// Row-wise standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (value, inv_std) = layer_normalize(self.value(a));
        self.push(value, Op::LayerNorm { input: a, inv_std })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.len(), rows * cols, "reshape changes element count");
        let value = Tensor::new(rows, cols, x.data.clone());
        self.push(value, Op::Reshape(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                assert_eq!(t.rows, rows, "concat row counts differ");
                data.extend_from_slice(t.row(r));
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()))
    }

    /// Reduces each row of `a` to one value using caller-supplied values and
    /// Jacobian rows. Lets non-smooth or sort-based functions (hedging P&L,
    /// risk measures) join the tape with their own derivative conventions.
    pub fn row_reduce(&mut self, a: Var, values: Vec<f64>, jacobian: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), jacobian.shape(), "jacobian shape");
        assert_eq!(values.len(), x.rows, "one value per row");
        let rows = x.rows;
        self.push(
            Tensor::new(rows, 1, values),
            Op::RowReduce { input: a, jacobian },
        )
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::validation(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[id].take() else { continue };
            let send = |grads: &mut Vec<Option<Tensor>>, to: Var, g: Tensor| {
                match &mut grads[to.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let da = matmul_nt(&upstream, self.value(*b));
                    let db = matmul_tn(self.value(*a), &upstream);
                    send(&mut grads, *a, da);
                    send(&mut grads, *b, db);
                }
                Op::AddRow(a, bias) => {
                    let mut db = vec![0.0; upstream.cols];
                    for row in upstream.data.chunks(upstream.cols) {
                        for (d, u) in db.iter_mut().zip(row) {
                            *d += u;
                        }
                    }
                    let cols = upstream.cols;
                    send(&mut grads, *bias, Tensor::new(1, cols, db));
                    send(&mut grads, *a, upstream.clone());
                }
                Op::MulRow(a, gain) => {
                    let x = self.value(*a);
                    let g = self.value(*gain);
                    let cols = x.cols;
                    let mut dg = vec![0.0; cols];
                    let mut da = upstream.clone();
                    for (r, row) in da.data.chunks_mut(cols).enumerate() {
                        let xr = x.row(r);
                        for c in 0..cols {
                            dg[c] += row[c] * xr[c];
                            row[c] *= g.data[c];
                        }
                    }
                    send(&mut grads, *gain, Tensor::new(1, cols, dg));
                    send(&mut grads, *a, da);
                }
                Op::Add(a, b) => {
                    send(&mut grads, *a, upstream.clone());
                    send(&mut grads, *b, upstream.clone());
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let da = upstream.data.iter().zip(&y.data).map(|(u, v)| u * v).collect();
                    let db = upstream.data.iter().zip(&x.data).map(|(u, v)| u * v).collect();
                    send(&mut grads, *a, Tensor::new(x.rows, x.cols, da));
                    send(&mut grads, *b, Tensor::new(y.rows, y.cols, db));
                }
                Op::Scale(a, factor) => {
                    let mut d = upstream.clone();
                    d.data.iter_mut().for_each(|v| *v *= factor);
                    send(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    // Subgradient 0 at the kink.
                    let d = upstream
                        .data
                        .iter()
                        .zip(&x.data)
                        .map(|(u, v)| if *v > 0.0 { *u } else { 0.0 })
                        .collect();
                    send(&mut grads, *a, Tensor::new(x.rows, x.cols, d));
                }
                Op::LayerNorm { input, inv_std } => {
                    let xhat = &node.value;
                    let cols = xhat.cols;
                    let c = cols as f64;
                    let mut d = vec![0.0; xhat.len()];
                    for r in 0..xhat.rows {
                        let dy = upstream.row(r);
                        let xh = xhat.row(r);
                        let sum_dy: f64 = dy.iter().sum();
                        let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let inv = inv_std[r];
                        for j in 0..cols {
                            d[r * cols + j] = inv / c * (c * dy[j] - sum_dy - xh[j] * sum_dy_xh);
                        }
                    }
                    send(&mut grads, *input, Tensor::new(xhat.rows, cols, d));
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    send(&mut grads, *a, Tensor::filled(x.rows, x.cols, upstream.data[0]));
                }
                Op::Reshape(a) => {
                    let x = self.value(*a);
                    send(&mut grads, *a, Tensor::new(x.rows, x.cols, upstream.data));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let mut d = Vec::with_capacity(t.len());
                        for r in 0..t.rows {
                            let row = upstream.row(r);
                            d.extend_from_slice(&row[offset..offset + t.cols]);
                        }
                        offset += t.cols;
                        send(&mut grads, p, Tensor::new(t.rows, t.cols, d));
                    }
                }
                Op::RowReduce { input, jacobian } => {
                    let mut d = jacobian.clone();
                    for (r, row) in d.data.chunks_mut(jacobian.cols).enumerate() {
                        let u = upstream.data[r];
                        row.iter_mut().for_each(|v| *v *= u);
                    }
                    send(&mut grads, *input, d);
                }
            }
        }
        Ok(Gradients(grads))
    }
}
