//! Reverse-mode automatic differentiation on rank-2 tensors.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]; calling
//! [`Var::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of that scalar with respect to every node.
//!
//! Binary elementwise operations broadcast their right operand when it is
//! `[1, m]` (a row), `[n, 1]` (a column) or `[1, 1]`. Shape mismatches are
//! programming errors and panic; inputs coming from outside are validated
//! at the model boundary.

use std::cell::{Ref, RefCell};

use crate::tensor::{matmul, transpose, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Clamp(usize, f64, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    RowNorm(usize, f64),
    MeanRows(usize),
    SumCols(usize),
    Sum(usize),
    SelectRows(usize, Vec<usize>),
    SliceCols(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

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

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the
    /// output.
    pub fn get(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

fn dims(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [r, c] => (*r, *c),
        s => panic!("tape operations need rank-2 tensors, got shape {s:?}"),
    }
}

fn t2(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Offset into a broadcast right operand.
fn bcast_index(b: (usize, usize), i: usize, j: usize) -> usize {
    let r = if b.0 == 1 { 0 } else { i };
    let c = if b.1 == 1 { 0 } else { j };
    r * b.1 + c
}

fn check_broadcast(a: (usize, usize), b: (usize, usize)) {
    assert!(
        (b.0 == a.0 || b.0 == 1) && (b.1 == a.1 || b.1 == 1),
        "cannot broadcast {b:?} onto {a:?}"
    );
}

fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (da, db) = (dims(a), dims(b));
    check_broadcast(da, db);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(ad.len());
    for i in 0..da.0 {
        for j in 0..da.1 {
            out.push(f(ad[i * da.1 + j], bd[bcast_index(db, i, j)]));
        }
    }
    t2(da.0, da.1, out)
}

/// Sums `g` (shaped like the left operand) down to the right operand's shape.
fn reduce_to(g: &[f64], a: (usize, usize), b: (usize, usize), scale: impl Fn(usize, usize) -> f64) -> Tensor {
    let mut out = vec![0.0; b.0 * b.1];
    for i in 0..a.0 {
        for j in 0..a.1 {
            out[bcast_index(b, i, j)] += g[i * a.1 + j] * scale(i, j);
        }
    }
    t2(b.0, b.1, out)
}

fn row_softmax(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &v) in out[i * cols..(i + 1) * cols].iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        out[i * cols..(i + 1) * cols].iter_mut().for_each(|o| *o /= total);
    }
    out
}

fn row_norm(x: &[f64], rows: usize, cols: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; x.len()];
    let mut sigmas = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let sigma = (var + eps).sqrt();
        for (o, &v) in out[i * cols..(i + 1) * cols].iter_mut().zip(row) {
            *o = (v - mean) / sigma;
        }
        sigmas.push(sigma);
    }
    (out, sigmas)
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

    /// Records an input. Panics unless `value` has rank 2.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        dims(&value);
        self.push(value, Op::Leaf)
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.borrow().clone()
    }

    fn borrow(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    /// The single entry of a `[1, 1]` value.
    pub fn item(&self) -> f64 {
        let v = self.borrow();
        assert_eq!(v.len(), 1, "item() needs a single-element value");
        v.data()[0]
    }

    pub fn dims(&self) -> (usize, usize) {
        dims(&self.borrow())
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables live on different tapes");
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Tensor) -> Var<'t> {
        let out = f(&self.borrow());
        self.tape.push(out, op)
    }

    fn pair(self, other: Var<'t>, op: Op, f: impl FnOnce(&Tensor, &Tensor) -> Tensor) -> Var<'t> {
        self.same_tape(&other);
        let out = f(&self.borrow(), &other.borrow());
        self.tape.push(out, op)
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.pair(other, Op::MatMul(self.id, other.id), |a, b| {
            let ((n, k), (k2, m)) = (dims(a), dims(b));
            assert_eq!(k, k2, "matmul inner dimensions differ: {:?} · {:?}", a.shape(), b.shape());
            t2(n, m, matmul(a.data(), b.data(), n, k, m))
        })
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.pair(other, Op::Add(self.id, other.id), |a, b| binary(a, b, |x, y| x + y))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.pair(other, Op::Sub(self.id, other.id), |a, b| binary(a, b, |x, y| x - y))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.pair(other, Op::Mul(self.id, other.id), |a, b| binary(a, b, |x, y| x * y))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |a| a.map(|x| x * s))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |a| a.map(|x| x + s))
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |a| a.map(|x| x.max(0.0)))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |a| a.map(|x| 1.0 / (1.0 + (-x).exp())))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), |a| a.map(f64::tanh))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |a| a.map(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), |a| a.map(f64::ln))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |a| a.map(|x| x.clamp(lo, hi)))
    }

    pub fn softmax_rows(self) -> Var<'t> {
        self.unary(Op::SoftmaxRows(self.id), |a| {
            let (r, c) = dims(a);
            t2(r, c, row_softmax(a.data(), r, c))
        })
    }

    pub fn log_softmax_rows(self) -> Var<'t> {
        self.unary(Op::LogSoftmaxRows(self.id), |a| {
            let (r, c) = dims(a);
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(c) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            t2(r, c, out)
        })
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |a| {
            let (r, c) = dims(a);
            t2(c, r, transpose(a.data(), r, c))
        })
    }

    /// Per-row standardization to zero mean and unit variance.
    pub fn row_norm(self, eps: f64) -> Var<'t> {
        self.unary(Op::RowNorm(self.id, eps), |a| {
            let (r, c) = dims(a);
            t2(r, c, row_norm(a.data(), r, c, eps).0)
        })
    }

    /// Column means as a `[1, m]` row.
    pub fn mean_rows(self) -> Var<'t> {
        self.unary(Op::MeanRows(self.id), |a| {
            let (r, c) = dims(a);
            let mut out = vec![0.0; c];
            for row in a.data().chunks(c) {
                out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            out.iter_mut().for_each(|o| *o /= r as f64);
            t2(1, c, out)
        })
    }

    /// Row sums as an `[n, 1]` column.
    pub fn sum_cols(self) -> Var<'t> {
        self.unary(Op::SumCols(self.id), |a| {
            let (r, c) = dims(a);
            t2(r, 1, a.data().chunks(c).map(|row| row.iter().sum()).collect())
        })
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |a| Tensor::scalar(a.data().iter().sum()))
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.borrow().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Rows `indices` in order (duplicates allowed).
    pub fn select_rows(self, indices: &[usize]) -> Var<'t> {
        self.unary(Op::SelectRows(self.id, indices.to_vec()), |a| {
            let (r, c) = dims(a);
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices {
                assert!(i < r, "row {i} out of range for {r} rows");
                out.extend_from_slice(&a.data()[i * c..(i + 1) * c]);
            }
            t2(indices.len(), c, out)
        })
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        let idx: Vec<usize> = (start..end).collect();
        self.select_rows(&idx)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.unary(Op::SliceCols(self.id, start), |a| {
            let (r, c) = dims(a);
            assert!(start <= end && end <= c, "columns {start}..{end} out of range for {c}");
            let w = end - start;
            let mut out = Vec::with_capacity(r * w);
            for row in a.data().chunks(c) {
                out.extend_from_slice(&row[start..end]);
            }
            t2(r, w, out)
        })
    }

    /// Joins side by side; every part needs the same row count.
    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        let first = parts[0];
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = {
            let nodes = first.tape.nodes.borrow();
            let rows = dims(&nodes[ids[0]].value).0;
            let widths: Vec<usize> = ids
                .iter()
                .map(|&i| {
                    let (r, c) = dims(&nodes[i].value);
                    assert_eq!(r, rows, "concat_cols row counts differ");
                    c
                })
                .collect();
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for i in 0..rows {
                for (&id, &w) in ids.iter().zip(&widths) {
                    out.extend_from_slice(&nodes[id].value.data()[i * w..(i + 1) * w]);
                }
            }
            t2(rows, total, out)
        };
        first.tape.push(out, Op::ConcatCols(ids))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        let first = parts[0];
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = {
            let nodes = first.tape.nodes.borrow();
            let cols = dims(&nodes[ids[0]].value).1;
            let mut rows = 0;
            let mut out = Vec::new();
            for &id in &ids {
                let (r, c) = dims(&nodes[id].value);
                assert_eq!(c, cols, "concat_rows column counts differ");
                rows += r;
                out.extend_from_slice(nodes[id].value.data());
            }
            t2(rows, cols, out)
        };
        first.tape.push(out, Op::ConcatRows(ids))
    }

    /// Gradients of this `[1, 1]` value with respect to every node.
    pub fn backward(self) -> Gradients {
        let nodes = self.tape.nodes.borrow();
        assert_eq!(nodes[self.id].value.len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[self.id] = Some(Tensor::filled(nodes[self.id].value.shape(), 1.0));

        let acc = |grads: &mut Vec<Option<Tensor>>, id: usize, g: Tensor| match &mut grads[id] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        };

        for id in (0..=self.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let y = &node.value;
            let gd = g.data();
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let ((n, k), (_, m)) = (dims(val(a)), dims(val(b)));
                    let bt = transpose(val(b).data(), k, m);
                    acc(&mut grads, a, t2(n, k, matmul(gd, &bt, n, m, k)));
                    let at = transpose(val(a).data(), n, k);
                    acc(&mut grads, b, t2(k, m, matmul(&at, gd, k, n, m)));
                }
                &Op::Add(a, b) => {
                    let (da, db) = (dims(val(a)), dims(val(b)));
                    acc(&mut grads, b, reduce_to(gd, da, db, |_, _| 1.0));
                    acc(&mut grads, a, g.clone());
                }
                &Op::Sub(a, b) => {
                    let (da, db) = (dims(val(a)), dims(val(b)));
                    acc(&mut grads, b, reduce_to(gd, da, db, |_, _| -1.0));
                    acc(&mut grads, a, g.clone());
                }
                &Op::Mul(a, b) => {
                    let (da, db) = (dims(val(a)), dims(val(b)));
                    let (ad, bd) = (val(a).data(), val(b).data());
                    acc(&mut grads, b, reduce_to(gd, da, db, |i, j| ad[i * da.1 + j]));
                    let ga = (0..da.0)
                        .flat_map(|i| (0..da.1).map(move |j| (i, j)))
                        .map(|(i, j)| gd[i * da.1 + j] * bd[bcast_index(db, i, j)])
                        .collect();
                    acc(&mut grads, a, t2(da.0, da.1, ga));
                }
                &Op::Scale(a, s) => acc(&mut grads, a, g.map(|v| v * s)),
                &Op::AddScalar(a) => acc(&mut grads, a, g.clone()),
                &Op::Relu(a) => {
                    let x = val(a).data();
                    acc(&mut grads, a, zip_map(&g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                &Op::Sigmoid(a) => acc(&mut grads, a, zip_map(&g, y.data(), |g, y| g * y * (1.0 - y))),
                &Op::Tanh(a) => acc(&mut grads, a, zip_map(&g, y.data(), |g, y| g * (1.0 - y * y))),
                &Op::Exp(a) => acc(&mut grads, a, zip_map(&g, y.data(), |g, y| g * y)),
                &Op::Log(a) => acc(&mut grads, a, zip_map(&g, val(a).data(), |g, x| g / x)),
                &Op::Clamp(a, lo, hi) => acc(
                    &mut grads,
                    a,
                    zip_map(&g, val(a).data(), |g, x| if (lo..=hi).contains(&x) { g } else { 0.0 }),
                ),
                &Op::SoftmaxRows(a) => {
                    let (r, c) = dims(y);
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let (yr, gr) = (&y.data()[i * c..(i + 1) * c], &gd[i * c..(i + 1) * c]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            out[i * c + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, a, t2(r, c, out));
                }
                &Op::LogSoftmaxRows(a) => {
                    let (r, c) = dims(y);
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let gr = &gd[i * c..(i + 1) * c];
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            out[i * c + j] = gr[j] - y.data()[i * c + j].exp() * total;
                        }
                    }
                    acc(&mut grads, a, t2(r, c, out));
                }
                &Op::Transpose(a) => {
                    let (r, c) = dims(y);
                    acc(&mut grads, a, t2(c, r, transpose(gd, r, c)));
                }
                Op::ConcatCols(ids) => {
                    let (rows, total) = dims(y);
                    let mut offset = 0;
                    for &part in ids {
                        let w = dims(val(part)).1;
                        let mut out = Vec::with_capacity(rows * w);
                        for i in 0..rows {
                            out.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                        }
                        acc(&mut grads, part, t2(rows, w, out));
                        offset += w;
                    }
                }
                Op::ConcatRows(ids) => {
                    let cols = dims(y).1;
                    let mut offset = 0;
                    for &part in ids {
                        let r = dims(val(part)).0;
                        acc(&mut grads, part, t2(r, cols, gd[offset * cols..(offset + r) * cols].to_vec()));
                        offset += r;
                    }
                }
                &Op::RowNorm(a, eps) => {
                    let (r, c) = dims(y);
                    let (_, sigmas) = row_norm(val(a).data(), r, c, eps);
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        let (yr, gr) = (&y.data()[i * c..(i + 1) * c], &gd[i * c..(i + 1) * c]);
                        let mean_g = gr.iter().sum::<f64>() / c as f64;
                        let mean_gy = yr.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for j in 0..c {
                            out[i * c + j] = (gr[j] - mean_g - yr[j] * mean_gy) / sigmas[i];
                        }
                    }
                    acc(&mut grads, a, t2(r, c, out));
                }
                &Op::MeanRows(a) => {
                    let (r, c) = dims(val(a));
                    let out = (0..r * c).map(|k| gd[k % c] / r as f64).collect();
                    acc(&mut grads, a, t2(r, c, out));
                }
                &Op::SumCols(a) => {
                    let (r, c) = dims(val(a));
                    let out = (0..r * c).map(|k| gd[k / c]).collect();
                    acc(&mut grads, a, t2(r, c, out));
                }
                &Op::Sum(a) => {
                    let (r, c) = dims(val(a));
                    acc(&mut grads, a, Tensor::filled(&[r, c], gd[0]));
                }
                Op::SelectRows(a, indices) => {
                    let (r, c) = dims(val(*a));
                    let mut out = vec![0.0; r * c];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            out[i * c + j] += gd[k * c + j];
                        }
                    }
                    acc(&mut grads, *a, t2(r, c, out));
                }
                &Op::SliceCols(a, start) => {
                    let (r, c) = dims(val(a));
                    let w = dims(y).1;
                    let mut out = vec![0.0; r * c];
                    for i in 0..r {
                        out[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                    }
                    acc(&mut grads, a, t2(r, c, out));
                }
            }
            grads[id] = Some(g);
        }
        Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }
}

fn zip_map(g: &Tensor, x: &[f64], f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(x).map(|(&g, &x)| f(g, x)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape")
}
