//! Reverse-mode differentiation over a fixed set of matrix operations.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Tape::backward`] is one reverse sweep.

use crate::ctc::ctc_loss_and_grad;
use crate::error::{Error, Result};
use crate::matrix::{log_sum_exp, Matrix};
use crate::softdtw::{cosine_cost_matrix, cosine_cost_vjp, soft_dtw, soft_dtw_grad, SoftDtwTable};
use crate::types::{GlossSequence, LogProbMatrix};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    /// `x W^T (+ b)`
    Affine { x: Var, w: Var, b: Option<Var> },
    /// Stride-1 convolution over rows with zero "same" padding.
    Conv1d { x: Var, w: Var, b: Var, kernel: usize },
    /// Window 2, stride 2 over rows; `argmax` holds the winning source row.
    MaxPool { x: Var, argmax: Vec<usize> },
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    ConcatCols(Var, Var),
    Rows { x: Var, start: usize },
    StackRows(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    LogSoftmax(Var),
    CosineCost(Var, Var),
    SoftDtw { cost: Var, table: SoftDtwTable },
    Ctc { logp: Var, grad: Matrix },
    Hinge(Var),
    WeightedSum(Vec<(Var, f64)>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

/// Parameter gradients indexed like the parameter list bound to the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Option<Matrix>>);

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&Matrix> {
        self.0.get(param).and_then(Option::as_ref)
    }
}

fn scalar(x: f64) -> Matrix {
    Matrix::from_vec(1, 1, vec![x])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn input(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Input)
    }

    /// Leaf whose gradient is reported under `index`.
    pub fn param(&mut self, index: usize, m: Matrix) -> Var {
        self.push(m, Op::Param(index))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(xv.cols(), wv.cols(), "affine: input width vs weight columns");
        let (t, out) = (xv.rows(), wv.rows());
        let mut y = Matrix::zeros(t, out);
        for i in 0..t {
            let xr = xv.row(i);
            let yr = y.row_mut(i);
            for (o, slot) in yr.iter_mut().enumerate() {
                *slot = xr.iter().zip(wv.row(o)).map(|(a, b)| a * b).sum();
            }
        }
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.shape(), (1, out), "affine: bias shape");
            for i in 0..t {
                for (slot, bias) in y.row_mut(i).iter_mut().zip(bv.row(0)) {
                    *slot += bias;
                }
            }
        }
        self.push(y, Op::Affine { x, w, b })
    }

    /// `w` is `out x (kernel * in)`, laid out tap-major.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (t, cin) = xv.shape();
        let out = wv.rows();
        assert_eq!(wv.cols(), kernel * cin, "conv1d: weight width");
        assert_eq!(bv.shape(), (1, out), "conv1d: bias shape");
        let pad = kernel / 2;
        let mut y = Matrix::zeros(t, out);
        for ti in 0..t {
            for o in 0..out {
                let wr = wv.row(o);
                let mut acc = bv[(0, o)];
                for k in 0..kernel {
                    let src = ti + k;
                    if src < pad || src - pad >= t {
                        continue;
                    }
                    let xr = xv.row(src - pad);
                    acc += xr.iter().zip(&wr[k * cin..(k + 1) * cin]).map(|(a, b)| a * b).sum::<f64>();
                }
                y[(ti, o)] = acc;
            }
        }
        self.push(y, Op::Conv1d { x, w, b, kernel })
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (t, c) = xv.shape();
        let tout = t / 2;
        let mut y = Matrix::zeros(tout, c);
        let mut argmax = vec![0; tout * c];
        for i in 0..tout {
            for j in 0..c {
                let (a, b) = (xv[(2 * i, j)], xv[(2 * i + 1, j)]);
                let (v, src) = if b > a { (b, 2 * i + 1) } else { (a, 2 * i) };
                y[(i, j)] = v;
                argmax[i * c + j] = src;
            }
        }
        self.push(y, Op::MaxPool { x, argmax })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        self.push(y, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        assert_eq!(y.shape(), self.value(b).shape(), "add: shape");
        y.add_assign(self.value(b));
        self.push(y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul: shape");
        let y = Matrix::from_fn(av.rows(), av.cols(), |i, j| av[(i, j)] * bv[(i, j)]);
        self.push(y, Op::Mul(a, b))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows(), bv.rows(), "concat: row count");
        let ca = av.cols();
        let y = Matrix::from_fn(av.rows(), ca + bv.cols(), |i, j| {
            if j < ca {
                av[(i, j)]
            } else {
                bv[(i, j - ca)]
            }
        });
        self.push(y, Op::ConcatCols(a, b))
    }

    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self.value(x).slice_rows(start, len);
        self.push(y, Op::Rows { x, start })
    }

    pub fn stack_rows(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty(), "stack of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "stack: width");
            data.extend_from_slice(v.as_slice());
            rows += v.rows();
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::StackRows(parts))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let tv = self.value(table);
        let y = Matrix::from_fn(ids.len(), tv.cols(), |i, j| tv[(ids[i], j)]);
        self.push(y, Op::Gather { table, ids })
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut y = self.value(x).clone();
        for i in 0..y.rows() {
            let r = y.row_mut(i);
            let z = log_sum_exp(r);
            r.iter_mut().for_each(|v| *v -= z);
        }
        self.push(y, Op::LogSoftmax(x))
    }

    pub fn cosine_cost(&mut self, a: Var, b: Var) -> Result<Var> {
        let c = cosine_cost_matrix(self.value(a), self.value(b))?;
        Ok(self.push(c.entries, Op::CosineCost(a, b)))
    }

    pub fn soft_dtw(&mut self, cost: Var, gamma: f64) -> Result<Var> {
        let (v, table) = soft_dtw(self.value(cost), gamma)?;
        Ok(self.push(scalar(v), Op::SoftDtw { cost, table }))
    }

    /// CTC negative log-likelihood of `label` under row-wise log-probs `logp`.
    pub fn ctc(&mut self, logp: Var, label: &GlossSequence) -> Result<Var> {
        let p = LogProbMatrix::new(self.value(logp).clone())?;
        let l = ctc_loss_and_grad(&p, label)?;
        Ok(self.push(scalar(l.loss), Op::Ctc { logp, grad: l.grad }))
    }

    /// `max(x, 0)` elementwise.
    pub fn hinge(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        self.push(y, Op::Hinge(x))
    }

    /// `Σ w_i x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        assert!(!terms.is_empty(), "weighted sum of nothing");
        let (r, c) = self.value(terms[0].0).shape();
        let mut y = Matrix::zeros(r, c);
        for &(v, w) in &terms {
            let xv = self.value(v);
            assert_eq!(xv.shape(), (r, c), "weighted sum: shape");
            for (slot, x) in y.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                *slot += w * x;
            }
        }
        self.push(y, Op::WeightedSum(terms))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(scalar(s), Op::Sum(x))
    }

    /// One reverse sweep from a scalar node. `num_params` sizes the result.
    pub fn backward(&mut self, loss: Var, num_params: usize) -> Result<Gradients> {
        if self.spent {
            return Err(Error::Usage("backward already ran on this tape".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Usage("backward needs a scalar node".into()));
        }
        self.spent = true;
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(scalar(1.0));
        let mut out = Gradients(vec![None; num_params]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut send = |v: Var, d: Matrix| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(idx) => {
                    if *idx >= num_params {
                        return Err(Error::Usage(format!("parameter index {idx} >= {num_params}")));
                    }
                    match &mut out.0[*idx] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
                Op::Affine { x, w, b } => {
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let (t, inp) = xv.shape();
                    let out_dim = wv.rows();
                    let mut gx = Matrix::zeros(t, inp);
                    let mut gw = Matrix::zeros(out_dim, inp);
                    for r in 0..t {
                        let gr = g.row(r);
                        let xr = xv.row(r);
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let wr = wv.row(o);
                            for (slot, &wk) in gx.row_mut(r).iter_mut().zip(wr) {
                                *slot += go * wk;
                            }
                            for (slot, &xk) in gw.row_mut(o).iter_mut().zip(xr) {
                                *slot += go * xk;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let mut gb = Matrix::zeros(1, out_dim);
                        for r in 0..t {
                            for (slot, v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                                *slot += v;
                            }
                        }
                        send(*b, gb);
                    }
                    send(*x, gx);
                    send(*w, gw);
                }
                Op::Conv1d { x, w, b, kernel } => {
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let (t, cin) = xv.shape();
                    let out_dim = wv.rows();
                    let pad = kernel / 2;
                    let mut gx = Matrix::zeros(t, cin);
                    let mut gw = Matrix::zeros(out_dim, kernel * cin);
                    let mut gb = Matrix::zeros(1, out_dim);
                    for ti in 0..t {
                        for o in 0..out_dim {
                            let go = g[(ti, o)];
                            if go == 0.0 {
                                continue;
                            }
                            gb[(0, o)] += go;
                            for k in 0..*kernel {
                                let src = ti + k;
                                if src < pad || src - pad >= t {
                                    continue;
                                }
                                let s = src - pad;
                                for c in 0..cin {
                                    gx[(s, c)] += go * wv[(o, k * cin + c)];
                                    gw[(o, k * cin + c)] += go * xv[(s, c)];
                                }
                            }
                        }
                    }
                    send(*x, gx);
                    send(*w, gw);
                    send(*b, gb);
                }
                Op::MaxPool { x, argmax } => {
                    let (t, c) = self.nodes[x.0].value.shape();
                    let mut gx = Matrix::zeros(t, c);
                    for (pos, &src) in argmax.iter().enumerate() {
                        let (i, j) = (pos / c, pos % c);
                        gx[(src, j)] += g[(i, j)];
                    }
                    send(*x, gx);
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = Matrix::from_fn(y.rows(), y.cols(), |i, j| {
                        g[(i, j)] * (1.0 - y[(i, j)] * y[(i, j)])
                    });
                    send(*x, gx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = Matrix::from_fn(y.rows(), y.cols(), |i, j| {
                        g[(i, j)] * y[(i, j)] * (1.0 - y[(i, j)])
                    });
                    send(*x, gx);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * bv[(i, j)]);
                    let gb = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * av[(i, j)]);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a.0].value.cols();
                    let cb = g.cols() - ca;
                    send(*a, Matrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]));
                    send(*b, Matrix::from_fn(g.rows(), cb, |i, j| g[(i, j + ca)]));
                }
                Op::Rows { x, start } => {
                    let (t, c) = self.nodes[x.0].value.shape();
                    let mut gx = Matrix::zeros(t, c);
                    for r in 0..g.rows() {
                        gx.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    send(*x, gx);
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p.0].value.rows();
                        send(p, g.slice_rows(offset, n));
                        offset += n;
                    }
                }
                Op::Gather { table, ids } => {
                    let (t, c) = self.nodes[table.0].value.shape();
                    let mut gt = Matrix::zeros(t, c);
                    for (r, &id) in ids.iter().enumerate() {
                        for (slot, v) in gt.row_mut(id).iter_mut().zip(g.row(r)) {
                            *slot += v;
                        }
                    }
                    send(*table, gt);
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let mut gx = g.clone();
                    for r in 0..y.rows() {
                        let gsum: f64 = g.row(r).iter().sum();
                        for (slot, &ly) in gx.row_mut(r).iter_mut().zip(y.row(r)) {
                            *slot -= ly.exp() * gsum;
                        }
                    }
                    send(*x, gx);
                }
                Op::CosineCost(a, b) => {
                    let (ga, gb) =
                        cosine_cost_vjp(&self.nodes[a.0].value, &self.nodes[b.0].value, &g);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::SoftDtw { cost, table } => {
                    let mut e = soft_dtw_grad(&self.nodes[cost.0].value, table)?;
                    e.scale_assign(g[(0, 0)]);
                    send(*cost, e);
                }
                Op::Ctc { logp, grad } => {
                    let mut d = grad.clone();
                    d.scale_assign(g[(0, 0)]);
                    send(*logp, d);
                }
                Op::Hinge(x) => {
                    let xv = &self.nodes[x.0].value;
                    let gx = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        if xv[(i, j)] > 0.0 {
                            g[(i, j)]
                        } else {
                            0.0
                        }
                    });
                    send(*x, gx);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        let mut d = g.clone();
                        d.scale_assign(w);
                        send(v, d);
                    }
                }
                Op::Sum(x) => {
                    let (r, c) = self.nodes[x.0].value.shape();
                    send(*x, Matrix::filled(r, c, g[(0, 0)]));
                }
            }
        }
        Ok(out)
    }
}
