//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations as they execute. Parameters are read in
//! place from the borrowed [`ParamSet`]; their adjoints land in a [`Grads`]
//! buffer during [`Graph::backward`].

use std::collections::HashMap;

use ndarray::{concatenate, s, Array1, Axis};

use super::params::{Grads, Mat, ParamId, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Affine(Var, f64),
    /// 1×1 scalar times a matrix.
    ScalarMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, xhat: Mat, inv_std: Array1<f64> },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    BroadcastRows(Var),
    Gru(Box<GruTrace>),
}

struct GruTrace {
    x: Var,
    wx: Var,
    wh: Var,
    b: Var,
    r: Mat,
    z: Mat,
    n: Mat,
    hn: Mat,
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(self.value(b));
        self.push(y, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) - self.value(b);
        self.push(y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        self.push(y, Op::Mul(a, b))
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        let y = self.value(a) + self.value(row);
        self.push(y, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        let y = self.value(a) * self.value(row);
        self.push(y, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let y = self.value(a) * k;
        self.push(y, Op::Scale(a, k))
    }

    /// `k * a + c`.
    pub fn affine(&mut self, a: Var, k: f64, c: f64) -> Var {
        let y = self.value(a).mapv(|v| k * v + c);
        self.push(y, Op::Affine(a, k))
    }

    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Var {
        assert_eq!(self.value(s).dim(), (1, 1));
        let k = self.value(s)[[0, 0]];
        let y = self.value(a) * k;
        self.push(y, Op::ScalarMul(s, a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(f64::tanh);
        self.push(y, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        self.push(y, Op::Sigmoid(a))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(gelu);
        self.push(y, Op::Gelu(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let y = self.value(a).t().to_owned();
        self.push(y, Op::Transpose(a))
    }

    /// Row-wise softmax. Columns with `mask[j] == false` get exactly zero weight.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Var {
        let x = self.value(a);
        if let Some(m) = mask {
            assert_eq!(m.len(), x.ncols());
            assert!(m.iter().any(|&b| b), "softmax over fully masked row");
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let mut y = Mat::zeros(x.raw_dim());
        for (xr, mut yr) in x.rows().into_iter().zip(y.rows_mut()) {
            let max = xr
                .iter()
                .enumerate()
                .filter(|(j, _)| keep(*j))
                .fold(f64::NEG_INFINITY, |m, (_, &v)| m.max(v));
            let mut sum = 0.0;
            for (j, &v) in xr.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    yr[j] = e;
                    sum += e;
                }
            }
            yr /= sum;
        }
        self.push(y, Op::SoftmaxRows(a))
    }

    /// Normalizes each row to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *is = 1.0 / (var + eps).sqrt();
            row *= *is;
        }
        self.push(xhat.clone(), Op::LayerNorm { x: a, xhat, inv_std })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(y, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let y = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(y, Op::SliceCols(a, start, end))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let y = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(y, Op::SliceRows(a, start, end))
    }

    /// Repeats a 1×n row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), 1);
        let y = x.broadcast((rows, x.ncols())).expect("1×n broadcasts").to_owned();
        self.push(y, Op::BroadcastRows(a))
    }

    /// Unrolled GRU from a zero state.
    ///
    /// `wx` is F×3d, `wh` is d×3d and `b` is 1×3d with gate blocks ordered
    /// reset, update, candidate. Returns the T×d hidden sequence.
    pub fn gru(&mut self, x: Var, wx: Var, wh: Var, b: Var) -> Var {
        let (xv, whv) = (self.value(x), self.value(wh));
        let d = whv.nrows();
        assert_eq!(whv.ncols(), 3 * d);
        let gx = xv.dot(self.value(wx)) + self.value(b);
        let t_len = xv.nrows();
        let mut h = Mat::zeros((t_len, d));
        let (mut r, mut z, mut n, mut hn) = (h.clone(), h.clone(), h.clone(), h.clone());
        let mut prev = Array1::<f64>::zeros(d);
        for t in 0..t_len {
            let gh = prev.dot(whv);
            for j in 0..d {
                let rj = sigmoid(gx[[t, j]] + gh[j]);
                let zj = sigmoid(gx[[t, d + j]] + gh[d + j]);
                let hnj = gh[2 * d + j];
                let nj = (gx[[t, 2 * d + j]] + rj * hnj).tanh();
                r[[t, j]] = rj;
                z[[t, j]] = zj;
                hn[[t, j]] = hnj;
                n[[t, j]] = nj;
                h[[t, j]] = (1.0 - zj) * nj + zj * prev[j];
            }
            prev = h.row(t).to_owned();
        }
        self.push(h, Op::Gru(Box::new(GruTrace { x, wx, wh, b, r, z, n, hn })))
    }

    /// Accumulates d(root)/d(param) into `grads`, seeding the root adjoint with `seed`.
    pub fn backward(&self, root: Var, seed: Mat, grads: &mut Grads) {
        self.backward_watch(root, seed, grads, &[]);
    }

    /// Like [`Graph::backward`], also returning the adjoints of `watch`
    /// (zeros for nodes the root does not depend on).
    pub fn backward_watch(&self, root: Var, seed: Mat, grads: &mut Grads, watch: &[Var]) -> Vec<Mat> {
        assert_eq!(seed.dim(), self.value(root).dim());
        let mut watched: Vec<Mat> = watch.iter().map(|v| Mat::zeros(self.value(*v).raw_dim())).collect();
        let mut adj: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            for (w, out) in watch.iter().zip(&mut watched) {
                if w.0 == i {
                    out.assign(&g);
                }
            }
            self.propagate(i, g, &mut adj, grads);
        }
        watched
    }

    fn propagate(&self, i: usize, g: Mat, adj: &mut [Option<Mat>], grads: &mut Grads) {
        fn acc(adj: &mut [Option<Mat>], v: Var, d: Mat) {
            match &mut adj[v.0] {
                Some(m) => *m += &d,
                slot => *slot = Some(d),
            }
        }
        let y = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param(id) => grads.0[id.0] += &g,
            Op::MatMul(a, b) => {
                acc(adj, *a, g.dot(&self.value(*b).t()));
                acc(adj, *b, self.value(*a).t().dot(&g));
            }
            Op::Add(a, b) => {
                acc(adj, *b, g.clone());
                acc(adj, *a, g);
            }
            Op::Sub(a, b) => {
                acc(adj, *b, -&g);
                acc(adj, *a, g);
            }
            Op::Mul(a, b) => {
                acc(adj, *a, &g * self.value(*b));
                acc(adj, *b, &g * self.value(*a));
            }
            Op::AddRow(a, row) => {
                acc(adj, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(adj, *a, g);
            }
            Op::MulRow(a, row) => {
                let dr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                acc(adj, *row, dr);
                acc(adj, *a, &g * self.value(*row));
            }
            Op::Scale(a, k) | Op::Affine(a, k) => acc(adj, *a, g * *k),
            Op::ScalarMul(s, a) => {
                let k = self.value(*s)[[0, 0]];
                let ds = (&g * self.value(*a)).sum();
                acc(adj, *s, Mat::from_elem((1, 1), ds));
                acc(adj, *a, g * k);
            }
            Op::Tanh(a) => {
                let y = y.unwrap();
                acc(adj, *a, &g * &y.mapv(|v| 1.0 - v * v));
            }
            Op::Sigmoid(a) => {
                let y = y.unwrap();
                acc(adj, *a, &g * &y.mapv(|v| v * (1.0 - v)));
            }
            Op::Gelu(a) => acc(adj, *a, &g * &self.value(*a).mapv(gelu_grad)),
            Op::Transpose(a) => acc(adj, *a, g.t().to_owned()),
            Op::SoftmaxRows(a) => {
                let y = y.unwrap();
                let mut dx = &g * y;
                for (mut row, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let dot = row.sum();
                    row.zip_mut_with(&yr, |d, &p| *d -= p * dot);
                }
                acc(adj, *a, dx);
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let n = xhat.ncols() as f64;
                let mut dx = g;
                for ((mut row, xr), is) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                    let mean_g = row.sum() / n;
                    let mean_gx = row.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                    row.zip_mut_with(&xr, |d, &xh| *d = is * (*d - mean_g - xh * mean_gx));
                }
                acc(adj, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    acc(adj, *p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(&g);
                acc(adj, *a, d);
            }
            Op::SliceRows(a, start, end) => {
                let mut d = Mat::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![*start..*end, ..]).assign(&g);
                acc(adj, *a, d);
            }
            Op::BroadcastRows(a) => acc(adj, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::Gru(tr) => self.gru_backward(tr, y.unwrap(), &g, adj),
        }
    }

    fn gru_backward(&self, tr: &GruTrace, h: &Mat, dh_seq: &Mat, adj: &mut [Option<Mat>]) {
        let whv = self.value(tr.wh);
        let (t_len, d) = h.dim();
        let mut dgx = Mat::zeros((t_len, 3 * d));
        let mut dwh = Mat::zeros(whv.raw_dim());
        let mut carry = Array1::<f64>::zeros(d);
        for t in (0..t_len).rev() {
            let prev = if t == 0 { Array1::zeros(d) } else { h.row(t - 1).to_owned() };
            let mut dgh = Array1::<f64>::zeros(3 * d);
            let mut dprev = Array1::<f64>::zeros(d);
            for j in 0..d {
                let dh = dh_seq[[t, j]] + carry[j];
                let (r, z, n, hn) = (tr.r[[t, j]], tr.z[[t, j]], tr.n[[t, j]], tr.hn[[t, j]]);
                let dn_pre = dh * (1.0 - z) * (1.0 - n * n);
                let dz_pre = dh * (prev[j] - n) * z * (1.0 - z);
                let dr_pre = dn_pre * hn * r * (1.0 - r);
                dprev[j] = dh * z;
                dgx[[t, j]] = dr_pre;
                dgx[[t, d + j]] = dz_pre;
                dgx[[t, 2 * d + j]] = dn_pre;
                dgh[j] = dr_pre;
                dgh[d + j] = dz_pre;
                dgh[2 * d + j] = dn_pre * r;
            }
            for a in 0..d {
                if prev[a] != 0.0 {
                    let mut row = dwh.row_mut(a);
                    row.scaled_add(prev[a], &dgh);
                }
            }
            dprev += &whv.dot(&dgh);
            carry = dprev;
        }
        let xv = self.value(tr.x);
        let wxv = self.value(tr.wx);
        let b_grad = dgx.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dx = dgx.dot(&wxv.t());
        let dwx = xv.t().dot(&dgx);
        for (v, d) in [(tr.wh, dwh), (tr.b, b_grad), (tr.wx, dwx), (tr.x, dx)] {
            match &mut adj[v.0] {
                Some(m) => *m += &d,
                slot => *slot = Some(d),
            }
        }
    }
}
