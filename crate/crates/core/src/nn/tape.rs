//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records operations eagerly; [`Tape::backward`] walks the
//! record in reverse and returns gradients laid out like the parameter
//! store. Parameters are referenced, not copied.

use std::ops::Range;

use super::kernels::{
    axpy, dot, log_sum_exp, matmul, matmul_at_acc, matmul_bt, sigmoid, softmax_in_place,
};
use super::params::{Grads, ParamId, Params, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Var, Var),
    ColSlice(Var, usize),
    Gather(Var, Vec<u32>),
    EmbedWindow {
        table: Var,
        ids: Vec<u32>,
        starts: Vec<usize>,
        window: usize,
    },
    SelectRows(Var, Vec<usize>),
    Attend {
        q: Var,
        k: Var,
        v: Var,
        ranges: Vec<Range<usize>>,
        heads: usize,
        probs: Vec<f64>,
    },
    Xent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
    LogSoftmaxPick {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Scalar loss whose derivative w.r.t. each input row is precomputed.
    RowLoss(Var, Vec<f64>),
    Sum(Var),
}

struct Node {
    op: Op,
    value: Option<Tensor>,
    /// Whether any parameter feeds this node.
    live: bool,
}

pub struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        debug_assert_eq!(value.data.len(), value.rows * value.cols);
        let live = self.inputs_live(&op);
        self.nodes.push(Node {
            op,
            value: Some(value),
            live,
        });
        Var(self.nodes.len() - 1)
    }

    fn live(&self, v: Var) -> bool {
        self.nodes[v.0].live
    }

    fn inputs_live(&self, op: &Op) -> bool {
        match op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b)
            | Op::MatMulBT(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::Concat(a, b) => self.live(*a) || self.live(*b),
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::ColSlice(a, _)
            | Op::Gather(a, _)
            | Op::SelectRows(a, _)
            | Op::RowLoss(a, _)
            | Op::Sum(a) => self.live(*a),
            Op::EmbedWindow { table, .. } => self.live(*table),
            Op::Attend { q, k, v, .. } => self.live(*q) || self.live(*k) || self.live(*v),
            Op::Xent { logits, .. } | Op::LogSoftmaxPick { logits, .. } => self.live(*logits),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match (&self.nodes[v.0].op, &self.nodes[v.0].value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Constant, t)
    }

    /// Parameter leaf; repeated calls return the same variable.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            live: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Copies the value into a new leaf that gradients do not flow through.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.value(a).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul shape mismatch");
        let (m, k, n) = (ta.rows, ta.cols, tb.cols);
        let out = Tensor::from_vec(m, n, matmul(&ta.data, &tb.data, m, k, n));
        self.push(Op::MatMul(a, b), out)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.cols, "matmul_bt shape mismatch");
        let (m, k, n) = (ta.rows, ta.cols, tb.rows);
        let out = Tensor::from_vec(m, n, matmul_bt(&ta.data, &tb.data, m, k, n));
        self.push(Op::MatMulBT(a, b), out)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            (ta.rows, ta.cols),
            (tb.rows, tb.cols),
            "elementwise shape mismatch"
        );
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(op, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(bias));
        assert_eq!((tb.rows, tb.cols), (1, ta.cols), "add_row shape mismatch");
        let mut data = ta.data.clone();
        for row in data.chunks_mut(ta.cols) {
            for (x, b) in row.iter_mut().zip(&tb.data) {
                *x += b;
            }
        }
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(Op::AddRow(a, bias), out)
    }

    /// `a · w + bias`
    pub fn linear(&mut self, a: Var, w: Var, bias: Var) -> Var {
        let y = self.matmul(a, w);
        self.add_row(y, bias)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x * c).collect());
        self.push(Op::Scale(a, c), out)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_vec(ta.rows, ta.cols, ta.data.iter().map(|x| x.tanh()).collect());
        self.push(Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let out = Tensor::from_vec(
            ta.rows,
            ta.cols,
            ta.data.iter().map(|&x| sigmoid(x)).collect(),
        );
        self.push(Op::Sigmoid(a), out)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows, tb.rows, "concat row mismatch");
        let cols = ta.cols + tb.cols;
        let mut data = Vec::with_capacity(ta.rows * cols);
        for i in 0..ta.rows {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let out = Tensor::from_vec(ta.rows, cols, data);
        self.push(Op::Concat(a, b), out)
    }

    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ta = self.value(a);
        assert!(start + len <= ta.cols, "col_slice out of range");
        let mut data = Vec::with_capacity(ta.rows * len);
        for i in 0..ta.rows {
            data.extend_from_slice(&ta.row(i)[start..start + len]);
        }
        let out = Tensor::from_vec(ta.rows, len, data);
        self.push(Op::ColSlice(a, start), out)
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let tt = self.value(table);
        let d = tt.cols;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(tt.row(id as usize));
        }
        let out = Tensor::from_vec(ids.len(), d, data);
        self.push(Op::Gather(table, ids.to_vec()), out)
    }

    /// Causal window of embeddings: row `t` concatenates the embeddings of
    /// tokens `t, t-1, …, t-window+1`, zero-padded before `starts[t]`, the
    /// first row of `t`'s sequence.
    pub fn embed_window(
        &mut self,
        table: Var,
        ids: &[u32],
        starts: &[usize],
        window: usize,
    ) -> Var {
        assert_eq!(ids.len(), starts.len());
        let tt = self.value(table);
        let d = tt.cols;
        let mut data = vec![0.0; ids.len() * window * d];
        for t in 0..ids.len() {
            for k in 0..window {
                if t < k || t - k < starts[t] {
                    break;
                }
                let dst = &mut data[(t * window + k) * d..(t * window + k + 1) * d];
                dst.copy_from_slice(tt.row(ids[t - k] as usize));
            }
        }
        let out = Tensor::from_vec(ids.len(), window * d, data);
        self.push(
            Op::EmbedWindow {
                table,
                ids: ids.to_vec(),
                starts: starts.to_vec(),
                window,
            },
            out,
        )
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let ta = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * ta.cols);
        for &r in rows {
            data.extend_from_slice(ta.row(r));
        }
        let out = Tensor::from_vec(rows.len(), ta.cols, data);
        self.push(Op::SelectRows(a, rows.to_vec()), out)
    }

    /// Multi-head dot-product attention where query row `i` attends over
    /// key/value rows `ranges[i]`.
    pub fn attend(&mut self, q: Var, k: Var, v: Var, ranges: &[Range<usize>], heads: usize) -> Var {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(tq.rows, ranges.len());
        assert_eq!(tq.cols, tk.cols);
        assert_eq!(tk.rows, tv.rows);
        assert!(tq.cols % heads == 0 && tv.cols % heads == 0);
        let (dk, dv) = (tq.cols / heads, tv.cols / heads);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut out = vec![0.0; tq.rows * tv.cols];
        let mut probs = Vec::new();
        for (i, range) in ranges.iter().enumerate() {
            for h in 0..heads {
                let qi = &tq.row(i)[h * dk..(h + 1) * dk];
                let start = probs.len();
                for j in range.clone() {
                    probs.push(scale * dot(qi, &tk.row(j)[h * dk..(h + 1) * dk]));
                }
                let p = &mut probs[start..];
                if p.is_empty() {
                    continue;
                }
                softmax_in_place(p);
                let o = &mut out[i * tv.cols + h * dv..i * tv.cols + (h + 1) * dv];
                for (pj, j) in p.iter().zip(range.clone()) {
                    axpy(*pj, &tv.row(j)[h * dv..(h + 1) * dv], o);
                }
            }
        }
        let out = Tensor::from_vec(tq.rows, tv.cols, out);
        self.push(
            Op::Attend {
                q,
                k,
                v,
                ranges: ranges.to_vec(),
                heads,
                probs,
            },
            out,
        )
    }

    /// `Σ_i weights[i] · (−log softmax(logits_i)[targets[i]])`, a `1×1` value.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let tl = self.value(logits);
        assert_eq!(tl.rows, targets.len());
        assert_eq!(tl.rows, weights.len());
        let mut probs = tl.data.clone();
        let mut loss = 0.0;
        for i in 0..tl.rows {
            let row = tl.row(i);
            loss += weights[i] * (log_sum_exp(row) - row[targets[i]]);
            softmax_in_place(&mut probs[i * tl.cols..(i + 1) * tl.cols]);
        }
        self.push(
            Op::Xent {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
        )
    }

    /// Column of `log softmax(logits_i)[targets[i]]`.
    pub fn log_softmax_pick(&mut self, logits: Var, targets: &[usize]) -> Var {
        let tl = self.value(logits);
        assert_eq!(tl.rows, targets.len());
        let mut probs = tl.data.clone();
        let mut out = Vec::with_capacity(tl.rows);
        for i in 0..tl.rows {
            let row = tl.row(i);
            out.push(row[targets[i]] - log_sum_exp(row));
            softmax_in_place(&mut probs[i * tl.cols..(i + 1) * tl.cols]);
        }
        self.push(
            Op::LogSoftmaxPick {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Tensor::column(out),
        )
    }

    /// Mean clipped-surrogate loss over a column of new log-probabilities:
    /// `−mean(min(ρA, clip(ρ, 1−ε, 1+ε)A))` with `ρ = exp(logp − old)`.
    pub fn ppo_clip_loss(
        &mut self,
        logp: Var,
        old_logp: &[f64],
        advantages: &[f64],
        eps: f64,
    ) -> Var {
        let t = self.value(logp);
        assert_eq!(t.cols, 1);
        assert_eq!(t.rows, old_logp.len());
        assert_eq!(t.rows, advantages.len());
        let m = t.rows.max(1) as f64;
        let mut loss = 0.0;
        let mut deriv = Vec::with_capacity(t.rows);
        for i in 0..t.rows {
            let ratio = (t.data[i] - old_logp[i]).exp();
            let a = advantages[i];
            let unclipped = ratio * a;
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * a;
            if unclipped <= clipped {
                loss -= unclipped / m;
                deriv.push(-unclipped / m);
            } else {
                loss -= clipped / m;
                deriv.push(0.0);
            }
        }
        self.push(Op::RowLoss(logp, deriv), Tensor::scalar(loss))
    }

    /// `mean((pred − target)²)` over a column.
    pub fn mse_loss(&mut self, pred: Var, target: &[f64]) -> Var {
        let t = self.value(pred);
        assert_eq!(t.cols, 1);
        assert_eq!(t.rows, target.len());
        let m = t.rows.max(1) as f64;
        let mut loss = 0.0;
        let mut deriv = Vec::with_capacity(t.rows);
        for (p, y) in t.data.iter().zip(target) {
            loss += (p - y) * (p - y) / m;
            deriv.push(2.0 * (p - y) / m);
        }
        self.push(Op::RowLoss(pred, deriv), Tensor::scalar(loss))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut out = Grads::zeros_like(self.params);
        self.backward_into(loss, &mut out);
        out
    }

    /// Accumulates gradients of `loss` into `out`.
    pub fn backward_into(&self, loss: Var, out: &mut Grads) {
        assert_eq!(self.value(loss).data.len(), 1, "loss must be a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.live {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (x, y) in out.tensors[id.0].data.iter_mut().zip(&g) {
                        *x += y;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows, ta.cols, tb.cols);
                    if self.live(*a) {
                        let da = matmul_bt(&g, &tb.data, m, n, k);
                        add_into(&mut grads, *a, &da, ta.len());
                    }
                    if self.live(*b) {
                        let db = slot(&mut grads, *b, tb.len());
                        matmul_at_acc(&ta.data, &g, m, k, n, db);
                    }
                }
                Op::MatMulBT(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows, ta.cols, tb.rows);
                    if self.live(*a) {
                        let da = matmul(&g, &tb.data, m, n, k);
                        add_into(&mut grads, *a, &da, ta.len());
                    }
                    if self.live(*b) {
                        let db = slot(&mut grads, *b, tb.len());
                        matmul_at_acc(&g, &ta.data, m, n, k, db);
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &g, g.len());
                    add_into(&mut grads, *b, &g, g.len());
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads, *a, &g, g.len());
                    let db = slot(&mut grads, *b, g.len());
                    for (x, y) in db.iter_mut().zip(&g) {
                        *x -= y;
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                    add_into(&mut grads, *a, &da, g.len());
                    add_into(&mut grads, *b, &db, g.len());
                }
                Op::AddRow(a, bias) => {
                    add_into(&mut grads, *a, &g, g.len());
                    let n = self.value(*bias).cols;
                    let db = slot(&mut grads, *bias, n);
                    for row in g.chunks(n) {
                        for (x, y) in db.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = g.iter().map(|x| x * c).collect();
                    add_into(&mut grads, *a, &da, g.len());
                }
                Op::Tanh(a) => {
                    let y = &node.value.as_ref().unwrap().data;
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    add_into(&mut grads, *a, &da, g.len());
                }
                Op::Sigmoid(a) => {
                    let y = &node.value.as_ref().unwrap().data;
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    add_into(&mut grads, *a, &da, g.len());
                }
                Op::Concat(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (p, q) = (ta.cols, tb.cols);
                    let (la, lb) = (ta.len(), tb.len());
                    {
                        let da = slot(&mut grads, *a, la);
                        for (r, row) in g.chunks(p + q).enumerate() {
                            for (x, y) in da[r * p..(r + 1) * p].iter_mut().zip(&row[..p]) {
                                *x += y;
                            }
                        }
                    }
                    let db = slot(&mut grads, *b, lb);
                    for (r, row) in g.chunks(p + q).enumerate() {
                        for (x, y) in db[r * q..(r + 1) * q].iter_mut().zip(&row[p..]) {
                            *x += y;
                        }
                    }
                }
                Op::ColSlice(a, start) => {
                    let ta = self.value(*a);
                    let cols = ta.cols;
                    let len = node.value.as_ref().unwrap().cols;
                    let da = slot(&mut grads, *a, ta.len());
                    for (r, row) in g.chunks(len).enumerate() {
                        for (x, y) in da[r * cols + start..r * cols + start + len]
                            .iter_mut()
                            .zip(row)
                        {
                            *x += y;
                        }
                    }
                }
                Op::Gather(table, ids) => {
                    let tt = self.value(*table);
                    let d = tt.cols;
                    let dt = slot(&mut grads, *table, tt.len());
                    for (row, &id) in g.chunks(d).zip(ids) {
                        axpy(1.0, row, &mut dt[id as usize * d..(id as usize + 1) * d]);
                    }
                }
                Op::EmbedWindow {
                    table,
                    ids,
                    starts,
                    window,
                } => {
                    let tt = self.value(*table);
                    let d = tt.cols;
                    let dt = slot(&mut grads, *table, tt.len());
                    for t in 0..ids.len() {
                        for k in 0..*window {
                            if t < k || t - k < starts[t] {
                                break;
                            }
                            let id = ids[t - k] as usize;
                            let src = &g[(t * window + k) * d..(t * window + k + 1) * d];
                            axpy(1.0, src, &mut dt[id * d..(id + 1) * d]);
                        }
                    }
                }
                Op::SelectRows(a, rows) => {
                    let ta = self.value(*a);
                    let c = ta.cols;
                    let da = slot(&mut grads, *a, ta.len());
                    for (row, &r) in g.chunks(c).zip(rows) {
                        axpy(1.0, row, &mut da[r * c..(r + 1) * c]);
                    }
                }
                Op::Attend {
                    q,
                    k,
                    v,
                    ranges,
                    heads,
                    probs,
                } => {
                    let (tq, tk, tv) = (self.value(*q), self.value(*k), self.value(*v));
                    let (dk, dvh) = (tq.cols / heads, tv.cols / heads);
                    let scale = 1.0 / (dk as f64).sqrt();
                    let mut dq = vec![0.0; tq.len()];
                    let mut dkk = vec![0.0; tk.len()];
                    let mut dv = vec![0.0; tv.len()];
                    let mut offset = 0;
                    let mut dp = Vec::new();
                    for (i, range) in ranges.iter().enumerate() {
                        for h in 0..*heads {
                            let n = range.len();
                            let p = &probs[offset..offset + n];
                            offset += n;
                            let gi = &g[i * tv.cols + h * dvh..i * tv.cols + (h + 1) * dvh];
                            dp.clear();
                            for (pj, j) in p.iter().zip(range.clone()) {
                                let vj = &tv.row(j)[h * dvh..(h + 1) * dvh];
                                dp.push(dot(gi, vj));
                                axpy(
                                    *pj,
                                    gi,
                                    &mut dv[j * tv.cols + h * dvh..j * tv.cols + (h + 1) * dvh],
                                );
                            }
                            let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            let qi = &tq.row(i)[h * dk..(h + 1) * dk];
                            for ((pj, dpj), j) in p.iter().zip(&dp).zip(range.clone()) {
                                let ds = scale * pj * (dpj - mean);
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = &tk.row(j)[h * dk..(h + 1) * dk];
                                axpy(
                                    ds,
                                    kj,
                                    &mut dq[i * tq.cols + h * dk..i * tq.cols + (h + 1) * dk],
                                );
                                axpy(
                                    ds,
                                    qi,
                                    &mut dkk[j * tk.cols + h * dk..j * tk.cols + (h + 1) * dk],
                                );
                            }
                        }
                    }
                    add_into(&mut grads, *q, &dq, dq.len());
                    add_into(&mut grads, *k, &dkk, dkk.len());
                    add_into(&mut grads, *v, &dv, dv.len());
                }
                Op::Xent {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let c = self.value(*logits).cols;
                    let mut d = probs.clone();
                    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = &mut d[i * c..(i + 1) * c];
                        row[t] -= 1.0;
                        for x in row.iter_mut() {
                            *x *= w * g[0];
                        }
                    }
                    add_into(&mut grads, *logits, &d, d.len());
                }
                Op::LogSoftmaxPick {
                    logits,
                    targets,
                    probs,
                } => {
                    let c = self.value(*logits).cols;
                    let mut d = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        let row = &mut d[i * c..(i + 1) * c];
                        for x in row.iter_mut() {
                            *x = -*x * g[i];
                        }
                        row[t] += g[i];
                    }
                    add_into(&mut grads, *logits, &d, d.len());
                }
                Op::RowLoss(a, deriv) => {
                    let d: Vec<f64> = deriv.iter().map(|x| x * g[0]).collect();
                    add_into(&mut grads, *a, &d, d.len());
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    let d = vec![g[0]; n];
                    add_into(&mut grads, *a, &d, n);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, d: &[f64], len: usize) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (x, y) in acc.iter_mut().zip(d) {
                *x += y;
            }
        }
        slot @ None => {
            debug_assert_eq!(d.len(), len);
            *slot = Some(d.to_vec());
        }
    }
}
