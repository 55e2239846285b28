//! Reverse-mode automatic differentiation over packed 2-D matrices.
//!
//! Sequences in a batch are stacked along the row axis and described by
//! [`Seg`] ranges; row-wise ops ignore segmentation while convolution,
//! pooling and attention respect it.

use std::borrow::Cow;

use rand::Rng;

use super::mat::{self, gemm_acc, Mat};
use super::param::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seg {
    pub start: usize,
    pub len: usize,
}

impl Seg {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

pub fn segs_from_lens(lens: &[usize]) -> Vec<Seg> {
    let mut start = 0;
    lens.iter()
        .map(|&len| {
            let s = Seg { start, len };
            start += len;
            s
        })
        .collect()
}

pub fn total_rows(segs: &[Seg]) -> usize {
    segs.last().map_or(0, Seg::end)
}

/// Output length of a strided 1-D convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    if len + 2 * pad < kernel {
        0
    } else {
        (len + 2 * pad - kernel) / stride + 1
    }
}

/// Transformer-XL style relative position inputs for self-attention.
#[derive(Clone, Copy, Debug)]
pub struct RelPos {
    /// Projected sinusoids, one row per offset `key - query`; row
    /// `center + o` holds offset `o`.
    pub pos: Var,
    pub center: usize,
    /// Content bias added to queries before scoring against keys.
    pub bias_u: Var,
    /// Position bias added to queries before scoring against offsets.
    pub bias_v: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttnArgs<'s> {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub heads: usize,
    pub causal: bool,
    pub q_segs: &'s [Seg],
    pub k_segs: &'s [Seg],
    pub rel: Option<RelPos>,
}

struct AttnSaved {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    q_segs: Vec<Seg>,
    k_segs: Vec<Seg>,
    rel: Option<RelPos>,
    probs: Vec<Mat>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Silu(Var),
    Glu(Var),
    LayerNorm { x: Var, g: Var, b: Var, rstd: Vec<f64> },
    LogSoftmax(Var),
    Unfold { x: Var, in_segs: Vec<Seg>, out_segs: Vec<Seg>, kernel: usize, stride: usize, pad: usize },
    DepthwiseConv { x: Var, w: Var, b: Var, segs: Vec<Seg> },
    Embedding { table: Var, ids: Vec<usize> },
    Attention(Box<AttnSaved>),
    MeanPool { x: Var, segs: Vec<Seg> },
    ConcatCols(Var, Var),
    GatherRows { x: Var, idx: Vec<usize> },
    SmoothedNll { logp: Var, targets: Vec<(usize, usize)>, eps: f64, norm: f64 },
    Precomputed { x: Var, grad: Mat },
    WeightedSum(Vec<(Var, f64)>),
    Dropout { x: Var, mask: Vec<f64> },
}

/// A computation graph recorded eagerly. Parameter leaves borrow from the
/// [`ParamStore`] so building a graph never copies weights.
pub struct Tape<'a> {
    values: Vec<Cow<'a, Mat>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    param_of: Vec<Option<ParamId>>,
    record: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            param_of: Vec::new(),
            record: true,
        }
    }

    /// A tape that never tracks gradients; used for decoding.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.record
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, needs_grad: bool, param: Option<ParamId>) -> Var {
        self.values.push(value);
        self.ops.push(if self.record { op } else { Op::Leaf });
        self.needs_grad.push(self.record && needs_grad);
        self.param_of.push(param);
        Var(self.values.len() - 1)
    }

    fn node(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let ng = inputs.iter().any(|v| self.needs_grad[v.0]);
        self.push(Cow::Owned(value), op, ng, None)
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, false, None)
    }

    /// A constant borrowed for the tape's lifetime (no copy).
    pub fn constant_ref(&mut self, m: &'a Mat) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, false, None)
    }

    /// A leaf whose gradient is tracked (used for input-gradient checks).
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, true, None)
    }

    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        self.push(Cow::Borrowed(store.get(id)), Op::Leaf, true, Some(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.node(out, Op::MatMul(a, b), &[a, b])
    }

    /// `x · w + b` with `w: [in x out]`, `b: [1 x out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut out = self.value(x).matmul(self.value(w));
        if let Some(b) = b {
            out.add_row_assign(self.value(b).data());
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.node(out, Op::Linear { x, w, b }, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.node(out, Op::Add(a, b), &[a, b])
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_row_assign(self.value(row).data());
        self.node(out, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Mat::from_vec(va.rows(), va.cols(), data);
        self.node(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.node(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.node(out, Op::Relu(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(mat::silu);
        self.node(out, Op::Silu(a), &[a])
    }

    /// Gated linear unit over the column axis: `x[:, :C] * sigmoid(x[:, C:])`.
    pub fn glu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols() / 2;
        assert_eq!(2 * c, x.cols(), "glu needs an even column count");
        let mut out = Mat::zeros(x.rows(), c);
        for i in 0..x.rows() {
            let r = x.row(i);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = r[j] * mat::sigmoid(r[c + j]);
            }
        }
        self.node(out, Op::Glu(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (out, rstd) = mat::layer_norm_rows(self.value(x), self.value(g).data(), self.value(b).data());
        let rstd = if self.record { rstd } else { Vec::new() };
        self.node(out, Op::LayerNorm { x, g, b, rstd }, &[x, g, b])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = mat::log_softmax_rows(self.value(a));
        self.node(out, Op::LogSoftmax(a), &[a])
    }

    /// im2col for a strided 1-D convolution over each segment. Output row
    /// `r` of a segment concatenates input rows `r*stride - pad ..+kernel`
    /// (zeros outside the segment).
    pub fn unfold(&mut self, x: Var, segs: &[Seg], kernel: usize, stride: usize, pad: usize) -> (Var, Vec<Seg>) {
        let xv = self.value(x);
        let c = xv.cols();
        let lens: Vec<usize> = segs.iter().map(|s| conv_out_len(s.len, kernel, stride, pad)).collect();
        let out_segs = segs_from_lens(&lens);
        let mut out = Mat::zeros(total_rows(&out_segs), kernel * c);
        for (s, o) in segs.iter().zip(&out_segs) {
            for r in 0..o.len {
                let dst = out.row_mut(o.start + r);
                for kk in 0..kernel {
                    let t = (r * stride + kk) as isize - pad as isize;
                    if t >= 0 && (t as usize) < s.len {
                        dst[kk * c..(kk + 1) * c].copy_from_slice(xv.row(s.start + t as usize));
                    }
                }
            }
        }
        let op = Op::Unfold {
            x,
            in_segs: segs.to_vec(),
            out_segs: out_segs.clone(),
            kernel,
            stride,
            pad,
        };
        (self.node(out, op, &[x]), out_segs)
    }

    /// Same-padded depthwise convolution along time; `w: [kernel x C]`.
    pub fn depthwise_conv(&mut self, x: Var, w: Var, b: Var, segs: &[Seg]) -> Var {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (k, c) = wv.shape();
        let pad = (k - 1) / 2;
        let mut out = Mat::zeros(xv.rows(), c);
        for s in segs {
            for t in 0..s.len {
                let dst = out.row_mut(s.start + t);
                dst.copy_from_slice(bv.data());
                for kk in 0..k {
                    let src = t as isize + kk as isize - pad as isize;
                    if src < 0 || src as usize >= s.len {
                        continue;
                    }
                    let xr = xv.row(s.start + src as usize);
                    let wr = wv.row(kk);
                    for ch in 0..c {
                        dst[ch] += wr[ch] * xr[ch];
                    }
                }
            }
        }
        self.node(out, Op::DepthwiseConv { x, w, b, segs: segs.to_vec() }, &[x, w, b])
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.node(out, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    /// Fused multi-head scaled dot-product attention over packed segments.
    pub fn attention(&mut self, args: AttnArgs<'_>) -> Var {
        let AttnArgs {
            q,
            k,
            v,
            heads,
            causal,
            q_segs,
            k_segs,
            rel,
        } = args;
        assert_eq!(q_segs.len(), k_segs.len(), "attention segment count");
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.cols();
        assert_eq!(kv.cols(), d, "attention key width");
        assert_eq!(vv.cols(), d, "attention value width");
        assert_eq!(d % heads, 0, "width not divisible by heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Mat::zeros(qv.rows(), d);
        let mut probs = Vec::new();
        for (qs, ks) in q_segs.iter().zip(k_segs) {
            for h in 0..heads {
                let c0 = h * dh;
                let qh = qv.block(qs.start, qs.len, c0, dh);
                let kh = kv.block(ks.start, ks.len, c0, dh);
                let vh = vv.block(ks.start, ks.len, c0, dh);
                let mut s = match rel {
                    Some(r) => add_row_slice(&qh, &self.value(r.bias_u).data()[c0..c0 + dh]).matmul_t(&kh),
                    None => qh.matmul_t(&kh),
                };
                if let Some(r) = rel {
                    assert_eq!(qs.len, ks.len, "relative attention is self-attention only");
                    let l = qs.len;
                    let ph = self.value(r.pos).block(r.center + 1 - l, 2 * l - 1, c0, dh);
                    let qvb = add_row_slice(&qh, &self.value(r.bias_v).data()[c0..c0 + dh]);
                    let bd = qvb.matmul_t(&ph);
                    for i in 0..l {
                        let srow = s.row_mut(i);
                        let brow = bd.row(i);
                        for (j, sv) in srow.iter_mut().enumerate() {
                            *sv += brow[j + l - 1 - i];
                        }
                    }
                }
                for i in 0..qs.len {
                    let row = s.row_mut(i);
                    for (j, sv) in row.iter_mut().enumerate() {
                        *sv = if causal && j > i { f64::NEG_INFINITY } else { *sv * scale };
                    }
                    mat::softmax_in_place(row);
                }
                let oh = s.matmul(&vh);
                out.add_block(qs.start, c0, &oh);
                if self.record {
                    probs.push(s);
                }
            }
        }
        let mut inputs = vec![q, k, v];
        if let Some(r) = rel {
            inputs.extend([r.pos, r.bias_u, r.bias_v]);
        }
        let saved = AttnSaved {
            q,
            k,
            v,
            heads,
            q_segs: q_segs.to_vec(),
            k_segs: k_segs.to_vec(),
            rel,
            probs,
        };
        self.node(out, Op::Attention(Box::new(saved)), &inputs)
    }

    /// Mean over the rows of each segment, one output row per segment.
    pub fn mean_pool(&mut self, x: Var, segs: &[Seg]) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(segs.len(), xv.cols());
        for (i, s) in segs.iter().enumerate() {
            let dst = out.row_mut(i);
            for t in s.start..s.end() {
                for (o, v) in dst.iter_mut().zip(xv.row(t)) {
                    *o += v;
                }
            }
            let n = s.len.max(1) as f64;
            for o in dst.iter_mut() {
                *o /= n;
            }
        }
        self.node(out, Op::MeanPool { x, segs: segs.to_vec() }, &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.rows(), vb.rows(), "concat_cols rows");
        let mut out = Mat::zeros(va.rows(), va.cols() + vb.cols());
        for i in 0..va.rows() {
            let dst = out.row_mut(i);
            dst[..va.cols()].copy_from_slice(va.row(i));
            dst[va.cols()..].copy_from_slice(vb.row(i));
        }
        self.node(out, Op::ConcatCols(a, b), &[a, b])
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(idx.len(), xv.cols());
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        self.node(out, Op::GatherRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Label-smoothed negative log-likelihood summed over `(row, class)`
    /// targets and divided by `norm`.
    pub fn smoothed_nll(&mut self, logp: Var, targets: &[(usize, usize)], eps: f64, norm: f64) -> Var {
        let lp = self.value(logp);
        let v = lp.cols() as f64;
        let mut total = 0.0;
        for &(r, c) in targets {
            let row = lp.row(r);
            let uniform = row.iter().sum::<f64>() / v;
            total += -(1.0 - eps) * row[c] - eps * uniform;
        }
        let op = Op::SmoothedNll {
            logp,
            targets: targets.to_vec(),
            eps,
            norm,
        };
        self.node(Mat::scalar(total / norm), op, &[logp])
    }

    /// A scalar whose value and gradient with respect to `x` were computed
    /// outside the tape (e.g. by a dynamic-programming loss).
    pub fn precomputed(&mut self, x: Var, value: f64, grad: Mat) -> Var {
        assert_eq!(self.value(x).shape(), grad.shape(), "precomputed gradient shape");
        self.node(Mat::scalar(value), Op::Precomputed { x, grad }, &[x])
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let first = self.value(terms[0].0);
        let mut out = Mat::zeros(first.rows(), first.cols());
        for &(v, w) in terms {
            for (o, x) in out.data_mut().iter_mut().zip(self.value(v).data()) {
                *o += w * x;
            }
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.node(out, Op::WeightedSum(terms.to_vec()), &inputs)
    }

    /// Inverted dropout. A no-op when `p == 0` or the tape is not recording.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 || !self.record {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let xv = self.value(x);
        let mask: Vec<f64> = (0..xv.data().len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Mat::from_vec(xv.rows(), xv.cols(), data);
        self.node(out, Op::Dropout { x, mask }, &[x])
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert!(self.record, "backward on an inference tape");
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let n = self.values.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            if matches!(self.ops[i], Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_op(i, &g, &mut grads);
        }
        let params = (0..n).filter_map(|i| self.param_of[i].map(|p| (i, p))).collect();
        Grads { node: grads, params }
    }

    fn acc(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.needs_grad[v.0] {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(&self, grads: &mut [Option<Mat>], v: Var, f: impl FnOnce(&mut Mat)) {
        if !self.needs_grad[v.0] {
            return;
        }
        let (r, c) = self.value(v).shape();
        let slot = grads[v.0].get_or_insert_with(|| Mat::zeros(r, c));
        f(slot);
    }

    fn backward_op(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc_with(grads, *a, |s| gemm_acc(g, false, vb, true, s, 1.0));
                self.acc_with(grads, *b, |s| gemm_acc(va, true, g, false, s, 1.0));
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                self.acc_with(grads, *x, |s| gemm_acc(g, false, vw, true, s, 1.0));
                self.acc_with(grads, *w, |s| gemm_acc(vx, true, g, false, s, 1.0));
                if let Some(b) = b {
                    self.acc(grads, *b, g.col_sums());
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *row, g.col_sums());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = zip_map(g, vb, |x, y| x * y);
                let gb = zip_map(g, va, |x, y| x * y);
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|v| v * s)),
            Op::Relu(a) => {
                let ga = zip_map(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.acc(grads, *a, ga);
            }
            Op::Silu(a) => {
                let ga = zip_map(g, self.value(*a), |gv, x| {
                    let s = mat::sigmoid(x);
                    gv * s * (1.0 + x * (1.0 - s))
                });
                self.acc(grads, *a, ga);
            }
            Op::Glu(a) => {
                let x = self.value(*a);
                let c = x.cols() / 2;
                let mut ga = Mat::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let (xr, gr) = (x.row(r), g.row(r));
                    let dst = ga.row_mut(r);
                    for j in 0..c {
                        let s = mat::sigmoid(xr[c + j]);
                        dst[j] = gr[j] * s;
                        dst[c + j] = gr[j] * xr[j] * s * (1.0 - s);
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::LayerNorm { x, g: gain, b, rstd } => {
                let (vx, vg) = (self.value(*x), self.value(*gain));
                let n = vx.cols();
                let mut dx = Mat::zeros(vx.rows(), n);
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                let mut xhat = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for r in 0..vx.rows() {
                    let xr = vx.row(r);
                    let gr = g.row(r);
                    let mean = xr.iter().sum::<f64>() / n as f64;
                    let s = rstd[r];
                    for j in 0..n {
                        xhat[j] = (xr[j] - mean) * s;
                        dxhat[j] = gr[j] * vg.data()[j];
                        dg[j] += gr[j] * xhat[j];
                        db[j] += gr[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / n as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = s * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                self.acc(grads, *x, dx);
                self.acc(grads, *gain, Mat::row_vector(dg));
                self.acc(grads, *b, Mat::row_vector(db));
            }
            Op::LogSoftmax(a) => {
                let y = &self.values[i];
                let mut ga = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    let (yr, gr) = (y.row(r), g.row(r));
                    for (j, d) in ga.row_mut(r).iter_mut().enumerate() {
                        *d = gr[j] - yr[j].exp() * gs;
                    }
                }
                self.acc(grads, *a, ga);
            }
            Op::Unfold {
                x,
                in_segs,
                out_segs,
                kernel,
                stride,
                pad,
            } => {
                let c = self.value(*x).cols();
                self.acc_with(grads, *x, |dx| {
                    for (s, o) in in_segs.iter().zip(out_segs) {
                        for r in 0..o.len {
                            let src = g.row(o.start + r);
                            for kk in 0..*kernel {
                                let t = (r * stride + kk) as isize - *pad as isize;
                                if t >= 0 && (t as usize) < s.len {
                                    let dst = dx.row_mut(s.start + t as usize);
                                    for (d, v) in dst.iter_mut().zip(&src[kk * c..(kk + 1) * c]) {
                                        *d += v;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::DepthwiseConv { x, w, b, segs } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (k, c) = vw.shape();
                let pad = (k - 1) / 2;
                let mut dx = Mat::zeros(vx.rows(), c);
                let mut dw = Mat::zeros(k, c);
                for s in segs {
                    for t in 0..s.len {
                        let gr = g.row(s.start + t);
                        for kk in 0..k {
                            let src = t as isize + kk as isize - pad as isize;
                            if src < 0 || src as usize >= s.len {
                                continue;
                            }
                            let row = s.start + src as usize;
                            let xr = vx.row(row);
                            let wr = vw.row(kk);
                            for ch in 0..c {
                                dw.data_mut()[kk * c + ch] += gr[ch] * xr[ch];
                            }
                            let dxr = dx.row_mut(row);
                            for ch in 0..c {
                                dxr[ch] += gr[ch] * wr[ch];
                            }
                        }
                    }
                }
                self.acc(grads, *x, dx);
                self.acc(grads, *w, dw);
                self.acc(grads, *b, g.col_sums());
            }
            Op::Embedding { table, ids } => {
                self.acc_with(grads, *table, |dt| {
                    for (i, &id) in ids.iter().enumerate() {
                        for (d, v) in dt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                });
            }
            Op::Attention(saved) => self.backward_attention(saved, g, grads),
            Op::MeanPool { x, segs } => {
                self.acc_with(grads, *x, |dx| {
                    for (i, s) in segs.iter().enumerate() {
                        let inv = 1.0 / s.len.max(1) as f64;
                        for t in s.start..s.end() {
                            for (d, v) in dx.row_mut(t).iter_mut().zip(g.row(i)) {
                                *d += v * inv;
                            }
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                self.acc(grads, *a, g.block(0, g.rows(), 0, ca));
                self.acc(grads, *b, g.block(0, g.rows(), ca, cb));
            }
            Op::GatherRows { x, idx } => {
                self.acc_with(grads, *x, |dx| {
                    for (i, &r) in idx.iter().enumerate() {
                        for (d, v) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                });
            }
            Op::SmoothedNll { logp, targets, eps, norm } => {
                let scale = g.item() / norm;
                let vcols = self.value(*logp).cols() as f64;
                self.acc_with(grads, *logp, |d| {
                    for &(r, c) in targets {
                        let row = d.row_mut(r);
                        for v in row.iter_mut() {
                            *v -= scale * eps / vcols;
                        }
                        row[c] -= scale * (1.0 - eps);
                    }
                });
            }
            Op::Precomputed { x, grad } => {
                let s = g.item();
                self.acc(grads, *x, grad.map(|v| v * s));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    self.acc(grads, v, g.map(|x| x * w));
                }
            }
            Op::Dropout { x, mask } => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                self.acc(grads, *x, Mat::from_vec(g.rows(), g.cols(), data));
            }
        }
    }

    fn backward_attention(&self, saved: &AttnSaved, g: &Mat, grads: &mut [Option<Mat>]) {
        let (qv, kv, vv) = (self.value(saved.q), self.value(saved.k), self.value(saved.v));
        let d = qv.cols();
        let heads = saved.heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Mat::zeros(qv.rows(), d);
        let mut dk = Mat::zeros(kv.rows(), d);
        let mut dv = Mat::zeros(vv.rows(), d);
        let mut du = vec![0.0; d];
        let mut dvb = vec![0.0; d];
        let mut dpos = saved.rel.map(|r| Mat::zeros(self.value(r.pos).rows(), d));
        let mut idx = 0;
        for (qs, ks) in saved.q_segs.iter().zip(&saved.k_segs) {
            for h in 0..heads {
                let a = &saved.probs[idx];
                idx += 1;
                let c0 = h * dh;
                let qh = qv.block(qs.start, qs.len, c0, dh);
                let kh = kv.block(ks.start, ks.len, c0, dh);
                let vh = vv.block(ks.start, ks.len, c0, dh);
                let goh = g.block(qs.start, qs.len, c0, dh);
                let da = goh.matmul_t(&vh);
                dv.add_block(ks.start, c0, &a.t_matmul(&goh));
                let mut ds = Mat::zeros(a.rows(), a.cols());
                for r in 0..a.rows() {
                    let (ar, dar) = (a.row(r), da.row(r));
                    let dot: f64 = ar.iter().zip(dar).map(|(x, y)| x * y).sum();
                    for (j, o) in ds.row_mut(r).iter_mut().enumerate() {
                        *o = ar[j] * (dar[j] - dot) * scale;
                    }
                }
                let dqh = ds.matmul(&kh);
                dq.add_block(qs.start, c0, &dqh);
                let qu = match saved.rel {
                    Some(r) => {
                        for (o, v) in du[c0..c0 + dh].iter_mut().zip(dqh.col_sums().data()) {
                            *o += v;
                        }
                        add_row_slice(&qh, &self.value(r.bias_u).data()[c0..c0 + dh])
                    }
                    None => qh.clone(),
                };
                dk.add_block(ks.start, c0, &ds.t_matmul(&qu));
                if let (Some(r), Some(dp)) = (saved.rel, dpos.as_mut()) {
                    let l = qs.len;
                    let p0 = r.center + 1 - l;
                    let ph = self.value(r.pos).block(p0, 2 * l - 1, c0, dh);
                    let mut dbd = Mat::zeros(l, 2 * l - 1);
                    for i in 0..l {
                        let dsr = ds.row(i);
                        let dst = dbd.row_mut(i);
                        for (j, v) in dsr.iter().enumerate() {
                            dst[j + l - 1 - i] = *v;
                        }
                    }
                    let dqv = dbd.matmul(&ph);
                    dq.add_block(qs.start, c0, &dqv);
                    for (o, v) in dvb[c0..c0 + dh].iter_mut().zip(dqv.col_sums().data()) {
                        *o += v;
                    }
                    let qvb = add_row_slice(&qh, &self.value(r.bias_v).data()[c0..c0 + dh]);
                    dp.add_block(p0, c0, &dbd.t_matmul(&qvb));
                }
            }
        }
        self.acc(grads, saved.q, dq);
        self.acc(grads, saved.k, dk);
        self.acc(grads, saved.v, dv);
        if let (Some(r), Some(dp)) = (saved.rel, dpos) {
            self.acc(grads, r.pos, dp);
            self.acc(grads, r.bias_u, Mat::row_vector(du));
            self.acc(grads, r.bias_v, Mat::row_vector(dvb));
        }
    }
}

fn add_row_slice(m: &Mat, row: &[f64]) -> Mat {
    let mut out = m.clone();
    out.add_row_assign(row);
    out
}

fn zip_map(a: &Mat, b: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Mat::from_vec(a.rows(), a.cols(), data)
}

/// Gradients from one backward pass.
pub struct Grads {
    node: Vec<Option<Mat>>,
    params: Vec<(usize, ParamId)>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.node[v.0].as_ref()
    }

    /// Per-parameter gradients, summing over every leaf that referenced
    /// the same parameter. Entries are `None` for unused parameters.
    pub fn into_param_grads(mut self, num_params: usize) -> Vec<Option<Mat>> {
        let mut out: Vec<Option<Mat>> = (0..num_params).map(|_| None).collect();
        for (node, pid) in std::mem::take(&mut self.params) {
            if let Some(g) = self.node[node].take() {
                match &mut out[pid.0] {
                    Some(e) => e.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        out
    }
}
