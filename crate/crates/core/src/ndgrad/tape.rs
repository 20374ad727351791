//! Dynamic reverse-mode tape over [`Tensor2`] values.
//!
//! Every primitive appends one node holding its forward value and whatever
//! it needs for the backward rule. `backward` walks the nodes in exact
//! reverse order, summing gradients for values with several consumers.
//! Constants are leaves whose gradients are never read, which is how a value
//! is detached from the graph.

use super::ops::{self, log_softmax, softmax};
use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    MatMulNT {
        a: Var,
        b: Var,
    },
    SumSquares(Var),
    Relu(Var),
    Sigmoid(Var),
    BatchNormTrain {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    CosineLogits {
        x: Var,
        unit_x: Tensor2,
        norms: Vec<f64>,
        unit_anchors: Tensor2,
        scale: f64,
    },
    Mix {
        w: Var,
        a: Var,
        b: Var,
    },
    ConcatRows {
        a: Var,
        b: Var,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    KlToTarget {
        logits: Var,
        target: Tensor2,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
    MeanEntropy {
        logits: Var,
    },
    MarginalEntropy {
        logits: Var,
    },
    Bce {
        pred: Var,
        labels: Vec<f64>,
        eps: f64,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads {
    grads: Vec<Option<Tensor2>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled to the shape of `like` if nothing flowed.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor2) -> Tensor2 {
        self.get(v).cloned().unwrap_or_else(|| Tensor2::zeros(like.rows(), like.cols()))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Input that is treated as a constant by callers; identical to a leaf on
    /// the tape, the distinction is whether its gradient is consumed.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.scalar()
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = ops::linear_apply(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNT { a, b }))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        self.push(Tensor2::scalar_tensor(s), Op::SumSquares(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(ops::sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Batch normalization with batch statistics. Returns the output and the
    /// batch mean / biased variance so callers can update running averages.
    pub fn batchnorm_train(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let xv = self.value(x);
        if xv.rows() < 2 {
            return Err(Error::BatchTooSmall { rows: xv.rows() });
        }
        if xv.cols() != self.value(scale).len() || xv.cols() != self.value(shift).len() {
            return Err(Error::dim("batchnorm_train", self.value(scale).len(), xv.cols()));
        }
        let (mean, var) = ops::batch_stats(xv);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let ones = Tensor2::filled(1, xv.cols(), 1.0);
        let zeros = Tensor2::zeros(1, xv.cols());
        let xhat = ops::normalize_affine(xv, &mean, &inv_std, &ones, &zeros);
        let out = ops::normalize_affine(xv, &mean, &inv_std, self.value(scale), self.value(shift));
        let v = self.push(
            out,
            Op::BatchNormTrain {
                x,
                scale,
                shift,
                xhat,
                inv_std,
            },
        );
        Ok((v, mean, var))
    }

    /// Batch normalization with fixed statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() != mean.len() || xv.cols() != self.value(scale).len() {
            return Err(Error::dim("batchnorm_eval", mean.len(), xv.cols()));
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let ones = Tensor2::filled(1, xv.cols(), 1.0);
        let zeros = Tensor2::zeros(1, xv.cols());
        let xhat = ops::normalize_affine(xv, mean, &inv_std, &ones, &zeros);
        let out = ops::normalize_affine(xv, mean, &inv_std, self.value(scale), self.value(shift));
        Ok(self.push(
            out,
            Op::BatchNormEval {
                x,
                scale,
                shift,
                xhat,
                inv_std,
            },
        ))
    }

    /// `scale · cos(x_i, anchor_k)` for every row of `x` against fixed anchors.
    pub fn cosine_logits(&mut self, x: Var, anchors: &Tensor2, scale: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.cols() != anchors.cols() {
            return Err(Error::dim("cosine_logits", anchors.cols(), xv.cols()));
        }
        let (unit_x, norms) = ops::unit_rows(xv, "cosine_logits")?;
        let (unit_anchors, _) = ops::unit_rows(anchors, "cosine_logits")?;
        let out = unit_x.matmul_nt(&unit_anchors)?.scale(scale);
        Ok(self.push(
            out,
            Op::CosineLogits {
                x,
                unit_x,
                norms,
                unit_anchors,
                scale,
            },
        ))
    }

    /// Row-wise convex combination `w_i·a_i + (1−w_i)·b_i`, `w` is `B×1`.
    pub fn mix(&mut self, w: Var, a: Var, b: Var) -> Result<Var> {
        let (wv, av, bv) = (self.value(w), self.value(a), self.value(b));
        if !av.same_shape(bv) || wv.rows() != av.rows() || wv.cols() != 1 {
            return Err(Error::dim(
                "mix",
                format!("{:?} and {}x1 weights", av.shape(), av.rows()),
                format!("{:?}, {:?}", bv.shape(), wv.shape()),
            ));
        }
        let mut out = Vec::with_capacity(av.len());
        for i in 0..av.rows() {
            let wi = wv.data()[i];
            for (x, y) in av.row(i).iter().zip(bv.row(i)) {
                out.push(wi * x + (1.0 - wi) * y);
            }
        }
        let out = Tensor2::raw(av.rows(), av.cols(), out);
        Ok(self.push(out, Op::Mix { w, a, b }))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_rows(self.value(b))?;
        Ok(self.push(out, Op::ConcatRows { a, b }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.rows() {
            return Err(Error::dim("slice_rows", format!("range within {} rows", xv.rows()), format!("{start}..{end}")));
        }
        let out = xv.slice_rows(start, end);
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    /// Batch mean of `KL(target_i ‖ softmax(logits_i))` with fixed target
    /// distributions.
    pub fn kl_to_target(&mut self, logits: Var, target: Tensor2) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.same_shape(&target) {
            return Err(Error::dim("kl_to_target", format!("{:?}", lv.shape()), format!("{:?}", target.shape())));
        }
        let b = lv.rows();
        let mut total = 0.0;
        for (z, t) in lv.iter_rows().zip(target.iter_rows()) {
            let lq = log_softmax(z);
            for (tk, lqk) in t.iter().zip(&lq) {
                if *tk > 0.0 {
                    total += tk * (tk.ln() - lqk);
                }
            }
        }
        let loss = if b == 0 { 0.0 } else { total / b as f64 };
        Ok(self.push(Tensor2::scalar_tensor(loss), Op::KlToTarget { logits, target }))
    }

    /// Batch mean cross-entropy of raw logits against class indices.
    /// An empty batch contributes zero.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rows() != labels.len() {
            return Err(Error::dim("cross_entropy", lv.rows(), labels.len()));
        }
        let k = lv.cols();
        let mut total = 0.0;
        for (z, &y) in lv.iter_rows().zip(labels) {
            if y >= k {
                return Err(Error::LabelOutOfRange { label: y as i64, classes: k });
            }
            total -= log_softmax(z)[y];
        }
        let loss = if labels.is_empty() { 0.0 } else { total / labels.len() as f64 };
        Ok(self.push(
            Tensor2::scalar_tensor(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Batch mean of per-row softmax entropy.
    pub fn mean_entropy(&mut self, logits: Var) -> Var {
        let lv = self.value(logits);
        let mut total = 0.0;
        for z in lv.iter_rows() {
            total += row_entropy(z);
        }
        let loss = if lv.rows() == 0 { 0.0 } else { total / lv.rows() as f64 };
        self.push(Tensor2::scalar_tensor(loss), Op::MeanEntropy { logits })
    }

    /// Entropy of the batch-averaged softmax distribution.
    pub fn marginal_entropy(&mut self, logits: Var) -> Var {
        let qbar = mean_probs(self.value(logits));
        let h = -qbar.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>();
        self.push(Tensor2::scalar_tensor(h), Op::MarginalEntropy { logits })
    }

    /// Batch mean binary cross-entropy; `pred` is `B×1`, clamped to
    /// `[eps, 1−eps]`.
    pub fn bce(&mut self, pred: Var, labels: &[f64], eps: f64) -> Result<Var> {
        let pv = self.value(pred);
        if pv.len() != labels.len() {
            return Err(Error::dim("bce", pv.len(), labels.len()));
        }
        let mut total = 0.0;
        for (&p, &y) in pv.data().iter().zip(labels) {
            let p = p.clamp(eps, 1.0 - eps);
            total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        let loss = if labels.is_empty() { 0.0 } else { total / labels.len() as f64 };
        Ok(self.push(
            Tensor2::scalar_tensor(loss),
            Op::Bce {
                pred,
                labels: labels.to_vec(),
                eps,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).scale(c);
        self.push(out, Op::Scale(x, c))
    }

    /// Sum of scalar terms; `None` for an empty list.
    pub fn sum_scalars(&mut self, terms: &[Var]) -> Result<Option<Var>> {
        let mut iter = terms.iter();
        let Some(&first) = iter.next() else {
            return Ok(None);
        };
        let mut acc = first;
        for &t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(Some(acc))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Grads> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::dim("backward", "scalar root", format!("{:?}", rv.shape())));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor2::scalar_tensor(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    // leaves keep their gradient
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { x, w, b } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    accumulate(&mut grads, *x, g.matmul_nt(wv)?)?;
                    accumulate(&mut grads, *w, xv.matmul_tn(&g)?)?;
                    if let Some(b) = b {
                        let bshape = self.value(*b).shape();
                        let cs = g.col_sums();
                        accumulate(&mut grads, *b, Tensor2::raw(bshape.0, bshape.1, cs.into_data()))?;
                    }
                }
                Op::MatMulNT { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.matmul(bv)?)?;
                    accumulate(&mut grads, *b, g.matmul_tn(av)?)?;
                }
                Op::SumSquares(x) => {
                    let s = g.scalar();
                    accumulate(&mut grads, *x, self.value(*x).scale(2.0 * s))?;
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = Tensor2::raw(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(xv.data()).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }).collect(),
                    );
                    accumulate(&mut grads, *x, d)?;
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let d = Tensor2::raw(
                        g.rows(),
                        g.cols(),
                        g.data().iter().zip(y.data()).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect(),
                    );
                    accumulate(&mut grads, *x, d)?;
                }
                Op::BatchNormTrain {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let (dscale, dshift) = affine_param_grads(&g, xhat, self.value(*scale).shape());
                    accumulate(&mut grads, *scale, dscale)?;
                    accumulate(&mut grads, *shift, dshift)?;
                    let sv = self.value(*scale).data();
                    let n = g.rows() as f64;
                    let c = g.cols();
                    // dx = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    let mut sum_d = vec![0.0; c];
                    let mut sum_dx = vec![0.0; c];
                    for r in 0..g.rows() {
                        for j in 0..c {
                            let dxh = g.get(r, j) * sv[j];
                            sum_d[j] += dxh;
                            sum_dx[j] += dxh * xhat.get(r, j);
                        }
                    }
                    let mut dx = Vec::with_capacity(g.len());
                    for r in 0..g.rows() {
                        for j in 0..c {
                            let dxh = g.get(r, j) * sv[j];
                            dx.push(inv_std[j] / n * (n * dxh - sum_d[j] - xhat.get(r, j) * sum_dx[j]));
                        }
                    }
                    accumulate(&mut grads, *x, Tensor2::raw(g.rows(), c, dx))?;
                }
                Op::BatchNormEval {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                } => {
                    let (dscale, dshift) = affine_param_grads(&g, xhat, self.value(*scale).shape());
                    accumulate(&mut grads, *scale, dscale)?;
                    accumulate(&mut grads, *shift, dshift)?;
                    let sv = self.value(*scale).data();
                    let c = g.cols();
                    let dx = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| gi * sv[i % c] * inv_std[i % c])
                        .collect();
                    accumulate(&mut grads, *x, Tensor2::raw(g.rows(), c, dx))?;
                }
                Op::CosineLogits {
                    x,
                    unit_x,
                    norms,
                    unit_anchors,
                    scale,
                } => {
                    // du = s·g·A ; dx = (du − u(u·du)) / ‖x‖
                    let du = g.matmul(unit_anchors)?.scale(*scale);
                    let mut dx = Vec::with_capacity(du.len());
                    for (i, (u, d)) in unit_x.iter_rows().zip(du.iter_rows()).enumerate() {
                        let ud = super::tensor::dot(u, d);
                        dx.extend(u.iter().zip(d).map(|(ui, di)| (di - ui * ud) / norms[i]));
                    }
                    accumulate(&mut grads, *x, Tensor2::raw(du.rows(), du.cols(), dx))?;
                }
                Op::Mix { w, a, b } => {
                    let (wv, av, bv) = (self.value(*w), self.value(*a), self.value(*b));
                    let mut da = Vec::with_capacity(g.len());
                    let mut db = Vec::with_capacity(g.len());
                    let mut dw = Vec::with_capacity(g.rows());
                    for i in 0..g.rows() {
                        let wi = wv.data()[i];
                        let mut acc = 0.0;
                        for ((gi, ai), bi) in g.row(i).iter().zip(av.row(i)).zip(bv.row(i)) {
                            da.push(wi * gi);
                            db.push((1.0 - wi) * gi);
                            acc += gi * (ai - bi);
                        }
                        dw.push(acc);
                    }
                    accumulate(&mut grads, *a, Tensor2::raw(g.rows(), g.cols(), da))?;
                    accumulate(&mut grads, *b, Tensor2::raw(g.rows(), g.cols(), db))?;
                    accumulate(&mut grads, *w, Tensor2::raw(g.rows(), 1, dw))?;
                }
                Op::ConcatRows { a, b } => {
                    let ra = self.value(*a).rows();
                    accumulate(&mut grads, *a, g.slice_rows(0, ra))?;
                    accumulate(&mut grads, *b, g.slice_rows(ra, g.rows()))?;
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let mut full = Tensor2::zeros(xv.rows(), xv.cols());
                    let c = xv.cols();
                    full.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *x, full)?;
                }
                Op::KlToTarget { logits, target } => {
                    let lv = self.value(*logits);
                    let s = g.scalar() / lv.rows().max(1) as f64;
                    let mut d = Vec::with_capacity(lv.len());
                    for (z, t) in lv.iter_rows().zip(target.iter_rows()) {
                        let q = softmax(z);
                        let tsum: f64 = t.iter().sum();
                        d.extend(q.iter().zip(t).map(|(qk, tk)| s * (tsum * qk - tk)));
                    }
                    accumulate(&mut grads, *logits, Tensor2::raw(lv.rows(), lv.cols(), d))?;
                }
                Op::CrossEntropy { logits, labels } => {
                    let lv = self.value(*logits);
                    let s = g.scalar() / labels.len().max(1) as f64;
                    let mut d = Vec::with_capacity(lv.len());
                    for (z, &y) in lv.iter_rows().zip(labels) {
                        let q = softmax(z);
                        d.extend(q.iter().enumerate().map(|(k, qk)| s * (qk - if k == y { 1.0 } else { 0.0 })));
                    }
                    accumulate(&mut grads, *logits, Tensor2::raw(lv.rows(), lv.cols(), d))?;
                }
                Op::MeanEntropy { logits } => {
                    // dH/dz_k = −p_k (log p_k + H)
                    let lv = self.value(*logits);
                    let s = g.scalar() / lv.rows().max(1) as f64;
                    let mut d = Vec::with_capacity(lv.len());
                    for z in lv.iter_rows() {
                        let lp = log_softmax(z);
                        let h = row_entropy(z);
                        d.extend(lp.iter().map(|l| {
                            let p = l.exp();
                            if p == 0.0 {
                                0.0
                            } else {
                                -s * p * (l + h)
                            }
                        }));
                    }
                    accumulate(&mut grads, *logits, Tensor2::raw(lv.rows(), lv.cols(), d))?;
                }
                Op::MarginalEntropy { logits } => {
                    // dz_ik = (1/B)·p_ik·(−log q̄_k + Σ_j p_ij log q̄_j)
                    let lv = self.value(*logits);
                    let s = g.scalar() / lv.rows().max(1) as f64;
                    let qbar = mean_probs(lv);
                    let logq: Vec<f64> = qbar.iter().map(|q| if *q > 0.0 { q.ln() } else { 0.0 }).collect();
                    let mut d = Vec::with_capacity(lv.len());
                    for z in lv.iter_rows() {
                        let p = softmax(z);
                        let avg: f64 = p.iter().zip(&logq).map(|(pk, lq)| pk * lq).sum();
                        d.extend(p.iter().zip(&logq).map(|(pk, lq)| s * pk * (avg - lq)));
                    }
                    accumulate(&mut grads, *logits, Tensor2::raw(lv.rows(), lv.cols(), d))?;
                }
                Op::Bce { pred, labels, eps } => {
                    let pv = self.value(*pred);
                    let s = g.scalar() / labels.len().max(1) as f64;
                    let d = pv
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(&p, &y)| {
                            if p < *eps || p > 1.0 - eps {
                                0.0
                            } else {
                                s * (-y / p + (1.0 - y) / (1.0 - p))
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *pred, Tensor2::raw(pv.rows(), pv.cols(), d))?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads, *x, g.scale(*c))?;
                }
            }
        }
        Ok(Grads { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) -> Result<()> {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn affine_param_grads(g: &Tensor2, xhat: &Tensor2, shape: (usize, usize)) -> (Tensor2, Tensor2) {
    let c = g.cols();
    let mut ds = vec![0.0; c];
    let mut db = vec![0.0; c];
    for r in 0..g.rows() {
        for j in 0..c {
            ds[j] += g.get(r, j) * xhat.get(r, j);
            db[j] += g.get(r, j);
        }
    }
    (Tensor2::raw(shape.0, shape.1, ds), Tensor2::raw(shape.0, shape.1, db))
}

/// Softmax entropy of one row of logits with `0·log 0 = 0`.
pub(crate) fn row_entropy(z: &[f64]) -> f64 {
    log_softmax(z)
        .iter()
        .map(|l| {
            let p = l.exp();
            if p == 0.0 {
                0.0
            } else {
                -p * l
            }
        })
        .sum()
}

pub(crate) fn mean_probs(logits: &Tensor2) -> Vec<f64> {
    let mut q = vec![0.0; logits.cols()];
    for z in logits.iter_rows() {
        for (qk, pk) in q.iter_mut().zip(softmax(z)) {
            *qk += pk;
        }
    }
    let n = logits.rows().max(1) as f64;
    q.iter_mut().for_each(|v| *v /= n);
    q
}
