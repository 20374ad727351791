//! Forward kernels shared by the tape and by value-level callers.

use super::tensor::{dot, norm, Tensor2};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `x · weight + bias`, bias broadcast over rows.
pub fn linear_apply(x: &Tensor2, weight: &Tensor2, bias: Option<&Tensor2>) -> Result<Tensor2> {
    if x.cols() != weight.rows() {
        return Err(Error::dim("linear_apply", format!("input width {}", weight.rows()), x.cols()));
    }
    let mut out = x.matmul(weight)?;
    if let Some(b) = bias {
        if b.len() != weight.cols() {
            return Err(Error::dim("linear_apply", format!("bias length {}", weight.cols()), b.len()));
        }
        let cols = out.cols();
        for r in 0..out.rows() {
            for (o, bv) in out.row_mut(r).iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        debug_assert_eq!(cols, b.len());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature batch normalization parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Tensor2,
    pub shift: Tensor2,
    pub running_mean: Tensor2,
    pub running_var: Tensor2,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            scale: Tensor2::filled(1, dim, 1.0),
            shift: Tensor2::zeros(1, dim),
            running_mean: Tensor2::zeros(1, dim),
            running_var: Tensor2::filled(1, dim, 1.0),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Folds a batch's statistics into the running averages.
    /// The running variance uses the unbiased estimate.
    pub fn update_running(&mut self, mean: &[f64], var_biased: &[f64], batch: usize) {
        let m = self.momentum;
        let correction = if batch > 1 {
            batch as f64 / (batch - 1) as f64
        } else {
            1.0
        };
        for (r, v) in self.running_mean.data_mut().iter_mut().zip(mean) {
            *r = (1.0 - m) * *r + m * v;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(var_biased) {
            *r = (1.0 - m) * *r + m * v * correction;
        }
    }
}

/// Column means and biased variances.
pub fn batch_stats(x: &Tensor2) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mut mean = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; x.cols()];
    for row in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// Normalizes `x` column-wise. Train mode uses batch statistics and updates
/// the running averages; eval mode uses the running averages.
pub fn batchnorm_apply(x: &Tensor2, bn: &mut BatchNorm, mode: Mode) -> Result<Tensor2> {
    if x.cols() != bn.dim() {
        return Err(Error::dim("batchnorm_apply", bn.dim(), x.cols()));
    }
    match mode {
        Mode::Train => {
            if x.rows() < 2 {
                return Err(Error::BatchTooSmall { rows: x.rows() });
            }
            let (mean, var) = batch_stats(x);
            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
            let out = normalize_affine(x, &mean, &inv_std, &bn.scale, &bn.shift);
            bn.update_running(&mean, &var, x.rows());
            Ok(out)
        }
        Mode::Eval => {
            if x.rows() < 1 {
                return Err(Error::BatchTooSmall { rows: 0 });
            }
            let inv_std: Vec<f64> = bn.running_var.data().iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
            Ok(normalize_affine(x, bn.running_mean.data(), &inv_std, &bn.scale, &bn.shift))
        }
    }
}

pub(crate) fn normalize_affine(
    x: &Tensor2,
    mean: &[f64],
    inv_std: &[f64],
    scale: &Tensor2,
    shift: &Tensor2,
) -> Tensor2 {
    let mut out = Vec::with_capacity(x.len());
    for row in x.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            out.push(scale.data()[j] * (v - mean[j]) * inv_std[j] + shift.data()[j]);
        }
    }
    Tensor2::raw(x.rows(), x.cols(), out)
}

pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|x| x - lse).collect()
}

pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.iter_rows() {
        out.extend(softmax(row));
    }
    Tensor2::raw(logits.rows(), logits.cols(), out)
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_sim", a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::DegenerateVector { op: "cosine_sim", row: 0 });
    }
    if nb == 0.0 {
        return Err(Error::DegenerateVector { op: "cosine_sim", row: 1 });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Rows of `x` scaled to unit norm.
pub fn unit_rows(x: &Tensor2, op: &'static str) -> Result<(Tensor2, Vec<f64>)> {
    let mut out = Vec::with_capacity(x.len());
    let mut norms = Vec::with_capacity(x.rows());
    for (i, row) in x.iter_rows().enumerate() {
        let n = norm(row);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateVector { op, row: i });
        }
        norms.push(n);
        out.extend(row.iter().map(|v| v / n));
    }
    Ok((Tensor2::raw(x.rows(), x.cols(), out), norms))
}

/// `out[i][k] = scale · cos(x_i, anchor_k)`.
pub fn cosine_logits(x: &Tensor2, anchors: &Tensor2, scale: f64) -> Result<Tensor2> {
    if x.cols() != anchors.cols() {
        return Err(Error::dim("cosine_logits", anchors.cols(), x.cols()));
    }
    let (ux, _) = unit_rows(x, "cosine_logits")?;
    let (ua, _) = unit_rows(anchors, "cosine_logits")?;
    Ok(ux.matmul_nt(&ua)?.scale(scale))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn linear_identity_and_zero_weight() {
        let x = Tensor2::from_rows(&[[1.0, 2.0]]).unwrap();
        let out = linear_apply(&x, &Tensor2::identity(2), Some(&Tensor2::zeros(1, 2))).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);

        let x = Tensor2::from_rows(&[[0.3, -7.0], [5.0, 1.5], [2.0, 2.0]]).unwrap();
        let b = Tensor2::row_vector(&[3.0, 4.0]).unwrap();
        let out = linear_apply(&x, &Tensor2::zeros(2, 2), Some(&b)).unwrap();
        for row in out.iter_rows() {
            assert_eq!(row, &[3.0, 4.0]);
        }
    }

    #[test]
    fn linear_hand_multiply() {
        // [1,2]·[[1,0],[1,1]] = [3,2]; + 0.5
        let x = Tensor2::from_rows(&[[1.0, 2.0]]).unwrap();
        let w = Tensor2::from_rows(&[[1.0, 0.0], [1.0, 1.0]]).unwrap();
        let b = Tensor2::row_vector(&[0.5, 0.5]).unwrap();
        assert_eq!(linear_apply(&x, &w, Some(&b)).unwrap().data(), &[3.5, 2.5]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = Tensor2::zeros(1, 3);
        assert!(matches!(
            linear_apply(&x, &Tensor2::zeros(2, 2), None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn batchnorm_constant_batch_is_zero() {
        let x = Tensor2::from_rows(&[[2.0, -1.0], [2.0, -1.0], [2.0, -1.0]]).unwrap();
        let mut bn = BatchNorm::new(2);
        let out = batchnorm_apply(&x, &mut bn, Mode::Train).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn batchnorm_zero_scale_gives_shift() {
        let x = Tensor2::from_rows(&[[1.0], [5.0], [-2.0]]).unwrap();
        let mut bn = BatchNorm::new(1);
        bn.scale = Tensor2::zeros(1, 1);
        bn.shift = Tensor2::scalar_tensor(0.7);
        let out = batchnorm_apply(&x, &mut bn, Mode::Train).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn batchnorm_two_rows_hand_oracle() {
        // mean 2, biased var 1 → (x-2)/sqrt(1+1e-5)
        let x = Tensor2::from_rows(&[[1.0], [3.0]]).unwrap();
        let mut bn = BatchNorm::new(1);
        let out = batchnorm_apply(&x, &mut bn, Mode::Train).unwrap();
        let s = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!(close(out.data()[0], -s, 1e-15));
        assert!(close(out.data()[1], s, 1e-15));
        assert!(close(out.data()[0], -1.0, 1e-5));
        // running stats: mean 0.1*2, var 0.9 + 0.1*2 (unbiased var of [1,3] is 2)
        assert!(close(bn.running_mean.data()[0], 0.2, 1e-15));
        assert!(close(bn.running_var.data()[0], 1.1, 1e-15));
    }

    #[test]
    fn batchnorm_train_needs_two_rows() {
        let mut bn = BatchNorm::new(1);
        let x = Tensor2::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(
            batchnorm_apply(&x, &mut bn, Mode::Train),
            Err(Error::BatchTooSmall { rows: 1 })
        ));
        assert!(batchnorm_apply(&x, &mut bn, Mode::Eval).is_ok());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        for c in [-50.0, 0.0, 3.0, 700.0] {
            let p = softmax(&[c, c, c]);
            assert!(p.iter().all(|v| close(*v, 1.0 / 3.0, 1e-15)));
        }
        // independent evaluation: e^k / Σ e^j
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expected = [1f64.exp() / denom, 2f64.exp() / denom, 3f64.exp() / denom];
        let p = softmax(&[1.0, 2.0, 3.0]);
        for (a, b) in p.iter().zip(expected) {
            assert!(close(*a, b, 1e-15));
        }
    }

    #[test]
    fn cosine_examples() {
        assert!(close(cosine_sim(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        // (2+2)/(√5·√5)
        assert!(close(cosine_sim(&[1.0, 2.0], &[2.0, 1.0]).unwrap(), 0.8, 1e-15));
        assert!(matches!(
            cosine_sim(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector { .. })
        ));
    }
}
