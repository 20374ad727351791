//! Epoch-level target supervision: zero-shot teacher scores, logit
//! debiasing, centroid clustering and mixed pseudo-labels.

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::ndgrad::ops::{self, softmax_rows};
use crate::ndgrad::tensor::{argmax, dot, norm};
use crate::ndgrad::Tensor2;

/// Floor applied to `p̂` before taking its logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
/// Classes with less total soft mass than this keep their previous centroid.
pub const CENTROID_MASS_EPS: f64 = 1e-8;
const PROB_ROW_TOL: f64 = 1e-6;

/// Running estimate `p̂` of the LAC prediction prior.
#[derive(Debug, Clone, PartialEq)]
pub struct DebiasState {
    pub p_hat: Vec<f64>,
    pub momentum: f64,
    pub tau: f64,
}

impl DebiasState {
    /// Uniform prior.
    pub fn new(classes: usize, momentum: f64, tau: f64) -> Result<Self> {
        if classes == 0 {
            return Err(Error::contract("DebiasState::new", "no classes"));
        }
        if !(0.0..=1.0).contains(&momentum) || !(tau >= 0.0) {
            return Err(Error::contract("DebiasState::new", format!("momentum {momentum} or tau {tau} out of range")));
        }
        Ok(Self {
            p_hat: vec![1.0 / classes as f64; classes],
            momentum,
            tau,
        })
    }

    pub fn classes(&self) -> usize {
        self.p_hat.len()
    }
}

/// `p̂ ← m·p̂ + (1−m)·mean_i p_i`.
pub fn debias_update(state: &DebiasState, batch_probs: &Tensor2) -> Result<DebiasState> {
    let k = state.classes();
    if batch_probs.cols() != k {
        return Err(Error::dim("debias_update", k, batch_probs.cols()));
    }
    if batch_probs.rows() == 0 {
        return Err(Error::contract("debias_update", "empty batch"));
    }
    for (i, row) in batch_probs.iter_rows().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(-PROB_ROW_TOL..=1.0 + PROB_ROW_TOL).contains(p)) || (sum - 1.0).abs() > PROB_ROW_TOL {
            return Err(Error::contract("debias_update", format!("row {i} is not a probability vector")));
        }
    }
    let b = batch_probs.rows() as f64;
    let mean = batch_probs.col_sums();
    let m = state.momentum;
    let p_hat = state
        .p_hat
        .iter()
        .zip(mean.data())
        .map(|(p, s)| m * p + (1.0 - m) * (s / b))
        .collect();
    Ok(DebiasState { p_hat, ..state.clone() })
}

/// `lac_ik − τ·log p̂_k`.
pub fn debias_logits(lac_logits: &Tensor2, state: &DebiasState) -> Result<Tensor2> {
    if lac_logits.cols() != state.classes() {
        return Err(Error::dim("debias_logits", state.classes(), lac_logits.cols()));
    }
    let shift: Vec<f64> = state.p_hat.iter().map(|p| state.tau * p.max(PROB_FLOOR).ln()).collect();
    let mut out = lac_logits.clone();
    for r in 0..out.rows() {
        for (v, s) in out.row_mut(r).iter_mut().zip(&shift) {
            *v -= s;
        }
    }
    Ok(out)
}

/// Zero-shot logits `cos(μ_k, f_i)/T`, centered per row.
pub fn teacher_scores(f_v: &Tensor2, state: &ModelState) -> Result<Tensor2> {
    state.check_features(f_v)?;
    let mut logits = ops::cosine_logits(f_v, &state.text_features, 1.0 / state.temperature)?;
    for r in 0..logits.rows() {
        let row = logits.row_mut(r);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        for v in row {
            *v -= mean;
        }
    }
    Ok(logits)
}

/// Soft class centroids in the bottleneck space.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    /// `K×d_b`.
    pub phi: Tensor2,
    /// Classes whose mass fell below [`CENTROID_MASS_EPS`]; their row was
    /// carried over (or left at zero).
    pub carried: Vec<bool>,
}

/// `φ_k = Σ_i p_ik f_i / Σ_i p_ik`.
pub fn centroids(f_b: &Tensor2, probs: &Tensor2, previous: Option<&Tensor2>) -> Result<Centroids> {
    if f_b.rows() != probs.rows() {
        return Err(Error::dim("centroids", f_b.rows(), probs.rows()));
    }
    let (k, db) = (probs.cols(), f_b.cols());
    if let Some(p) = previous {
        if p.shape() != (k, db) {
            return Err(Error::dim("centroids previous", format!("{k}x{db}"), format!("{:?}", p.shape())));
        }
    }
    for (i, row) in probs.iter_rows().enumerate() {
        if row.iter().any(|p| *p < -PROB_ROW_TOL) || (row.iter().sum::<f64>() - 1.0).abs() > PROB_ROW_TOL {
            return Err(Error::contract("centroids", format!("row {i} is not a probability vector")));
        }
    }
    let weighted = probs.matmul_tn(f_b)?; // K×d_b
    let mass = probs.col_sums();
    let mut phi = Tensor2::zeros(k, db);
    let mut carried = vec![false; k];
    for c in 0..k {
        let m = mass.data()[c];
        if m < CENTROID_MASS_EPS {
            carried[c] = true;
            if let Some(p) = previous {
                phi.row_mut(c).copy_from_slice(p.row(c));
            }
        } else {
            for (dst, src) in phi.row_mut(c).iter_mut().zip(weighted.row(c)) {
                *dst = src / m;
            }
        }
    }
    Ok(Centroids { phi, carried })
}

/// `argmax_k cos(f_i, φ_k)` over non-degenerate centroids, ties to the
/// lowest index.
pub fn cluster_labels(f_b: &Tensor2, phi: &Tensor2) -> Result<Vec<usize>> {
    if f_b.cols() != phi.cols() {
        return Err(Error::dim("cluster_labels", phi.cols(), f_b.cols()));
    }
    let (unit_f, _) = ops::unit_rows(f_b, "cluster_labels")?;
    let mut unit_phi: Vec<Option<Vec<f64>>> = Vec::with_capacity(phi.rows());
    for row in phi.iter_rows() {
        let n = norm(row);
        unit_phi.push((n > 0.0 && n.is_finite()).then(|| row.iter().map(|v| v / n).collect()));
    }
    if unit_phi.iter().all(Option::is_none) {
        return Err(Error::PseudoLabel);
    }
    Ok(unit_f
        .iter_rows()
        .map(|f| {
            let mut best: Option<(usize, f64)> = None;
            for (k, u) in unit_phi.iter().enumerate() {
                if let Some(u) = u {
                    let s = dot(f, u);
                    if best.map_or(true, |(_, b)| s > b) {
                        best = Some((k, s));
                    }
                }
            }
            best.expect("at least one centroid").0
        })
        .collect())
}

/// `argmax_k λ·vac_ik + (1−λ)·lac_ik`.
pub fn mixed_pseudo_labels(vac: &Tensor2, debiased_lac: &Tensor2, lambda: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract("mixed_pseudo_labels", format!("lambda {lambda} outside [0, 1]")));
    }
    if !vac.same_shape(debiased_lac) {
        return Err(Error::dim(
            "mixed_pseudo_labels",
            format!("{:?}", vac.shape()),
            format!("{:?}", debiased_lac.shape()),
        ));
    }
    Ok(vac
        .iter_rows()
        .zip(debiased_lac.iter_rows())
        .map(|(v, l)| {
            let mixed: Vec<f64> = v.iter().zip(l).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
            argmax(&mixed)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PseudoMode {
    Mixed,
    Clustered,
}

impl PseudoMode {
    /// Even epochs mix, odd epochs cluster.
    pub fn for_epoch(epoch: usize) -> Self {
        if epoch % 2 == 0 {
            PseudoMode::Mixed
        } else {
            PseudoMode::Clustered
        }
    }
}

/// Artifacts frozen at the start of an epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochPlan {
    /// Centered zero-shot scores, `Nt×K`.
    pub teacher_t: Tensor2,
    /// Present in clustered epochs.
    pub centroids: Option<Centroids>,
    pub pseudo_t: Vec<usize>,
    pub mode: PseudoMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub lambda: f64,
    pub cluster_rounds: usize,
    /// When false the ensemble weight is fixed at one half.
    pub learnable_w: bool,
}

/// Full-target pass with the current parameters (normalization in eval mode).
pub fn build_epoch_plan(
    model: &ModelState,
    f_t: &Tensor2,
    debias: &DebiasState,
    mode: PseudoMode,
    opts: &PlanOptions,
    previous_centroids: Option<&Tensor2>,
) -> Result<EpochPlan> {
    let teacher_t = teacher_scores(f_t, model)?;
    let (f_lac, f_vac) = model.separate(f_t)?;
    let lac = debias_logits(&model.lac_logits(&f_lac)?, debias)?;
    let (f_b, vac) = model.vac_logits_eval(&f_vac)?;
    match mode {
        PseudoMode::Mixed => Ok(EpochPlan {
            teacher_t,
            centroids: None,
            pseudo_t: mixed_pseudo_labels(&vac, &lac, opts.lambda)?,
            mode,
        }),
        PseudoMode::Clustered => {
            let w = if opts.learnable_w {
                model.gen_weight(&f_vac)?
            } else {
                vec![0.5; f_t.rows()]
            };
            let ens = crate::model::ensemble_logits(&vac, &lac, &w)?;
            let mut cents = centroids(&f_b, &softmax_rows(&ens), previous_centroids)?;
            let mut labels = cluster_labels(&f_b, &cents.phi)?;
            for _ in 1..opts.cluster_rounds.max(1) {
                let onehot = one_hot(&labels, model.dims.classes);
                cents = centroids(&f_b, &onehot, Some(&cents.phi))?;
                labels = cluster_labels(&f_b, &cents.phi)?;
            }
            Ok(EpochPlan {
                teacher_t,
                centroids: Some(cents),
                pseudo_t: labels,
                mode,
            })
        }
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor2 {
    let mut t = Tensor2::zeros(labels.len(), classes);
    for (i, &y) in labels.iter().enumerate() {
        t.set(i, y, 1.0);
    }
    t
}
