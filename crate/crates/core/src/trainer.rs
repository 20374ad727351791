//! The adaptation loop: per-epoch pseudo-label planning, per-step loss
//! evaluation with per-group gradient routing, and SGD updates.
//!
//! Routing is realised inside a single backward pass. The ensemble sees the
//! LAC logits as a constant, so `L_vac` never reaches the text separator. The
//! target-domain discriminator loss runs through a constant copy of the
//! discriminator, so it only reaches the separators; the source-domain loss
//! sees constant separator outputs, so it only reaches the discriminator.

use std::f64::consts::PI;
use std::fmt;

use crate::data::{FeatureSet, Rng};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown};
use crate::model::{self, Linear, ModelDims, ModelState, ModelVars, MlpVars, DEFAULT_BOTTLENECK, DEFAULT_HIDDEN};
use crate::ndgrad::ops::{softmax_rows, Mode};
use crate::ndgrad::tensor::argmax;
use crate::ndgrad::{sgd_step, Tape, Tensor2, Var};
use crate::pseudo::{self, DebiasState, EpochPlan, PlanOptions, PseudoMode};

/// Any loss term above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Debias factor τ.
    pub tau: f64,
    /// Momentum `m` of the prior estimate.
    pub momentum: f64,
    /// Mixup weight λ for pseudo-labels and inference.
    pub lambda: f64,
    pub batch_size: usize,
    pub lr0: f64,
    pub epochs: usize,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub temperature: f64,
    pub bottleneck: usize,
    pub hidden: usize,
    pub cluster_rounds: usize,
    pub enable_debias: bool,
    pub enable_ortho: bool,
    pub enable_im: bool,
    pub enable_distill: bool,
    pub learnable_w: bool,
    pub enable_discriminator: bool,
    pub reset_wgen_half: bool,
    pub bce_sep_on_source: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.01,
            tau: 0.5,
            momentum: 0.99,
            lambda: 0.3,
            batch_size: 32,
            lr0: 3e-3,
            epochs: 50,
            sgd_momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            temperature: model::DEFAULT_TEMPERATURE,
            bottleneck: DEFAULT_BOTTLENECK,
            hidden: DEFAULT_HIDDEN,
            cluster_rounds: 1,
            enable_debias: true,
            enable_ortho: true,
            enable_im: true,
            enable_distill: true,
            learnable_w: true,
            enable_discriminator: true,
            reset_wgen_half: false,
            bce_sep_on_source: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("tau", self.tau),
            ("lr0", self.lr0),
            ("sgd_momentum", self.sgd_momentum),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract("TrainConfig", format!("{name} = {v} must be finite and non-negative")));
            }
        }
        for (name, v) in [("lambda", self.lambda), ("momentum", self.momentum)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract("TrainConfig", format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::contract("TrainConfig", "batch size must be at least 2"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::contract("TrainConfig", "temperature must be positive"));
        }
        if self.bottleneck == 0 || self.hidden == 0 {
            return Err(Error::contract("TrainConfig", "layer widths must be positive"));
        }
        Ok(())
    }

    /// `(key, value)` pairs in a fixed order; the basis of the config hash.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("momentum", self.momentum.to_string()),
            ("lambda", self.lambda.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr0", self.lr0.to_string()),
            ("epochs", self.epochs.to_string()),
            ("sgd_momentum", self.sgd_momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("temperature", self.temperature.to_string()),
            ("bottleneck", self.bottleneck.to_string()),
            ("hidden", self.hidden.to_string()),
            ("cluster_rounds", self.cluster_rounds.to_string()),
            ("enable_debias", self.enable_debias.to_string()),
            ("enable_ortho", self.enable_ortho.to_string()),
            ("enable_im", self.enable_im.to_string()),
            ("enable_distill", self.enable_distill.to_string()),
            ("learnable_w", self.learnable_w.to_string()),
            ("enable_discriminator", self.enable_discriminator.to_string()),
            ("reset_wgen_half", self.reset_wgen_half.to_string()),
            ("bce_sep_on_source", self.bce_sep_on_source.to_string()),
        ]
    }

    /// First eight bytes of SHA-256 over the `key=value` lines.
    pub fn hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            lambda: self.lambda,
            cluster_rounds: self.cluster_rounds,
            learnable_w: self.learnable_w,
        }
    }

    /// Debias state used by training and stored with the model; `τ` is zero
    /// when debiasing is disabled.
    pub fn initial_debias(&self, classes: usize) -> Result<DebiasState> {
        DebiasState::new(classes, self.momentum, if self.enable_debias { self.tau } else { 0.0 })
    }
}

/// Cosine annealing evaluated once per epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs == 0 {
        return cfg.lr0;
    }
    cfg.lr0 * 0.5 * (1.0 + (PI * epoch as f64 / cfg.epochs as f64).cos())
}

/// Selects which objectives feed the gradient of one step. Terms disabled by
/// the config are never included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepTerms {
    pub lac: bool,
    pub vac: bool,
    pub ortho: bool,
    pub bce_source: bool,
    pub bce_target: bool,
}

impl StepTerms {
    pub const ALL: StepTerms = StepTerms {
        lac: true,
        vac: true,
        ortho: true,
        bce_source: true,
        bce_target: true,
    };
    pub const NONE: StepTerms = StepTerms {
        lac: false,
        vac: false,
        ortho: false,
        bce_source: false,
        bce_target: false,
    };
}

/// Rows for one step. `teacher_t` and `pseudo_t` are aligned with `xt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub xs: Tensor2,
    pub ys: Vec<usize>,
    pub xt: Tensor2,
    pub teacher_t: Tensor2,
    pub pseudo_t: Vec<usize>,
}

impl StepBatch {
    pub fn gather(source: &FeatureSet, target: &FeatureSet, plan: &EpochPlan, src_idx: &[usize], tgt_idx: &[usize]) -> Result<Self> {
        let labels = source
            .labels
            .as_ref()
            .ok_or_else(|| Error::contract("StepBatch", "source set has no labels"))?;
        Ok(Self {
            xs: source.features.select_rows(src_idx),
            ys: src_idx.iter().map(|&i| labels[i]).collect(),
            xt: target.features.select_rows(tgt_idx),
            teacher_t: plan.teacher_t.select_rows(tgt_idx),
            pseudo_t: tgt_idx.iter().map(|&i| plan.pseudo_t[i]).collect(),
        })
    }
}

/// Result of evaluating one step without touching any state.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub breakdown: LossBreakdown,
    /// Value of the routed objective that was differentiated.
    pub objective: f64,
    /// Gradients in [`ModelState::named_params`] order.
    pub grads: Vec<Tensor2>,
    /// Normalization statistics of the joint source+target batch.
    pub bn_mean: Vec<f64>,
    pub bn_var: Vec<f64>,
    /// `softmax` of the raw target LAC logits, for the prior update.
    pub lac_probs_t: Tensor2,
}

/// Forward and backward for one step.
pub fn evaluate_step(
    model: &ModelState,
    batch: &StepBatch,
    debias: &DebiasState,
    cfg: &TrainConfig,
    terms: StepTerms,
) -> Result<StepEval> {
    let (bs, bt) = (batch.xs.rows(), batch.xt.rows());
    if batch.ys.len() != bs || batch.pseudo_t.len() != bt || batch.teacher_t.rows() != bt {
        return Err(Error::contract("evaluate_step", "labels, teacher and pseudo-labels must align with the batch"));
    }
    model.check_features(&batch.xs)?;
    model.check_features(&batch.xt)?;

    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, model);
    let fs = tape.constant(batch.xs.clone());
    let ft = tape.constant(batch.xt.clone());
    let (lac_s, vac_s) = model::separate(&mut tape, fs, &vars.g_txt, &vars.g_vis)?;
    let (lac_t, vac_t) = model::separate(&mut tape, ft, &vars.g_txt, &vars.g_vis)?;

    let mut bd = LossBreakdown::default();
    let mut objective: Vec<Var> = Vec::new();

    // language-associated branch
    let zl_s = model::lac_logits(&mut tape, lac_s, model)?;
    let zl_t = model::lac_logits(&mut tape, lac_t, model)?;
    let lac = losses::lac_terms(&mut tape, zl_t, &batch.teacher_t, zl_s, &batch.ys)?;
    bd.lac_ce = tape.scalar(lac.ce);
    if cfg.enable_distill {
        bd.lac_kl = tape.scalar(lac.kl);
        if terms.lac {
            objective.push(lac.kl);
        }
    }
    if terms.lac {
        objective.push(tape.scale(lac.ce, cfg.alpha));
    }

    // vision-associated branch, one normalization pass over both domains
    let vac_all = tape.concat_rows(vac_s, vac_t)?;
    let head = model::vac_forward(&mut tape, vac_all, &vars.head, &model.head.bn, Mode::Train)?;
    let (bn_mean, bn_var) = head.batch_stats.expect("train mode returns statistics");
    let zv_s = tape.slice_rows(head.logits, 0, bs)?;
    let zv_t = tape.slice_rows(head.logits, bs, bs + bt)?;
    let lac_t_value = tape.value(zl_t).clone();
    let lac_probs_t = softmax_rows(&lac_t_value);
    let lac_fixed = tape.constant(pseudo::debias_logits(&lac_t_value, debias)?);
    let w = if cfg.learnable_w {
        model::gen_weight(&mut tape, vac_t, &vars.wgen)?
    } else {
        tape.constant(Tensor2::filled(bt, 1, 0.5))
    };
    let ens = tape.mix(w, zv_t, lac_fixed)?;
    let ens_ce = tape.cross_entropy(ens, &batch.pseudo_t)?;
    let src_ce = tape.cross_entropy(zv_s, &batch.ys)?;
    bd.ens_ce = tape.scalar(ens_ce);
    bd.vac_src_ce = tape.scalar(src_ce);
    let mut vac_parts = vec![ens_ce, tape.scale(src_ce, cfg.beta)];
    if cfg.enable_im {
        let im = losses::info_max_terms(&mut tape, ens)?;
        bd.ent = tape.scalar(im.ent);
        bd.div = tape.scalar(im.div);
        bd.im = tape.scalar(im.im);
        vac_parts.push(im.im);
    }
    let vac_total = tape.sum_scalars(&vac_parts)?.expect("non-empty");
    bd.total_vac = tape.scalar(vac_total);
    if terms.vac {
        objective.push(vac_total);
    }

    if cfg.enable_ortho {
        let o = losses::ortho_term(&mut tape, lac_s, vac_s, lac_t, vac_t)?;
        bd.ortho = tape.scalar(o);
        if terms.ortho {
            objective.push(tape.scale(o, cfg.gamma));
        }
    }

    if cfg.enable_discriminator {
        let lang = |n: usize| -> Vec<f64> { (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect() };

        // target rows: separators learn, the discriminator is a constant
        let frozen = MlpVars::constants(&mut tape, &model.disc.l1, &model.disc.l2);
        let rows_t = tape.concat_rows(lac_t, vac_t)?;
        let p_t = model::discriminate(&mut tape, rows_t, &frozen)?;
        let bce_t = losses::bce_term(&mut tape, p_t, &lang(bt))?;
        bd.bce_tgt = tape.scalar(bce_t);
        if terms.bce_target {
            objective.push(tape.scale(bce_t, cfg.gamma));
        }

        // source rows: the discriminator learns from separator outputs
        let rows_s = if cfg.bce_sep_on_source {
            tape.concat_rows(lac_s, vac_s)?
        } else {
            let v = tape.value(lac_s).concat_rows(tape.value(vac_s))?;
            tape.constant(v)
        };
        let p_s = model::discriminate(&mut tape, rows_s, &vars.disc)?;
        let bce_s = losses::bce_term(&mut tape, p_s, &lang(bs))?;
        bd.bce_src = tape.scalar(bce_s);
        if terms.bce_source {
            objective.push(tape.scale(bce_s, cfg.gamma));
        }
    }

    let lac_total = bd.lac_kl + cfg.alpha * bd.lac_ce;
    let sep_shared = cfg.gamma * bd.ortho + cfg.gamma * bd.bce_tgt + if cfg.bce_sep_on_source { cfg.gamma * bd.bce_src } else { 0.0 };
    bd.total_txt = lac_total + sep_shared;
    bd.total_vis = bd.total_vac + sep_shared;
    bd.total_disc = cfg.gamma * bd.bce_src;

    let order = vars.in_order();
    let (objective, grads) = match tape.sum_scalars(&objective)? {
        Some(root) => {
            let g = tape.backward(root)?;
            let grads = order.iter().map(|&v| g.get_or_zeros(v, tape.value(v))).collect();
            (tape.scalar(root), grads)
        }
        None => (0.0, order.iter().map(|&v| Tensor2::zeros(tape.value(v).rows(), tape.value(v).cols())).collect()),
    };
    Ok(StepEval {
        breakdown: bd,
        objective,
        grads,
        bn_mean,
        bn_var,
        lac_probs_t,
    })
}

fn check_divergence(step: usize, bd: &LossBreakdown) -> Result<()> {
    for (name, v) in LossBreakdown::FIELDS.iter().zip(bd.values()) {
        if !v.is_finite() || v > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { step, term: name, value: v });
        }
    }
    Ok(())
}

/// Shuffled cyclic index stream: each pass visits every row once, then
/// reshuffles.
#[derive(Debug, Clone)]
pub struct CyclicSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl CyclicSampler {
    pub fn new(n: usize, mut rng: Rng) -> Self {
        let order = rng.permutation(n);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Summary of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub mode: PseudoMode,
    pub steps: usize,
    /// Mean over the epoch's steps.
    pub losses: LossBreakdown,
    /// Mean ensemble weight over the target set after the epoch.
    pub w_mean: f64,
    /// Fraction of pseudo-labels equal to the teacher's argmax.
    pub pseudo_agreement: f64,
    /// Target accuracies after the epoch when ground truth was supplied.
    pub acc_ensemble: Option<f64>,
    pub acc_vac: Option<f64>,
    pub acc_lac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub config_hash: u64,
    pub zero_shot_accuracy: Option<f64>,
    pub epochs: Vec<EpochReport>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochReport> {
        self.epochs.last()
    }
}

impl fmt::Display for TrainReport {
    /// One `key=value` pair per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "config_hash={:016x}", self.config_hash)?;
        writeln!(f, "epochs={}", self.epochs.len())?;
        if let Some(a) = self.zero_shot_accuracy {
            writeln!(f, "zero_shot_accuracy={a}")?;
        }
        for e in &self.epochs {
            let p = format!("epoch.{}", e.epoch);
            writeln!(f, "{p}.lr={}", e.lr)?;
            let mode = match e.mode {
                PseudoMode::Mixed => "mixed",
                PseudoMode::Clustered => "clustered",
            };
            writeln!(f, "{p}.mode={mode}")?;
            writeln!(f, "{p}.steps={}", e.steps)?;
            for (k, v) in LossBreakdown::FIELDS.iter().zip(e.losses.values()) {
                writeln!(f, "{p}.loss.{k}={v}")?;
            }
            writeln!(f, "{p}.w_mean={}", e.w_mean)?;
            writeln!(f, "{p}.pseudo_agreement={}", e.pseudo_agreement)?;
            for (k, v) in [("acc_ensemble", e.acc_ensemble), ("acc_vac", e.acc_vac), ("acc_lac", e.acc_lac)] {
                if let Some(v) = v {
                    writeln!(f, "{p}.{k}={v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Predictions and the combined logits they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub predictions: Vec<usize>,
    pub logits: Tensor2,
}

/// `λ·vac + (1−λ)·debias(lac)` with normalization in eval mode.
pub fn infer(model: &ModelState, features: &Tensor2, debias: &DebiasState, lambda: f64) -> Result<Inference> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract("infer", format!("lambda {lambda} outside [0, 1]")));
    }
    let (f_lac, f_vac) = model.separate(features)?;
    let lac = pseudo::debias_logits(&model.lac_logits(&f_lac)?, debias)?;
    let (_, vac) = model.vac_logits_eval(&f_vac)?;
    let logits = vac.scale(lambda).add(&lac.scale(1.0 - lambda))?;
    let predictions = logits.iter_rows().map(argmax).collect();
    Ok(Inference { predictions, logits })
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64
}

/// Training state carried across steps and epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelState,
    pub debias: DebiasState,
    pub cfg: TrainConfig,
    velocity: Vec<Tensor2>,
    source_sampler: CyclicSampler,
    target_sampler: CyclicSampler,
    reset_rng: Rng,
    centroids: Option<Tensor2>,
    steps_taken: usize,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(source: &FeatureSet, target: &FeatureSet, text: &Tensor2, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if source.labels.is_none() {
            return Err(Error::contract("train", "source set must be labelled"));
        }
        let (k, d) = text.shape();
        if source.dim() != d || target.dim() != d {
            return Err(Error::dim("train feature width", d, if source.dim() != d { source.dim() } else { target.dim() }));
        }
        if source.classes != k || target.classes != k {
            return Err(Error::dim("train class count", k, if source.classes != k { source.classes } else { target.classes }));
        }
        let mut rng = Rng::new(cfg.seed);
        let dims = ModelDims {
            feature_dim: d,
            bottleneck: cfg.bottleneck,
            classes: k,
            hidden: cfg.hidden,
        };
        let mut init_rng = rng.fork();
        let model = ModelState::init(dims, text.clone(), cfg.temperature, &mut init_rng)?;
        let source_sampler = CyclicSampler::new(source.len(), rng.fork());
        let target_sampler = CyclicSampler::new(target.len(), rng.fork());
        let reset_rng = rng.fork();
        let velocity = model
            .named_params()
            .iter()
            .map(|(_, _, t)| Tensor2::zeros(t.rows(), t.cols()))
            .collect();
        Ok(Self {
            debias: cfg.initial_debias(k)?,
            model,
            cfg,
            velocity,
            source_sampler,
            target_sampler,
            reset_rng,
            centroids: None,
            steps_taken: 0,
            epochs_done: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Pseudo-labels for the coming epoch from the current parameters.
    pub fn plan_epoch(&self, target: &FeatureSet, mode: PseudoMode) -> Result<EpochPlan> {
        pseudo::build_epoch_plan(
            &self.model,
            &target.features,
            &self.debias,
            mode,
            &self.cfg.plan_options(),
            self.centroids.as_ref(),
        )
    }

    /// One SGD step on an explicit batch.
    pub fn step(&mut self, batch: &StepBatch, lr: f64, terms: StepTerms) -> Result<LossBreakdown> {
        let eval = evaluate_step(&self.model, batch, &self.debias, &self.cfg, terms)?;
        check_divergence(self.steps_taken, &eval.breakdown)?;
        for ((param, grad), vel) in self.model.params_mut().into_iter().zip(&eval.grads).zip(&mut self.velocity) {
            sgd_step(param, grad, vel, lr, self.cfg.sgd_momentum, self.cfg.weight_decay)?;
        }
        self.model
            .head
            .bn
            .update_running(&eval.bn_mean, &eval.bn_var, batch.xs.rows() + batch.xt.rows());
        self.debias = pseudo::debias_update(&self.debias, &eval.lac_probs_t)?;
        self.steps_taken += 1;
        Ok(eval.breakdown)
    }

    /// `⌈max(Ns, Nt)/B⌉` steps against a fixed plan; returns mean losses.
    pub fn run_epoch(&mut self, source: &FeatureSet, target: &FeatureSet, plan: &EpochPlan, lr: f64) -> Result<LossBreakdown> {
        let b = self.cfg.batch_size;
        let steps = source.len().max(target.len()).div_ceil(b);
        let mut history = Vec::with_capacity(steps);
        for _ in 0..steps {
            let si = self.source_sampler.next_batch(b);
            let ti = self.target_sampler.next_batch(b);
            let batch = StepBatch::gather(source, target, plan, &si, &ti)?;
            history.push(self.step(&batch, lr, StepTerms::ALL)?);
        }
        Ok(LossBreakdown::mean(&history).unwrap_or_default())
    }

    /// Re-initializes a seeded half of the weight generator's scalars.
    pub fn reset_wgen_half(&mut self) {
        let total: usize = [&self.model.wgen.l1, &self.model.wgen.l2].iter().map(|l| layer_len(l)).sum();
        let chosen = &self.reset_rng.permutation(total)[..total / 2];
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        let l1_len = layer_len(&self.model.wgen.l1);
        let mut fresh_rng = self.reset_rng.fork();
        let d = self.model.dims;
        let fresh_l1 = Linear::xavier(&mut fresh_rng, d.feature_dim, d.hidden, true);
        let fresh_l2 = Linear::xavier(&mut fresh_rng, d.hidden, 1, true);
        for idx in chosen {
            if idx < l1_len {
                copy_scalar(&mut self.model.wgen.l1, &fresh_l1, idx);
            } else {
                copy_scalar(&mut self.model.wgen.l2, &fresh_l2, idx - l1_len);
            }
        }
    }

    /// Plans and runs the next epoch.
    pub fn train_epoch(&mut self, source: &FeatureSet, target: &FeatureSet, truth: Option<&[usize]>) -> Result<EpochReport> {
        let epoch = self.epochs_done;
        let mode = PseudoMode::for_epoch(epoch);
        let plan = self.plan_epoch(target, mode)?;
        if let Some(c) = &plan.centroids {
            self.centroids = Some(c.phi.clone());
        }
        if self.cfg.reset_wgen_half {
            self.reset_wgen_half();
        }
        let lr = lr_schedule(epoch, &self.cfg);
        let losses = self.run_epoch(source, target, &plan, lr)?;
        self.epochs_done += 1;

        let teacher_argmax: Vec<usize> = plan.teacher_t.iter_rows().map(argmax).collect();
        let pseudo_agreement = accuracy(&plan.pseudo_t, &teacher_argmax);
        let w_mean = if self.cfg.learnable_w {
            let (_, f_vac) = self.model.separate(&target.features)?;
            let w = self.model.gen_weight(&f_vac)?;
            w.iter().sum::<f64>() / w.len() as f64
        } else {
            0.5
        };
        let (acc_ensemble, acc_vac, acc_lac) = match truth {
            Some(t) => {
                let acc = |lambda| -> Result<f64> { Ok(accuracy(&infer(&self.model, &target.features, &self.debias, lambda)?.predictions, t)) };
                (Some(acc(self.cfg.lambda)?), Some(acc(1.0)?), Some(acc(0.0)?))
            }
            None => (None, None, None),
        };
        Ok(EpochReport {
            epoch,
            lr,
            mode,
            steps: source.len().max(target.len()).div_ceil(self.cfg.batch_size),
            losses,
            w_mean,
            pseudo_agreement,
            acc_ensemble,
            acc_vac,
            acc_lac,
        })
    }

    pub fn infer(&self, features: &Tensor2) -> Result<Inference> {
        infer(&self.model, features, &self.debias, self.cfg.lambda)
    }
}

fn layer_len(l: &Linear) -> usize {
    l.weight.len() + l.bias.as_ref().map_or(0, Tensor2::len)
}

fn copy_scalar(dst: &mut Linear, src: &Linear, idx: usize) {
    let wl = dst.weight.len();
    if idx < wl {
        dst.weight.data_mut()[idx] = src.weight.data()[idx];
    } else if let (Some(db), Some(sb)) = (dst.bias.as_mut(), src.bias.as_ref()) {
        db.data_mut()[idx - wl] = sb.data()[idx - wl];
    }
}

/// Final model, prior estimate and report of a full run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub debias: DebiasState,
    pub report: TrainReport,
}

impl TrainOutcome {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> crate::checkpoint::Checkpoint {
        crate::checkpoint::Checkpoint {
            model: self.model.clone(),
            debias: self.debias.clone(),
            lambda: cfg.lambda,
            config_hash: cfg.hash(),
        }
    }
}

/// Runs `cfg.epochs` epochs from a seeded initialization. `target_truth` is
/// used only for reporting.
pub fn train(
    source: &FeatureSet,
    target: &FeatureSet,
    text: &Tensor2,
    cfg: &TrainConfig,
    target_truth: Option<&[usize]>,
) -> Result<TrainOutcome> {
    if let Some(t) = target_truth {
        if t.len() != target.len() {
            return Err(Error::dim("target truth", target.len(), t.len()));
        }
    }
    let mut trainer = Trainer::new(source, target, text, cfg.clone())?;
    let zero_shot_accuracy = match target_truth {
        Some(t) => Some(accuracy(&trainer.model.zero_shot(&target.features)?, t)),
        None => None,
    };
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        epochs.push(trainer.train_epoch(source, target, target_truth)?);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        debias: trainer.debias,
        report: TrainReport {
            config_hash: cfg.hash(),
            zero_shot_accuracy,
            epochs,
        },
    })
}
