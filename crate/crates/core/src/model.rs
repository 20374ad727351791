//! Trainable networks and their forward passes.
//!
//! Forward passes are written against a [`Tape`] so the trainer can
//! differentiate them; the value-level methods on [`ModelState`] run the same
//! code on a throwaway tape.

use crate::data::Rng;
use crate::error::{Error, Result};
use crate::ndgrad::ops::{self, BatchNorm, Mode};
use crate::ndgrad::tensor::argmax;
use crate::ndgrad::{Tape, Tensor2, Var};

/// CLIP's logit scale of 100.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;
pub const DEFAULT_BOTTLENECK: usize = 256;
pub const DEFAULT_HIDDEN: usize = 256;
const SEPARATOR_INIT_NOISE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub bottleneck: usize,
    pub classes: usize,
    /// Width of the weight-generator and discriminator hidden layer.
    pub hidden: usize,
}

impl ModelDims {
    pub fn new(feature_dim: usize, classes: usize) -> Self {
        Self {
            feature_dim,
            bottleneck: DEFAULT_BOTTLENECK,
            classes,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

/// `x · weight + bias` with `weight` stored as `in×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Option<Tensor2>,
}

impl Linear {
    pub fn xavier(rng: &mut Rng, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.uniform(-a, a)).collect();
        Self {
            weight: Tensor2::from_vec(fan_in, fan_out, data).expect("finite init"),
            bias: bias.then(|| Tensor2::zeros(1, fan_out)),
        }
    }

    /// Identity map perturbed by Gaussian noise on the weights.
    pub fn near_identity(rng: &mut Rng, dim: usize, noise: f64) -> Self {
        let mut weight = Tensor2::identity(dim);
        for v in weight.data_mut() {
            *v += noise * rng.next_gaussian();
        }
        Self {
            weight,
            bias: Some(Tensor2::zeros(1, dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn apply(&self, x: &Tensor2) -> Result<Tensor2> {
        ops::linear_apply(x, &self.weight, self.bias.as_ref())
    }
}

/// Bottleneck classifier on the vision-associated component:
/// `f_b = BN(f_vac · Φ1)`, `logits = f_b · Φ2 + b`.
///
/// Φ1 carries no bias; the normalization shift takes its place.
#[derive(Debug, Clone, PartialEq)]
pub struct VacHead {
    pub phi1: Linear,
    pub bn: BatchNorm,
    pub phi2: Linear,
}

/// `w = σ(l2(l1(f_vac)))`, one weight per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGen {
    pub l1: Linear,
    pub l2: Linear,
}

/// `σ(l2(relu(l1(f))))`: probability that a row is a language-associated
/// component.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub l1: Linear,
    pub l2: Linear,
}

/// Parameter groups with distinct training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    TextSeparator,
    VisionSeparator,
    /// Φ1 and the normalization layer.
    Phi1,
    Phi2,
    WeightGen,
    Discriminator,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group::TextSeparator,
        Group::VisionSeparator,
        Group::Phi1,
        Group::Phi2,
        Group::WeightGen,
        Group::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::TextSeparator => "g_txt",
            Group::VisionSeparator => "g_vis",
            Group::Phi1 => "phi1",
            Group::Phi2 => "phi2",
            Group::WeightGen => "wgen",
            Group::Discriminator => "disc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub dims: ModelDims,
    pub g_txt: Linear,
    pub g_vis: Linear,
    pub head: VacHead,
    pub wgen: WeightGen,
    pub disc: Discriminator,
    /// Frozen `K×d_v` text features.
    pub text_features: Tensor2,
    pub temperature: f64,
}

impl ModelState {
    pub fn init(dims: ModelDims, text_features: Tensor2, temperature: f64, rng: &mut Rng) -> Result<Self> {
        if text_features.shape() != (dims.classes, dims.feature_dim) {
            return Err(Error::dim(
                "ModelState::init text features",
                format!("{}x{}", dims.classes, dims.feature_dim),
                format!("{:?}", text_features.shape()),
            ));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::contract("ModelState::init", format!("temperature {temperature} must be positive")));
        }
        ops::unit_rows(&text_features, "text features")?;
        let d = dims.feature_dim;
        let g_txt = Linear::near_identity(rng, d, SEPARATOR_INIT_NOISE);
        let g_vis = Linear::near_identity(rng, d, SEPARATOR_INIT_NOISE);
        let head = VacHead {
            phi1: Linear::xavier(rng, d, dims.bottleneck, false),
            bn: BatchNorm::new(dims.bottleneck),
            phi2: Linear::xavier(rng, dims.bottleneck, dims.classes, true),
        };
        let wgen = WeightGen {
            l1: Linear::xavier(rng, d, dims.hidden, true),
            l2: Linear::xavier(rng, dims.hidden, 1, true),
        };
        let disc = Discriminator {
            l1: Linear::xavier(rng, d, dims.hidden, true),
            l2: Linear::xavier(rng, dims.hidden, 1, true),
        };
        Ok(Self {
            dims,
            g_txt,
            g_vis,
            head,
            wgen,
            disc,
            text_features,
            temperature,
        })
    }

    /// Trainable tensors in a fixed order.
    pub fn named_params(&self) -> Vec<(&'static str, Group, &Tensor2)> {
        let mut out = Vec::with_capacity(16);
        push_linear(&mut out, "g_txt", Group::TextSeparator, &self.g_txt);
        push_linear(&mut out, "g_vis", Group::VisionSeparator, &self.g_vis);
        out.push(("phi1.weight", Group::Phi1, &self.head.phi1.weight));
        out.push(("bn.scale", Group::Phi1, &self.head.bn.scale));
        out.push(("bn.shift", Group::Phi1, &self.head.bn.shift));
        push_linear(&mut out, "phi2", Group::Phi2, &self.head.phi2);
        push_linear(&mut out, "wgen.l1", Group::WeightGen, &self.wgen.l1);
        push_linear(&mut out, "wgen.l2", Group::WeightGen, &self.wgen.l2);
        push_linear(&mut out, "disc.l1", Group::Discriminator, &self.disc.l1);
        push_linear(&mut out, "disc.l2", Group::Discriminator, &self.disc.l2);
        out
    }

    /// Same order as [`ModelState::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out: Vec<&mut Tensor2> = Vec::with_capacity(16);
        fn lin<'a>(out: &mut Vec<&'a mut Tensor2>, l: &'a mut Linear) {
            out.push(&mut l.weight);
            if let Some(b) = l.bias.as_mut() {
                out.push(b);
            }
        }
        lin(&mut out, &mut self.g_txt);
        lin(&mut out, &mut self.g_vis);
        out.push(&mut self.head.phi1.weight);
        out.push(&mut self.head.bn.scale);
        out.push(&mut self.head.bn.shift);
        lin(&mut out, &mut self.head.phi2);
        lin(&mut out, &mut self.wgen.l1);
        lin(&mut out, &mut self.wgen.l2);
        lin(&mut out, &mut self.disc.l1);
        lin(&mut out, &mut self.disc.l2);
        out
    }

    /// Copies of every parameter in `group`, for snapshot comparisons.
    pub fn group_snapshot(&self, group: Group) -> Vec<Tensor2> {
        self.named_params()
            .into_iter()
            .filter(|(_, g, _)| *g == group)
            .map(|(_, _, t)| t.clone())
            .collect()
    }

    pub fn check_features(&self, x: &Tensor2) -> Result<()> {
        if x.cols() != self.dims.feature_dim {
            return Err(Error::dim("model input", self.dims.feature_dim, x.cols()));
        }
        Ok(())
    }

    /// `(f_lac, f_vac)`.
    pub fn separate(&self, f_v: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        self.check_features(f_v)?;
        Ok((self.g_txt.apply(f_v)?, self.g_vis.apply(f_v)?))
    }

    /// `cos(μ_k, f_lac_i) / T`.
    pub fn lac_logits(&self, f_lac: &Tensor2) -> Result<Tensor2> {
        self.check_features(f_lac)?;
        ops::cosine_logits(f_lac, &self.text_features, 1.0 / self.temperature)
    }

    /// Bottleneck features and class logits. Train mode updates the running
    /// statistics.
    pub fn vac_logits(&mut self, f_vac: &Tensor2, mode: Mode) -> Result<(Tensor2, Tensor2)> {
        self.check_features(f_vac)?;
        let mut tape = Tape::new();
        let x = tape.constant(f_vac.clone());
        let vars = HeadVars::constants(&mut tape, &self.head);
        let out = vac_forward(&mut tape, x, &vars, &self.head.bn, mode)?;
        if let Some((mean, var)) = &out.batch_stats {
            self.head.bn.update_running(mean, var, f_vac.rows());
        }
        Ok((tape.value(out.bottleneck).clone(), tape.value(out.logits).clone()))
    }

    /// Eval-mode forward of the VAC head, no state change.
    pub fn vac_logits_eval(&self, f_vac: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        self.check_features(f_vac)?;
        let mut tape = Tape::new();
        let x = tape.constant(f_vac.clone());
        let vars = HeadVars::constants(&mut tape, &self.head);
        let out = vac_forward(&mut tape, x, &vars, &self.head.bn, Mode::Eval)?;
        Ok((tape.value(out.bottleneck).clone(), tape.value(out.logits).clone()))
    }

    /// Per-sample ensemble weights in `(0, 1)`.
    pub fn gen_weight(&self, f_vac: &Tensor2) -> Result<Vec<f64>> {
        self.check_features(f_vac)?;
        let mut tape = Tape::new();
        let x = tape.constant(f_vac.clone());
        let vars = MlpVars::constants(&mut tape, &self.wgen.l1, &self.wgen.l2);
        let w = gen_weight(&mut tape, x, &vars)?;
        Ok(tape.value(w).data().to_vec())
    }

    pub fn discriminate(&self, f: &Tensor2) -> Result<Vec<f64>> {
        self.check_features(f)?;
        let mut tape = Tape::new();
        let x = tape.constant(f.clone());
        let vars = MlpVars::constants(&mut tape, &self.disc.l1, &self.disc.l2);
        let p = discriminate(&mut tape, x, &vars)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Zero-shot class decisions from raw vision features.
    pub fn zero_shot(&self, f_v: &Tensor2) -> Result<Vec<usize>> {
        zero_shot(f_v, &self.text_features)
    }
}

fn push_linear<'a>(out: &mut Vec<(&'static str, Group, &'a Tensor2)>, prefix: &'static str, group: Group, l: &'a Linear) {
    let (w, b) = match prefix {
        "g_txt" => ("g_txt.weight", "g_txt.bias"),
        "g_vis" => ("g_vis.weight", "g_vis.bias"),
        "phi2" => ("phi2.weight", "phi2.bias"),
        "wgen.l1" => ("wgen.l1.weight", "wgen.l1.bias"),
        "wgen.l2" => ("wgen.l2.weight", "wgen.l2.bias"),
        "disc.l1" => ("disc.l1.weight", "disc.l1.bias"),
        "disc.l2" => ("disc.l2.weight", "disc.l2.bias"),
        _ => unreachable!("unknown layer {prefix}"),
    };
    out.push((w, group, &l.weight));
    if let Some(bias) = &l.bias {
        out.push((b, group, bias));
    }
}

/// `argmax_k cos(μ_k, f_i)`, ties to the lowest index.
pub fn zero_shot(f_v: &Tensor2, text_features: &Tensor2) -> Result<Vec<usize>> {
    let logits = ops::cosine_logits(f_v, text_features, 1.0)?;
    Ok(logits.iter_rows().map(argmax).collect())
}

/// `w_i·vac_i + (1−w_i)·lac_i`; `w` must lie in `[0, 1]`.
pub fn ensemble_logits(vac: &Tensor2, lac: &Tensor2, w: &[f64]) -> Result<Tensor2> {
    if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::contract("ensemble_logits", format!("weight {bad} outside [0, 1]")));
    }
    let mut tape = Tape::new();
    let wv = tape.constant(Tensor2::from_vec(w.len(), 1, w.to_vec())?);
    let a = tape.constant(vac.clone());
    let b = tape.constant(lac.clone());
    let out = tape.mix(wv, a, b)?;
    Ok(tape.value(out).clone())
}

// ---------------------------------------------------------------------------
// Tape-level forward passes

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl LinearVars {
    fn register(tape: &mut Tape, l: &Linear) -> Self {
        Self {
            weight: tape.leaf(l.weight.clone()),
            bias: l.bias.as_ref().map(|b| tape.leaf(b.clone())),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub phi1: LinearVars,
    pub bn_scale: Var,
    pub bn_shift: Var,
    pub phi2: LinearVars,
}

impl HeadVars {
    fn register(tape: &mut Tape, head: &VacHead) -> Self {
        Self {
            phi1: LinearVars::register(tape, &head.phi1),
            bn_scale: tape.leaf(head.bn.scale.clone()),
            bn_shift: tape.leaf(head.bn.shift.clone()),
            phi2: LinearVars::register(tape, &head.phi2),
        }
    }

    pub fn constants(tape: &mut Tape, head: &VacHead) -> Self {
        Self::register(tape, head)
    }
}

/// Two-layer map used by the weight generator and the discriminator.
#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub l1: LinearVars,
    pub l2: LinearVars,
}

impl MlpVars {
    pub fn constants(tape: &mut Tape, l1: &Linear, l2: &Linear) -> Self {
        Self {
            l1: LinearVars::register(tape, l1),
            l2: LinearVars::register(tape, l2),
        }
    }
}

/// Every trainable tensor of a [`ModelState`] registered on one tape.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub g_txt: LinearVars,
    pub g_vis: LinearVars,
    pub head: HeadVars,
    pub wgen: MlpVars,
    pub disc: MlpVars,
}

impl ModelVars {
    pub fn register(tape: &mut Tape, state: &ModelState) -> Self {
        Self {
            g_txt: LinearVars::register(tape, &state.g_txt),
            g_vis: LinearVars::register(tape, &state.g_vis),
            head: HeadVars::register(tape, &state.head),
            wgen: MlpVars::constants(tape, &state.wgen.l1, &state.wgen.l2),
            disc: MlpVars::constants(tape, &state.disc.l1, &state.disc.l2),
        }
    }

    /// Vars in [`ModelState::named_params`] order.
    pub fn in_order(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(16);
        let lin = |out: &mut Vec<Var>, l: &LinearVars| {
            out.push(l.weight);
            if let Some(b) = l.bias {
                out.push(b);
            }
        };
        lin(&mut out, &self.g_txt);
        lin(&mut out, &self.g_vis);
        out.push(self.head.phi1.weight);
        out.push(self.head.bn_scale);
        out.push(self.head.bn_shift);
        lin(&mut out, &self.head.phi2);
        lin(&mut out, &self.wgen.l1);
        lin(&mut out, &self.wgen.l2);
        lin(&mut out, &self.disc.l1);
        lin(&mut out, &self.disc.l2);
        out
    }
}

pub fn separate(tape: &mut Tape, f_v: Var, g_txt: &LinearVars, g_vis: &LinearVars) -> Result<(Var, Var)> {
    Ok((g_txt.apply(tape, f_v)?, g_vis.apply(tape, f_v)?))
}

pub fn lac_logits(tape: &mut Tape, f_lac: Var, state: &ModelState) -> Result<Var> {
    tape.cosine_logits(f_lac, &state.text_features, 1.0 / state.temperature)
}

pub struct VacOutput {
    pub bottleneck: Var,
    pub logits: Var,
    /// Batch mean and biased variance in train mode.
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

pub fn vac_forward(tape: &mut Tape, f_vac: Var, vars: &HeadVars, bn: &BatchNorm, mode: Mode) -> Result<VacOutput> {
    let pre = vars.phi1.apply(tape, f_vac)?;
    let (bottleneck, batch_stats) = match mode {
        Mode::Train => {
            let (out, mean, var) = tape.batchnorm_train(pre, vars.bn_scale, vars.bn_shift, bn.eps)?;
            (out, Some((mean, var)))
        }
        Mode::Eval => (
            tape.batchnorm_eval(
                pre,
                vars.bn_scale,
                vars.bn_shift,
                bn.running_mean.data(),
                bn.running_var.data(),
                bn.eps,
            )?,
            None,
        ),
    };
    let logits = vars.phi2.apply(tape, bottleneck)?;
    Ok(VacOutput {
        bottleneck,
        logits,
        batch_stats,
    })
}

/// `B×1` weights.
pub fn gen_weight(tape: &mut Tape, f_vac: Var, vars: &MlpVars) -> Result<Var> {
    let h = vars.l1.apply(tape, f_vac)?;
    let z = vars.l2.apply(tape, h)?;
    Ok(tape.sigmoid(z))
}

/// `B×1` probabilities.
pub fn discriminate(tape: &mut Tape, f: Var, vars: &MlpVars) -> Result<Var> {
    let h = vars.l1.apply(tape, f)?;
    let h = tape.relu(h);
    let z = vars.l2.apply(tape, h)?;
    Ok(tape.sigmoid(z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndgrad::cosine_sim;

    fn small_state(seed: u64) -> ModelState {
        let mut rng = Rng::new(seed);
        let dims = ModelDims {
            feature_dim: 4,
            bottleneck: 3,
            classes: 3,
            hidden: 5,
        };
        let text = Tensor2::from_vec(3, 4, (0..12).map(|_| rng.next_gaussian()).collect()).unwrap();
        ModelState::init(dims, text, 0.5, &mut rng).unwrap()
    }

    fn random(rng: &mut Rng, r: usize, c: usize) -> Tensor2 {
        Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.next_gaussian()).collect()).unwrap()
    }

    #[test]
    fn identity_separators_pass_features_through() {
        let mut s = small_state(0);
        s.g_txt.weight = Tensor2::identity(4);
        s.g_vis.weight = Tensor2::identity(4);
        let x = random(&mut Rng::new(1), 3, 4);
        let (lac, vac) = s.separate(&x).unwrap();
        assert_eq!(lac, x);
        assert_eq!(vac, x);
    }

    #[test]
    fn zero_separator_gives_bias_rows() {
        let mut s = small_state(0);
        s.g_txt.weight = Tensor2::zeros(4, 4);
        s.g_txt.bias = Some(Tensor2::row_vector(&[1.0, 2.0, 3.0, 4.0]).unwrap());
        let (lac, _) = s.separate(&random(&mut Rng::new(2), 2, 4)).unwrap();
        for r in lac.iter_rows() {
            assert_eq!(r, &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn separator_matches_linear_oracle() {
        let s = small_state(0);
        let x = random(&mut Rng::new(3), 1, 4);
        let (lac, _) = s.separate(&x).unwrap();
        for j in 0..4 {
            let mut v = s.g_txt.bias.as_ref().unwrap().data()[j];
            for k in 0..4 {
                v += x.get(0, k) * s.g_txt.weight.get(k, j);
            }
            assert!((lac.get(0, j) - v).abs() < 1e-15);
        }
    }

    #[test]
    fn separate_rejects_wrong_width() {
        let s = small_state(0);
        assert!(matches!(s.separate(&Tensor2::zeros(2, 3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn lac_logits_self_similarity_and_bounds() {
        let mut s = small_state(4);
        s.temperature = 1.0;
        let mu = s.text_features.slice_rows(1, 2).scale(2.5);
        let logits = s.lac_logits(&mu).unwrap();
        assert!((logits.get(0, 1) - 1.0).abs() < 1e-12);
        assert_eq!(argmax(logits.row(0)), 1);

        s.temperature = 0.2;
        let x = random(&mut Rng::new(5), 6, 4);
        let logits = s.lac_logits(&x).unwrap();
        for i in 0..6 {
            for k in 0..3 {
                let v = logits.get(i, k);
                assert!(v.abs() <= 5.0 + 1e-12);
                let oracle = cosine_sim(s.text_features.row(k), x.row(i)).unwrap() / 0.2;
                assert!((v - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lac_logits_orthogonal_text() {
        let mut s = small_state(0);
        s.text_features = Tensor2::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]]).unwrap();
        let logits = s.lac_logits(&s.text_features.slice_rows(0, 1)).unwrap();
        assert_eq!(logits.data(), &[2.0, 0.0, 0.0]);
        assert!(matches!(s.lac_logits(&Tensor2::zeros(1, 4)), Err(Error::DegenerateVector { .. })));
    }

    #[test]
    fn vac_zero_phi2_gives_zero_logits() {
        let mut s = small_state(0);
        s.head.phi2.weight = Tensor2::zeros(3, 3);
        let x = random(&mut Rng::new(6), 4, 4);
        let (_, logits) = s.vac_logits(&x, Mode::Train).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vac_eval_with_unit_stats_is_affine_of_phi1() {
        let s = small_state(0);
        let x = random(&mut Rng::new(7), 3, 4);
        let (fb, logits) = s.vac_logits_eval(&x).unwrap();
        let pre = s.head.phi1.apply(&x).unwrap();
        let c = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in fb.data().iter().zip(pre.data()) {
            assert!((a - b * c).abs() < 1e-14);
        }
        let oracle = s.head.phi2.apply(&fb).unwrap();
        for (a, b) in logits.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn vac_train_mode_composes_kernels() {
        let mut s = small_state(8);
        let x = random(&mut Rng::new(9), 5, 4);
        let mut bn = s.head.bn.clone();
        let pre = s.head.phi1.apply(&x).unwrap();
        let fb_oracle = ops::batchnorm_apply(&pre, &mut bn, Mode::Train).unwrap();
        let logits_oracle = s.head.phi2.apply(&fb_oracle).unwrap();
        let (fb, logits) = s.vac_logits(&x, Mode::Train).unwrap();
        assert_eq!(fb, fb_oracle);
        assert_eq!(logits, logits_oracle);
        assert_eq!(s.head.bn, bn);
        assert!(matches!(s.vac_logits(&x.slice_rows(0, 1), Mode::Train), Err(Error::BatchTooSmall { .. })));
    }

    #[test]
    fn ensemble_examples() {
        let vac = Tensor2::from_rows(&[[1.0, 0.0]]).unwrap();
        let lac = Tensor2::from_rows(&[[0.0, 1.0]]).unwrap();
        let out = ensemble_logits(&vac, &lac, &[0.3]).unwrap();
        assert!((out.get(0, 0) - 0.3).abs() < 1e-15 && (out.get(0, 1) - 0.7).abs() < 1e-15);
        assert_eq!(ensemble_logits(&vac, &lac, &[1.0]).unwrap(), vac);
        assert_eq!(ensemble_logits(&vac, &lac, &[0.0]).unwrap(), lac);
        assert!(matches!(ensemble_logits(&vac, &lac, &[1.5]), Err(Error::Contract { .. })));
    }

    #[test]
    fn weight_generator_midpoint_and_saturation() {
        let mut s = small_state(0);
        s.wgen.l2.weight = Tensor2::zeros(5, 1);
        let x = random(&mut Rng::new(10), 4, 4);
        assert!(s.gen_weight(&x).unwrap().iter().all(|&w| w == 0.5));
        s.wgen.l2.bias = Some(Tensor2::scalar_tensor(40.0));
        assert!(s.gen_weight(&x).unwrap().iter().all(|&w| w > 1.0 - 1e-12 && w <= 1.0));
    }

    #[test]
    fn weight_generator_matches_layer_oracle() {
        let s = small_state(11);
        let x = random(&mut Rng::new(12), 2, 4);
        let h = s.wgen.l1.apply(&x).unwrap();
        let z = s.wgen.l2.apply(&h).unwrap();
        let w = s.gen_weight(&x).unwrap();
        for (wi, zi) in w.iter().zip(z.data()) {
            assert!((wi - 1.0 / (1.0 + (-zi).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn discriminator_examples() {
        let mut s = small_state(13);
        let x = random(&mut Rng::new(14), 3, 4);
        let h = s.disc.l1.apply(&x).unwrap().map(|v| v.max(0.0));
        let z = s.disc.l2.apply(&h).unwrap();
        for (p, zi) in s.discriminate(&x).unwrap().iter().zip(z.data()) {
            assert!((p - 1.0 / (1.0 + (-zi).exp())).abs() < 1e-15);
            assert!(*p > 0.0 && *p < 1.0);
        }
        assert_eq!(s.discriminate(&x).unwrap(), s.discriminate(&x).unwrap());
        s.disc.l2.weight = Tensor2::zeros(5, 1);
        assert!(s.discriminate(&x).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn zero_shot_examples() {
        let s = small_state(15);
        let mu2 = s.text_features.slice_rows(2, 3);
        assert_eq!(s.zero_shot(&mu2).unwrap(), vec![2]);
        let x = random(&mut Rng::new(16), 20, 4);
        let preds = s.zero_shot(&x).unwrap();
        assert_eq!(s.zero_shot(&x.scale(7.5)).unwrap(), preds);
        for (i, &p) in preds.iter().enumerate() {
            let cos: Vec<f64> = (0..3).map(|k| cosine_sim(s.text_features.row(k), x.row(i)).unwrap()).collect();
            let mut best = 0;
            for k in 1..3 {
                if cos[k] > cos[best] {
                    best = k;
                }
            }
            assert_eq!(p, best);
        }
    }

    #[test]
    fn param_order_matches_vars() {
        let s = small_state(0);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, &s);
        let names = s.named_params();
        let order = vars.in_order();
        assert_eq!(names.len(), order.len());
        for ((_, _, t), v) in names.iter().zip(order) {
            assert_eq!(*t, tape.value(v));
        }
    }
}
