//! Scalar training objectives.
//!
//! Each loss has a tape builder (used by the trainer) and a value-level
//! wrapper that evaluates the same builder on plain tensors.

use crate::error::{Error, Result};
use crate::ndgrad::ops::softmax_rows;
use crate::ndgrad::{Tape, Tensor2, Var};

pub const BCE_EPS: f64 = 1e-7;

/// Per-term loss values for one step, or their mean over an epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub ortho: f64,
    pub lac_kl: f64,
    pub lac_ce: f64,
    pub ens_ce: f64,
    pub vac_src_ce: f64,
    pub ent: f64,
    pub div: f64,
    pub im: f64,
    pub bce_src: f64,
    pub bce_tgt: f64,
    /// Objective of the text separator.
    pub total_txt: f64,
    /// Objective of the vision separator.
    pub total_vis: f64,
    /// Objective of Φ1, Φ2 and the weight generator.
    pub total_vac: f64,
    /// Objective of the discriminator.
    pub total_disc: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 14] = [
        "ortho",
        "lac_kl",
        "lac_ce",
        "ens_ce",
        "vac_src_ce",
        "ent",
        "div",
        "im",
        "bce_src",
        "bce_tgt",
        "total_txt",
        "total_vis",
        "total_vac",
        "total_disc",
    ];

    pub fn values(&self) -> [f64; 14] {
        [
            self.ortho,
            self.lac_kl,
            self.lac_ce,
            self.ens_ce,
            self.vac_src_ce,
            self.ent,
            self.div,
            self.im,
            self.bce_src,
            self.bce_tgt,
            self.total_txt,
            self.total_vis,
            self.total_vac,
            self.total_disc,
        ]
    }

    pub fn from_values(v: [f64; 14]) -> Self {
        Self {
            ortho: v[0],
            lac_kl: v[1],
            lac_ce: v[2],
            ens_ce: v[3],
            vac_src_ce: v[4],
            ent: v[5],
            div: v[6],
            im: v[7],
            bce_src: v[8],
            bce_tgt: v[9],
            total_txt: v[10],
            total_vis: v[11],
            total_vac: v[12],
            total_disc: v[13],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Element-wise mean; `None` for an empty slice.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        if items.is_empty() {
            return None;
        }
        let mut acc = [0.0; 14];
        for it in items {
            for (a, v) in acc.iter_mut().zip(it.values()) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= items.len() as f64;
        }
        Some(Self::from_values(acc))
    }
}

/// `‖Ls·Vsᵀ‖²_F + ‖Lt·Vtᵀ‖²_F`.
pub fn ortho_term(tape: &mut Tape, lac_s: Var, vac_s: Var, lac_t: Var, vac_t: Var) -> Result<Var> {
    for (a, b) in [(lac_s, vac_s), (lac_t, vac_t)] {
        let (av, bv) = (tape.value(a), tape.value(b));
        if !av.same_shape(bv) {
            return Err(Error::dim("ortho_loss", format!("{:?}", av.shape()), format!("{:?}", bv.shape())));
        }
    }
    let gs = tape.matmul_nt(lac_s, vac_s)?;
    let gt = tape.matmul_nt(lac_t, vac_t)?;
    let s = tape.sum_squares(gs);
    let t = tape.sum_squares(gt);
    tape.add(s, t)
}

/// The two parts of the LAC objective, unweighted.
pub struct LacTerms {
    pub kl: Var,
    pub ce: Var,
}

pub fn lac_terms(tape: &mut Tape, student_t: Var, teacher_t: &Tensor2, student_s: Var, labels_s: &[usize]) -> Result<LacTerms> {
    let kl = tape.kl_to_target(student_t, softmax_rows(teacher_t))?;
    let ce = tape.cross_entropy(student_s, labels_s)?;
    Ok(LacTerms { kl, ce })
}

pub struct InfoMaxTerms {
    pub ent: Var,
    pub div: Var,
    pub im: Var,
}

pub fn info_max_terms(tape: &mut Tape, ens_t: Var) -> Result<InfoMaxTerms> {
    let ent = tape.mean_entropy(ens_t);
    let div = tape.marginal_entropy(ens_t);
    let im = tape.sub(ent, div)?;
    Ok(InfoMaxTerms { ent, div, im })
}

/// `label 1` marks language-associated rows.
pub fn bce_term(tape: &mut Tape, pred: Var, labels: &[f64]) -> Result<Var> {
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::contract("modality_bce", format!("label {y} is not 0 or 1")));
    }
    tape.bce(pred, labels, BCE_EPS)
}

// ---------------------------------------------------------------------------
// Value-level wrappers

pub fn ortho_loss(lac_s: &Tensor2, vac_s: &Tensor2, lac_t: &Tensor2, vac_t: &Tensor2) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = [lac_s, vac_s, lac_t, vac_t].map(|t| tape.constant(t.clone()));
    let out = ortho_term(&mut tape, vars[0], vars[1], vars[2], vars[3])?;
    Ok(tape.scalar(out))
}

/// Mean `KL(softmax(teacher) ‖ softmax(student))` over the target batch plus
/// `α` times source cross-entropy.
pub fn lac_loss(student_t: &Tensor2, teacher_t: &Tensor2, student_s: &Tensor2, labels_s: &[usize], alpha: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let st = tape.constant(student_t.clone());
    let ss = tape.constant(student_s.clone());
    let terms = lac_terms(&mut tape, st, teacher_t, ss, labels_s)?;
    Ok(tape.scalar(terms.kl) + alpha * tape.scalar(terms.ce))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoMax {
    pub ent: f64,
    pub div: f64,
    pub im: f64,
}

pub fn info_max_loss(ens_t: &Tensor2) -> Result<InfoMax> {
    if ens_t.rows() == 0 {
        return Err(Error::contract("info_max_loss", "empty batch"));
    }
    let mut tape = Tape::new();
    let x = tape.constant(ens_t.clone());
    let t = info_max_terms(&mut tape, x)?;
    Ok(InfoMax {
        ent: tape.scalar(t.ent),
        div: tape.scalar(t.div),
        im: tape.scalar(t.im),
    })
}

/// `CE(ens_t, pseudo_t) + β·CE(vac_s, labels_s) + im`.
pub fn vac_loss(ens_t: &Tensor2, pseudo_t: &[usize], vac_s: &Tensor2, labels_s: &[usize], beta: f64, im: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let e = tape.constant(ens_t.clone());
    let v = tape.constant(vac_s.clone());
    let ce_t = tape.cross_entropy(e, pseudo_t)?;
    let ce_s = tape.cross_entropy(v, labels_s)?;
    Ok(tape.scalar(ce_t) + beta * tape.scalar(ce_s) + im)
}

pub fn modality_bce(pred: &[f64], labels: &[f64]) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor2::from_vec(pred.len(), 1, pred.to_vec())?);
    let out = bce_term(&mut tape, p, labels)?;
    Ok(tape.scalar(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rng;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor2 {
        Tensor2::from_rows(rows).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ortho_examples() {
        let e1 = t(&[&[1.0, 0.0]]);
        let e2 = t(&[&[0.0, 3.0]]);
        assert_eq!(ortho_loss(&e1, &e2, &e2, &e1).unwrap(), 0.0);
        assert_eq!(ortho_loss(&e1, &e1, &e1, &e1).unwrap(), 2.0);

        let mut rng = Rng::new(1);
        let mut r = |n| Tensor2::from_vec(n, 3, (0..3 * n).map(|_| rng.next_gaussian()).collect()).unwrap();
        let (a, b, c, d) = (r(2), r(2), r(4), r(4));
        let base = ortho_loss(&a, &b, &c, &d).unwrap();
        let scaled = ortho_loss(&a.scale(2.0), &b.scale(2.0), &c.scale(2.0), &d.scale(2.0)).unwrap();
        assert!(close(scaled, 16.0 * base, 1e-10 * scaled));
        assert!(matches!(ortho_loss(&a, &c, &c, &d), Err(Error::Dimension { .. })));
    }

    #[test]
    fn lac_examples() {
        let teacher = t(&[&[0.0, 3f64.ln()], &[1.0, -1.0]]);
        let src = t(&[&[0.2, 0.1]]);
        let only_ce = lac_loss(&teacher, &teacher, &src, &[0], 1.0).unwrap();
        let ce = -(0.2 - (0.2f64.exp() + 0.1f64.exp()).ln());
        assert!(close(only_ce, ce, 1e-14));

        // hand oracle: teacher [0, ln 3] → p = [1/4, 3/4]; student zeros → q = [1/2, 1/2]
        let teacher = t(&[&[0.0, 3f64.ln()]]);
        let student = t(&[&[0.0, 0.0]]);
        let p = [0.25, 0.75];
        let oracle: f64 = p.iter().map(|pk: &f64| pk * (pk.ln() - 0.5f64.ln())).sum();
        let got = lac_loss(&student, &teacher, &src, &[1], 0.0).unwrap();
        assert!(close(got, oracle, 1e-14));
        assert!(matches!(lac_loss(&student, &teacher, &src, &[2], 1.0), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn info_max_examples() {
        let k = 3.0f64;
        let onehot = t(&[&[60.0, 0.0, 0.0], &[0.0, 60.0, 0.0], &[0.0, 0.0, 60.0]]);
        let r = info_max_loss(&onehot).unwrap();
        assert!(r.ent < 1e-20);
        assert!(close(r.div, k.ln(), 1e-12));
        assert!(close(r.im, -k.ln(), 1e-12));

        let uniform = Tensor2::filled(4, 3, 0.7);
        let r = info_max_loss(&uniform).unwrap();
        assert!(close(r.ent, k.ln(), 1e-14) && close(r.div, k.ln(), 1e-14) && r.im.abs() < 1e-14);

        // mixed 3-sample, 2-class batch against direct entropies
        let z = t(&[&[0.0, 1.0], &[2.0, 0.0], &[0.5, 0.5]]);
        let probs: Vec<[f64; 2]> = z
            .iter_rows()
            .map(|r| {
                let e = [r[0].exp(), r[1].exp()];
                [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])]
            })
            .collect();
        let h = |p: &[f64]| -p.iter().map(|x| x * x.ln()).sum::<f64>();
        let ent = probs.iter().map(|p| h(p)).sum::<f64>() / 3.0;
        let qbar = [0, 1].map(|k| probs.iter().map(|p| p[k]).sum::<f64>() / 3.0);
        let div = h(&qbar);
        let r = info_max_loss(&z).unwrap();
        assert!(close(r.ent, ent, 1e-14) && close(r.div, div, 1e-14) && close(r.im, ent - div, 1e-14));
    }

    #[test]
    fn vac_examples() {
        let ens = t(&[&[800.0, 0.0], &[0.0, 800.0]]);
        let empty = Tensor2::zeros(0, 2);
        assert_eq!(vac_loss(&ens, &[0, 1], &empty, &[], 0.0, 0.0).unwrap(), 0.0);

        let ens = t(&[&[1.0, 0.0], &[0.3, 0.9]]);
        let src = t(&[&[0.5, -0.5]]);
        let ce = |z: &[f64], y: usize| -(z[y] - (z[0].exp() + z[1].exp()).ln());
        let oracle = (ce(ens.row(0), 1) + ce(ens.row(1), 1)) / 2.0 + 0.5 * ce(src.row(0), 0) + 0.25;
        let got = vac_loss(&ens, &[1, 1], &src, &[0], 0.5, 0.25).unwrap();
        assert!(close(got, oracle, 1e-14));
        assert!(vac_loss(&ens, &[1, 2], &src, &[0], 0.5, 0.0).is_err());
    }

    #[test]
    fn bce_examples() {
        assert!(close(modality_bce(&[0.5, 0.5, 0.5], &[1.0, 0.0, 1.0]).unwrap(), 2f64.ln(), 1e-15));
        let exact = modality_bce(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(exact > 0.0 && exact < 2e-7);
        let oracle = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!(close(modality_bce(&[0.9, 0.2], &[1.0, 0.0]).unwrap(), oracle, 1e-15));
        assert!(modality_bce(&[0.5], &[0.5]).is_err());
    }

    #[test]
    fn breakdown_mean() {
        let mut a = LossBreakdown::default();
        a.ortho = 1.0;
        let mut b = LossBreakdown::default();
        b.ortho = 3.0;
        b.im = -2.0;
        let m = LossBreakdown::mean(&[a, b]).unwrap();
        assert_eq!(m.ortho, 2.0);
        assert_eq!(m.im, -1.0);
        assert_eq!(LossBreakdown::from_values(m.values()), m);
        assert!(LossBreakdown::mean(&[]).is_none());
    }

    proptest! {
        #[test]
        fn loss_bounds(seed in any::<u64>(), n in 1usize..6, k in 2usize..5) {
            let mut rng = Rng::new(seed);
            let mut r = || Tensor2::from_vec(n, k, (0..n * k).map(|_| 3.0 * rng.next_gaussian()).collect()).unwrap();
            let (a, b, c) = (r(), r(), r());
            let lnk = (k as f64).ln();
            let im = info_max_loss(&a).unwrap();
            prop_assert!(im.ent >= -1e-12 && im.ent <= lnk + 1e-12);
            prop_assert!(im.div >= -1e-12 && im.div <= lnk + 1e-12);
            prop_assert!(im.im >= -lnk - 1e-12 && im.im <= lnk + 1e-12);
            prop_assert!(ortho_loss(&a, &b, &b, &c).unwrap() >= 0.0);
            let kl = lac_loss(&a, &b, &Tensor2::zeros(0, k), &[], 1.0).unwrap();
            prop_assert!(kl >= -1e-12);
            prop_assert!(lac_loss(&a, &a, &Tensor2::zeros(0, k), &[], 1.0).unwrap().abs() < 1e-12);
        }
    }
}
