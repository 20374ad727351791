//! One full training step on a tiny instance, checked against a from-scratch
//! forward pass written with plain loops. Gradients of the oracle come from
//! central differences of each parameter group's own objective.

use unimos::data::{Domain, FeatureSet, Rng};
use unimos::model::{Group, ModelState};
use unimos::ndgrad::Tensor2;
use unimos::pseudo::teacher_scores;
use unimos::trainer::{evaluate_step, StepBatch, StepTerms, TrainConfig, Trainer};

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor2) -> Mat {
    t.iter_rows().map(<[f64]>::to_vec).collect()
}

/// `x·W + b` with `W` stored in×out.
fn affine(x: &Mat, w: &Mat, b: Option<&[f64]>) -> Mat {
    x.iter()
        .map(|row| {
            (0..w[0].len())
                .map(|j| row.iter().enumerate().map(|(i, v)| v * w[i][j]).sum::<f64>() + b.map_or(0.0, |b| b[j]))
                .collect()
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cos_logits(x: &Mat, text: &Mat, t: f64) -> Mat {
    x.iter()
        .map(|r| text.iter().map(|m| r.iter().zip(m).map(|(a, b)| a * b).sum::<f64>() / (norm(r) * norm(m)) / t).collect())
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn ce(z: &Mat, y: &[usize]) -> f64 {
    z.iter().zip(y).map(|(r, &c)| -softmax(r)[c].ln()).sum::<f64>() / z.len() as f64
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|v| v * v.ln()).sum::<f64>()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn bce(p: &[f64], y: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .map(|(p, y)| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / p.len() as f64
}

fn disc(x: &Mat, m: &ModelState) -> Vec<f64> {
    let h = affine(x, &mat(&m.disc.l1.weight), m.disc.l1.bias.as_ref().map(|b| b.data()));
    let h: Mat = h.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
    affine(&h, &mat(&m.disc.l2.weight), m.disc.l2.bias.as_ref().map(|b| b.data()))
        .iter()
        .map(|r| sigmoid(r[0]))
        .collect()
}

fn frob_prod_sq(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for ra in a {
        for rb in b {
            let d: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            s += d * d;
        }
    }
    s
}

#[derive(Debug, Default)]
struct Terms {
    kl: f64,
    lac_ce: f64,
    ens_ce: f64,
    src_ce: f64,
    im: f64,
    ortho: f64,
    bce_src: f64,
    bce_tgt: f64,
    bn_mean: Vec<f64>,
    bn_var: Vec<f64>,
    lac_probs_t: Mat,
}

fn forward(m: &ModelState, b: &StepBatch, p_hat: &[f64], cfg: &TrainConfig) -> Terms {
    let sep = |x: &Tensor2, l: &unimos::model::Linear| affine(&mat(x), &mat(&l.weight), l.bias.as_ref().map(|b| b.data()));
    let (lac_s, vac_s) = (sep(&b.xs, &m.g_txt), sep(&b.xs, &m.g_vis));
    let (lac_t, vac_t) = (sep(&b.xt, &m.g_txt), sep(&b.xt, &m.g_vis));
    let text = mat(&m.text_features);
    let t = m.temperature;

    let zl_s = cos_logits(&lac_s, &text, t);
    let zl_t = cos_logits(&lac_t, &text, t);
    let teacher: Mat = mat(&b.teacher_t).iter().map(|r| softmax(r)).collect();
    let kl = zl_t
        .iter()
        .zip(&teacher)
        .map(|(z, q)| {
            let s = softmax(z);
            q.iter().zip(&s).map(|(q, s)| q * (q.ln() - s.ln())).sum::<f64>()
        })
        .sum::<f64>()
        / zl_t.len() as f64;

    // head over source rows then target rows
    let rows: Mat = vac_s.iter().chain(&vac_t).cloned().collect();
    let h = affine(&rows, &mat(&m.head.phi1.weight), None);
    let n = h.len() as f64;
    let db = h[0].len();
    let mean: Vec<f64> = (0..db).map(|j| h.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let var: Vec<f64> = (0..db).map(|j| h.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).collect();
    let (scale, shift) = (m.head.bn.scale.data(), m.head.bn.shift.data());
    let normed: Mat = h
        .iter()
        .map(|r| (0..db).map(|j| (r[j] - mean[j]) / (var[j] + 1e-5).sqrt() * scale[j] + shift[j]).collect())
        .collect();
    let zv = affine(&normed, &mat(&m.head.phi2.weight), m.head.phi2.bias.as_ref().map(|b| b.data()));
    let bs = b.xs.rows();
    let (zv_s, zv_t) = (zv[..bs].to_vec(), zv[bs..].to_vec());

    let lac_fixed: Mat = zl_t.iter().map(|r| r.iter().zip(p_hat).map(|(z, p)| z - cfg.tau * p.ln()).collect()).collect();
    let wh = affine(&vac_t, &mat(&m.wgen.l1.weight), m.wgen.l1.bias.as_ref().map(|b| b.data()));
    let w: Vec<f64> = affine(&wh, &mat(&m.wgen.l2.weight), m.wgen.l2.bias.as_ref().map(|b| b.data()))
        .iter()
        .map(|r| sigmoid(r[0]))
        .collect();
    let ens: Mat = zv_t
        .iter()
        .zip(&lac_fixed)
        .zip(&w)
        .map(|((v, l), w)| v.iter().zip(l).map(|(v, l)| w * v + (1.0 - w) * l).collect())
        .collect();
    let probs: Mat = ens.iter().map(|r| softmax(r)).collect();
    let k = probs[0].len();
    let ent = probs.iter().map(|p| entropy(p)).sum::<f64>() / probs.len() as f64;
    let marginal: Vec<f64> = (0..k).map(|c| probs.iter().map(|p| p[c]).sum::<f64>() / probs.len() as f64).collect();

    let lang = |n: usize| -> Vec<f64> { (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect() };
    let both = |a: &Mat, v: &Mat| -> Mat { a.iter().chain(v).cloned().collect() };

    Terms {
        kl,
        lac_ce: ce(&zl_s, &b.ys),
        ens_ce: ce(&ens, &b.pseudo_t),
        src_ce: ce(&zv_s, &b.ys),
        im: ent - entropy(&marginal),
        ortho: frob_prod_sq(&lac_s, &vac_s) + frob_prod_sq(&lac_t, &vac_t),
        bce_src: bce(&disc(&both(&lac_s, &vac_s), m), &lang(bs)),
        bce_tgt: bce(&disc(&both(&lac_t, &vac_t), m), &lang(lac_t.len())),
        bn_mean: mean,
        bn_var: var,
        lac_probs_t: zl_t.iter().map(|r| softmax(r)).collect(),
    }
}

/// The objective each group descends.
fn group_objective(g: Group, t: &Terms, cfg: &TrainConfig) -> f64 {
    let vac = t.ens_ce + cfg.beta * t.src_ce + t.im;
    match g {
        Group::TextSeparator => t.kl + cfg.alpha * t.lac_ce + cfg.gamma * (t.ortho + t.bce_tgt),
        Group::VisionSeparator => vac + cfg.gamma * (t.ortho + t.bce_tgt),
        Group::Phi1 | Group::Phi2 | Group::WeightGen => vac,
        Group::Discriminator => cfg.gamma * t.bce_src,
    }
}

struct Setup {
    trainer: Trainer,
    batch: StepBatch,
}

fn setup() -> Setup {
    let (b, d, k) = (2, 4, 2);
    let mut rng = Rng::new(0);
    let mut g = |r: usize, c: usize| Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.next_gaussian()).collect()).unwrap();
    let xs = g(b, d);
    let xt = g(b, d);
    let text = g(k, d);
    let source = FeatureSet::new(xs.clone(), Some(vec![0, 1]), Domain::Source, k).unwrap();
    let target = FeatureSet::new(xt.clone(), None, Domain::Target, k).unwrap();
    let cfg = TrainConfig {
        batch_size: b,
        bottleneck: 3,
        hidden: 3,
        temperature: 0.1,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(&source, &target, &text, cfg).unwrap();
    trainer.debias.p_hat = vec![0.3, 0.7];
    let teacher_t = teacher_scores(&xt, &trainer.model).unwrap();
    let batch = StepBatch {
        xs,
        ys: vec![0, 1],
        xt,
        teacher_t,
        pseudo_t: vec![1, 1],
    };
    Setup { trainer, batch }
}

#[test]
fn loss_values_match_plain_forward() {
    let s = setup();
    let cfg = &s.trainer.cfg;
    let eval = evaluate_step(&s.trainer.model, &s.batch, &s.trainer.debias, cfg, StepTerms::ALL).unwrap();
    let o = forward(&s.trainer.model, &s.batch, &s.trainer.debias.p_hat, cfg);
    let bd = &eval.breakdown;
    for (name, got, want) in [
        ("kl", bd.lac_kl, o.kl),
        ("lac_ce", bd.lac_ce, o.lac_ce),
        ("ens_ce", bd.ens_ce, o.ens_ce),
        ("src_ce", bd.vac_src_ce, o.src_ce),
        ("im", bd.im, o.im),
        ("ortho", bd.ortho, o.ortho),
        ("bce_src", bd.bce_src, o.bce_src),
        ("bce_tgt", bd.bce_tgt, o.bce_tgt),
    ] {
        assert!((got - want).abs() <= 1e-10 * (1.0 + want.abs()), "{name}: {got} vs {want}");
    }
}

#[test]
fn one_step_matches_oracle_update() {
    let s = setup();
    let cfg = s.trainer.cfg.clone();
    let before = s.trainer.model.clone();
    let p_hat = s.trainer.debias.p_hat.clone();
    let lr = 0.05;

    // oracle gradient of each group's own objective
    let named = before.named_params();
    let h = 1e-6;
    let mut expected: Vec<Tensor2> = named.iter().map(|(_, _, t)| (*t).clone()).collect();
    for (pi, (name, group, t)) in named.iter().enumerate() {
        for ei in 0..t.len() {
            let eval_at = |delta: f64| {
                let mut m = before.clone();
                m.params_mut()[pi].data_mut()[ei] += delta;
                group_objective(*group, &forward(&m, &s.batch, &p_hat, &cfg), &cfg)
            };
            let grad = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            let v = t.data()[ei] - lr * grad;
            expected[pi].data_mut()[ei] = v;
            assert!(grad.is_finite(), "{name}[{ei}]");
        }
    }

    let mut trainer = s.trainer.clone();
    trainer.step(&s.batch, lr, StepTerms::ALL).unwrap();
    for ((name, _, got), want) in trainer.model.named_params().iter().zip(&expected) {
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() <= 1e-7, "{name}: {g} vs {w}");
        }
    }

    // normalization statistics and prior follow their update rules
    let o = forward(&before, &s.batch, &p_hat, &cfg);
    let n = 4.0;
    for j in 0..3 {
        let mean = 0.9 * before.head.bn.running_mean.data()[j] + 0.1 * o.bn_mean[j];
        let var = 0.9 * before.head.bn.running_var.data()[j] + 0.1 * o.bn_var[j] * n / (n - 1.0);
        assert!((trainer.model.head.bn.running_mean.data()[j] - mean).abs() < 1e-12);
        assert!((trainer.model.head.bn.running_var.data()[j] - var).abs() < 1e-12);
    }
    for c in 0..2 {
        let mean_p = o.lac_probs_t.iter().map(|r| r[c]).sum::<f64>() / 2.0;
        let want = cfg.momentum * p_hat[c] + (1.0 - cfg.momentum) * mean_p;
        assert!((trainer.debias.p_hat[c] - want).abs() < 1e-12);
    }
}
