//! Finite-difference check of every routed gradient on a small random step.
//!
//! Each parameter group is checked against the objective it actually
//! descends. Terms that must not reach a group are reported with the largest
//! absolute gradient they leave behind, which should be exactly zero.

use unimos::data::Rng;
use unimos::model::{Group, ModelDims, ModelState};
use unimos::ndgrad::{finite_diff_check, softmax_rows, Tensor2};
use unimos::pseudo::{teacher_scores, DebiasState};
use unimos::trainer::{evaluate_step, StepBatch, StepTerms, TrainConfig};

fn gaussian(rng: &mut Rng, r: usize, c: usize) -> Tensor2 {
    Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.next_gaussian()).collect()).expect("finite")
}

fn main() -> unimos::Result<()> {
    let (d, db, k, b) = (8, 4, 3, 4);
    let mut rng = Rng::new(1);
    let cfg = TrainConfig { temperature: 0.1, bottleneck: db, hidden: 6, ..TrainConfig::default() };
    let dims = ModelDims { feature_dim: d, bottleneck: db, classes: k, hidden: 6 };
    let text = gaussian(&mut rng, k, d);
    let model = ModelState::init(dims, text, cfg.temperature, &mut rng)?;
    let xt = gaussian(&mut rng, b, d);
    let batch = StepBatch {
        xs: gaussian(&mut rng, b, d),
        ys: (0..b).map(|i| i % k).collect(),
        teacher_t: teacher_scores(&xt, &model)?,
        xt,
        pseudo_t: (0..b).map(|i| (i + 1) % k).collect(),
    };
    let mut debias = DebiasState::new(k, cfg.momentum, cfg.tau)?;
    debias.p_hat = softmax_rows(&gaussian(&mut rng, 1, k)).into_data();

    let terms = [
        ("lac", StepTerms { lac: true, ..StepTerms::NONE }),
        ("vac", StepTerms { vac: true, ..StepTerms::NONE }),
        ("ortho", StepTerms { ortho: true, ..StepTerms::NONE }),
        ("bce_source", StepTerms { bce_source: true, ..StepTerms::NONE }),
        ("bce_target", StepTerms { bce_target: true, ..StepTerms::NONE }),
    ];
    let named = model.named_params();
    for (term, t) in terms {
        let eval = evaluate_step(&model, &batch, &debias, &cfg, t)?;
        for group in Group::ALL {
            let idx: Vec<usize> = (0..named.len()).filter(|&i| named[i].1 == group).collect();
            let analytic: Vec<Tensor2> = idx.iter().map(|&i| eval.grads[i].clone()).collect();
            let largest = analytic.iter().flat_map(|g| g.data()).fold(0.0f64, |m, v| m.max(v.abs()));
            if largest == 0.0 {
                println!("{term:<10} {:<16} not reached", group.name());
                continue;
            }
            let params: Vec<Tensor2> = idx.iter().map(|&i| named[i].2.clone()).collect();
            let loss = |ps: &[Tensor2]| {
                let mut m = model.clone();
                let mut slots = m.params_mut();
                for (&i, p) in idx.iter().zip(ps) {
                    *slots[i] = p.clone();
                }
                Ok(evaluate_step(&m, &batch, &debias, &cfg, t)?.objective)
            };
            let check = finite_diff_check(loss, &params, &analytic, 1e-5, 1e-4)?;
            println!(
                "{term:<10} {:<16} {} entries, max rel err {:.1e} {}",
                group.name(),
                check.entries,
                check.max_rel_error,
                if check.passed { "ok" } else { "MISMATCH" }
            );
        }
    }
    Ok(())
}
