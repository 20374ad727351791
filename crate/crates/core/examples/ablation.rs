//! Switch components off one at a time on the synthetic benchmark and
//! compare final target accuracies.
//!
//! ```text
//! cargo run --release --example ablation [seeds]
//! ```

use unimos::data::{gen_synth, SynthSpec};
use unimos::trainer::{train, TrainConfig};

fn main() -> unimos::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let data = gen_synth(&SynthSpec::default())?;
    let base = TrainConfig { epochs: 20, lr0: 1e-3, ..TrainConfig::default() };
    let variants: [(&str, TrainConfig); 7] = [
        ("full", base.clone()),
        ("no orthogonality", TrainConfig { enable_ortho: false, ..base.clone() }),
        ("no debiasing", TrainConfig { enable_debias: false, ..base.clone() }),
        ("no info-max", TrainConfig { enable_im: false, ..base.clone() }),
        ("no distillation", TrainConfig { enable_distill: false, ..base.clone() }),
        ("fixed w = 0.5", TrainConfig { learnable_w: false, ..base.clone() }),
        ("no discriminator", TrainConfig { enable_discriminator: false, ..base.clone() }),
    ];

    println!("variant            ensemble  vac    lac    (mean of {seeds} seeds)");
    for (name, cfg) in variants {
        let mut sums = [0.0; 3];
        for seed in 0..seeds {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let out = train(&data.source, &data.target, &data.text, &cfg, Some(&data.target_truth))?;
            let last = out.report.last().expect("epochs > 0");
            for (s, v) in sums.iter_mut().zip([last.acc_ensemble, last.acc_vac, last.acc_lac]) {
                *s += v.unwrap_or(f64::NAN) / seeds as f64;
            }
        }
        println!("{name:<18} {:.3}     {:.3}  {:.3}", sums[0], sums[1], sums[2]);
    }
    Ok(())
}
