//! Train on the default synthetic benchmark and print per-epoch progress.
//!
//! ```text
//! cargo run --release --example synthetic_adaptation [epochs] [lr0] [seed]
//! ```

use std::time::Instant;

use unimos::data::{gen_synth, SynthSpec};
use unimos::pseudo::PseudoMode;
use unimos::trainer::{train, TrainConfig};

fn main() -> unimos::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let cfg = TrainConfig {
        epochs: arg(0).and_then(|s| s.parse().ok()).unwrap_or(20),
        lr0: arg(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3),
        seed: arg(2).and_then(|s| s.parse().ok()).unwrap_or(0),
        ..TrainConfig::default()
    };

    let data = gen_synth(&SynthSpec::default())?;
    let start = Instant::now();
    let out = train(&data.source, &data.target, &data.text, &cfg, Some(&data.target_truth))?;

    println!("config {:016x}", out.report.config_hash);
    println!("zero-shot accuracy {:.3}", out.report.zero_shot_accuracy.unwrap_or(f64::NAN));
    println!("epoch  mode       lr        ensemble  vac    lac    mean w  agreement  ortho");
    for e in &out.report.epochs {
        let mode = match e.mode {
            PseudoMode::Mixed => "mixed",
            PseudoMode::Clustered => "clustered",
        };
        println!(
            "{:>5}  {:<9}  {:.2e}  {:.3}     {:.3}  {:.3}  {:.3}   {:.3}      {:.3}",
            e.epoch,
            mode,
            e.lr,
            e.acc_ensemble.unwrap_or(f64::NAN),
            e.acc_vac.unwrap_or(f64::NAN),
            e.acc_lac.unwrap_or(f64::NAN),
            e.w_mean,
            e.pseudo_agreement,
            e.losses.ortho,
        );
    }
    println!("trained in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
