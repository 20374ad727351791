//! How target pseudo-labels are formed. Even epochs mix the VAC and
//! debiased LAC predictions; odd epochs assign each row to its nearest
//! soft centroid in the bottleneck space.

use unimos::data::{gen_synth, SynthSpec};
use unimos::pseudo::PseudoMode;
use unimos::trainer::{accuracy, TrainConfig, Trainer};

fn main() -> unimos::Result<()> {
    let data = gen_synth(&SynthSpec::default())?;
    let cfg = TrainConfig { epochs: 6, lr0: 1e-3, ..TrainConfig::default() };
    let mut trainer = Trainer::new(&data.source, &data.target, &data.text, cfg)?;

    println!("epoch  mode       pseudo-label accuracy  prior entropy");
    for epoch in 0..6 {
        let mode = PseudoMode::for_epoch(epoch);
        let plan = trainer.plan_epoch(&data.target, mode)?;
        let acc = accuracy(&plan.pseudo_t, &data.target_truth);
        let entropy: f64 = -trainer.debias.p_hat.iter().map(|p| p * p.ln()).sum::<f64>();
        let name = if mode == PseudoMode::Mixed { "mixed" } else { "clustered" };
        println!("{epoch:>5}  {name:<9}  {acc:.3}                  {entropy:.3}");
        if let Some(c) = &plan.centroids {
            let empty = c.carried.iter().filter(|&&x| x).count();
            println!("       {} centroids, {empty} carried over", c.phi.rows());
        }
        trainer.train_epoch(&data.source, &data.target, None)?;
    }
    Ok(())
}
