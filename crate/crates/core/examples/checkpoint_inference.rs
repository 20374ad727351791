//! Train, save a checkpoint, load it elsewhere and predict. Sweeping λ moves
//! inference from the LAC head alone (0) to the VAC head alone (1).

use unimos::checkpoint::Checkpoint;
use unimos::data::{gen_synth, SynthSpec};
use unimos::eval::evaluate;
use unimos::trainer::{infer, train, TrainConfig};

fn main() -> unimos::Result<()> {
    let data = gen_synth(&SynthSpec::default())?;
    let cfg = TrainConfig { epochs: 20, lr0: 1e-3, ..TrainConfig::default() };
    let out = train(&data.source, &data.target, &data.text, &cfg, None)?;

    let path = std::env::temp_dir().join(format!("unimos-{}.ckpt", std::process::id()));
    out.checkpoint(&cfg).save(&path)?;
    let ckpt = Checkpoint::load(&path)?;
    println!("checkpoint {} (config {:016x})", path.display(), ckpt.config_hash);

    let k = data.text.rows();
    for lambda in [0.0, 0.3, 0.5, 1.0] {
        let pred = infer(&ckpt.model, &data.target.features, &ckpt.debias, lambda)?.predictions;
        let m = evaluate(&pred, &data.target_truth, k)?;
        println!("lambda {lambda:.1}: accuracy {:.3}", m.accuracy);
    }

    let pred = infer(&ckpt.model, &data.target.features, &ckpt.debias, ckpt.lambda)?.predictions;
    print!("{}", evaluate(&pred, &data.target_truth, k)?);
    std::fs::remove_file(&path).ok();
    Ok(())
}
