//! Zero-shot classification: each row goes to the class whose text feature
//! is closest in cosine similarity. The teacher scores used for distillation
//! are the same similarities, scaled by `1/T` and centered per row.

use unimos::data::{gen_synth, Rng, SynthSpec};
use unimos::model::{zero_shot, ModelDims, ModelState, DEFAULT_TEMPERATURE};
use unimos::ndgrad::argmax;
use unimos::pseudo::teacher_scores;
use unimos::trainer::accuracy;

fn main() -> unimos::Result<()> {
    for translation in [0.0, 1.5, 3.5, 5.0] {
        let data = gen_synth(&SynthSpec { translation, ..SynthSpec::default() })?;
        let src = zero_shot(&data.source.features, &data.text)?;
        let tgt = zero_shot(&data.target.features, &data.text)?;
        let src_acc = accuracy(&src, data.source.labels.as_deref().unwrap_or_default());
        let tgt_acc = accuracy(&tgt, &data.target_truth);
        println!("shift {translation:>3}: source {src_acc:.3}  target {tgt_acc:.3}");
    }

    let data = gen_synth(&SynthSpec::default())?;
    let dims = ModelDims::new(data.text.cols(), data.text.rows());
    let model = ModelState::init(dims, data.text.clone(), DEFAULT_TEMPERATURE, &mut Rng::new(0))?;
    let scores = teacher_scores(&data.target.features.slice_rows(0, 3), &model)?;
    for (i, row) in scores.iter_rows().enumerate() {
        let shown: Vec<String> = row.iter().map(|v| format!("{v:+6.2}")).collect();
        println!("teacher row {i} -> class {}: [{}]", argmax(row), shown.join(" "));
    }
    Ok(())
}
