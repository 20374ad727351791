//! Feature files: write a synthetic benchmark to disk and read it back.
//! Values are stored as `f32`, so the round trip is exact once the in-memory
//! rows are narrowed the same way. These are the files the `unimos` binary
//! consumes.

use unimos::data::format::{encode_features, read_features, write_features};
use unimos::data::{gen_synth, FeatureSet, SynthSpec};

fn main() -> unimos::Result<()> {
    let dir = std::env::temp_dir().join(format!("unimos-features-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| unimos::Error::io(&dir, e))?;

    let data = gen_synth(&SynthSpec { per_domain: 100, ..SynthSpec::default() })?;
    let text = FeatureSet::text(data.text.clone())?;
    for (name, set) in [("source", &data.source), ("target", &data.target), ("text", &text)] {
        let path = dir.join(format!("{name}.umfs"));
        write_features(set, &path)?;
        let back = read_features(&path)?;
        let narrowed = FeatureSet {
            features: set.features.map(|v| v as f32 as f64),
            ..set.clone()
        };
        let bytes = encode_features(set).len();
        println!(
            "{name:<6} {} rows x {} dims, {} classes, labels {:<5} {bytes} bytes, exact round trip {}",
            back.len(),
            back.dim(),
            back.classes,
            back.labels.is_some(),
            back == narrowed
        );
    }
    println!("files in {}", dir.display());
    Ok(())
}
