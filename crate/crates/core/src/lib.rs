//! Unsupervised domain adaptation over frozen vision-language features.
//!
//! Vision features are split by two linear separators into a
//! language-associated component, classified against the frozen text
//! features and distilled from the zero-shot teacher, and a
//! vision-associated component, classified by a bottleneck head trained on
//! source labels and target pseudo-labels. A per-sample weight generator
//! mixes the two heads and a modality discriminator keeps the components
//! apart.
//!
//! ```no_run
//! use unimos::data::{gen_synth, SynthSpec};
//! use unimos::trainer::{train, TrainConfig};
//!
//! let data = gen_synth(&SynthSpec::default())?;
//! let cfg = TrainConfig { epochs: 20, lr0: 1e-3, ..Default::default() };
//! let out = train(&data.source, &data.target, &data.text, &cfg, Some(&data.target_truth))?;
//! println!("{}", out.report);
//! # Ok::<(), unimos::Error>(())
//! ```

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod ndgrad;
pub mod pseudo;
pub mod trainer;

pub use error::{Error, Result};
