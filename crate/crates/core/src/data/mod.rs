//! Feature sets, the `UMFS` file container, the deterministic PRNG and the
//! synthetic modality-gap generator.

pub mod format;
pub mod rng;
pub mod synth;

pub use format::{read_features, write_features};
pub use rng::{Rng, SplitMix64};
pub use synth::{gen_synth, SynthData, SynthSpec};

use crate::error::{Error, Result};
use crate::ndgrad::Tensor2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

/// `N×d` feature rows with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: Tensor2,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
    pub classes: usize,
}

impl FeatureSet {
    pub fn new(features: Tensor2, labels: Option<Vec<usize>>, domain: Domain, classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::contract("FeatureSet", "at least one row is required"));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.rows() {
                return Err(Error::dim("FeatureSet labels", features.rows(), labels.len()));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad as i64,
                    classes,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            domain,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Text-feature sets are stored as unlabelled `K×d` feature files.
    pub fn text(features: Tensor2) -> Result<Self> {
        let k = features.rows();
        Self::new(features, None, Domain::Source, k)
    }
}
