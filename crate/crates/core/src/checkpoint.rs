//! Trained-model files: every parameter tensor, normalization statistics,
//! the frozen text features and the prior estimate, stored as named `f64`
//! blocks in a version-2 `UMFS` container.

use std::collections::HashMap;
use std::path::Path;

use crate::data::format::{decode_blocks, encode_blocks, Block};
use crate::data::Rng;
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelState};
use crate::ndgrad::Tensor2;
use crate::pseudo::DebiasState;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelState,
    pub debias: DebiasState,
    /// Inference mixup weight.
    pub lambda: f64,
    pub config_hash: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let d = m.dims;
        let meta = [
            d.feature_dim as f64,
            d.bottleneck as f64,
            d.classes as f64,
            d.hidden as f64,
            m.temperature,
            self.debias.momentum,
            self.debias.tau,
            self.lambda,
        ];
        let mut blocks = vec![
            block("meta", Tensor2::row_vector(&meta).expect("finite meta")),
            block("text", m.text_features.clone()),
        ];
        for (name, _, t) in m.named_params() {
            blocks.push(block(name, t.clone()));
        }
        blocks.push(block("bn.running_mean", m.head.bn.running_mean.clone()));
        blocks.push(block("bn.running_var", m.head.bn.running_var.clone()));
        blocks.push(block("debias.p_hat", Tensor2::row_vector(&self.debias.p_hat).expect("finite prior")));
        encode_blocks(self.config_hash, &blocks)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (config_hash, blocks) = decode_blocks(bytes)?;
        let mut map: HashMap<String, Tensor2> = blocks.into_iter().map(|b| (b.name, b.tensor)).collect();
        let mut take = |name: &str| map.remove(name).ok_or_else(|| Error::Malformed(format!("checkpoint is missing block `{name}`")));

        let meta = take("meta")?;
        if meta.shape() != (1, 8) {
            return Err(Error::Malformed("checkpoint meta block must be 1x8".into()));
        }
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Malformed(format!("invalid layer size {v}")))
            }
        };
        let md = meta.data();
        let dims = ModelDims {
            feature_dim: count(md[0])?,
            bottleneck: count(md[1])?,
            classes: count(md[2])?,
            hidden: count(md[3])?,
        };
        let text = take("text")?;
        let mut model = ModelState::init(dims, text, md[4], &mut Rng::new(0))?;
        let names: Vec<&'static str> = model.named_params().iter().map(|(n, _, _)| *n).collect();
        for (name, slot) in names.into_iter().zip(model.params_mut()) {
            let t = take(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::dim("checkpoint block", format!("{:?}", slot.shape()), format!("{name} {:?}", t.shape())));
            }
            *slot = t;
        }
        for (name, slot) in [
            ("bn.running_mean", &mut model.head.bn.running_mean),
            ("bn.running_var", &mut model.head.bn.running_var),
        ] {
            let t = take(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::dim("checkpoint block", format!("{:?}", slot.shape()), format!("{name} {:?}", t.shape())));
            }
            *slot = t;
        }
        let p_hat = take("debias.p_hat")?;
        if p_hat.len() != dims.classes {
            return Err(Error::dim("checkpoint prior", dims.classes, p_hat.len()));
        }
        let mut debias = DebiasState::new(dims.classes, md[5], md[6])?;
        debias.p_hat = p_hat.into_data();
        if let Some(extra) = map.keys().next() {
            return Err(Error::Malformed(format!("unexpected checkpoint block `{extra}`")));
        }
        Ok(Self {
            model,
            debias,
            lambda: md[7],
            config_hash,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn block(name: &str, tensor: Tensor2) -> Block {
    Block {
        name: name.to_string(),
        tensor,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut rng = Rng::new(3);
        let dims = ModelDims {
            feature_dim: 4,
            bottleneck: 3,
            classes: 2,
            hidden: 5,
        };
        let text = Tensor2::from_vec(2, 4, (0..8).map(|_| rng.next_gaussian()).collect()).unwrap();
        let mut model = ModelState::init(dims, text, 0.01, &mut rng).unwrap();
        model.head.bn.running_mean = Tensor2::row_vector(&[0.1, -0.2, 0.3]).unwrap();
        let mut debias = DebiasState::new(2, 0.99, 0.5).unwrap();
        debias.p_hat = vec![0.3, 0.7];
        Checkpoint {
            model,
            debias,
            lambda: 0.3,
            config_hash: 42,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn feature_files_are_rejected() {
        let set = crate::data::FeatureSet::text(Tensor2::identity(2)).unwrap();
        let bytes = crate::data::format::encode_features(&set);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::UnsupportedVersion(1))));
    }

    #[test]
    fn missing_block_is_malformed() {
        let c = sample();
        let (hash, mut blocks) = decode_blocks(&c.to_bytes()).unwrap();
        blocks.retain(|b| b.name != "phi2.bias");
        let bytes = encode_blocks(hash, &blocks);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Malformed(_))));
    }
}
