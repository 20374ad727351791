//! The `UMFS` little-endian container.
//!
//! Version 1 holds a feature matrix:
//!
//! ```text
//! offset  size   field
//! 0       4      magic "UMFS"
//! 4       2      u16 version = 1
//! 6       2      u16 flags (bit0 labels present, bit1 target domain)
//! 8       4      u32 N
//! 12      4      u32 d
//! 16      4      u32 K
//! 20      4·N·d  f32 features, row-major
//! ..      4·N    i32 labels (only when bit0 is set)
//! ```
//!
//! Version 2 holds named `f64` parameter blocks (checkpoints):
//!
//! ```text
//! 0   4  magic "UMFS"
//! 4   2  u16 version = 2
//! 6   2  u16 flags = 0
//! 8   8  u64 config hash
//! 16  4  u32 block count
//! then per block: u16 name length, UTF-8 name, u32 rows, u32 cols,
//!                 8·rows·cols f64 values
//! ```

use std::path::Path;

use super::{Domain, FeatureSet};
use crate::error::{Error, Result};
use crate::ndgrad::Tensor2;

pub const MAGIC: [u8; 4] = *b"UMFS";
pub const FEATURE_VERSION: u16 = 1;
pub const CHECKPOINT_VERSION: u16 = 2;
pub const FLAG_LABELS: u16 = 1;
pub const FLAG_TARGET: u16 = 1 << 1;

/// Serializes a feature set; values are narrowed to `f32`.
pub fn encode_features(set: &FeatureSet) -> Vec<u8> {
    let (n, d) = set.features.shape();
    let mut flags = 0u16;
    if set.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if set.domain == Domain::Target {
        flags |= FLAG_TARGET;
    }
    let mut out = Vec::with_capacity(20 + 4 * n * d + 4 * n);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(set.classes as u32).to_le_bytes());
    for &v in set.features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(labels) = &set.labels {
        for &y in labels {
            out.extend_from_slice(&(y as i32).to_le_bytes());
        }
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(bytes);
    let version = r.header()?;
    if version != FEATURE_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let flags = r.u16()?;
    let n = r.u32()? as usize;
    let d = r.u32()? as usize;
    let k = r.u32()? as usize;
    let has_labels = flags & FLAG_LABELS != 0;
    let needed = 4 * n * d + if has_labels { 4 * n } else { 0 };
    r.require(needed)?;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n * d {
        data.push(r.f32()? as f64);
    }
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let y = r.i32()?;
            if y < 0 || y as usize >= k {
                return Err(Error::LabelOutOfRange {
                    label: y as i64,
                    classes: k,
                });
            }
            labels.push(y as usize);
        }
        Some(labels)
    } else {
        None
    };
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    let features = Tensor2::from_vec(n, d, data)?;
    let domain = if flags & FLAG_TARGET != 0 {
        Domain::Target
    } else {
        Domain::Source
    };
    FeatureSet::new(features, labels, domain, k)
}

pub fn write_features(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_features(set)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes)
}

/// A named parameter tensor inside a version-2 container.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub tensor: Tensor2,
}

pub fn encode_blocks(config_hash: u64, blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&config_hash.to_le_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.tensor.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(b.tensor.cols() as u32).to_le_bytes());
        for v in b.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_blocks(bytes: &[u8]) -> Result<(u64, Vec<Block>)> {
    let mut r = Reader::new(bytes);
    let version = r.header()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let _flags = r.u16()?;
    let hash = r.u64()?;
    let count = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Malformed("block name is not UTF-8".into()))?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        r.require(8 * rows * cols)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(r.f64()?);
        }
        blocks.push(Block {
            name,
            tensor: Tensor2::from_vec(rows, cols, data)?,
        });
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!("{} trailing bytes", r.remaining())));
    }
    Ok((hash, blocks))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn require(&self, n: usize) -> Result<()> {
        if self.remaining() < n {
            return Err(Error::Truncated {
                needed: n,
                found: self.remaining(),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.require(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    /// Checks the magic and returns the version.
    fn header(&mut self) -> Result<u16> {
        let magic: [u8; 4] = self.array()?;
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        self.u16()
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand_file() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"UMFS");
        b.extend_from_slice(&[0x01, 0x00]); // version 1
        b.extend_from_slice(&[0x00, 0x00]); // flags
        b.extend_from_slice(&[0x01, 0x00, 0x00, 0x00]); // N = 1
        b.extend_from_slice(&[0x01, 0x00, 0x00, 0x00]); // d = 1
        b.extend_from_slice(&[0x01, 0x00, 0x00, 0x00]); // K = 1
        b.extend_from_slice(&[0x00, 0x00, 0x80, 0x3F]); // 1.0f32
        b
    }

    #[test]
    fn hand_assembled_file_parses() {
        let set = decode_features(&hand_file()).unwrap();
        assert_eq!(set.features.shape(), (1, 1));
        assert_eq!(set.features.data(), &[1.0]);
        assert_eq!(set.labels, None);
        assert_eq!(set.domain, Domain::Source);
        assert_eq!(encode_features(&set), hand_file());
    }

    #[test]
    fn distinct_errors() {
        let mut bad = hand_file();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_features(&bad), Err(Error::BadMagic(m)) if &m == b"XXXX"));

        let mut v3 = hand_file();
        v3[4] = 3;
        assert!(matches!(decode_features(&v3), Err(Error::UnsupportedVersion(3))));

        let short = &hand_file()[..22];
        assert!(matches!(decode_features(short), Err(Error::Truncated { .. })));
        assert!(matches!(decode_features(b"UM"), Err(Error::Truncated { .. })));

        let mut labelled = hand_file();
        labelled[6] = FLAG_LABELS as u8;
        labelled.extend_from_slice(&5i32.to_le_bytes());
        assert!(matches!(
            decode_features(&labelled),
            Err(Error::LabelOutOfRange { label: 5, classes: 1 })
        ));
    }

    #[test]
    fn blocks_roundtrip() {
        let blocks = vec![
            Block {
                name: "a.weight".into(),
                tensor: Tensor2::from_rows(&[[1.0, -2.5], [0.1, 1e-300]]).unwrap(),
            },
            Block {
                name: "b".into(),
                tensor: Tensor2::zeros(1, 3),
            },
        ];
        let bytes = encode_blocks(0xDEAD_BEEF, &blocks);
        let (hash, back) = decode_blocks(&bytes).unwrap();
        assert_eq!(hash, 0xDEAD_BEEF);
        assert_eq!(back, blocks);
        assert!(matches!(decode_features(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    proptest! {
        #[test]
        fn feature_roundtrip_is_identity_on_f32_payload(
            n in 1usize..6,
            d in 1usize..6,
            k in 1usize..5,
            labelled in any::<bool>(),
            target in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::data::Rng::new(seed);
            let data: Vec<f64> = (0..n * d).map(|_| rng.next_gaussian() as f32 as f64).collect();
            let labels = labelled.then(|| (0..n).map(|_| rng.below(k)).collect());
            let domain = if target { Domain::Target } else { Domain::Source };
            let set = FeatureSet::new(Tensor2::from_vec(n, d, data).unwrap(), labels, domain, k).unwrap();
            let bytes = encode_features(&set);
            let back = decode_features(&bytes).unwrap();
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(encode_features(&back), bytes);
        }
    }
}
