//! Synthetic source/target/text features with a controllable modality gap
//! and covariate shift.
//!
//! Class prototypes are orthonormal directions scaled by `proto_scale`.
//! Source rows are `prototype + noise`. Target rows apply a Givens rotation
//! of `rotation` radians in the first two coordinates to the prototype, add
//! `translation` along a fixed random direction, then add noise. Text
//! features are `prototype + gap·u` for one fixed random unit direction `u`.

use super::rng::Rng;
use super::{Domain, FeatureSet};
use crate::error::{Error, Result};
use crate::ndgrad::tensor::{dot, norm};
use crate::ndgrad::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    /// Rows per domain; must be a multiple of `classes`.
    pub per_domain: usize,
    pub proto_scale: f64,
    pub noise: f64,
    pub rotation: f64,
    pub translation: f64,
    pub gap: f64,
    /// Scale every vision row to unit length, as CLIP embeddings usually are.
    pub unit_rows: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 64,
            per_domain: 500,
            proto_scale: 1.0,
            noise: 0.25,
            rotation: 0.5,
            translation: 3.5,
            gap: 1.0,
            unit_rows: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub source: FeatureSet,
    /// Unlabelled target rows.
    pub target: FeatureSet,
    /// `K×d` text features.
    pub text: Tensor2,
    /// Target ground truth, for evaluation only.
    pub target_truth: Vec<usize>,
    /// Vision prototypes, exposed for diagnostics.
    pub prototypes: Tensor2,
}

pub fn gen_synth(spec: &SynthSpec) -> Result<SynthData> {
    let (k, d) = (spec.classes, spec.dim);
    if k == 0 {
        return Err(Error::contract("gen_synth", "at least one class is required"));
    }
    if d < k {
        return Err(Error::InsufficientDimension { dim: d, classes: k });
    }
    if spec.per_domain < k || spec.per_domain % k != 0 {
        return Err(Error::contract(
            "gen_synth",
            format!("rows per domain ({}) must be a positive multiple of the class count ({k})", spec.per_domain),
        ));
    }
    let magnitudes = [spec.proto_scale, spec.noise, spec.rotation.abs(), spec.translation, spec.gap];
    if magnitudes.iter().any(|m| *m < 0.0 || !m.is_finite()) {
        return Err(Error::contract("gen_synth", "magnitudes must be finite and non-negative"));
    }

    let mut rng = Rng::new(spec.seed);
    let prototypes = orthonormal_rows(&mut rng, k, d).scale(spec.proto_scale);
    let gap_dir = unit_gaussian(&mut rng, d);
    let shift_dir = unit_gaussian(&mut rng, d);

    let mut text = prototypes.clone();
    for r in 0..k {
        for (t, u) in text.row_mut(r).iter_mut().zip(&gap_dir) {
            *t += spec.gap * u;
        }
    }

    let (sin, cos) = spec.rotation.sin_cos();
    let mut shifted = prototypes.clone();
    for r in 0..k {
        let row = shifted.row_mut(r);
        if d >= 2 {
            let (a, b) = (row[0], row[1]);
            row[0] = cos * a - sin * b;
            row[1] = sin * a + cos * b;
        }
        for (v, t) in row.iter_mut().zip(&shift_dir) {
            *v += spec.translation * t;
        }
    }

    let n = spec.per_domain;
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut source = noisy_rows(&mut rng, &prototypes, &labels, spec.noise);
    let mut target = noisy_rows(&mut rng, &shifted, &labels, spec.noise);
    if spec.unit_rows {
        source = unit_rows(source);
        target = unit_rows(target);
    }

    Ok(SynthData {
        source: FeatureSet::new(source, Some(labels.clone()), Domain::Source, k)?,
        target: FeatureSet::new(target, None, Domain::Target, k)?,
        text,
        target_truth: labels,
        prototypes,
    })
}

fn unit_rows(mut x: Tensor2) -> Tensor2 {
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    x
}

fn unit_gaussian(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Gram–Schmidt over Gaussian draws.
fn orthonormal_rows(rng: &mut Rng, k: usize, d: usize) -> Tensor2 {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.next_gaussian()).collect();
        for r in &rows {
            let p = dot(&v, r);
            v.iter_mut().zip(r).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > 1e-8 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Tensor2::from_rows(&rows).expect("finite prototypes")
}

fn noisy_rows(rng: &mut Rng, centers: &Tensor2, labels: &[usize], sigma: f64) -> Tensor2 {
    let d = centers.cols();
    let mut data = Vec::with_capacity(labels.len() * d);
    for &y in labels {
        for &c in centers.row(y) {
            data.push(c + sigma * rng.next_gaussian());
        }
    }
    Tensor2::raw(labels.len(), d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::format::encode_features;

    #[test]
    fn rejects_low_dimension() {
        let spec = SynthSpec {
            dim: 5,
            ..SynthSpec::default()
        };
        assert!(matches!(gen_synth(&spec), Err(Error::InsufficientDimension { dim: 5, classes: 10 })));
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SynthSpec {
            per_domain: 50,
            ..SynthSpec::default()
        };
        let a = gen_synth(&spec).unwrap();
        let b = gen_synth(&spec).unwrap();
        assert_eq!(encode_features(&a.source), encode_features(&b.source));
        assert_eq!(encode_features(&a.target), encode_features(&b.target));
        assert_eq!(a.text, b.text);
    }

    #[test]
    fn classes_are_balanced() {
        let data = gen_synth(&SynthSpec::default()).unwrap();
        let mut counts = vec![0; 10];
        for &y in &data.target_truth {
            counts[y] += 1;
        }
        assert!(counts.iter().all(|&c| c == 50));
        assert_eq!(data.source.labels.as_ref().unwrap(), &data.target_truth);
        assert!(data.target.labels.is_none());
        assert_eq!(data.target.domain, Domain::Target);
    }

    #[test]
    fn gap_grows_text_to_vision_distance() {
        let mut last = -1.0;
        for gap in [0.0, 0.5, 1.0, 2.0] {
            let data = gen_synth(&SynthSpec {
                gap,
                per_domain: 10,
                ..SynthSpec::default()
            })
            .unwrap();
            let mean_dist: f64 = (0..10)
                .map(|k| {
                    let diff = data.text.row(k).iter().zip(data.prototypes.row(k)).map(|(a, b)| (a - b).powi(2));
                    diff.sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / 10.0;
            assert!(mean_dist > last, "gap {gap}: {mean_dist} <= {last}");
            last = mean_dist;
        }
    }
}
