//! Accuracy metrics and their `key=value` text form.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Counts for one prediction/truth pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub classes: usize,
    pub samples: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the truth.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[t][p]` counts rows of true class `t` predicted as `p`.
    pub confusion: Vec<Vec<u64>>,
    /// Accuracies of the single heads and the ensemble, when known.
    pub lac_accuracy: Option<f64>,
    pub vac_accuracy: Option<f64>,
    pub ensemble_accuracy: Option<f64>,
}

pub fn evaluate(pred: &[usize], truth: &[usize], classes: usize) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::dim("evaluate", truth.len(), pred.len()));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for y in [p, t] {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y as i64, classes });
            }
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..classes).map(|k| confusion[k][k]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[k] as f64 / n as f64)
        })
        .collect();
    Ok(Metrics {
        classes,
        samples: pred.len(),
        accuracy: if pred.is_empty() { 0.0 } else { correct as f64 / pred.len() as f64 },
        per_class,
        confusion,
        lac_accuracy: None,
        vac_accuracy: None,
        ensemble_accuracy: None,
    })
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "classes={}", self.classes)?;
        writeln!(f, "samples={}", self.samples)?;
        writeln!(f, "accuracy={}", self.accuracy)?;
        for (k, a) in self.per_class.iter().enumerate() {
            match a {
                Some(a) => writeln!(f, "class.{k}.accuracy={a}")?,
                None => writeln!(f, "class.{k}.accuracy=absent")?,
            }
        }
        for (k, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            writeln!(f, "confusion.{k}={}", cells.join(","))?;
        }
        for (key, v) in [
            ("lac_accuracy", self.lac_accuracy),
            ("vac_accuracy", self.vac_accuracy),
            ("ensemble_accuracy", self.ensemble_accuracy),
        ] {
            if let Some(v) = v {
                writeln!(f, "{key}={v}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Metrics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |line: &str| Error::Malformed(format!("metrics line `{line}`"));
        let num = |line: &str, v: &str| v.parse::<f64>().map_err(|_| bad(line));
        let mut classes = None;
        let mut samples = None;
        let mut accuracy = None;
        let mut per_class: Vec<(usize, Option<f64>)> = Vec::new();
        let mut confusion: Vec<(usize, Vec<u64>)> = Vec::new();
        let (mut lac, mut vac, mut ens) = (None, None, None);
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once('=').ok_or_else(|| bad(line))?;
            match key {
                "classes" => classes = Some(value.parse::<usize>().map_err(|_| bad(line))?),
                "samples" => samples = Some(value.parse::<usize>().map_err(|_| bad(line))?),
                "accuracy" => accuracy = Some(num(line, value)?),
                "lac_accuracy" => lac = Some(num(line, value)?),
                "vac_accuracy" => vac = Some(num(line, value)?),
                "ensemble_accuracy" => ens = Some(num(line, value)?),
                _ => {
                    if let Some(rest) = key.strip_prefix("class.") {
                        let k = rest
                            .strip_suffix(".accuracy")
                            .and_then(|k| k.parse().ok())
                            .ok_or_else(|| bad(line))?;
                        let v = if value == "absent" { None } else { Some(num(line, value)?) };
                        per_class.push((k, v));
                    } else if let Some(rest) = key.strip_prefix("confusion.") {
                        let k = rest.parse().map_err(|_| bad(line))?;
                        let row = value
                            .split(',')
                            .map(|c| c.parse::<u64>().map_err(|_| bad(line)))
                            .collect::<Result<Vec<_>>>()?;
                        confusion.push((k, row));
                    } else {
                        return Err(bad(line));
                    }
                }
            }
        }
        let classes = classes.ok_or_else(|| Error::Malformed("metrics without `classes`".into()))?;
        per_class.sort_by_key(|(k, _)| *k);
        confusion.sort_by_key(|(k, _)| *k);
        if per_class.iter().map(|(k, _)| *k).ne(0..classes) || confusion.iter().map(|(k, _)| *k).ne(0..classes) {
            return Err(Error::Malformed("metrics rows do not cover every class".into()));
        }
        if confusion.iter().any(|(_, r)| r.len() != classes) {
            return Err(Error::Malformed("confusion row has the wrong width".into()));
        }
        Ok(Metrics {
            classes,
            samples: samples.ok_or_else(|| Error::Malformed("metrics without `samples`".into()))?,
            accuracy: accuracy.ok_or_else(|| Error::Malformed("metrics without `accuracy`".into()))?,
            per_class: per_class.into_iter().map(|(_, v)| v).collect(),
            confusion: confusion.into_iter().map(|(_, r)| r).collect(),
            lac_accuracy: lac,
            vac_accuracy: vac,
            ensemble_accuracy: ens,
        })
    }
}

/// One integer per line.
pub fn format_predictions(pred: &[usize]) -> String {
    let mut s = String::with_capacity(pred.len() * 3);
    for p in pred {
        s.push_str(&p.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_predictions(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<usize>().map_err(|_| Error::Malformed(format!("prediction line `{l}`"))))
        .collect()
}
