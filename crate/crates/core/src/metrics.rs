//! Dice overlap scores and per-cohort summary statistics.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// Dice score of one label for one subject. CSV row layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceRecord {
    pub subject_id: String,
    pub label_id: u8,
    pub label_name: String,
    pub dice: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), 0 for a single value.
    pub std: f64,
    pub n: usize,
}

/// Dice from overlap counts. Two empty masks agree perfectly.
#[inline]
pub fn dice_from_counts(intersection: u64, size_a: u64, size_b: u64) -> f64 {
    if size_a + size_b == 0 {
        1.0
    } else {
        2.0 * intersection as f64 / (size_a + size_b) as f64
    }
}

/// `2|a ∩ b| / (|a| + |b|)` for two binary masks; 1.0 when both are empty.
pub fn dice(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimsMismatch(vec![a.len()], vec![b.len()]));
    }
    let (mut inter, mut na, mut nb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        na += x as u64;
        nb += y as u64;
        inter += (x && y) as u64;
    }
    Ok(dice_from_counts(inter, na, nb))
}

/// Per-label Dice of two label maps of equal length, as `(label, dice)`.
pub fn label_dice(pred: &[u8], truth: &[u8], labels: &[u8]) -> Result<Vec<(u8, f64)>> {
    if pred.len() != truth.len() {
        return Err(Error::DimsMismatch(vec![pred.len()], vec![truth.len()]));
    }
    let mut n_pred = [0u64; 256];
    let mut n_truth = [0u64; 256];
    let mut n_both = [0u64; 256];
    for (&p, &t) in pred.iter().zip(truth) {
        n_pred[p as usize] += 1;
        n_truth[t as usize] += 1;
        if p == t {
            n_both[p as usize] += 1;
        }
    }
    Ok(labels
        .iter()
        .map(|&l| {
            let l_ = l as usize;
            (l, dice_from_counts(n_both[l_], n_pred[l_], n_truth[l_]))
        })
        .collect())
}

/// One Dice record per requested label, comparing `pred` with `truth`.
///
/// Labels missing from the truth's name table still get a record, named
/// `label_<id>`, and a warning is logged.
pub fn multi_label_dice(
    subject_id: &str,
    pred: &LabelVolume,
    truth: &LabelVolume,
    labels: &[u8],
) -> Result<Vec<DiceRecord>> {
    if pred.dims() != truth.dims() {
        return Err(Error::DimsMismatch(pred.dims().to_vec(), truth.dims().to_vec()));
    }
    let scores = label_dice(pred.voxels(), truth.voxels(), labels)?;
    Ok(scores
        .into_iter()
        .map(|(label_id, dice)| {
            let label_name = match truth.label_name(label_id).or_else(|| pred.label_name(label_id)) {
                Some(n) => n.to_string(),
                None => {
                    warn!("{subject_id}: label {label_id} is not in the label table");
                    format!("label_{label_id}")
                }
            };
            DiceRecord {
                subject_id: subject_id.to_string(),
                label_id,
                label_name,
                dice,
            }
        })
        .collect())
}

/// Median, mean and sample standard deviation.
pub fn summarize(scores: &[f64]) -> Result<SummaryStats> {
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    // Sum in sorted order so the result does not depend on input order.
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(SummaryStats { median, mean, std, n })
}

pub fn write_dice_csv(path: impl AsRef<Path>, records: &[DiceRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(["subject_id", "label_id", "label_name", "dice"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_dice_csv(path: impl AsRef<Path>) -> Result<Vec<DiceRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "label_id", "label_name", "dice"] {
        return Err(Error::Config(format!(
            "{}: expected header subject_id,label_id,label_name,dice",
            path.display()
        )));
    }
    let records: Vec<DiceRecord> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = records.iter().find(|r| !(0.0..=1.0).contains(&r.dice)) {
        return Err(Error::Config(format!(
            "{}: dice {} for {} label {} outside [0, 1]",
            path.display(),
            bad.dice,
            bad.subject_id,
            bad.label_id
        )));
    }
    Ok(records)
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Csv(e)
    }
}

/// Group records by `(label_id, label_name)` then subject.
pub fn by_label(records: &[DiceRecord]) -> BTreeMap<(u8, String), BTreeMap<String, f64>> {
    let mut out: BTreeMap<(u8, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in records {
        out.entry((r.label_id, r.label_name.clone()))
            .or_default()
            .insert(r.subject_id.clone(), r.dice);
    }
    out
}
