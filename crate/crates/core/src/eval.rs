//! Pixel-wise precision, recall and Dice, with summaries and report files.
//!
//! Conventions: an empty prediction against an empty ground truth scores 1 on
//! every metric; otherwise a ratio with `tp = 0` is 0. Standard deviations are
//! population (divide by `n`). Predictions are binarized at 0.5.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::BinaryMask;

pub const EVAL_THRESHOLD: f64 = 0.5;
/// Cumulative histogram thresholds `t = i / HIST_STEPS`, `i = 0..=HIST_STEPS`.
pub const HIST_STEPS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let both_empty = tp + fp + fn_ == 0;
        let (precision, recall, dice) = if both_empty {
            (1.0, 1.0, 1.0)
        } else {
            (
                if tp == 0 { 0.0 } else { ratio(tp, tp + fp) },
                if tp == 0 { 0.0 } else { ratio(tp, tp + fn_) },
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
            )
        };
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            dice,
        }
    }
}

pub fn prf_dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<Metrics> {
    pred.ensure_same_dims(gt)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub dice: MeanStd,
    /// Fraction of cases with Dice at or above `i / 100`, for `i = 0..=100`.
    #[serde(skip)]
    pub dice_histogram: Vec<f64>,
}

pub fn summarize(cases: &[Metrics]) -> Result<Summary> {
    if cases.is_empty() {
        return Err(Error::Empty("no cases to summarize".into()));
    }
    let col = |f: fn(&Metrics) -> f64| cases.iter().map(f).collect::<Vec<_>>();
    let dice = col(|m| m.dice);
    let n = cases.len();
    let dice_histogram = (0..=HIST_STEPS)
        .map(|i| {
            let t = i as f64 / HIST_STEPS as f64;
            dice.iter().filter(|&&d| d >= t).count() as f64 / n as f64
        })
        .collect();
    Ok(Summary {
        n,
        precision: MeanStd::of(&col(|m| m.precision)),
        recall: MeanStd::of(&col(|m| m.recall)),
        dice: MeanStd::of(&dice),
        dice_histogram,
    })
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    id: &'a str,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: f64,
    recall: f64,
    dice: f64,
}

/// `id,tp,fp,fn,precision,recall,dice`.
pub fn write_metrics_csv(path: impl AsRef<Path>, cases: &[(String, Metrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (id, m) in cases {
        w.serialize(MetricsRow {
            id,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            precision: m.precision,
            recall: m.recall,
            dice: m.dice,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// `threshold,fraction_at_or_above`.
pub fn write_histogram_csv(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "fraction_at_or_above"])?;
    for (i, f) in summary.dice_histogram.iter().enumerate() {
        w.write_record([format!("{:.2}", i as f64 / HIST_STEPS as f64), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `{n, precision:{mean,std}, recall:{mean,std}, dice:{mean,std}, std}`.
pub fn write_summary_json(path: impl AsRef<Path>, summary: &Summary) -> Result<()> {
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(flatten)]
        summary: &'a Summary,
        std: &'static str,
    }
    let text = serde_json::to_string_pretty(&Out {
        summary,
        std: "population",
    })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
