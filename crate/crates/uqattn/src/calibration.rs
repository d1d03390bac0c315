//! Calibration measurement and post-hoc correction: expected calibration
//! error over fixed-width confidence bins, reliability-bin statistics,
//! scalar temperature scaling, and distribution-shift summaries.
//!
//! Binning convention: bin k of K owns the half-open interval
//! ((k-1)/K, k/K], and bin 1 additionally owns 0, so the bins partition
//! [0, 1] exactly. `bin_index` is the only place this convention lives.
//!
//! Temperature is fitted by minimizing mean negative log-likelihood of
//! softmax(mean_logits / T) against the true labels, with a bracketed
//! golden-section search on ln T over [-3, 3]. The fit is safeguarded:
//! if the located optimum is no better than T = 1, T = 1 is returned, so
//! applying a fitted temperature never increases validation NLL.
//!
//! Scaled records derive confidence from softmax(mean_logits / T) at the
//! stored predicted class. Monte Carlo dumps define confidence as the max
//! of the averaged per-pass probabilities instead, so applying T = 1 to
//! such records is an identity only up to the convention gap; it is exact
//! on records whose confidence already follows the logit convention.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcinfer::PredictionDumpRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: u64,
    pub true_label: usize,
    pub predicted_class: usize,
    /// Probability assigned to `predicted_class`, in (0, 1].
    pub confidence: f64,
    pub mean_logits: Vec<f64>,
}

impl PredictionRecord {
    pub fn from_dump(record: &PredictionDumpRecord) -> Self {
        PredictionRecord {
            example_id: record.example_id,
            true_label: record.label,
            predicted_class: record.predicted_class,
            confidence: record.confidence,
            mean_logits: record.mean_logits.clone(),
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted_class == self.true_label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence of the bin's members; 0 for an empty bin.
    pub mean_confidence: f64,
    /// Fraction correct among the bin's members; 0 for an empty bin.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ece: f64,
    pub num_bins: usize,
    pub bins: Vec<BinStat>,
    pub accuracy_overall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

/// Zero-based bin index for a confidence under the (lo, hi] convention.
pub fn bin_index(confidence: f64, num_bins: usize) -> usize {
    debug_assert!(num_bins >= 1);
    debug_assert!((0.0..=1.0).contains(&confidence));
    let k = (confidence * num_bins as f64).ceil() as usize;
    k.saturating_sub(1).min(num_bins - 1)
}

/// ECE = sum over bins of (count/N) * |accuracy - mean confidence|, with
/// empty bins contributing zero.
pub fn compute_ece(records: &[PredictionRecord], num_bins: usize) -> Result<CalibrationReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput("compute_ece"));
    }
    if num_bins == 0 {
        return Err(Error::InvalidConfig("num_bins must be >= 1".into()));
    }
    let mut counts = vec![0usize; num_bins];
    let mut conf_sums = vec![0.0; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut correct_overall = 0usize;
    for r in records {
        if !(r.confidence > 0.0 && r.confidence <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "confidence {} of example {} outside (0, 1]",
                r.confidence, r.example_id
            )));
        }
        let b = bin_index(r.confidence, num_bins);
        counts[b] += 1;
        conf_sums[b] += r.confidence;
        if r.is_correct() {
            correct[b] += 1;
            correct_overall += 1;
        }
    }
    let n = records.len() as f64;
    let mut ece = 0.0;
    let mut bins = Vec::with_capacity(num_bins);
    for b in 0..num_bins {
        let (mean_confidence, accuracy) = if counts[b] > 0 {
            (conf_sums[b] / counts[b] as f64, correct[b] as f64 / counts[b] as f64)
        } else {
            (0.0, 0.0)
        };
        ece += counts[b] as f64 / n * (accuracy - mean_confidence).abs();
        bins.push(BinStat {
            lo: b as f64 / num_bins as f64,
            hi: (b + 1) as f64 / num_bins as f64,
            count: counts[b],
            mean_confidence,
            accuracy,
        });
    }
    Ok(CalibrationReport {
        ece,
        num_bins,
        bins,
        accuracy_overall: correct_overall as f64 / n,
        temperature: None,
    })
}

/// Mean negative log-likelihood of softmax(mean_logits / temperature) at
/// the true labels.
pub fn mean_nll(records: &[PredictionRecord], temperature: f64) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("mean_nll"));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidTemperature(temperature));
    }
    let mut total = 0.0;
    for r in records {
        if r.true_label >= r.mean_logits.len() {
            return Err(Error::InvalidConfig(format!(
                "true label {} outside the {}-class logit vector of example {}",
                r.true_label,
                r.mean_logits.len(),
                r.example_id
            )));
        }
        let scaled: Vec<f64> = r.mean_logits.iter().map(|l| l / temperature).collect();
        let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        total -= scaled[r.true_label] - log_sum;
    }
    Ok(total / records.len() as f64)
}

/// Fits a scalar temperature minimizing validation NLL. Golden-section
/// search on ln T over [-3, 3] to tolerance 1e-6, safeguarded against
/// T = 1 so the returned temperature never has worse NLL than no scaling.
pub fn fit_temperature(validation: &[PredictionRecord]) -> Result<f64> {
    if validation.len() < 2 {
        return Err(Error::EmptyInput("fit_temperature needs at least two records"));
    }
    let first = validation[0].true_label;
    if validation.iter().all(|r| r.true_label == first) {
        return Err(Error::DegenerateLabels(format!(
            "all {} validation records carry label {first}",
            validation.len()
        )));
    }

    let nll_at = |x: f64| mean_nll(validation, x.exp());
    let ratio = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (-3.0f64, 3.0f64);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = nll_at(c)?;
    let mut fd = nll_at(d)?;
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = nll_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = nll_at(d)?;
        }
    }
    let fitted = ((a + b) / 2.0).exp();
    if mean_nll(validation, fitted)? <= mean_nll(validation, 1.0)? {
        Ok(fitted)
    } else {
        Ok(1.0)
    }
}

/// Rescales each record's confidence to softmax(mean_logits / T) at its
/// predicted class. The predicted class and the stored logits are left
/// unchanged; scaling by a positive scalar cannot move the argmax.
pub fn apply_temperature(
    records: &[PredictionRecord],
    temperature: f64,
) -> Result<Vec<PredictionRecord>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidTemperature(temperature));
    }
    records
        .iter()
        .map(|r| {
            if r.predicted_class >= r.mean_logits.len() {
                return Err(Error::InvalidConfig(format!(
                    "predicted class {} outside the {}-class logit vector of example {}",
                    r.predicted_class,
                    r.mean_logits.len(),
                    r.example_id
                )));
            }
            let scaled: Vec<f64> = r.mean_logits.iter().map(|l| l / temperature).collect();
            let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = scaled.iter().map(|z| (z - max).exp()).sum();
            let confidence = (scaled[r.predicted_class] - max).exp() / sum;
            Ok(PredictionRecord {
                confidence,
                ..r.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftMetrics {
    /// ECE under shift minus ECE in distribution.
    pub delta_ece: f64,
    /// Mean of the two ECEs.
    pub robustness: f64,
}

/// Distribution-shift summary from paired in-distribution and shifted
/// calibration reports. Both must use the same bin count.
pub fn shift_metrics(
    id_report: &CalibrationReport,
    ood_report: &CalibrationReport,
) -> Result<ShiftMetrics> {
    if id_report.num_bins != ood_report.num_bins {
        return Err(Error::DimMismatch {
            op: "shift_metrics",
            left: format!("{} bins", id_report.num_bins),
            right: format!("{} bins", ood_report.num_bins),
        });
    }
    Ok(ShiftMetrics {
        delta_ece: ood_report.ece - id_report.ece,
        robustness: (id_report.ece + ood_report.ece) / 2.0,
    })
}

pub fn write_calibration_json(report: &CalibrationReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_calibration_json(path: &Path) -> Result<CalibrationReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Per-bin CSV for reliability-diagram plotting.
pub fn write_bin_csv(report: &CalibrationReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "lo,hi,count,mean_confidence,accuracy")?;
    for b in &report.bins {
        writeln!(w, "{},{},{},{},{}", b.lo, b.hi, b.count, b.mean_confidence, b.accuracy)?;
    }
    w.flush()?;
    Ok(())
}
