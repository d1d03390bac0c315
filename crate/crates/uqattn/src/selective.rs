//! Selective prediction: confidence-thresholded abstention, coverage at
//! fixed thresholds, risk-coverage curves, and AURC.
//!
//! AURC convention: records are ranked by confidence descending (ties
//! broken by ascending example id so the ranking is total), acceptance is
//! swept over prefixes k = 1..N, and AURC is the plain mean of the N
//! prefix risks. The integration rule is fixed here and used identically
//! for every method, so cross-method comparisons do not depend on it.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::PredictionRecord;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.9, 0.8, 0.7];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStat {
    pub tau: f64,
    /// Fraction of records with confidence >= tau.
    pub coverage: f64,
    /// Accuracy among accepted records; None when nothing is accepted.
    pub selective_accuracy: Option<f64>,
}

/// Coverage and selective accuracy at a single confidence threshold.
pub fn coverage_at_threshold(records: &[PredictionRecord], tau: f64) -> Result<CoverageStat> {
    if records.is_empty() {
        return Err(Error::EmptyInput("coverage_at_threshold"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidThreshold(tau));
    }
    let accepted: Vec<&PredictionRecord> =
        records.iter().filter(|r| r.confidence >= tau).collect();
    let coverage = accepted.len() as f64 / records.len() as f64;
    let selective_accuracy = if accepted.is_empty() {
        None
    } else {
        let correct = accepted.iter().filter(|r| r.is_correct()).count();
        Some(correct as f64 / accepted.len() as f64)
    };
    Ok(CoverageStat {
        tau,
        coverage,
        selective_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoveragePoint {
    pub coverage: f64,
    /// Error rate among the accepted prefix.
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCoverageCurve {
    pub points: Vec<RiskCoveragePoint>,
    pub aurc: f64,
    pub coverage_at: Vec<CoverageStat>,
}

/// Confidence-descending ranking with ties broken by example id.
fn ranked_indices(records: &[PredictionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .confidence
            .partial_cmp(&records[a].confidence)
            .expect("confidences are finite")
            .then(records[a].example_id.cmp(&records[b].example_id))
    });
    order
}

/// Full risk-coverage sweep plus coverage at the given thresholds.
pub fn risk_coverage(
    records: &[PredictionRecord],
    thresholds: &[f64],
) -> Result<RiskCoverageCurve> {
    if records.is_empty() {
        return Err(Error::EmptyInput("risk_coverage"));
    }
    let order = ranked_indices(records);
    let n = records.len();
    let mut points = Vec::with_capacity(n);
    let mut errors = 0usize;
    let mut risk_sum = 0.0;
    for (k, &idx) in order.iter().enumerate() {
        if !records[idx].is_correct() {
            errors += 1;
        }
        let risk = errors as f64 / (k + 1) as f64;
        risk_sum += risk;
        points.push(RiskCoveragePoint {
            coverage: (k + 1) as f64 / n as f64,
            risk,
        });
    }
    let coverage_at = thresholds
        .iter()
        .map(|&tau| coverage_at_threshold(records, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskCoverageCurve {
        points,
        aurc: risk_sum / n as f64,
        coverage_at,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThresholdPolicy {
    /// The fixed evaluation set {0.9, 0.8, 0.7}.
    Fixed,
    /// One threshold achieving at least the target acceptance fraction on
    /// the validation split.
    CoverageTarget(f64),
}

/// Thresholds derived from validation records only. The returned set is
/// what gets serialized and reused verbatim at test time.
pub fn select_thresholds(
    validation: &[PredictionRecord],
    policy: &ThresholdPolicy,
) -> Result<Vec<f64>> {
    if validation.is_empty() {
        return Err(Error::EmptyInput("select_thresholds"));
    }
    match policy {
        ThresholdPolicy::Fixed => Ok(DEFAULT_THRESHOLDS.to_vec()),
        ThresholdPolicy::CoverageTarget(target) => {
            if !(*target > 0.0 && *target <= 1.0) {
                return Err(Error::InfeasiblePolicy(format!(
                    "coverage target {target} must lie in (0, 1]"
                )));
            }
            let order = ranked_indices(validation);
            let need = (target * validation.len() as f64).ceil() as usize;
            let need = need.clamp(1, validation.len());
            // Accepting every record with confidence >= this value keeps
            // at least `need` of them.
            Ok(vec![validation[order[need - 1]].confidence])
        }
    }
}

pub fn save_thresholds(thresholds: &[f64], path: &Path) -> Result<()> {
    let text = serde_json::to_string(thresholds)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_thresholds(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Curve points as plot-ready CSV.
pub fn write_curve_csv(curve: &RiskCoverageCurve, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "coverage,risk")?;
    for p in &curve.points {
        writeln!(w, "{},{}", p.coverage, p.risk)?;
    }
    w.flush()?;
    Ok(())
}

/// Summary JSON: AURC plus coverage at each requested threshold.
pub fn write_curve_summary_json(curve: &RiskCoverageCurve, path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        aurc: f64,
        coverage_at: &'a [CoverageStat],
    }
    let text = serde_json::to_string_pretty(&Summary {
        aurc: curve.aurc,
        coverage_at: &curve.coverage_at,
    })?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
