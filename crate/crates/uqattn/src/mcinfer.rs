//! Monte Carlo dropout inference with a running token-uncertainty
//! estimate feeding uncertainty-weighted attention.
//!
//! The single-pass protocol: for pass m = 1..M, sample that pass's dropout
//! masks, compute the embedding sample z^(m), fold it into the running
//! per-token uncertainty U, run the encoder with the current U, and record
//! the logits. The same M passes serve both uncertainty estimation and
//! prediction aggregation; there is no separate embedding-only sampling
//! stage, and tests pin that down with the encoder's pass counters.
//!
//! Pass m's own embedding is included in the U it sees. Under the
//! population-std convention a single sample has zero spread, so pass 1
//! always runs unmodulated.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{embed, encode_embedded, EncoderConfig, EncoderWeights, StochasticityPlan};
use crate::error::{Error, Result};
use crate::linalg::{column_std, Matrix};

/// Aggregated result of one MC inference run on one example.
#[derive(Debug, Clone, PartialEq)]
pub struct McOutcome {
    /// M x num_classes raw logits, one row per pass.
    pub per_pass_logits: Matrix,
    /// Mean of per-pass softmax distributions; the canonical confidence
    /// source.
    pub mean_probs: Vec<f64>,
    /// Mean of per-pass logits; the input to temperature scaling.
    pub mean_logits: Vec<f64>,
    pub predicted_class: usize,
    /// Max of mean_probs.
    pub confidence: f64,
    /// Population variance across passes of the predicted-class
    /// probability.
    pub predictive_variance: f64,
    /// Population variance across passes, per class.
    pub per_class_variance: Vec<f64>,
    /// Running uncertainty estimate after the final pass.
    pub token_uncertainty_final: Vec<f64>,
    pub pass_count: usize,
}

fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Eq.-1 estimate from the embedding samples gathered so far: per token,
/// the mean over embedding dimensions of the per-dimension population
/// standard deviation across samples.
pub fn token_uncertainty_running(samples_so_far: &[Matrix]) -> Result<Vec<f64>> {
    let stds = column_std(samples_so_far)?;
    let d = stds.cols() as f64;
    Ok((0..stds.rows())
        .map(|j| stds.row(j).iter().sum::<f64>() / d)
        .collect())
}

/// Shannon entropy of a probability vector, natural log. Zero terms
/// contribute zero.
pub fn predictive_entropy(mean_probs: &[f64]) -> f64 {
    -mean_probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

pub(crate) fn aggregate(
    per_pass_logits: Matrix,
    token_uncertainty_final: Vec<f64>,
) -> McOutcome {
    let m = per_pass_logits.rows();
    let classes = per_pass_logits.cols();
    let per_pass_probs: Vec<Vec<f64>> =
        (0..m).map(|r| softmax_vec(per_pass_logits.row(r))).collect();
    let mut mean_probs = vec![0.0; classes];
    let mut mean_logits = vec![0.0; classes];
    for r in 0..m {
        for c in 0..classes {
            mean_probs[c] += per_pass_probs[r][c];
            mean_logits[c] += per_pass_logits.get(r, c);
        }
    }
    for c in 0..classes {
        mean_probs[c] /= m as f64;
        mean_logits[c] /= m as f64;
    }
    let per_class_variance: Vec<f64> = (0..classes)
        .map(|c| {
            let mean = mean_probs[c];
            per_pass_probs
                .iter()
                .map(|p| {
                    let d = p[c] - mean;
                    d * d
                })
                .sum::<f64>()
                / m as f64
        })
        .collect();
    let predicted_class = argmax(&mean_probs);
    McOutcome {
        confidence: mean_probs[predicted_class],
        predictive_variance: per_class_variance[predicted_class],
        per_pass_logits,
        mean_probs,
        mean_logits,
        predicted_class,
        per_class_variance,
        token_uncertainty_final,
        pass_count: m,
    }
}

/// Run the M-pass MC protocol. Deterministic given
/// `(weights, tokens, seed, config)`.
pub fn run_mc_inference(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
    seed: u64,
) -> Result<McOutcome> {
    config.validate()?;
    let m = config.mc_samples;
    let mut embeddings: Vec<Matrix> = Vec::with_capacity(m);
    let mut per_pass_logits = Matrix::zeros(m, config.num_classes);
    let mut uncertainty = vec![0.0; tokens.len()];
    for pass in 0..m {
        let plan = StochasticityPlan::all_layers(seed, pass as u64);
        let z = embed(tokens, weights, config, &plan)?;
        embeddings.push(z);
        uncertainty = token_uncertainty_running(&embeddings)?;
        let trace = encode_embedded(
            &embeddings[pass],
            weights,
            config,
            &plan,
            Some(&uncertainty),
            None,
        )?;
        per_pass_logits.row_mut(pass).copy_from_slice(&trace.logits);
    }
    Ok(aggregate(per_pass_logits, uncertainty))
}

/// Single deterministic pass (no dropout, no modulation), reported in the
/// same shape as an MC outcome with `pass_count = 1`.
pub fn run_deterministic_inference(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
) -> Result<McOutcome> {
    config.validate()?;
    let plan = StochasticityPlan::deterministic();
    let z = embed(tokens, weights, config, &plan)?;
    let trace = encode_embedded(&z, weights, config, &plan, None, None)?;
    let mut per_pass_logits = Matrix::zeros(1, config.num_classes);
    per_pass_logits.row_mut(0).copy_from_slice(&trace.logits);
    Ok(aggregate(per_pass_logits, vec![0.0; tokens.len()]))
}

// ---------------------------------------------------------------------------
// Prediction dumps
// ---------------------------------------------------------------------------

/// One JSONL record of the prediction dump. Field names are fixed; other
/// modules and the CLI parse them verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionDumpRecord {
    pub example_id: u64,
    pub label: usize,
    pub mean_probs: Vec<f64>,
    pub mean_logits: Vec<f64>,
    pub predicted_class: usize,
    pub confidence: f64,
    pub predictive_variance: f64,
    pub token_uncertainty: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_pass_logits: Option<Vec<Vec<f64>>>,
}

impl PredictionDumpRecord {
    pub fn from_outcome(
        example_id: u64,
        label: usize,
        outcome: &McOutcome,
        include_per_pass: bool,
    ) -> Self {
        PredictionDumpRecord {
            example_id,
            label,
            mean_probs: outcome.mean_probs.clone(),
            mean_logits: outcome.mean_logits.clone(),
            predicted_class: outcome.predicted_class,
            confidence: outcome.confidence,
            predictive_variance: outcome.predictive_variance,
            token_uncertainty: outcome.token_uncertainty_final.clone(),
            per_pass_logits: include_per_pass.then(|| {
                (0..outcome.per_pass_logits.rows())
                    .map(|r| outcome.per_pass_logits.row(r).to_vec())
                    .collect()
            }),
        }
    }
}

pub fn write_prediction_dump(path: &Path, records: &[PredictionDumpRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prediction_dump(path: &Path) -> Result<Vec<PredictionDumpRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionDumpRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("prediction dump"));
    }
    Ok(out)
}

/// Collapse class labels through `map` (old class -> new class), summing
/// probabilities over preimages. Used for coarse-grained shift evaluation
/// (e.g. a binary reframing of a multi-class task).
pub fn collapse_dump_labels(
    records: &[PredictionDumpRecord],
    map: &[usize],
) -> Result<Vec<PredictionDumpRecord>> {
    let new_classes = match map.iter().max() {
        Some(max) => max + 1,
        None => return Err(Error::EmptyInput("collapse map")),
    };
    records
        .iter()
        .map(|r| {
            if r.mean_probs.len() != map.len() {
                return Err(Error::DimMismatch {
                    op: "collapse_dump_labels",
                    left: format!("{} classes in record", r.mean_probs.len()),
                    right: format!("{} entries in map", map.len()),
                });
            }
            let mut probs = vec![0.0; new_classes];
            for (c, p) in r.mean_probs.iter().enumerate() {
                probs[map[c]] += p;
            }
            // Logits do not aggregate exactly; log-sum-exp of the grouped
            // per-class logits is the consistent coarse-grained logit.
            let mut logits = vec![f64::NEG_INFINITY; new_classes];
            for (c, l) in r.mean_logits.iter().enumerate() {
                let slot = &mut logits[map[c]];
                let hi = slot.max(*l);
                let lo = slot.min(*l);
                *slot = if hi == f64::NEG_INFINITY {
                    *l
                } else {
                    hi + (lo - hi).exp().ln_1p()
                };
            }
            let predicted = argmax(&probs);
            Ok(PredictionDumpRecord {
                example_id: r.example_id,
                label: map[r.label],
                predicted_class: predicted,
                confidence: probs[predicted],
                mean_probs: probs,
                mean_logits: logits,
                predictive_variance: r.predictive_variance,
                token_uncertainty: r.token_uncertainty.clone(),
                per_pass_logits: None,
            })
        })
        .collect()
}
