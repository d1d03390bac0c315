//! Layer-wise variance decomposition: how much of the prediction's
//! dropout-induced variance is attributable to each noise source.
//!
//! The estimator is nested Monte Carlo over the law of total variance.
//! For layer l (0 = embedding, 1..=L encoder layers): draw `outer`
//! realizations of all other layers' masks, hold them frozen, and within
//! each draw `inner` realizations of layer l's masks alone; V^(l) is the
//! mean over outer groups of the within-group variance of the reference
//! class probability. Freezing the non-l masks isolates layer l's noise;
//! whatever interaction terms that drops show up in the reported residual
//! against a separate all-layers-stochastic estimate of the total.
//!
//! Diagnostic passes run the baseline encoder (no uncertainty
//! modulation): the decomposition measures the stochastic network's
//! dropout noise, and the running-U protocol would couple passes that the
//! estimator needs independent. The reference class is the deterministic
//! pass's argmax, fixed once per run. Inner-group and total variances use
//! the unbiased (n-1) estimator so the residual is centered at zero.
//!
//! The classifier head carries no dropout, so the output component's row
//! exists only in the CSV export and is identically zero.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{forward, EncoderConfig, EncoderWeights, StochasticityPlan};
use crate::error::{Error, Result};
use crate::linalg::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerVarianceReport {
    /// V^(l) for l = 0..=L (embedding first).
    pub per_layer_variance: Vec<f64>,
    /// V^(l) / sum, or uniform when the model is fully deterministic.
    pub normalized: Vec<f64>,
    /// Variance of the reference-class probability under all-layers
    /// stochasticity, estimated from an independent run.
    pub total_variance: f64,
    /// total_variance - sum of per-layer contributions.
    pub residual: f64,
    /// Monte Carlo standard error of each V^(l) across outer groups.
    pub per_layer_stderr: Vec<f64>,
    pub outer_samples: usize,
    pub inner_samples: usize,
    /// True when every source was deterministic and `normalized` is a
    /// uniform placeholder rather than a ratio.
    pub degenerate_uniform: bool,
    /// Class whose probability is the decomposed scalar.
    pub reference_class: usize,
}

/// Entrywise division by the sum. Errors when the sum is zero so callers
/// must handle the fully deterministic case explicitly.
pub fn normalize_contributions(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("normalize_contributions"));
    }
    if v.iter().any(|x| *x < 0.0) {
        return Err(Error::InvalidConfig("variance contributions must be nonnegative".into()));
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(Error::ZeroTotalVariance);
    }
    Ok(v.iter().map(|x| x / sum).collect())
}

fn unbiased_variance(values: &[f64]) -> f64 {
    let n = values.len();
    debug_assert!(n >= 2);
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

/// True when layer `l` has no live dropout site under `config`'s rates.
fn layer_is_deterministic(config: &EncoderConfig, layer: usize) -> bool {
    if layer == 0 {
        config.dropout_embedding == 0.0
    } else {
        config.dropout_attention == 0.0 && config.dropout_ffn == 0.0
    }
}

fn probability_of(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
    plan: &StochasticityPlan,
    class: usize,
) -> Result<f64> {
    let trace = forward(tokens, weights, config, plan, None)?;
    let max = trace.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = trace.logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps[class] / sum)
}

/// Nested MC estimate of each layer's variance contribution for one
/// example. `outer` and `inner` are the group counts described in the
/// module docs; both must be at least 2.
pub fn estimate_layer_variance(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
    seed: u64,
    outer: usize,
    inner: usize,
) -> Result<LayerVarianceReport> {
    config.validate()?;
    if outer < 2 || inner < 2 {
        return Err(Error::InvalidConfig(format!(
            "nested estimator needs outer >= 2 and inner >= 2, got {outer}/{inner}"
        )));
    }

    let reference_class = {
        let det = forward(tokens, weights, config, &StochasticityPlan::deterministic(), None)?;
        let mut best = 0;
        for (i, v) in det.logits.iter().enumerate() {
            if *v > det.logits[best] {
                best = i;
            }
        }
        best
    };

    let components = config.num_layers + 1;
    let root = RngStream::new(seed);
    let mut per_layer_variance = vec![0.0; components];
    let mut per_layer_stderr = vec![0.0; components];

    for l in 0..components {
        if layer_is_deterministic(config, l) {
            // No mask is ever sampled at this layer, so every inner pass
            // is bitwise identical and the variance is exactly zero.
            continue;
        }
        let layer_stream = root.substream(l as u64);
        let mut group_variances = Vec::with_capacity(outer);
        for o in 0..outer {
            let frozen = layer_stream.substream(1).substream(o as u64);
            let varying = layer_stream.substream(2).substream(o as u64);
            let mut probs = Vec::with_capacity(inner);
            for i in 0..inner {
                let seeds: Vec<Option<u64>> = (0..components)
                    .map(|j| {
                        if j == l {
                            Some(varying.substream(i as u64).seed())
                        } else {
                            Some(frozen.substream(j as u64).seed())
                        }
                    })
                    .collect();
                let plan = StochasticityPlan::per_layer_seeds(seeds);
                probs.push(probability_of(tokens, weights, config, &plan, reference_class)?);
            }
            group_variances.push(unbiased_variance(&probs));
        }
        let mean = group_variances.iter().sum::<f64>() / outer as f64;
        let spread = if outer > 1 {
            (group_variances
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / (outer - 1) as f64)
                .sqrt()
                / (outer as f64).sqrt()
        } else {
            0.0
        };
        per_layer_variance[l] = mean;
        per_layer_stderr[l] = spread;
    }

    // Independent all-layers-stochastic estimate of the total.
    let all_stochastic = components > 0
        && (0..components).any(|l| !layer_is_deterministic(config, l));
    let total_variance = if all_stochastic {
        let total_stream = root.substream(1_000);
        let draws = outer * inner;
        let mut probs = Vec::with_capacity(draws);
        for i in 0..draws {
            let plan = StochasticityPlan::all_layers(total_stream.substream(i as u64).seed(), 0);
            probs.push(probability_of(tokens, weights, config, &plan, reference_class)?);
        }
        unbiased_variance(&probs)
    } else {
        0.0
    };

    let contribution_sum: f64 = per_layer_variance.iter().sum();
    let (normalized, degenerate_uniform) = match normalize_contributions(&per_layer_variance) {
        Ok(n) => (n, false),
        Err(Error::ZeroTotalVariance) => {
            (vec![1.0 / components as f64; components], true)
        }
        Err(e) => return Err(e),
    };

    Ok(LayerVarianceReport {
        residual: total_variance - contribution_sum,
        per_layer_variance,
        normalized,
        total_variance,
        per_layer_stderr,
        outer_samples: outer,
        inner_samples: inner,
        degenerate_uniform,
        reference_class,
    })
}

/// Component label for CSV rows: embedding, layer_1..layer_L, output.
pub fn component_label(index: usize, num_layers: usize) -> String {
    if index == 0 {
        "embedding".to_string()
    } else if index <= num_layers {
        format!("layer_{index}")
    } else {
        "output".to_string()
    }
}

/// CSV export with columns layer_index, component_label, variance,
/// normalized. Includes a trailing output row, identically zero because
/// the classifier head has no dropout.
pub fn write_variance_csv(report: &LayerVarianceReport, path: &Path) -> Result<()> {
    let num_layers = report.per_layer_variance.len() - 1;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "layer_index,component_label,variance,normalized")?;
    for (i, (v, n)) in report
        .per_layer_variance
        .iter()
        .zip(&report.normalized)
        .enumerate()
    {
        writeln!(w, "{i},{},{v},{n}", component_label(i, num_layers))?;
    }
    writeln!(
        w,
        "{},{},0,0",
        report.per_layer_variance.len(),
        component_label(report.per_layer_variance.len(), num_layers)
    )?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcinfer::run_mc_inference;

    fn config_with_rates(emb: f64, att: f64, ffn: f64) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 12,
            max_seq_len: 6,
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            head_dim: 4,
            ff_dim: 16,
            num_classes: 3,
            dropout_embedding: emb,
            dropout_attention: att,
            dropout_ffn: ffn,
            lambda: 0.5,
            mc_samples: 5,
        }
    }

    fn fixture(emb: f64, att: f64, ffn: f64) -> (EncoderConfig, EncoderWeights, Vec<usize>) {
        let config = config_with_rates(emb, att, ffn);
        let weights = EncoderWeights::init(&config, 42).unwrap();
        (config, weights, vec![0, 3, 7, 2, 11, 5])
    }

    #[test]
    fn normalize_hand_cases() {
        assert_eq!(normalize_contributions(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        assert_eq!(normalize_contributions(&[0.0, 0.0, 5.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(matches!(
            normalize_contributions(&[0.0, 0.0]),
            Err(Error::ZeroTotalVariance)
        ));
    }

    #[test]
    fn deterministic_model_reports_degenerate_uniform() {
        let (config, weights, tokens) = fixture(0.0, 0.0, 0.0);
        let report = estimate_layer_variance(&tokens, &weights, &config, 1, 4, 4).unwrap();
        assert!(report.per_layer_variance.iter().all(|v| *v == 0.0));
        assert_eq!(report.total_variance, 0.0);
        assert!(report.degenerate_uniform);
        let sum: f64 = report.normalized.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn embedding_only_noise_attributes_to_layer_zero() {
        let (config, weights, tokens) = fixture(0.3, 0.0, 0.0);
        let report = estimate_layer_variance(&tokens, &weights, &config, 7, 8, 64).unwrap();
        assert_eq!(report.per_layer_variance[1], 0.0);
        assert_eq!(report.per_layer_variance[2], 0.0);
        assert!(report.per_layer_variance[0] > 0.0);
        assert!((report.normalized[0] - 1.0).abs() < 1e-12);
        assert!(
            report.residual.abs() <= 0.25 * report.total_variance,
            "residual {} vs total {}",
            report.residual,
            report.total_variance
        );
    }

    #[test]
    fn single_encoder_layer_noise_attributes_to_it() {
        // One encoder layer, no embedding dropout: layer 1 is the only
        // stochastic component.
        let mut config = config_with_rates(0.0, 0.2, 0.3);
        config.num_layers = 1;
        let weights = EncoderWeights::init(&config, 9).unwrap();
        let tokens = vec![0, 3, 7, 2, 11, 5];
        let report = estimate_layer_variance(&tokens, &weights, &config, 3, 8, 64).unwrap();
        assert_eq!(report.per_layer_variance[0], 0.0);
        assert!(report.per_layer_variance[1] > 0.0);
        assert!((report.normalized[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_sums_to_one_with_mixed_noise() {
        let (config, weights, tokens) = fixture(0.1, 0.2, 0.3);
        let report = estimate_layer_variance(&tokens, &weights, &config, 11, 4, 16).unwrap();
        assert!(!report.degenerate_uniform);
        let sum: f64 = report.normalized.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(report.per_layer_variance.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn estimator_is_deterministic() {
        let (config, weights, tokens) = fixture(0.1, 0.2, 0.3);
        let a = estimate_layer_variance(&tokens, &weights, &config, 5, 4, 8).unwrap();
        let b = estimate_layer_variance(&tokens, &weights, &config, 5, 4, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scale_consistency_across_sample_counts() {
        let (config, weights, tokens) = fixture(0.1, 0.2, 0.3);
        let small = estimate_layer_variance(&tokens, &weights, &config, 21, 8, 32).unwrap();
        let large = estimate_layer_variance(&tokens, &weights, &config, 22, 32, 128).unwrap();
        for l in 0..small.per_layer_variance.len() {
            let band = 2.0
                * (small.per_layer_stderr[l].powi(2) + large.per_layer_stderr[l].powi(2)).sqrt();
            let diff = (small.per_layer_variance[l] - large.per_layer_variance[l]).abs();
            assert!(
                diff <= band.max(1e-12),
                "layer {l}: diff {diff} exceeds 2-sigma band {band}"
            );
        }
    }

    #[test]
    fn diagnostics_do_not_perturb_inference() {
        let (config, weights, tokens) = fixture(0.1, 0.2, 0.3);
        let before = run_mc_inference(&tokens, &weights, &config, 33).unwrap();
        let weights_snapshot = weights.clone();
        let _ = estimate_layer_variance(&tokens, &weights, &config, 5, 4, 8).unwrap();
        let after = run_mc_inference(&tokens, &weights, &config, 33).unwrap();
        assert_eq!(before, after);
        assert_eq!(weights, weights_snapshot);
    }

    #[test]
    fn degenerate_counts_are_rejected() {
        let (config, weights, tokens) = fixture(0.1, 0.2, 0.3);
        assert!(estimate_layer_variance(&tokens, &weights, &config, 1, 1, 8).is_err());
        assert!(estimate_layer_variance(&tokens, &weights, &config, 1, 8, 1).is_err());
    }

    #[test]
    fn csv_export_structure() {
        let (config, weights, tokens) = fixture(0.1, 0.2, 0.3);
        let report = estimate_layer_variance(&tokens, &weights, &config, 2, 4, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("variance.csv");
        write_variance_csv(&report, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "layer_index,component_label,variance,normalized");
        // header + embedding + 2 layers + output row
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,embedding,"));
        assert!(lines[2].starts_with("1,layer_1,"));
        assert!(lines[3].starts_with("2,layer_2,"));
        assert_eq!(lines[4], "3,output,0,0");
    }
}
