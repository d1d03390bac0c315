//! Experiment harness: synthetic ambiguity-controlled classification tasks
//! with a token-level distribution shift, the evaluation method roster,
//! the ablation and sensitivity grids, and the wall-clock efficiency
//! protocol.
//!
//! Task construction. Token id 0 is the classification slot; the rest of
//! the vocabulary is split into equal blocks of class-indicative tokens,
//! one held-out alias block per class, and neutral filler. An example's
//! label is the majority class among its indicative tokens. Exactly two
//! classes are active per example: the label's indicative count beats the
//! runner-up's by at least 2 on unambiguous examples and by exactly 1 on
//! ambiguous ones, so `ambiguity_fraction` directly controls how much of
//! the dataset sits near the decision boundary. The shifted test split
//! remaps a configured fraction of each class's indicative tokens to that
//! class's aliases, changing token statistics while preserving labels.
//! Every example is a pure function of (task seed, split, index), so
//! regeneration is bit-exact and splits never share RNG streams.
//!
//! Method fairness. All methods in a run see identical splits, the same
//! bin count, the same threshold policy, and the same evaluation seeds.
//! Every stochastic method routes through the one MC inference entry
//! point; the plain MC baselines are that path with lambda pinned to 0,
//! which makes the lambda=0 byte-equivalence between `UatLite` and
//! `McComponent` structural rather than numerical. Temperature and
//! thresholds are fitted on the validation split only.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::calibration::{
    apply_temperature, compute_ece, fit_temperature, shift_metrics, PredictionRecord,
};
use crate::encoder::{pass_counters, reset_pass_counters, EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::linalg::RngStream;
use crate::mcinfer::{
    aggregate, collapse_dump_labels, run_deterministic_inference, run_mc_inference, McOutcome,
    PredictionDumpRecord,
};
use crate::selective::{risk_coverage, select_thresholds, CoverageStat, ThresholdPolicy};
pub use crate::train::{
    train_encoder, train_encoder_logged, Example, TrainConfig, TrainLog, TrainOutcome,
};

pub const LABEL_RULE_MAJORITY: &str = "majority_vote";

/// Split tags for per-example RNG streams; also used to derive the
/// per-split evaluation seeds.
const TAG_TRAIN: u64 = 1;
const TAG_VAL: u64 = 2;
const TAG_TEST_ID: u64 = 3;
const TAG_TEST_OOD: u64 = 4;
const TAG_SHIFT: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ShiftProfile {
    /// Control: the shifted split is drawn from the same distribution as
    /// the in-distribution test split.
    Identity,
    /// Remap this fraction of each class's indicative tokens to the
    /// class's held-out aliases on the shifted split.
    AliasRemap { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskSpec {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_classes: usize,
    /// Fraction of examples whose winning margin is exactly 1.
    pub ambiguity_fraction: f64,
    pub shift_profile: ShiftProfile,
    pub label_rule: String,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl SyntheticTaskSpec {
    /// Desk-scale default: vocab 64, sequence length 16, 3 classes, half
    /// the examples ambiguous, half of the indicative tokens remapped on
    /// the shifted split.
    pub fn toy(seed: u64) -> Self {
        SyntheticTaskSpec {
            vocab_size: 64,
            seq_len: 16,
            num_classes: 3,
            ambiguity_fraction: 0.5,
            shift_profile: ShiftProfile::AliasRemap { fraction: 0.5 },
            label_rule: LABEL_RULE_MAJORITY.to_string(),
            seed,
            train_size: 4000,
            val_size: 500,
            test_size: 500,
        }
    }

    /// Indicative (and alias) tokens per class.
    pub fn per_class_tokens(&self) -> usize {
        ((self.vocab_size - 1) / (3 * self.num_classes)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_rule != LABEL_RULE_MAJORITY {
            return Err(Error::InfeasibleSpec(format!(
                "unknown label rule {:?}; only {LABEL_RULE_MAJORITY:?} is defined",
                self.label_rule
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InfeasibleSpec(
                "majority vote needs at least 2 classes".into(),
            ));
        }
        if self.vocab_size < 1 + 3 * self.num_classes {
            return Err(Error::InfeasibleSpec(format!(
                "vocab of {} cannot hold the classification slot plus indicative, \
                 alias, and neutral tokens for {} classes",
                self.vocab_size, self.num_classes
            )));
        }
        // The count scheme places up to 5 + 4 indicative tokens plus the
        // classification slot.
        if self.seq_len < 10 {
            return Err(Error::InfeasibleSpec(format!(
                "seq_len {} too small for the count scheme (needs >= 10)",
                self.seq_len
            )));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_fraction) {
            return Err(Error::InfeasibleSpec(format!(
                "ambiguity_fraction {} outside [0, 1]",
                self.ambiguity_fraction
            )));
        }
        if let ShiftProfile::AliasRemap { fraction } = self.shift_profile {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::InfeasibleSpec(format!(
                    "alias-remap fraction {fraction} outside [0, 1]"
                )));
            }
        }
        if self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return Err(Error::InfeasibleSpec("all split sizes must be >= 1".into()));
        }
        Ok(())
    }
}

/// Deterministic vocabulary partition derived from a task spec.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabLayout {
    pub cls: usize,
    /// indicative[c] lists class c's surface forms seen in training.
    pub indicative: Vec<Vec<usize>>,
    /// aliases[c][j] is the held-out form that indicative[c][j] can shift
    /// to; never generated outside the shifted split.
    pub aliases: Vec<Vec<usize>>,
    pub neutral: Vec<usize>,
}

impl VocabLayout {
    pub fn from_spec(spec: &SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let per_class = spec.per_class_tokens();
        let classes = spec.num_classes;
        let indicative: Vec<Vec<usize>> = (0..classes)
            .map(|c| (0..per_class).map(|j| 1 + c * per_class + j).collect())
            .collect();
        let alias_base = 1 + classes * per_class;
        let aliases: Vec<Vec<usize>> = (0..classes)
            .map(|c| (0..per_class).map(|j| alias_base + c * per_class + j).collect())
            .collect();
        let neutral: Vec<usize> = (alias_base + classes * per_class..spec.vocab_size).collect();
        debug_assert!(!neutral.is_empty());
        Ok(VocabLayout {
            cls: 0,
            indicative,
            aliases,
            neutral,
        })
    }

    /// Class of a token under the ID vocabulary, counting aliases toward
    /// their class; None for the classification slot and neutral filler.
    pub fn class_of(&self, token: usize) -> Option<usize> {
        for (c, ids) in self.indicative.iter().enumerate() {
            if ids.contains(&token) {
                return Some(c);
            }
        }
        for (c, ids) in self.aliases.iter().enumerate() {
            if ids.contains(&token) {
                return Some(c);
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test_id: Vec<Example>,
    pub test_ood: Vec<Example>,
}

fn generate_example(
    spec: &SyntheticTaskSpec,
    layout: &VocabLayout,
    mut rng: RngStream,
) -> Example {
    let classes = spec.num_classes;
    let label = rng.next_below(classes);
    let runner = {
        let r = rng.next_below(classes - 1);
        if r >= label {
            r + 1
        } else {
            r
        }
    };
    let ambiguous = rng.next_f64() < spec.ambiguity_fraction;
    let count_label = 3 + rng.next_below(3);
    let count_runner = if ambiguous {
        count_label - 1
    } else {
        // Any count at least 2 below the winner.
        rng.next_below(count_label - 1)
    };

    let per_class = layout.indicative[0].len();
    let content_len = spec.seq_len - 1;
    let mut content = Vec::with_capacity(content_len);
    for _ in 0..count_label {
        content.push(layout.indicative[label][rng.next_below(per_class)]);
    }
    for _ in 0..count_runner {
        content.push(layout.indicative[runner][rng.next_below(per_class)]);
    }
    while content.len() < content_len {
        content.push(layout.neutral[rng.next_below(layout.neutral.len())]);
    }
    rng.shuffle(&mut content);

    let mut tokens = Vec::with_capacity(spec.seq_len);
    tokens.push(layout.cls);
    tokens.extend(content);
    Example { tokens, label }
}

fn generate_split(
    spec: &SyntheticTaskSpec,
    layout: &VocabLayout,
    split_stream: RngStream,
    size: usize,
) -> Vec<Example> {
    (0..size)
        .map(|i| generate_example(spec, layout, split_stream.substream(i as u64)))
        .collect()
}

/// Per-token remap table for the shifted split: index by token id, None
/// means unchanged.
fn shift_remap(
    spec: &SyntheticTaskSpec,
    layout: &VocabLayout,
    mut rng: RngStream,
) -> Vec<Option<usize>> {
    let mut map = vec![None; spec.vocab_size];
    if let ShiftProfile::AliasRemap { fraction } = spec.shift_profile {
        let per_class = layout.indicative[0].len();
        let remapped = (fraction * per_class as f64).ceil() as usize;
        for c in 0..spec.num_classes {
            let mut slots: Vec<usize> = (0..per_class).collect();
            rng.shuffle(&mut slots);
            for &j in slots.iter().take(remapped) {
                map[layout.indicative[c][j]] = Some(layout.aliases[c][j]);
            }
        }
    }
    map
}

/// Generates the four splits. Pure in the spec: calling twice yields
/// bitwise-identical datasets.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let layout = VocabLayout::from_spec(spec)?;
    let root = RngStream::new(spec.seed);
    let train = generate_split(spec, &layout, root.substream(TAG_TRAIN), spec.train_size);
    let val = generate_split(spec, &layout, root.substream(TAG_VAL), spec.val_size);
    let test_id = generate_split(spec, &layout, root.substream(TAG_TEST_ID), spec.test_size);
    let mut test_ood =
        generate_split(spec, &layout, root.substream(TAG_TEST_OOD), spec.test_size);

    let map = shift_remap(spec, &layout, root.substream(TAG_SHIFT));
    for example in &mut test_ood {
        for token in &mut example.tokens {
            if let Some(alias) = map[*token] {
                *token = alias;
            }
        }
    }
    Ok(DatasetSplits {
        train,
        val,
        test_id,
        test_ood,
    })
}

// ---------------------------------------------------------------------------
// Method roster
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// Single dropout-free pass; confidence is the softmax max.
    BaselineDeterministic,
    /// MC dropout with one shared rate everywhere and no modulation.
    McUniform { rate: f64, samples: usize },
    /// MC dropout at component-specific rates, no modulation. With the
    /// same rates, samples, and seeds this is byte-equivalent to
    /// `UatLite` at lambda = 0.
    McComponent {
        emb: f64,
        att: f64,
        ffn: f64,
        samples: usize,
    },
    /// Full uncertainty-weighted inference.
    UatLite {
        lambda: f64,
        samples: usize,
        emb: f64,
        att: f64,
        ffn: f64,
    },
    /// Any base method plus a temperature fitted on validation and
    /// applied to the base's mean logits.
    TempScaling { base: Box<Method> },
    /// Average of this many independently trained members, each run as a
    /// single deterministic pass.
    DeepEnsemble { members: usize },
}

impl Method {
    /// Stable, filesystem-safe identifier used in reports and file names.
    pub fn label(&self) -> String {
        match self {
            Method::BaselineDeterministic => "baseline_deterministic".to_string(),
            Method::McUniform { rate, samples } => format!("mc_uniform_p{rate}_m{samples}"),
            Method::McComponent {
                emb,
                att,
                ffn,
                samples,
            } => format!("mc_component_e{emb}_a{att}_f{ffn}_m{samples}"),
            Method::UatLite {
                lambda,
                samples,
                emb,
                att,
                ffn,
            } => format!("uat_lite_l{lambda}_m{samples}_e{emb}_a{att}_f{ffn}"),
            Method::TempScaling { base } => format!("temp_scaling_{}", base.label()),
            Method::DeepEnsemble { members } => format!("deep_ensemble_k{members}"),
        }
    }

    /// Forward passes one prediction costs.
    pub fn nominal_passes(&self) -> usize {
        match self {
            Method::BaselineDeterministic => 1,
            Method::McUniform { samples, .. } | Method::McComponent { samples, .. } => *samples,
            Method::UatLite { samples, .. } => *samples,
            Method::TempScaling { base } => base.nominal_passes(),
            Method::DeepEnsemble { members } => *members,
        }
    }

    /// Trained weight sets the method consumes.
    pub fn required_members(&self) -> usize {
        match self {
            Method::DeepEnsemble { members } => *members,
            Method::TempScaling { base } => base.required_members(),
            _ => 1,
        }
    }

    pub fn fits_temperature(&self) -> bool {
        matches!(self, Method::TempScaling { .. })
    }

    /// The method whose inference path produces the dumps (temperature
    /// scaling reuses its base's).
    fn inference(&self) -> &Method {
        match self {
            Method::TempScaling { base } => base.inference(),
            other => other,
        }
    }

    /// Inference-time configuration: architecture from `base`, rates,
    /// modulation strength, and pass count from the method.
    fn eval_config(&self, base: &EncoderConfig) -> EncoderConfig {
        let mut config = base.clone();
        match self.inference() {
            Method::BaselineDeterministic | Method::DeepEnsemble { .. } => {
                config.dropout_embedding = 0.0;
                config.dropout_attention = 0.0;
                config.dropout_ffn = 0.0;
                config.lambda = 0.0;
                config.mc_samples = 1;
            }
            Method::McUniform { rate, samples } => {
                config.dropout_embedding = *rate;
                config.dropout_attention = *rate;
                config.dropout_ffn = *rate;
                config.lambda = 0.0;
                config.mc_samples = *samples;
            }
            Method::McComponent {
                emb,
                att,
                ffn,
                samples,
            } => {
                config.dropout_embedding = *emb;
                config.dropout_attention = *att;
                config.dropout_ffn = *ffn;
                config.lambda = 0.0;
                config.mc_samples = *samples;
            }
            Method::UatLite {
                lambda,
                samples,
                emb,
                att,
                ffn,
            } => {
                config.dropout_embedding = *emb;
                config.dropout_attention = *att;
                config.dropout_ffn = *ffn;
                config.lambda = *lambda;
                config.mc_samples = *samples;
            }
            Method::TempScaling { .. } => unreachable!("inference() strips wrappers"),
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Single(EncoderWeights),
    Ensemble(Vec<EncoderWeights>),
}

impl ModelSource {
    pub fn members(&self) -> &[EncoderWeights] {
        match self {
            ModelSource::Single(w) => std::slice::from_ref(w),
            ModelSource::Ensemble(v) => v,
        }
    }

    pub fn primary(&self) -> &EncoderWeights {
        &self.members()[0]
    }
}

/// Shared evaluation protocol; identical for every method in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub num_bins: usize,
    pub threshold_policy: ThresholdPolicy,
    /// Optional label collapse (index = original class, value = coarse
    /// class) applied to dumps before any metric; mirrors reframing a
    /// fine-grained task as a binary one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collapse_map: Option<Vec<usize>>,
    /// Keep per-pass logits in dump records (larger files).
    #[serde(default)]
    pub include_per_pass: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            num_bins: 15,
            threshold_policy: ThresholdPolicy::Fixed,
            collapse_map: None,
            include_per_pass: false,
        }
    }
}

fn ensemble_outcome(
    members: &[EncoderWeights],
    tokens: &[usize],
    config: &EncoderConfig,
) -> Result<McOutcome> {
    let mut per_pass_logits = crate::linalg::Matrix::zeros(members.len(), config.num_classes);
    for (m, weights) in members.iter().enumerate() {
        let outcome = run_deterministic_inference(tokens, weights, config)?;
        per_pass_logits
            .row_mut(m)
            .copy_from_slice(outcome.per_pass_logits.row(0));
    }
    Ok(aggregate(per_pass_logits, vec![0.0; tokens.len()]))
}

fn infer_example(
    method: &Method,
    source: &ModelSource,
    config: &EncoderConfig,
    tokens: &[usize],
    seed: u64,
) -> Result<McOutcome> {
    match method.inference() {
        Method::BaselineDeterministic => {
            run_deterministic_inference(tokens, source.primary(), config)
        }
        Method::DeepEnsemble { members } => {
            ensemble_outcome(&source.members()[..*members], tokens, config)
        }
        _ => run_mc_inference(tokens, source.primary(), config, seed),
    }
}

/// Prediction dump for one split. Per-example seeds derive from
/// (eval seed, split tag, example index), so splits and examples own
/// disjoint mask streams.
pub fn dump_split(
    method: &Method,
    source: &ModelSource,
    base_config: &EncoderConfig,
    examples: &[Example],
    eval_seed: u64,
    split_tag: u64,
    include_per_pass: bool,
) -> Result<Vec<PredictionDumpRecord>> {
    let config = method.eval_config(base_config);
    let stream = RngStream::new(eval_seed).substream(split_tag);
    examples
        .iter()
        .enumerate()
        .map(|(i, example)| {
            let seed = stream.substream(i as u64).seed();
            let outcome = infer_example(method, source, &config, &example.tokens, seed)?;
            Ok(PredictionDumpRecord::from_outcome(
                i as u64,
                example.label,
                &outcome,
                include_per_pass,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub ece: f64,
    pub aurc: f64,
    pub coverage_at: Vec<CoverageStat>,
    pub delta_ece: f64,
    pub robustness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Inference wall time. Deliberately excluded from serialization so
    /// every serialized artifact of a run is reproducible byte-for-byte;
    /// timings are exported separately.
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

fn to_records(dump: &[PredictionDumpRecord]) -> Vec<PredictionRecord> {
    dump.iter().map(PredictionRecord::from_dump).collect()
}

/// The three dumps one (method, seed) evaluation produces, post
/// label-collapse but pre temperature scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDumps {
    pub val: Vec<PredictionDumpRecord>,
    pub test_id: Vec<PredictionDumpRecord>,
    pub test_ood: Vec<PredictionDumpRecord>,
}

/// One (method, seed) cell: dumps all three evaluation splits, fits
/// whatever the method fits on validation, and reports test metrics.
pub fn evaluate_seed(
    method: &Method,
    source: &ModelSource,
    base_config: &EncoderConfig,
    splits: &DatasetSplits,
    seed: u64,
    eval: &EvalSettings,
) -> Result<(SeedMetrics, SplitDumps)> {
    let needed = method.required_members();
    let have = source.members().len();
    if have < needed {
        return Err(Error::MissingEnsembleMembers { needed, have });
    }

    let started = Instant::now();
    let mut dumps = [
        dump_split(method, source, base_config, &splits.val, seed, TAG_VAL, eval.include_per_pass)?,
        dump_split(method, source, base_config, &splits.test_id, seed, TAG_TEST_ID, eval.include_per_pass)?,
        dump_split(method, source, base_config, &splits.test_ood, seed, TAG_TEST_OOD, eval.include_per_pass)?,
    ];
    let wall_time_seconds = started.elapsed().as_secs_f64();

    if let Some(map) = &eval.collapse_map {
        for dump in &mut dumps {
            *dump = collapse_dump_labels(dump, map)?;
        }
    }
    let [val_dump, test_dump, ood_dump] = dumps;
    let mut val_records = to_records(&val_dump);
    let mut test_records = to_records(&test_dump);
    let mut ood_records = to_records(&ood_dump);

    let temperature = if method.fits_temperature() {
        let t = fit_temperature(&val_records)?;
        val_records = apply_temperature(&val_records, t)?;
        test_records = apply_temperature(&test_records, t)?;
        ood_records = apply_temperature(&ood_records, t)?;
        Some(t)
    } else {
        None
    };

    let thresholds = select_thresholds(&val_records, &eval.threshold_policy)?;
    let cal_id = compute_ece(&test_records, eval.num_bins)?;
    let cal_ood = compute_ece(&ood_records, eval.num_bins)?;
    let shift = shift_metrics(&cal_id, &cal_ood)?;
    let curve = risk_coverage(&test_records, &thresholds)?;

    let row = SeedMetrics {
        method: method.label(),
        seed,
        accuracy: cal_id.accuracy_overall,
        ece: cal_id.ece,
        aurc: curve.aurc,
        coverage_at: curve.coverage_at,
        delta_ece: shift.delta_ece,
        robustness: shift.robustness,
        temperature,
        wall_time_seconds,
    };
    Ok((
        row,
        SplitDumps {
            val: val_dump,
            test_id: test_dump,
            test_ood: ood_dump,
        },
    ))
}

/// Evaluates one method across the shared seed set. Validation is used
/// for temperature and threshold fitting only; reported metrics come from
/// the in-distribution and shifted test splits.
pub fn run_method(
    method: &Method,
    source: &ModelSource,
    base_config: &EncoderConfig,
    splits: &DatasetSplits,
    seeds: &[u64],
    eval: &EvalSettings,
) -> Result<Vec<SeedMetrics>> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput("run_method needs at least one seed"));
    }
    seeds
        .iter()
        .map(|&seed| evaluate_seed(method, source, base_config, splits, seed, eval).map(|r| r.0))
        .collect()
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageAggregate {
    pub tau: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub aurc_mean: f64,
    pub aurc_std: f64,
    pub delta_ece_mean: f64,
    pub delta_ece_std: f64,
    pub robustness_mean: f64,
    pub robustness_std: f64,
    pub coverage_at: Vec<CoverageAggregate>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Groups per-seed rows by method (first-appearance order) and reports
/// mean and population standard deviation per metric.
pub fn aggregate_rows(rows: &[SeedMetrics]) -> Result<Vec<AggregateRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("aggregate_rows"));
    }
    let mut order: Vec<&str> = Vec::new();
    for row in rows {
        if !order.contains(&row.method.as_str()) {
            order.push(&row.method);
        }
    }
    order
        .iter()
        .map(|label| {
            let group: Vec<&SeedMetrics> =
                rows.iter().filter(|r| r.method == *label).collect();
            let taus: Vec<f64> = group[0].coverage_at.iter().map(|c| c.tau).collect();
            for row in &group {
                let row_taus: Vec<f64> = row.coverage_at.iter().map(|c| c.tau).collect();
                if row_taus != taus {
                    return Err(Error::InvalidConfig(format!(
                        "method {label} rows disagree on threshold sets"
                    )));
                }
            }
            let collect = |f: fn(&SeedMetrics) -> f64| -> Vec<f64> {
                group.iter().map(|r| f(r)).collect()
            };
            let (accuracy_mean, accuracy_std) = mean_std(&collect(|r| r.accuracy));
            let (ece_mean, ece_std) = mean_std(&collect(|r| r.ece));
            let (aurc_mean, aurc_std) = mean_std(&collect(|r| r.aurc));
            let (delta_ece_mean, delta_ece_std) = mean_std(&collect(|r| r.delta_ece));
            let (robustness_mean, robustness_std) = mean_std(&collect(|r| r.robustness));
            let coverage_at = taus
                .iter()
                .enumerate()
                .map(|(i, &tau)| {
                    let values: Vec<f64> =
                        group.iter().map(|r| r.coverage_at[i].coverage).collect();
                    let (mean, std) = mean_std(&values);
                    CoverageAggregate { tau, mean, std }
                })
                .collect();
            Ok(AggregateRow {
                method: label.to_string(),
                seeds: group.len(),
                accuracy_mean,
                accuracy_std,
                ece_mean,
                ece_std,
                aurc_mean,
                aurc_std,
                delta_ece_mean,
                delta_ece_std,
                robustness_mean,
                robustness_std,
                coverage_at,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Ablation and sensitivity grids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub seed: u64,
    pub ece: f64,
    pub accuracy: f64,
}

/// Four inference-time arms over one set of trained weights: baseline,
/// sampling only (lambda = 0), modulation only, and modulation plus
/// temperature. No retraining happens between arms.
pub fn run_ablation(
    source: &ModelSource,
    base_config: &EncoderConfig,
    splits: &DatasetSplits,
    uat: &Method,
    seeds: &[u64],
    eval: &EvalSettings,
) -> Result<Vec<AblationRow>> {
    let Method::UatLite {
        lambda,
        samples,
        emb,
        att,
        ffn,
    } = uat.clone()
    else {
        return Err(Error::InvalidConfig(
            "ablation arms derive from a UatLite method".into(),
        ));
    };
    let arms: [(&str, Method); 4] = [
        ("baseline", Method::BaselineDeterministic),
        (
            "sampling_only",
            Method::McComponent {
                emb,
                att,
                ffn,
                samples,
            },
        ),
        (
            "modulation_only",
            Method::UatLite {
                lambda,
                samples,
                emb,
                att,
                ffn,
            },
        ),
        (
            "modulation_plus_temperature",
            Method::TempScaling {
                base: Box::new(Method::UatLite {
                    lambda,
                    samples,
                    emb,
                    att,
                    ffn,
                }),
            },
        ),
    ];

    let mut per_arm = Vec::with_capacity(arms.len());
    for (name, method) in &arms {
        per_arm.push((*name, run_method(method, source, base_config, splits, seeds, eval)?));
    }
    let mut rows = Vec::with_capacity(seeds.len() * arms.len());
    for (i, &seed) in seeds.iter().enumerate() {
        for (name, metrics) in &per_arm {
            rows.push(AblationRow {
                arm: name.to_string(),
                seed,
                ece: metrics[i].ece,
                accuracy: metrics[i].accuracy,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub lambda: f64,
    pub samples: usize,
    pub ece: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Row-major over the lambda grid, then the sample grid.
    pub cells: Vec<SensitivityCell>,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub ece_min: f64,
    pub ece_max: f64,
    pub ece_range: f64,
}

/// Grid sweep of modulation strength against pass count at fixed rates;
/// each cell is one full evaluation at the given seed.
pub fn run_sensitivity(
    source: &ModelSource,
    base_config: &EncoderConfig,
    splits: &DatasetSplits,
    lambdas: &[f64],
    sample_grid: &[usize],
    rates: (f64, f64, f64),
    seed: u64,
    eval: &EvalSettings,
) -> Result<SensitivityReport> {
    if lambdas.is_empty() || sample_grid.is_empty() {
        return Err(Error::EmptyInput("sensitivity grid"));
    }
    let mut cells = Vec::with_capacity(lambdas.len() * sample_grid.len());
    for &lambda in lambdas {
        for &samples in sample_grid {
            let method = Method::UatLite {
                lambda,
                samples,
                emb: rates.0,
                att: rates.1,
                ffn: rates.2,
            };
            let rows = run_method(&method, source, base_config, splits, &[seed], eval)?;
            cells.push(SensitivityCell {
                lambda,
                samples,
                ece: rows[0].ece,
                accuracy: rows[0].accuracy,
            });
        }
    }
    let eces: Vec<f64> = cells.iter().map(|c| c.ece).collect();
    let (ece_mean, ece_std) = mean_std(&eces);
    let ece_min = eces.iter().copied().fold(f64::INFINITY, f64::min);
    let ece_max = eces.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SensitivityReport {
        cells,
        ece_mean,
        ece_std,
        ece_min,
        ece_max,
        ece_range: ece_max - ece_min,
    })
}

// ---------------------------------------------------------------------------
// Efficiency protocol
// ---------------------------------------------------------------------------

pub const EFFICIENCY_WARMUP: usize = 50;
pub const EFFICIENCY_TIMED: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub method: String,
    /// Encoder passes counted for one prediction; equals the method's
    /// nominal pass count.
    pub passes: u64,
    pub latency_mean_seconds: f64,
    pub latency_std_seconds: f64,
    pub warmup_runs: usize,
    pub timed_runs: usize,
}

/// Single-example latency under the fixed warm-up/timed protocol, plus an
/// instrumented pass count.
pub fn measure_efficiency(
    method: &Method,
    source: &ModelSource,
    base_config: &EncoderConfig,
    tokens: &[usize],
    warmup: usize,
    timed: usize,
    seed: u64,
) -> Result<EfficiencyReport> {
    if timed == 0 {
        return Err(Error::InvalidConfig("timed run count must be >= 1".into()));
    }
    let needed = method.required_members();
    let have = source.members().len();
    if have < needed {
        return Err(Error::MissingEnsembleMembers { needed, have });
    }
    let config = method.eval_config(base_config);
    let stream = RngStream::new(seed);
    let run = |i: u64| infer_example(method, source, &config, tokens, stream.substream(i).seed());

    for i in 0..warmup {
        run(i as u64)?;
    }
    reset_pass_counters();
    run(warmup as u64)?;
    let passes = pass_counters().encode_calls;

    let mut latencies = Vec::with_capacity(timed);
    for i in 0..timed {
        let start = Instant::now();
        run((warmup + 1 + i) as u64)?;
        latencies.push(start.elapsed().as_secs_f64());
    }
    let (latency_mean_seconds, latency_std_seconds) = mean_std(&latencies);
    Ok(EfficiencyReport {
        method: method.label(),
        passes,
        latency_mean_seconds,
        latency_std_seconds,
        warmup_runs: warmup,
        timed_runs: timed,
    })
}

// ---------------------------------------------------------------------------
// Tabular exports
// ---------------------------------------------------------------------------

fn coverage_headers(taus: &[f64], suffixes: &[&str]) -> String {
    taus.iter()
        .flat_map(|tau| {
            suffixes
                .iter()
                .map(move |s| format!(",coverage_at_{tau}{s}"))
        })
        .collect()
}

/// Per-seed numerical metrics; wall times are deliberately not here.
pub fn write_seed_metrics_csv(rows: &[SeedMetrics], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("write_seed_metrics_csv"));
    }
    let taus: Vec<f64> = rows[0].coverage_at.iter().map(|c| c.tau).collect();
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "method,seed,accuracy,ece,aurc,delta_ece,robustness{},temperature",
        coverage_headers(&taus, &[""])
    )?;
    for row in rows {
        let coverage: String = row
            .coverage_at
            .iter()
            .map(|c| format!(",{}", c.coverage))
            .collect();
        let temperature = row
            .temperature
            .map(|t| t.to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}{},{}",
            row.method,
            row.seed,
            row.accuracy,
            row.ece,
            row.aurc,
            row.delta_ece,
            row.robustness,
            coverage,
            temperature
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock seconds per (method, seed) cell; the one nondeterministic
/// table, kept out of the reproducibility comparison.
pub fn write_timing_csv(rows: &[SeedMetrics], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "method,seed,wall_time_seconds")?;
    for row in rows {
        writeln!(w, "{},{},{}", row.method, row.seed, row.wall_time_seconds)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("write_aggregate_csv"));
    }
    let taus: Vec<f64> = rows[0].coverage_at.iter().map(|c| c.tau).collect();
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "method,seeds,accuracy_mean,accuracy_std,ece_mean,ece_std,aurc_mean,aurc_std,\
         delta_ece_mean,delta_ece_std,robustness_mean,robustness_std{}",
        coverage_headers(&taus, &["_mean", "_std"])
    )?;
    for row in rows {
        let coverage: String = row
            .coverage_at
            .iter()
            .map(|c| format!(",{},{}", c.mean, c.std))
            .collect();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}{}",
            row.method,
            row.seeds,
            row.accuracy_mean,
            row.accuracy_std,
            row.ece_mean,
            row.ece_std,
            row.aurc_mean,
            row.aurc_std,
            row.delta_ece_mean,
            row.delta_ece_std,
            row.robustness_mean,
            row.robustness_std,
            coverage
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "arm,seed,ece,accuracy")?;
    for row in rows {
        writeln!(w, "{},{},{},{}", row.arm, row.seed, row.ece, row.accuracy)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sensitivity_csv(report: &SensitivityReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "lambda,samples,ece,accuracy")?;
    for cell in &report.cells {
        writeln!(w, "{},{},{},{}", cell.lambda, cell.samples, cell.ece, cell.accuracy)?;
    }
    w.flush()?;
    Ok(())
}
