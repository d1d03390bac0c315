//! Subcommand implementations. Every command resolves its inputs to a
//! fully specified configuration, does the work through the library
//! crate, and writes its outputs plus a `manifest.json` into `--out`.
//! Data artifacts are pure functions of their inputs; only the manifest
//! timestamp and the timing table vary between identical reruns.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use uqattn::bench::{
    aggregate_rows, dump_split, generate_task, measure_efficiency, run_ablation,
    run_sensitivity, train_encoder, train_encoder_logged, write_ablation_csv,
    write_aggregate_csv, write_seed_metrics_csv, write_sensitivity_csv, write_timing_csv,
    DatasetSplits, EfficiencyReport, EvalSettings, Example, Method, ModelSource, SeedMetrics,
    SyntheticTaskSpec, TrainConfig,
};
use uqattn::calibration::{
    apply_temperature, compute_ece, fit_temperature, shift_metrics, write_bin_csv,
    write_calibration_json, PredictionRecord,
};
use uqattn::diagnostics::{estimate_layer_variance, write_variance_csv};
use uqattn::encoder::{Checkpoint, EncoderConfig};
use uqattn::linalg::RngStream;
use uqattn::mcinfer::{collapse_dump_labels, read_prediction_dump, write_prediction_dump};
use uqattn::selective::{risk_coverage, write_curve_csv, write_curve_summary_json};
use uqattn::{Error, Result};

use crate::dataset;
use crate::manifest::RunManifest;
use crate::{
    BenchEfficiencyArgs, DecomposeArgs, ExperimentArgs, GenerateArgs, InferArgs, InferMode,
    MetricsArgs, TrainArgs,
};

/// Split tag for standalone `infer` dumps. Experiments tag their splits
/// 1-4, so a standalone dump at the same seed never shares mask streams
/// with an experiment cell.
const INFER_SPLIT_TAG: u64 = 0;

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn validate_examples(examples: &[Example], config: &EncoderConfig) -> Result<()> {
    for example in examples {
        if example.tokens.len() > config.max_seq_len {
            return Err(Error::InvalidConfig(format!(
                "example has {} tokens but the encoder accepts at most {}",
                example.tokens.len(),
                config.max_seq_len
            )));
        }
        for &id in &example.tokens {
            if id >= config.vocab_size {
                return Err(Error::OutOfVocab {
                    id,
                    vocab: config.vocab_size,
                });
            }
        }
    }
    Ok(())
}

/// Builds the inference method for a mode. Unset knobs default to the
/// checkpoint's stored configuration; flags that a mode cannot honor are
/// ignored with a warning rather than an error.
fn build_method(
    mode: InferMode,
    config: &EncoderConfig,
    lambda: Option<f64>,
    samples: Option<usize>,
    emb: Option<f64>,
    att: Option<f64>,
    ffn: Option<f64>,
    warn: bool,
) -> Method {
    let emb_rate = emb.unwrap_or(config.dropout_embedding);
    let att_rate = att.unwrap_or(config.dropout_attention);
    let ffn_rate = ffn.unwrap_or(config.dropout_ffn);
    let pass_count = samples.unwrap_or(config.mc_samples);
    match mode {
        InferMode::Baseline => {
            let ignored = [
                ("--lambda", lambda.is_some()),
                ("--mc-samples", samples.is_some()),
                ("--dropout-emb", emb.is_some()),
                ("--dropout-att", att.is_some()),
                ("--dropout-ffn", ffn.is_some()),
            ];
            for (flag, given) in ignored {
                if given && warn {
                    eprintln!("warning: {flag} is ignored in baseline mode (single dropout-free pass)");
                }
            }
            Method::BaselineDeterministic
        }
        InferMode::Mc => {
            if lambda.is_some() && warn {
                eprintln!("warning: --lambda is ignored in mc mode (attention modulation stays off)");
            }
            Method::McComponent {
                emb: emb_rate,
                att: att_rate,
                ffn: ffn_rate,
                samples: pass_count,
            }
        }
        InferMode::Uat => Method::UatLite {
            lambda: lambda.unwrap_or(config.lambda),
            samples: pass_count,
            emb: emb_rate,
            att: att_rate,
            ffn: ffn_rate,
        },
    }
}

fn mode_name(mode: InferMode) -> &'static str {
    match mode {
        InferMode::Baseline => "baseline",
        InferMode::Mc => "mc",
        InferMode::Uat => "uat",
    }
}

fn write_dataset_dir(dir: &Path, spec: &SyntheticTaskSpec, splits: &DatasetSplits) -> Result<()> {
    fs::create_dir_all(dir)?;
    dataset::write_split(&dir.join("train.jsonl"), &splits.train, "train")?;
    dataset::write_split(&dir.join("val.jsonl"), &splits.val, "val")?;
    dataset::write_split(&dir.join("test_id.jsonl"), &splits.test_id, "test_id")?;
    dataset::write_split(&dir.join("test_ood.jsonl"), &splits.test_ood, "test_ood")?;
    write_json(&dir.join("task_spec.json"), spec)
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let spec: SyntheticTaskSpec = read_json(&args.config)?;
    spec.validate()?;
    let splits = generate_task(&spec)?;
    write_dataset_dir(&args.out, &spec, &splits)?;
    RunManifest::new("generate", serde_json::to_value(&spec)?, vec![spec.seed], &args.out)
        .with_config_path(&args.config)
        .write(&args.out)?;
    println!(
        "generated {} train / {} val / {} test_id / {} test_ood examples into {}",
        splits.train.len(),
        splits.val.len(),
        splits.test_id.len(),
        splits.test_ood.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let examples = dataset::read_examples(&args.data.join("train.jsonl"))?;
    let encoder_config: EncoderConfig = match &args.encoder_config {
        Some(path) => read_json(path)?,
        None => {
            let spec: SyntheticTaskSpec = read_json(&args.data.join("task_spec.json"))?;
            EncoderConfig::toy(spec.vocab_size, spec.seq_len, spec.num_classes)
        }
    };
    encoder_config.validate()?;
    let train_config: TrainConfig = match &args.train_config {
        Some(path) => read_json(path)?,
        None => TrainConfig::default(),
    };
    validate_examples(&examples, &encoder_config)?;

    let outcome = train_encoder_logged(&examples, &encoder_config, &train_config, args.seed)?;
    fs::create_dir_all(&args.out)?;
    Checkpoint::new(encoder_config.clone(), outcome.weights)
        .save(&args.out.join("checkpoint.json"))?;
    write_json(&args.out.join("train_log.json"), &outcome.log)?;
    let resolved = json!({
        "data": args.data.display().to_string(),
        "encoder": encoder_config,
        "train": train_config,
        "seed": args.seed,
    });
    RunManifest::new("train", resolved, vec![args.seed], &args.out).write(&args.out)?;
    println!(
        "trained on {} examples for {} epochs: loss {:.4} -> {:.4}; checkpoint in {}",
        examples.len(),
        train_config.epochs,
        outcome.log.initial_loss,
        outcome.log.final_loss,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

pub fn cmd_infer(args: &InferArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let examples = dataset::read_examples(&args.data)?;
    validate_examples(&examples, &checkpoint.config)?;
    let method = build_method(
        args.mode,
        &checkpoint.config,
        args.lambda,
        args.mc_samples,
        args.dropout_emb,
        args.dropout_att,
        args.dropout_ffn,
        true,
    );
    let source = ModelSource::Single(checkpoint.weights);
    let dump = dump_split(
        &method,
        &source,
        &checkpoint.config,
        &examples,
        args.seed,
        INFER_SPLIT_TAG,
        args.include_per_pass,
    )?;
    fs::create_dir_all(&args.out)?;
    write_prediction_dump(&args.out.join("predictions.jsonl"), &dump)?;
    let resolved = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "data": args.data.display().to_string(),
        "mode": mode_name(args.mode),
        "method": method,
        "seed": args.seed,
        "include_per_pass": args.include_per_pass,
    });
    RunManifest::new("infer", resolved, vec![args.seed], &args.out).write(&args.out)?;
    println!(
        "wrote {} prediction records ({}) to {}",
        dump.len(),
        method.label(),
        args.out.join("predictions.jsonl").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// decompose
// ---------------------------------------------------------------------------

pub fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let examples = dataset::read_examples(&args.data)?;
    let Some(example) = examples.get(args.index) else {
        return Err(Error::InvalidConfig(format!(
            "--index {} is out of range for a file of {} examples",
            args.index,
            examples.len()
        )));
    };
    let mut config = checkpoint.config.clone();
    if let Some(rate) = args.dropout_emb {
        config.dropout_embedding = rate;
    }
    if let Some(rate) = args.dropout_att {
        config.dropout_attention = rate;
    }
    if let Some(rate) = args.dropout_ffn {
        config.dropout_ffn = rate;
    }
    validate_examples(std::slice::from_ref(example), &config)?;

    let report = estimate_layer_variance(
        &example.tokens,
        &checkpoint.weights,
        &config,
        args.seed,
        args.outer,
        args.inner,
    )?;
    fs::create_dir_all(&args.out)?;
    write_variance_csv(&report, &args.out.join("variance.csv"))?;
    write_json(&args.out.join("variance.json"), &report)?;
    let resolved = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "data": args.data.display().to_string(),
        "index": args.index,
        "outer": args.outer,
        "inner": args.inner,
        "seed": args.seed,
        "dropout_embedding": config.dropout_embedding,
        "dropout_attention": config.dropout_attention,
        "dropout_ffn": config.dropout_ffn,
    });
    RunManifest::new("decompose", resolved, vec![args.seed], &args.out).write(&args.out)?;
    println!(
        "variance decomposition for example {} ({} outer x {} inner): total {:.6e}, residual {:.3e} -> {}",
        args.index,
        report.outer_samples,
        report.inner_samples,
        report.total_variance,
        report.residual,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

fn to_records(dump: &[uqattn::mcinfer::PredictionDumpRecord]) -> Vec<PredictionRecord> {
    dump.iter().map(PredictionRecord::from_dump).collect()
}

pub fn cmd_metrics(args: &MetricsArgs) -> Result<()> {
    let mut dump = read_prediction_dump(&args.predictions)?;
    let mut ood_dump = args.ood.as_deref().map(read_prediction_dump).transpose()?;
    let mut val_dump = args
        .fit_temperature
        .as_deref()
        .map(read_prediction_dump)
        .transpose()?;
    if let Some(map) = &args.collapse {
        dump = collapse_dump_labels(&dump, map)?;
        ood_dump = ood_dump.map(|d| collapse_dump_labels(&d, map)).transpose()?;
        val_dump = val_dump.map(|d| collapse_dump_labels(&d, map)).transpose()?;
    }

    let mut records = to_records(&dump);
    let mut ood_records = ood_dump.as_deref().map(to_records);
    let temperature = match &val_dump {
        Some(val) => {
            let t = fit_temperature(&to_records(val))?;
            records = apply_temperature(&records, t)?;
            ood_records = ood_records.map(|r| apply_temperature(&r, t)).transpose()?;
            Some(t)
        }
        None => None,
    };

    let mut report = compute_ece(&records, args.bins)?;
    report.temperature = temperature;
    let curve = risk_coverage(&records, &args.thresholds)?;

    fs::create_dir_all(&args.out)?;
    write_calibration_json(&report, &args.out.join("calibration.json"))?;
    write_bin_csv(&report, &args.out.join("bins.csv"))?;
    write_curve_csv(&curve, &args.out.join("curve.csv"))?;
    write_curve_summary_json(&curve, &args.out.join("curve_summary.json"))?;

    let mut shift_note = String::new();
    if let Some(ood_records) = &ood_records {
        let mut ood_report = compute_ece(ood_records, args.bins)?;
        ood_report.temperature = temperature;
        write_calibration_json(&ood_report, &args.out.join("ood_calibration.json"))?;
        let shift = shift_metrics(&report, &ood_report)?;
        write_json(&args.out.join("shift.json"), &shift)?;
        shift_note = format!(", delta_ece {:+.4}", shift.delta_ece);
    }

    let resolved = json!({
        "predictions": args.predictions.display().to_string(),
        "ood": args.ood.as_ref().map(|p| p.display().to_string()),
        "bins": args.bins,
        "thresholds": args.thresholds,
        "fit_temperature": args.fit_temperature.as_ref().map(|p| p.display().to_string()),
        "collapse": args.collapse,
        "temperature": temperature,
    });
    RunManifest::new("metrics", resolved, vec![], &args.out).write(&args.out)?;
    println!(
        "ece {:.4} over {} records ({} bins), accuracy {:.4}, aurc {:.4}{} -> {}",
        report.ece,
        records.len(),
        args.bins,
        report.accuracy_overall,
        curve.aurc,
        shift_note,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SensitivityGridSpec {
    pub lambdas: Vec<f64>,
    pub samples: Vec<usize>,
    /// (embedding, attention, feed-forward) dropout rates for every cell.
    pub rates: (f64, f64, f64),
    #[serde(default)]
    pub seed: u64,
}

/// Complete experiment description. Optional sections resolve to
/// defaults; the run echoes the fully resolved manifest next to its
/// outputs, and that echo replays the experiment exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub task: SyntheticTaskSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub train_seed: u64,
    pub roster: Vec<Method>,
    pub seeds: Vec<u64>,
    /// When true every seed evaluates one shared set of trained weights,
    /// so seeds vary only inference-time masks; when false each seed
    /// trains its own weights from a seed-specific stream.
    #[serde(default = "default_true")]
    pub share_checkpoint: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<SensitivityGridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSettings>,
}

fn resolve_manifest(mut m: ExperimentManifest) -> Result<ExperimentManifest> {
    m.task.validate()?;
    if m.roster.is_empty() {
        return Err(Error::InvalidConfig("experiment roster is empty".into()));
    }
    if m.seeds.is_empty() {
        return Err(Error::InvalidConfig("experiment seed list is empty".into()));
    }
    let mut labels: Vec<String> = m.roster.iter().map(Method::label).collect();
    labels.sort();
    for pair in labels.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::InvalidConfig(format!(
                "duplicate method in roster: {}",
                pair[0]
            )));
        }
    }
    let mut seeds = m.seeds.clone();
    seeds.sort_unstable();
    for pair in seeds.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::InvalidConfig(format!("duplicate seed: {}", pair[0])));
        }
    }

    let encoder = m
        .encoder
        .take()
        .unwrap_or_else(|| EncoderConfig::toy(m.task.vocab_size, m.task.seq_len, m.task.num_classes));
    if encoder.vocab_size != m.task.vocab_size
        || encoder.max_seq_len < m.task.seq_len
        || encoder.num_classes != m.task.num_classes
    {
        return Err(Error::InvalidConfig(format!(
            "encoder (vocab {}, max seq {}, classes {}) does not fit the task \
             (vocab {}, seq {}, classes {})",
            encoder.vocab_size,
            encoder.max_seq_len,
            encoder.num_classes,
            m.task.vocab_size,
            m.task.seq_len,
            m.task.num_classes
        )));
    }
    encoder.validate()?;
    m.encoder = Some(encoder);
    m.train = Some(m.train.take().unwrap_or_default());
    m.eval = Some(m.eval.take().unwrap_or_default());

    if let Some(grid) = &m.sensitivity {
        if grid.lambdas.is_empty() || grid.samples.is_empty() {
            return Err(Error::InvalidConfig(
                "sensitivity grid needs at least one lambda and one pass count".into(),
            ));
        }
    }
    if let Some(method) = &m.ablation {
        if !matches!(method, Method::UatLite { .. }) {
            return Err(Error::InvalidConfig(
                "ablation arms derive from an uncertainty-modulated method".into(),
            ));
        }
    }
    Ok(m)
}

/// Loads each member checkpoint if present (resume), otherwise trains and
/// saves it. Member i's seed comes from substream i of `stream`, so
/// adding members never changes earlier ones.
fn trained_source(
    ckpt_dir: &Path,
    prefix: &str,
    members: usize,
    train_set: &[Example],
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    stream: &RngStream,
) -> Result<ModelSource> {
    let mut weights = Vec::with_capacity(members);
    for i in 0..members {
        let path = ckpt_dir.join(format!("{prefix}_{i}.json"));
        if path.exists() {
            let loaded = Checkpoint::load(&path)?;
            if loaded.config != *encoder_config {
                return Err(Error::InvalidConfig(format!(
                    "existing checkpoint {} was trained with a different encoder \
                     configuration; use a fresh output directory",
                    path.display()
                )));
            }
            weights.push(loaded.weights);
        } else {
            let seed = stream.substream(i as u64).seed();
            let trained = train_encoder(train_set, encoder_config, train_config, seed)?;
            Checkpoint::new(encoder_config.clone(), trained.clone()).save(&path)?;
            weights.push(trained);
        }
    }
    Ok(if weights.len() == 1 {
        ModelSource::Single(weights.pop().expect("one member"))
    } else {
        ModelSource::Ensemble(weights)
    })
}

/// One (method, seed) evaluation with file-level resume. A finished cell
/// is identified by its report file, which is written only after the
/// prediction dumps, so an interrupted cell recomputes cleanly.
fn run_cell(
    method: &Method,
    source: &ModelSource,
    encoder_config: &EncoderConfig,
    splits: &DatasetSplits,
    seed: u64,
    eval: &EvalSettings,
    pred_dir: &Path,
    report_dir: &Path,
) -> Result<SeedMetrics> {
    let label = method.label();
    let report_path = report_dir.join(format!("{label}_seed{seed}.json"));
    if report_path.exists() {
        return read_json(&report_path);
    }
    let (row, dumps) = uqattn::bench::evaluate_seed(method, source, encoder_config, splits, seed, eval)?;
    let named = [
        ("val", &dumps.val),
        ("test_id", &dumps.test_id),
        ("test_ood", &dumps.test_ood),
    ];
    for (tag, dump) in named {
        write_prediction_dump(&pred_dir.join(format!("{label}_seed{seed}_{tag}.jsonl")), dump)?;
    }
    write_json(&report_path, &row)?;
    Ok(row)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let manifest: ExperimentManifest = read_json(&args.manifest)?;
    let m = resolve_manifest(manifest)?;
    let encoder_config = m.encoder.as_ref().expect("resolved");
    let train_config = m.train.as_ref().expect("resolved");
    let eval = m.eval.as_ref().expect("resolved");

    let data_dir = args.out.join("data");
    let ckpt_dir = args.out.join("checkpoints");
    let pred_dir = args.out.join("predictions");
    let report_dir = args.out.join("reports");
    let table_dir = args.out.join("tables");
    for dir in [&ckpt_dir, &pred_dir, &report_dir, &table_dir] {
        fs::create_dir_all(dir)?;
    }
    // The echo goes out first so an interrupted run can be resumed or
    // replayed from the directory alone.
    write_json(&args.out.join("experiment_manifest.json"), &m)?;

    let splits = generate_task(&m.task)?;
    write_dataset_dir(&data_dir, &m.task, &splits)?;

    let members_needed = m
        .roster
        .iter()
        .map(Method::required_members)
        .max()
        .expect("roster is non-empty");
    let train_root = RngStream::new(m.train_seed);
    let sources: Vec<ModelSource> = if m.share_checkpoint {
        vec![trained_source(
            &ckpt_dir,
            "member",
            members_needed,
            &splits.train,
            encoder_config,
            train_config,
            &train_root,
        )?]
    } else {
        m.seeds
            .iter()
            .map(|&seed| {
                trained_source(
                    &ckpt_dir,
                    &format!("seed{seed}_member"),
                    members_needed,
                    &splits.train,
                    encoder_config,
                    train_config,
                    &train_root.substream(seed),
                )
            })
            .collect::<Result<_>>()?
    };

    // Evaluation cells in canonical (method-major, seed-minor) order.
    // Workers pull cells from a shared queue; every cell is a pure
    // function of its inputs, so the thread count cannot change any
    // output byte, only the wall times.
    struct Cell<'a> {
        method: &'a Method,
        seed: u64,
        source_index: usize,
    }
    let mut cells = Vec::with_capacity(m.roster.len() * m.seeds.len());
    for method in &m.roster {
        for (i, &seed) in m.seeds.iter().enumerate() {
            cells.push(Cell {
                method,
                seed,
                source_index: if m.share_checkpoint { 0 } else { i },
            });
        }
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<SeedMetrics>>>> = {
        let mut v = Vec::with_capacity(cells.len());
        v.resize_with(cells.len(), || None);
        Mutex::new(v)
    };
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= cells.len() {
            break;
        }
        let cell = &cells[i];
        let outcome = run_cell(
            cell.method,
            &sources[cell.source_index],
            encoder_config,
            &splits,
            cell.seed,
            eval,
            &pred_dir,
            &report_dir,
        );
        slots.lock().expect("slot lock")[i] = Some(outcome);
    };
    let threads = args.threads.max(1);
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(&worker);
            }
        });
    }

    let mut rows = Vec::with_capacity(cells.len());
    for slot in slots.into_inner().expect("slot lock") {
        rows.push(slot.expect("every cell ran")?);
    }
    write_seed_metrics_csv(&rows, &table_dir.join("per_seed.csv"))?;
    write_aggregate_csv(&aggregate_rows(&rows)?, &table_dir.join("aggregate.csv"))?;
    write_timing_csv(&rows, &table_dir.join("timing.csv"))?;

    if let Some(uat) = &m.ablation {
        let arms = run_ablation(&sources[0], encoder_config, &splits, uat, &m.seeds, eval)?;
        write_ablation_csv(&arms, &table_dir.join("ablation.csv"))?;
    }
    if let Some(grid) = &m.sensitivity {
        let report = run_sensitivity(
            &sources[0],
            encoder_config,
            &splits,
            &grid.lambdas,
            &grid.samples,
            grid.rates,
            grid.seed,
            eval,
        )?;
        write_sensitivity_csv(&report, &table_dir.join("sensitivity.csv"))?;
        write_json(&table_dir.join("sensitivity.json"), &report)?;
    }

    RunManifest::new("experiment", serde_json::to_value(&m)?, m.seeds.clone(), &args.out)
        .with_config_path(&args.manifest)
        .write(&args.out)?;
    println!(
        "experiment complete: {} methods x {} seeds -> {}",
        m.roster.len(),
        m.seeds.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// bench-efficiency
// ---------------------------------------------------------------------------

fn write_efficiency_csv(reports: &[EfficiencyReport], path: &Path) -> Result<()> {
    let mut text =
        String::from("method,passes,latency_mean_seconds,latency_std_seconds,warmup_runs,timed_runs\n");
    for r in reports {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method, r.passes, r.latency_mean_seconds, r.latency_std_seconds, r.warmup_runs, r.timed_runs
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_bench_efficiency(args: &BenchEfficiencyArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let examples = dataset::read_examples(&args.data)?;
    validate_examples(&examples[..1], &checkpoint.config)?;
    if args.samples_grid.is_empty() {
        return Err(Error::InvalidConfig(
            "--samples-grid needs at least one pass count".into(),
        ));
    }
    let tokens = &examples[0].tokens;
    let source = ModelSource::Single(checkpoint.weights);
    let mut reports = Vec::with_capacity(args.samples_grid.len());
    for (i, &samples) in args.samples_grid.iter().enumerate() {
        let method = build_method(
            args.mode,
            &checkpoint.config,
            args.lambda,
            Some(samples),
            args.dropout_emb,
            args.dropout_att,
            args.dropout_ffn,
            i == 0,
        );
        let seed = RngStream::new(args.seed).substream(samples as u64).seed();
        reports.push(measure_efficiency(
            &method,
            &source,
            &checkpoint.config,
            tokens,
            args.warmup,
            args.timed,
            seed,
        )?);
    }
    fs::create_dir_all(&args.out)?;
    write_efficiency_csv(&reports, &args.out.join("efficiency.csv"))?;
    write_json(&args.out.join("efficiency.json"), &reports)?;
    let resolved = json!({
        "checkpoint": args.checkpoint.display().to_string(),
        "data": args.data.display().to_string(),
        "mode": mode_name(args.mode),
        "samples_grid": args.samples_grid,
        "warmup": args.warmup,
        "timed": args.timed,
        "seed": args.seed,
    });
    RunManifest::new("bench-efficiency", resolved, vec![args.seed], &args.out).write(&args.out)?;
    for r in &reports {
        println!(
            "{}: {} passes, {:.3} ms/prediction (std {:.3} ms)",
            r.method,
            r.passes,
            r.latency_mean_seconds * 1e3,
            r.latency_std_seconds * 1e3
        );
    }
    println!("timing reports in {}", args.out.display());
    Ok(())
}
