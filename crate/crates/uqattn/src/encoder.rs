//! Toy transformer encoder classifier with an uncertainty-modulation hook
//! in its attention logits.
//!
//! Architecture: learned token + positional embeddings, `L` post-norm
//! encoder layers (multi-head scaled-dot-product self-attention, GELU
//! feed-forward, residual + layer norm), and a linear classification head
//! reading the hidden state at position 0 (the CLS slot reserved by the
//! task generator).
//!
//! Modulation multiplies attention logits by `exp(-lambda * U(x_j))` on
//! the key index `j`, identically across layers and heads, before softmax.
//! With `lambda = 0` or `U = 0` the multiplier is exactly `1.0`, so the
//! encoder reduces bitwise to a standard one. Modulation adds no trainable
//! parameters: baseline and modulated inference share the same
//! [`EncoderWeights`] object.
//!
//! Dropout placement: embedding output, attention probabilities (after
//! softmax), and feed-forward hidden activations. Key-padding masks set
//! padded-key logits to `-inf` after modulation (modulating `-inf` is
//! ill-defined; masking last preserves softmax semantics).

use std::cell::Cell;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    matmul, sample_dropout_mask, softmax_rows, DropoutMask, Matrix, RngStream,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    pub num_classes: usize,
    pub dropout_embedding: f64,
    pub dropout_attention: f64,
    pub dropout_ffn: f64,
    pub lambda: f64,
    pub mc_samples: usize,
}

impl EncoderConfig {
    /// Desk-scale default: d=32, H=4, L=4, ff=64, with the component rates
    /// 0.1/0.2/0.3, lambda 0.5, and M=5.
    pub fn toy(vocab_size: usize, max_seq_len: usize, num_classes: usize) -> Self {
        EncoderConfig {
            vocab_size,
            max_seq_len,
            num_layers: 4,
            num_heads: 4,
            model_dim: 32,
            head_dim: 8,
            ff_dim: 64,
            num_classes,
            dropout_embedding: 0.1,
            dropout_attention: 0.2,
            dropout_ffn: 0.3,
            lambda: 0.5,
            mc_samples: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.max_seq_len == 0
            || self.num_layers == 0
            || self.num_heads == 0
            || self.model_dim == 0
            || self.ff_dim == 0
        {
            return Err(Error::InvalidConfig("all dimensions must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("num_classes must be at least 2".into()));
        }
        if self.model_dim % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.head_dim * self.num_heads != self.model_dim {
            return Err(Error::InvalidConfig(format!(
                "head_dim {} * num_heads {} != model_dim {}",
                self.head_dim, self.num_heads, self.model_dim
            )));
        }
        for rate in [self.dropout_embedding, self.dropout_attention, self.dropout_ffn] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidRate { rate });
            }
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if self.mc_samples == 0 {
            return Err(Error::InvalidConfig("mc_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn rate_for(&self, component: Component) -> f64 {
        match component {
            Component::Embedding => self.dropout_embedding,
            Component::Attention => self.dropout_attention,
            Component::FeedForward => self.dropout_ffn,
        }
    }
}

// ---------------------------------------------------------------------------
// Stochasticity plan
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Embedding,
    Attention,
    FeedForward,
}

impl Component {
    fn tag(self) -> u64 {
        match self {
            Component::Embedding => 11,
            Component::Attention => 12,
            Component::FeedForward => 13,
        }
    }
}

/// Which dropout sites are live in one forward pass, and which RNG streams
/// feed them. Layer index 0 is the embedding; encoder layers are 1..=L.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanMode {
    /// No dropout anywhere: the deterministic baseline pass.
    Deterministic,
    /// Dropout at every configured site.
    AllLayers,
    /// Dropout only at the given layer (0 = embedding).
    SingleLayer(usize),
    /// Dropout gated per component kind across all layers.
    ComponentSubset {
        embedding: bool,
        attention: bool,
        ffn: bool,
    },
    /// Explicit per-layer mask seeds: entry `l` seeds layer `l`'s masks,
    /// `None` disables dropout there. The plan's own seed and pass index
    /// are ignored. This is the nested variance estimator's control
    /// surface: it freezes some layers' noise while varying another's.
    PerLayerSeeds(Vec<Option<u64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticityPlan {
    pub mode: PlanMode,
    pub seed: u64,
    pub pass_index: u64,
}

impl StochasticityPlan {
    pub fn deterministic() -> Self {
        StochasticityPlan {
            mode: PlanMode::Deterministic,
            seed: 0,
            pass_index: 0,
        }
    }

    pub fn all_layers(seed: u64, pass_index: u64) -> Self {
        StochasticityPlan {
            mode: PlanMode::AllLayers,
            seed,
            pass_index,
        }
    }

    pub fn single_layer(layer: usize, seed: u64, pass_index: u64) -> Self {
        StochasticityPlan {
            mode: PlanMode::SingleLayer(layer),
            seed,
            pass_index,
        }
    }

    pub fn component_subset(
        embedding: bool,
        attention: bool,
        ffn: bool,
        seed: u64,
        pass_index: u64,
    ) -> Self {
        StochasticityPlan {
            mode: PlanMode::ComponentSubset { embedding, attention, ffn },
            seed,
            pass_index,
        }
    }

    pub fn per_layer_seeds(seeds: Vec<Option<u64>>) -> Self {
        StochasticityPlan {
            mode: PlanMode::PerLayerSeeds(seeds),
            seed: 0,
            pass_index: 0,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.mode, PlanMode::Deterministic)
    }

    /// Mask stream for `(layer, component)`, or `None` when the plan
    /// disables dropout there. Streams are derived, never drawn from, so
    /// call order cannot perturb mask contents.
    pub fn mask_stream(&self, layer: usize, component: Component) -> Option<RngStream> {
        let derived = || {
            RngStream::new(self.seed)
                .substream(self.pass_index)
                .substream(layer as u64)
                .substream(component.tag())
        };
        match &self.mode {
            PlanMode::Deterministic => None,
            PlanMode::AllLayers => Some(derived()),
            PlanMode::SingleLayer(l) => (*l == layer).then(derived),
            PlanMode::ComponentSubset { embedding, attention, ffn } => {
                let on = match component {
                    Component::Embedding => *embedding,
                    Component::Attention => *attention,
                    Component::FeedForward => *ffn,
                };
                on.then(derived)
            }
            PlanMode::PerLayerSeeds(seeds) => seeds
                .get(layer)
                .copied()
                .flatten()
                .map(|s| RngStream::new(s).substream(component.tag())),
        }
    }

    /// Sample the mask for `(layer, component)` if the plan and rate call
    /// for one. `sub` distinguishes sites within a component (head index).
    pub(crate) fn maybe_mask(
        &self,
        layer: usize,
        component: Component,
        sub: u64,
        shape: (usize, usize),
        rate: f64,
    ) -> Result<Option<DropoutMask>> {
        if rate == 0.0 {
            return Ok(None);
        }
        match self.mask_stream(layer, component) {
            None => Ok(None),
            Some(stream) => {
                let mut stream = stream.substream(sub);
                Ok(Some(sample_dropout_mask(&mut stream, shape, rate)?))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ff1: Matrix,
    pub ff1_bias: Vec<f64>,
    pub ff2: Matrix,
    pub ff2_bias: Vec<f64>,
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderWeights {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub classifier_w: Matrix,
    pub classifier_b: Vec<f64>,
}

fn xavier(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::random_uniform(rows, cols, -limit, limit, rng)
}

impl EncoderWeights {
    /// Xavier-uniform projection weights, small uniform embeddings, unit
    /// layer-norm gains, zero biases. Per-tensor substreams keep the init
    /// of each tensor independent of the others' sizes.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = RngStream::new(seed);
        let d = config.model_dim;
        let ff = config.ff_dim;
        let mut emb = root.substream(1);
        let mut pos = root.substream(2);
        let mut cls = root.substream(3);
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let base = root.substream(16 + l as u64);
            let s = |tag: u64| base.substream(tag);
            layers.push(LayerWeights {
                wq: xavier(d, d, &mut s(1)),
                wk: xavier(d, d, &mut s(2)),
                wv: xavier(d, d, &mut s(3)),
                wo: xavier(d, d, &mut s(4)),
                ff1: xavier(d, ff, &mut s(5)),
                ff1_bias: vec![0.0; ff],
                ff2: xavier(ff, d, &mut s(6)),
                ff2_bias: vec![0.0; d],
                ln1_gain: vec![1.0; d],
                ln1_bias: vec![0.0; d],
                ln2_gain: vec![1.0; d],
                ln2_bias: vec![0.0; d],
            });
        }
        Ok(EncoderWeights {
            token_embedding: Matrix::random_uniform(config.vocab_size, d, -0.05, 0.05, &mut emb),
            position_embedding: Matrix::random_uniform(
                config.max_seq_len,
                d,
                -0.05,
                0.05,
                &mut pos,
            ),
            layers,
            classifier_w: xavier(d, config.num_classes, &mut cls),
            classifier_b: vec![0.0; config.num_classes],
        })
    }

    pub fn validate(&self, config: &EncoderConfig) -> Result<()> {
        config.validate()?;
        let d = config.model_dim;
        let ff = config.ff_dim;
        let check = |name: &str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if m.shape() != (rows, cols) {
                return Err(Error::DimMismatch {
                    op: "weight validation",
                    left: format!("{name} expected {rows}x{cols}"),
                    right: format!("{}x{}", m.rows(), m.cols()),
                });
            }
            if !m.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        let check_vec = |name: &str, v: &[f64], len: usize| -> Result<()> {
            if v.len() != len {
                return Err(Error::DimMismatch {
                    op: "weight validation",
                    left: format!("{name} expected len {len}"),
                    right: format!("len {}", v.len()),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        check("token_embedding", &self.token_embedding, config.vocab_size, d)?;
        check("position_embedding", &self.position_embedding, config.max_seq_len, d)?;
        if self.layers.len() != config.num_layers {
            return Err(Error::InvalidConfig(format!(
                "expected {} layers, found {}",
                config.num_layers,
                self.layers.len()
            )));
        }
        for (l, lw) in self.layers.iter().enumerate() {
            let name = |t: &str| format!("layer {l} {t}");
            check(&name("wq"), &lw.wq, d, d)?;
            check(&name("wk"), &lw.wk, d, d)?;
            check(&name("wv"), &lw.wv, d, d)?;
            check(&name("wo"), &lw.wo, d, d)?;
            check(&name("ff1"), &lw.ff1, d, ff)?;
            check(&name("ff2"), &lw.ff2, ff, d)?;
            check_vec(&name("ff1_bias"), &lw.ff1_bias, ff)?;
            check_vec(&name("ff2_bias"), &lw.ff2_bias, d)?;
            check_vec(&name("ln1_gain"), &lw.ln1_gain, d)?;
            check_vec(&name("ln1_bias"), &lw.ln1_bias, d)?;
            check_vec(&name("ln2_gain"), &lw.ln2_gain, d)?;
            check_vec(&name("ln2_bias"), &lw.ln2_bias, d)?;
        }
        check("classifier_w", &self.classifier_w, d, config.num_classes)?;
        check_vec("classifier_b", &self.classifier_b, config.num_classes)?;
        Ok(())
    }

    pub fn zeros_like(config: &EncoderConfig) -> Self {
        let d = config.model_dim;
        let ff = config.ff_dim;
        EncoderWeights {
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_seq_len, d),
            layers: (0..config.num_layers)
                .map(|_| LayerWeights {
                    wq: Matrix::zeros(d, d),
                    wk: Matrix::zeros(d, d),
                    wv: Matrix::zeros(d, d),
                    wo: Matrix::zeros(d, d),
                    ff1: Matrix::zeros(d, ff),
                    ff1_bias: vec![0.0; ff],
                    ff2: Matrix::zeros(ff, d),
                    ff2_bias: vec![0.0; d],
                    ln1_gain: vec![0.0; d],
                    ln1_bias: vec![0.0; d],
                    ln2_gain: vec![0.0; d],
                    ln2_bias: vec![0.0; d],
                })
                .collect(),
            classifier_w: Matrix::zeros(d, config.num_classes),
            classifier_b: vec![0.0; config.num_classes],
        }
    }

    /// Canonical flat parameter order: token embedding, position
    /// embedding, then per layer wq, wk, wv, wo, ff1, ff1_bias, ff2,
    /// ff2_bias, ln1_gain, ln1_bias, ln2_gain, ln2_bias, then classifier
    /// weight and bias. Row-major within each tensor.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.token_embedding.data());
        out.extend_from_slice(self.position_embedding.data());
        for lw in &self.layers {
            out.extend_from_slice(lw.wq.data());
            out.extend_from_slice(lw.wk.data());
            out.extend_from_slice(lw.wv.data());
            out.extend_from_slice(lw.wo.data());
            out.extend_from_slice(lw.ff1.data());
            out.extend_from_slice(&lw.ff1_bias);
            out.extend_from_slice(lw.ff2.data());
            out.extend_from_slice(&lw.ff2_bias);
            out.extend_from_slice(&lw.ln1_gain);
            out.extend_from_slice(&lw.ln1_bias);
            out.extend_from_slice(&lw.ln2_gain);
            out.extend_from_slice(&lw.ln2_bias);
        }
        out.extend_from_slice(self.classifier_w.data());
        out.extend_from_slice(&self.classifier_b);
        out
    }

    pub fn param_count(config: &EncoderConfig) -> usize {
        let d = config.model_dim;
        let ff = config.ff_dim;
        let per_layer = 4 * d * d + d * ff + ff + ff * d + d + 4 * d;
        config.vocab_size * d
            + config.max_seq_len * d
            + config.num_layers * per_layer
            + d * config.num_classes
            + config.num_classes
    }

    pub fn unflatten(config: &EncoderConfig, flat: &[f64]) -> Result<Self> {
        let expect = Self::param_count(config);
        if flat.len() != expect {
            return Err(Error::DimMismatch {
                op: "unflatten",
                left: format!("param count {expect}"),
                right: format!("len {}", flat.len()),
            });
        }
        let mut pos = 0usize;
        let mut take_mat = |rows: usize, cols: usize| -> Matrix {
            let n = rows * cols;
            let m = Matrix::from_vec(rows, cols, flat[pos..pos + n].to_vec()).expect("sized slice");
            pos += n;
            m
        };
        let d = config.model_dim;
        let ff = config.ff_dim;
        let token_embedding = take_mat(config.vocab_size, d);
        let position_embedding = take_mat(config.max_seq_len, d);
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            let wq = take_mat(d, d);
            let wk = take_mat(d, d);
            let wv = take_mat(d, d);
            let wo = take_mat(d, d);
            let ff1 = take_mat(d, ff);
            let ff1_bias = take_mat(1, ff).data().to_vec();
            let ff2 = take_mat(ff, d);
            let ff2_bias = take_mat(1, d).data().to_vec();
            let ln1_gain = take_mat(1, d).data().to_vec();
            let ln1_bias = take_mat(1, d).data().to_vec();
            let ln2_gain = take_mat(1, d).data().to_vec();
            let ln2_bias = take_mat(1, d).data().to_vec();
            layers.push(LayerWeights {
                wq, wk, wv, wo, ff1, ff1_bias, ff2, ff2_bias,
                ln1_gain, ln1_bias, ln2_gain, ln2_bias,
            });
        }
        let classifier_w = take_mat(d, config.num_classes);
        let classifier_b = take_mat(1, config.num_classes).data().to_vec();
        Ok(EncoderWeights {
            token_embedding,
            position_embedding,
            layers,
            classifier_w,
            classifier_b,
        })
    }
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON weight container with a config echo. serde_json prints
/// f64 values exactly (shortest round-trip form), so save/load round-trips
/// are bit-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub weights: EncoderWeights,
}

impl Checkpoint {
    pub fn new(config: EncoderConfig, weights: EncoderWeights) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config,
            weights,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer(&mut w, self).map_err(|e| Error::Format(e.to_string()))?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let r = std::io::BufReader::new(file);
        let ckpt: Checkpoint =
            serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        ckpt.weights.validate(&ckpt.config)?;
        Ok(ckpt)
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Per-pass record: h^(0)..h^(L), post-softmax attention probabilities per
/// layer and head (before attention dropout), and the final class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub hidden: Vec<Matrix>,
    pub attention: Vec<Vec<Matrix>>,
    pub logits: Vec<f64>,
}

thread_local! {
    static EMBED_CALLS: Cell<u64> = const { Cell::new(0) };
    static ENCODE_CALLS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassCounters {
    pub embed_calls: u64,
    pub encode_calls: u64,
}

/// Thread-local instrumentation: how many embedding computations and full
/// encoder passes ran on this thread since the last reset. Tests use this
/// to check that MC inference runs exactly M passes with no auxiliary
/// embedding-only stage.
pub fn pass_counters() -> PassCounters {
    PassCounters {
        embed_calls: EMBED_CALLS.with(|c| c.get()),
        encode_calls: ENCODE_CALLS.with(|c| c.get()),
    }
}

pub fn reset_pass_counters() {
    EMBED_CALLS.with(|c| c.set(0));
    ENCODE_CALLS.with(|c| c.set(0));
}

/// GELU, tanh approximation. Smooth everywhere, which keeps central
/// finite-difference gradient checks well conditioned.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Row-wise layer norm over the feature dimension.
pub fn layer_norm(m: &Matrix, gain: &[f64], bias: &[f64]) -> Matrix {
    let d = m.cols();
    debug_assert_eq!(gain.len(), d);
    debug_assert_eq!(bias.len(), d);
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (v, (g, b)) in row.iter_mut().zip(gain.iter().zip(bias)) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    out
}

/// Token + positional embedding lookup with embedding dropout per plan.
/// The output is the pass's `z` sample.
pub fn embed(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
    plan: &StochasticityPlan,
) -> Result<Matrix> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("embed: token sequence"));
    }
    if tokens.len() > config.max_seq_len {
        return Err(Error::InvalidConfig(format!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            config.max_seq_len
        )));
    }
    let d = config.model_dim;
    let mut z = Matrix::zeros(tokens.len(), d);
    for (j, &id) in tokens.iter().enumerate() {
        if id >= config.vocab_size {
            return Err(Error::OutOfVocab { id, vocab: config.vocab_size });
        }
        let tok = weights.token_embedding.row(id);
        let pos = weights.position_embedding.row(j);
        let row = z.row_mut(j);
        for k in 0..d {
            row[k] = tok[k] + pos[k];
        }
    }
    if let Some(mask) =
        plan.maybe_mask(0, Component::Embedding, 0, z.shape(), config.dropout_embedding)?
    {
        z = mask.apply(&z)?;
    }
    EMBED_CALLS.with(|c| c.set(c.get() + 1));
    Ok(z)
}

/// Scaled dot-product attention logits `q kᵀ / sqrt(head_dim)`.
///
/// `head_dim` enters only through the scale, so callers may score
/// projections whose width differs from the nominal head width.
pub fn attention_logits(q: &Matrix, k: &Matrix, head_dim: usize) -> Result<Matrix> {
    if q.cols() != k.cols() {
        return Err(Error::DimMismatch {
            op: "attention_logits",
            left: format!("{}x{}", q.rows(), q.cols()),
            right: format!("{}x{}", k.rows(), k.cols()),
        });
    }
    if head_dim == 0 {
        return Err(Error::InvalidConfig("head_dim must be positive".into()));
    }
    let scores = matmul(q, &k.transpose())?;
    Ok(scores.scale(1.0 / (head_dim as f64).sqrt()))
}

/// Damp attention logits by per-key uncertainty:
/// `a[i][j] * exp(-lambda * u[j])`. The multiplier depends on the key
/// index only; `lambda = 0` or `u = 0` leaves the input bitwise unchanged
/// (`exp(-0) = 1.0` exactly).
pub fn modulate_logits(a: &Matrix, token_uncertainty: &[f64], lambda: f64) -> Result<Matrix> {
    if token_uncertainty.len() != a.cols() {
        return Err(Error::DimMismatch {
            op: "modulate_logits",
            left: format!("{} key columns", a.cols()),
            right: format!("{} uncertainty entries", token_uncertainty.len()),
        });
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    for (index, &value) in token_uncertainty.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NegativeUncertainty { index, value });
        }
    }
    let multipliers: Vec<f64> = token_uncertainty
        .iter()
        .map(|u| (-lambda * u).exp())
        .collect();
    let mut out = a.clone();
    for r in 0..out.rows() {
        for (v, m) in out.row_mut(r).iter_mut().zip(&multipliers) {
            *v *= m;
        }
    }
    Ok(out)
}

/// Run the encoder stack on an already-computed embedding matrix.
///
/// `token_uncertainty = None` is treated as all-zero (baseline attention).
/// `key_padding[j] = true` removes key `j` from every attention softmax;
/// the padding mask is applied after modulation.
pub fn encode_embedded(
    embedded: &Matrix,
    weights: &EncoderWeights,
    config: &EncoderConfig,
    plan: &StochasticityPlan,
    token_uncertainty: Option<&[f64]>,
    key_padding: Option<&[bool]>,
) -> Result<ForwardTrace> {
    config.validate()?;
    let t = embedded.rows();
    let d = config.model_dim;
    let dk = config.head_dim;
    if embedded.cols() != d {
        return Err(Error::DimMismatch {
            op: "encode_embedded",
            left: format!("model_dim {d}"),
            right: format!("embedding width {}", embedded.cols()),
        });
    }
    if let Some(u) = token_uncertainty {
        if u.len() != t {
            return Err(Error::DimMismatch {
                op: "encode_embedded",
                left: format!("{t} tokens"),
                right: format!("{} uncertainty entries", u.len()),
            });
        }
    }
    if let Some(p) = key_padding {
        if p.len() != t {
            return Err(Error::DimMismatch {
                op: "encode_embedded",
                left: format!("{t} tokens"),
                right: format!("{} padding flags", p.len()),
            });
        }
        if p.iter().all(|x| *x) {
            return Err(Error::EmptyInput("encode_embedded: all keys padded"));
        }
    }

    let mut hidden = Vec::with_capacity(config.num_layers + 1);
    let mut attention = Vec::with_capacity(config.num_layers);
    hidden.push(embedded.clone());
    let mut h = embedded.clone();

    for (l, lw) in weights.layers.iter().enumerate() {
        let layer_index = l + 1;
        let q = matmul(&h, &lw.wq)?;
        let k = matmul(&h, &lw.wk)?;
        let v = matmul(&h, &lw.wv)?;
        let mut layer_attn = Vec::with_capacity(config.num_heads);
        let mut ctx = Matrix::zeros(t, d);
        for head in 0..config.num_heads {
            let lo = head * dk;
            let hi = lo + dk;
            let qh = q.columns(lo, hi);
            let kh = k.columns(lo, hi);
            let vh = v.columns(lo, hi);
            let mut scores = attention_logits(&qh, &kh, dk)?;
            if let Some(u) = token_uncertainty {
                scores = modulate_logits(&scores, u, config.lambda)?;
            }
            if let Some(p) = key_padding {
                for r in 0..t {
                    for (j, padded) in p.iter().enumerate() {
                        if *padded {
                            scores.set(r, j, f64::NEG_INFINITY);
                        }
                    }
                }
            }
            let alpha = softmax_rows(&scores);
            layer_attn.push(alpha.clone());
            let alpha_dropped = match plan.maybe_mask(
                layer_index,
                Component::Attention,
                head as u64,
                alpha.shape(),
                config.dropout_attention,
            )? {
                Some(mask) => mask.apply(&alpha)?,
                None => alpha,
            };
            let ctx_h = matmul(&alpha_dropped, &vh)?;
            for r in 0..t {
                let src = ctx_h.row(r);
                let dst = ctx.row_mut(r);
                dst[lo..hi].copy_from_slice(src);
            }
        }
        attention.push(layer_attn);
        let attn_out = matmul(&ctx, &lw.wo)?;
        let h1 = layer_norm(&h.add(&attn_out)?, &lw.ln1_gain, &lw.ln1_bias);

        let mut ff_hidden = matmul(&h1, &lw.ff1)?;
        for r in 0..t {
            for (v, b) in ff_hidden.row_mut(r).iter_mut().zip(&lw.ff1_bias) {
                *v = gelu(*v + b);
            }
        }
        let ff_hidden = match plan.maybe_mask(
            layer_index,
            Component::FeedForward,
            0,
            ff_hidden.shape(),
            config.dropout_ffn,
        )? {
            Some(mask) => mask.apply(&ff_hidden)?,
            None => ff_hidden,
        };
        let mut ff_out = matmul(&ff_hidden, &lw.ff2)?;
        for r in 0..t {
            for (v, b) in ff_out.row_mut(r).iter_mut().zip(&lw.ff2_bias) {
                *v += b;
            }
        }
        h = layer_norm(&h1.add(&ff_out)?, &lw.ln2_gain, &lw.ln2_bias);
        hidden.push(h.clone());
    }

    let cls = h.row(0);
    let mut logits = weights.classifier_b.clone();
    for (c, logit) in logits.iter_mut().enumerate() {
        let mut acc = *logit;
        for k in 0..d {
            acc += cls[k] * weights.classifier_w.get(k, c);
        }
        *logit = acc;
    }
    ENCODE_CALLS.with(|c| c.set(c.get() + 1));
    Ok(ForwardTrace { hidden, attention, logits })
}

/// Full pass: embed, then run the encoder stack. See [`encode_embedded`].
pub fn forward(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
    plan: &StochasticityPlan,
    token_uncertainty: Option<&[f64]>,
) -> Result<ForwardTrace> {
    let z = embed(tokens, weights, config, plan)?;
    encode_embedded(&z, weights, config, plan, token_uncertainty, None)
}

/// [`forward`] with a key-padding mask.
pub fn forward_with_padding(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
    plan: &StochasticityPlan,
    token_uncertainty: Option<&[f64]>,
    key_padding: Option<&[bool]>,
) -> Result<ForwardTrace> {
    let z = embed(tokens, weights, config, plan)?;
    encode_embedded(&z, weights, config, plan, token_uncertainty, key_padding)
}
