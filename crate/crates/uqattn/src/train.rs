//! Minimal trainer for the toy encoder: manual backpropagation through the
//! fixed architecture, Adam updates, and mini-batch cross-entropy.
//!
//! Training runs the baseline encoder (no uncertainty modulation; U enters
//! only at inference time and adds no trainable parameters). Dropout is
//! active during training at the configured rates, with masks drawn from
//! per-example streams, so a training loss under frozen masks is a smooth
//! deterministic function of the weights. That is what makes central
//! finite-difference gradient checks meaningful.
//!
//! The cached forward pass here mirrors [`crate::encoder::encode_embedded`]
//! operation for operation; given the same plan the two produce bitwise
//! identical logits, which a test pins down.

use serde::{Deserialize, Serialize};

use crate::encoder::{
    gelu, EncoderConfig, EncoderWeights, StochasticityPlan, Component, LAYER_NORM_EPS,
};
use crate::error::{Error, Result};
use crate::linalg::{matmul, softmax_rows, DropoutMask, Matrix, RngStream};

/// One labeled training or evaluation example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !self.clip_norm.is_finite() || self.clip_norm < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "clip_norm must be finite and nonnegative, got {}",
                self.clip_norm
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean deterministic-pass cross-entropy over the train set before the
    /// first update.
    pub initial_loss: f64,
    /// Same quantity after the last update.
    pub final_loss: f64,
    /// Mean minibatch loss per epoch (dropout passes).
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: EncoderWeights,
    pub log: TrainLog,
}

// ---------------------------------------------------------------------------
// Cached forward pass
// ---------------------------------------------------------------------------

struct NormCache {
    xhat: Matrix,
    inv: Vec<f64>,
}

struct LayerCache {
    h_in: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    alphas: Vec<Matrix>,
    att_masks: Vec<Option<DropoutMask>>,
    alpha_dropped: Vec<Matrix>,
    ctx: Matrix,
    ln1: NormCache,
    h1: Matrix,
    f_pre: Matrix,
    ffn_mask: Option<DropoutMask>,
    f_drop: Matrix,
    ln2: NormCache,
}

struct ForwardCache {
    emb_mask: Option<DropoutMask>,
    layers: Vec<LayerCache>,
    h_out: Matrix,
    logits: Vec<f64>,
}

fn layer_norm_cached(m: &Matrix, gain: &[f64], bias: &[f64]) -> (Matrix, NormCache) {
    let d = m.cols();
    let mut out = m.clone();
    let mut xhat = Matrix::zeros(m.rows(), d);
    let mut inv_all = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let xr = xhat.row_mut(r);
        for (c, (v, (g, b))) in row.iter_mut().zip(gain.iter().zip(bias)).enumerate() {
            let normed = (*v - mean) * inv;
            xr[c] = normed;
            *v = normed * g + b;
        }
        inv_all.push(inv);
    }
    (out, NormCache { xhat, inv: inv_all })
}

fn layer_norm_backward(
    d_out: &Matrix,
    cache: &NormCache,
    gain: &[f64],
    d_gain: &mut [f64],
    d_bias: &mut [f64],
) -> Matrix {
    let d = d_out.cols() as f64;
    let mut dx = Matrix::zeros(d_out.rows(), d_out.cols());
    for r in 0..d_out.rows() {
        let dy = d_out.row(r);
        let xhat = cache.xhat.row(r);
        let inv = cache.inv[r];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..dy.len() {
            let dxhat = dy[c] * gain[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[c];
            d_gain[c] += dy[c] * xhat[c];
            d_bias[c] += dy[c];
        }
        mean_dxhat /= d;
        mean_dxhat_xhat /= d;
        let out = dx.row_mut(r);
        for c in 0..dy.len() {
            let dxhat = dy[c] * gain[c];
            out[c] = inv * (dxhat - mean_dxhat - xhat[c] * mean_dxhat_xhat);
        }
    }
    dx
}

fn apply_mask_ref(mask: &Option<DropoutMask>, m: Matrix) -> Result<Matrix> {
    match mask {
        Some(mk) => mk.apply(&m),
        None => Ok(m),
    }
}

/// Entrywise product with the mask's multiplier pattern (scale or zero);
/// identity when no mask.
fn mask_gradient(mask: &Option<DropoutMask>, mut grad: Matrix) -> Matrix {
    if let Some(mk) = mask {
        for r in 0..grad.rows() {
            for c in 0..grad.cols() {
                let v = grad.get(r, c) * mk.multiplier(r, c);
                grad.set(r, c, v);
            }
        }
    }
    grad
}

fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

fn forward_cached(
    tokens: &[usize],
    weights: &EncoderWeights,
    config: &EncoderConfig,
    plan: &StochasticityPlan,
) -> Result<ForwardCache> {
    let t = tokens.len();
    let d = config.model_dim;
    let dk = config.head_dim;
    if t == 0 {
        return Err(Error::EmptyInput("forward_cached: token sequence"));
    }
    if t > config.max_seq_len {
        return Err(Error::InvalidConfig(format!(
            "sequence length {t} exceeds max_seq_len {}",
            config.max_seq_len
        )));
    }

    let mut z = Matrix::zeros(t, d);
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
    let emb_mask =
        plan.maybe_mask(0, Component::Embedding, 0, z.shape(), config.dropout_embedding)?;
    let z = apply_mask_ref(&emb_mask, z)?;

    let mut h = z;
    let mut layers = Vec::with_capacity(config.num_layers);
    let scale = 1.0 / (dk as f64).sqrt();
    for (l, lw) in weights.layers.iter().enumerate() {
        let layer_index = l + 1;
        let h_in = h.clone();
        let q = matmul(&h, &lw.wq)?;
        let k = matmul(&h, &lw.wk)?;
        let v = matmul(&h, &lw.wv)?;
        let mut alphas = Vec::with_capacity(config.num_heads);
        let mut att_masks = Vec::with_capacity(config.num_heads);
        let mut alpha_dropped_all = Vec::with_capacity(config.num_heads);
        let mut ctx = Matrix::zeros(t, d);
        for head in 0..config.num_heads {
            let lo = head * dk;
            let hi = lo + dk;
            let qh = q.columns(lo, hi);
            let kh = k.columns(lo, hi);
            let vh = v.columns(lo, hi);
            let scores = matmul(&qh, &kh.transpose())?.scale(scale);
            let alpha = softmax_rows(&scores);
            let mask = plan.maybe_mask(
                layer_index,
                Component::Attention,
                head as u64,
                alpha.shape(),
                config.dropout_attention,
            )?;
            let alpha_dropped = apply_mask_ref(&mask, alpha.clone())?;
            let ctx_h = matmul(&alpha_dropped, &vh)?;
            for r in 0..t {
                ctx.row_mut(r)[lo..hi].copy_from_slice(ctx_h.row(r));
            }
            alphas.push(alpha);
            att_masks.push(mask);
            alpha_dropped_all.push(alpha_dropped);
        }
        let attn_out = matmul(&ctx, &lw.wo)?;
        let (h1, ln1) = layer_norm_cached(&h.add(&attn_out)?, &lw.ln1_gain, &lw.ln1_bias);

        let mut f_pre = matmul(&h1, &lw.ff1)?;
        for r in 0..t {
            for (vv, b) in f_pre.row_mut(r).iter_mut().zip(&lw.ff1_bias) {
                *vv += b;
            }
        }
        let mut f_act = f_pre.clone();
        for vv in f_act.data_mut() {
            *vv = gelu(*vv);
        }
        let ffn_mask = plan.maybe_mask(
            layer_index,
            Component::FeedForward,
            0,
            f_act.shape(),
            config.dropout_ffn,
        )?;
        let f_drop = apply_mask_ref(&ffn_mask, f_act)?;
        let mut ff_out = matmul(&f_drop, &lw.ff2)?;
        for r in 0..t {
            for (vv, b) in ff_out.row_mut(r).iter_mut().zip(&lw.ff2_bias) {
                *vv += b;
            }
        }
        let (h2, ln2) = layer_norm_cached(&h1.add(&ff_out)?, &lw.ln2_gain, &lw.ln2_bias);

        layers.push(LayerCache {
            h_in,
            q,
            k,
            v,
            alphas,
            att_masks,
            alpha_dropped: alpha_dropped_all,
            ctx,
            ln1,
            h1,
            f_pre,
            ffn_mask,
            f_drop,
            ln2,
        });
        h = h2;
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

    Ok(ForwardCache { emb_mask, layers, h_out: h, logits })
}

/// Numerically stable `(cross_entropy, probs)` for one logit vector.
fn loss_and_probs(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidConfig(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    let loss = -(logits[label] - max - sum.ln());
    Ok((loss, probs))
}

fn softmax_backward(alpha: &Matrix, d_alpha: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(alpha.rows(), alpha.cols());
    for r in 0..alpha.rows() {
        let a = alpha.row(r);
        let da = d_alpha.row(r);
        let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
        let o = out.row_mut(r);
        for c in 0..a.len() {
            o[c] = a[c] * (da[c] - dot);
        }
    }
    out
}

fn column_sums_into(m: &Matrix, acc: &mut [f64], scale: f64) {
    for r in 0..m.rows() {
        for (a, v) in acc.iter_mut().zip(m.row(r)) {
            *a += v * scale;
        }
    }
}

/// Mean loss over `examples` under per-example plans, without gradients.
pub fn batch_loss(
    weights: &EncoderWeights,
    config: &EncoderConfig,
    examples: &[Example],
    plans: &[StochasticityPlan],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("batch_loss: examples"));
    }
    if examples.len() != plans.len() {
        return Err(Error::DimMismatch {
            op: "batch_loss",
            left: format!("{} examples", examples.len()),
            right: format!("{} plans", plans.len()),
        });
    }
    let mut total = 0.0;
    for (ex, plan) in examples.iter().zip(plans) {
        let cache = forward_cached(&ex.tokens, weights, config, plan)?;
        let (loss, _) = loss_and_probs(&cache.logits, ex.label)?;
        total += loss;
    }
    Ok(total / examples.len() as f64)
}

/// Mean loss and its gradient w.r.t. every weight, via manual
/// backpropagation. Gradients are averaged over the batch.
pub fn batch_loss_and_grads(
    weights: &EncoderWeights,
    config: &EncoderConfig,
    examples: &[Example],
    plans: &[StochasticityPlan],
) -> Result<(f64, EncoderWeights)> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("batch_loss_and_grads: examples"));
    }
    if examples.len() != plans.len() {
        return Err(Error::DimMismatch {
            op: "batch_loss_and_grads",
            left: format!("{} examples", examples.len()),
            right: format!("{} plans", plans.len()),
        });
    }
    let mut grads = EncoderWeights::zeros_like(config);
    let inv_batch = 1.0 / examples.len() as f64;
    let mut total = 0.0;
    let d = config.model_dim;
    let dk = config.head_dim;
    let scale = 1.0 / (dk as f64).sqrt();

    for (ex, plan) in examples.iter().zip(plans) {
        let cache = forward_cached(&ex.tokens, weights, config, plan)?;
        let (loss, probs) = loss_and_probs(&cache.logits, ex.label)?;
        total += loss;
        let t = ex.tokens.len();

        // Classifier head.
        let mut d_logits = probs;
        d_logits[ex.label] -= 1.0;
        for v in d_logits.iter_mut() {
            *v *= inv_batch;
        }
        let cls = cache.h_out.row(0);
        let mut dh = Matrix::zeros(t, d);
        {
            let d_cls = dh.row_mut(0);
            for k in 0..d {
                let mut acc = 0.0;
                for (c, dl) in d_logits.iter().enumerate() {
                    let w = weights.classifier_w.get(k, c);
                    grads
                        .classifier_w
                        .set(k, c, grads.classifier_w.get(k, c) + cls[k] * dl);
                    acc += dl * w;
                }
                d_cls[k] = acc;
            }
            for (g, dl) in grads.classifier_b.iter_mut().zip(&d_logits) {
                *g += dl;
            }
        }

        // Layers, top down.
        for (l, lc) in cache.layers.iter().enumerate().rev() {
            let lw = &weights.layers[l];
            let gw = &mut grads.layers[l];

            let dr2 = layer_norm_backward(&dh, &lc.ln2, &lw.ln2_gain, &mut gw.ln2_gain, &mut gw.ln2_bias);
            // Residual: r2 = h1 + ff_out.
            let mut dh1 = dr2.clone();
            let dfo = dr2;

            // ff2: ff_out = f_drop * ff2 + b2.
            let dff2 = matmul(&lc.f_drop.transpose(), &dfo)?;
            *(&mut gw.ff2) = gw.ff2.add(&dff2)?;
            column_sums_into(&dfo, &mut gw.ff2_bias, 1.0);
            let d_fdrop = matmul(&dfo, &lw.ff2.transpose())?;
            let d_fact = mask_gradient(&lc.ffn_mask, d_fdrop);
            let mut d_fpre = d_fact;
            for r in 0..t {
                for (g, x) in d_fpre.row_mut(r).iter_mut().zip(lc.f_pre.row(r)) {
                    *g *= gelu_prime(*x);
                }
            }
            // ff1: f_pre = h1 * ff1 + b1.
            let dff1 = matmul(&lc.h1.transpose(), &d_fpre)?;
            *(&mut gw.ff1) = gw.ff1.add(&dff1)?;
            column_sums_into(&d_fpre, &mut gw.ff1_bias, 1.0);
            dh1 = dh1.add(&matmul(&d_fpre, &lw.ff1.transpose())?)?;

            let dr1 = layer_norm_backward(&dh1, &lc.ln1, &lw.ln1_gain, &mut gw.ln1_gain, &mut gw.ln1_bias);
            // Residual: r1 = h_in + attn_out.
            let mut dh_in = dr1.clone();
            let dao = dr1;

            // attn_out = ctx * wo.
            let dwo = matmul(&lc.ctx.transpose(), &dao)?;
            *(&mut gw.wo) = gw.wo.add(&dwo)?;
            let dctx = matmul(&dao, &lw.wo.transpose())?;

            let mut dq = Matrix::zeros(t, d);
            let mut dkm = Matrix::zeros(t, d);
            let mut dv = Matrix::zeros(t, d);
            for head in 0..config.num_heads {
                let lo = head * dk;
                let hi = lo + dk;
                let dctx_h = dctx.columns(lo, hi);
                let vh = lc.v.columns(lo, hi);
                let qh = lc.q.columns(lo, hi);
                let kh = lc.k.columns(lo, hi);
                let alpha = &lc.alphas[head];
                let alpha_dropped = &lc.alpha_dropped[head];

                // ctx_h = alpha_dropped * vh.
                let d_alpha_dropped = matmul(&dctx_h, &vh.transpose())?;
                let dvh = matmul(&alpha_dropped.transpose(), &dctx_h)?;
                let d_alpha = mask_gradient(&lc.att_masks[head], d_alpha_dropped);
                let d_scores = softmax_backward(alpha, &d_alpha);
                // scores = (qh * kh^T) * scale.
                let dqh = matmul(&d_scores, &kh)?.scale(scale);
                let dkh = matmul(&d_scores.transpose(), &qh)?.scale(scale);
                for r in 0..t {
                    dq.row_mut(r)[lo..hi].copy_from_slice(dqh.row(r));
                    dkm.row_mut(r)[lo..hi].copy_from_slice(dkh.row(r));
                    dv.row_mut(r)[lo..hi].copy_from_slice(dvh.row(r));
                }
            }

            // q = h_in * wq, etc.
            *(&mut gw.wq) = gw.wq.add(&matmul(&lc.h_in.transpose(), &dq)?)?;
            *(&mut gw.wk) = gw.wk.add(&matmul(&lc.h_in.transpose(), &dkm)?)?;
            *(&mut gw.wv) = gw.wv.add(&matmul(&lc.h_in.transpose(), &dv)?)?;
            dh_in = dh_in.add(&matmul(&dq, &lw.wq.transpose())?)?;
            dh_in = dh_in.add(&matmul(&dkm, &lw.wk.transpose())?)?;
            dh_in = dh_in.add(&matmul(&dv, &lw.wv.transpose())?)?;

            dh = dh_in;
        }

        // Embedding: z = token_emb[id] + pos_emb[j], then embedding mask.
        let dz = mask_gradient(&cache.emb_mask, dh);
        for (j, &id) in ex.tokens.iter().enumerate() {
            let src = dz.row(j);
            for k in 0..d {
                let g = grads.token_embedding.get(id, k) + src[k];
                grads.token_embedding.set(id, k, g);
                let p = grads.position_embedding.get(j, k) + src[k];
                grads.position_embedding.set(j, k, p);
            }
        }
    }

    Ok((total / examples.len() as f64, grads))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Deterministic-pass mean loss over a dataset (no dropout).
pub fn evaluation_loss(
    weights: &EncoderWeights,
    config: &EncoderConfig,
    examples: &[Example],
) -> Result<f64> {
    let plans = vec![StochasticityPlan::deterministic(); examples.len()];
    batch_loss(weights, config, examples, &plans)
}

pub fn train_encoder_logged(
    dataset: &[Example],
    config: &EncoderConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    train_config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("train_encoder: dataset"));
    }
    for ex in dataset {
        if ex.label >= config.num_classes {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range for {} classes",
                ex.label, config.num_classes
            )));
        }
    }

    let root = RngStream::new(seed);
    let init_seed = root.substream(1).seed();
    let mask_seed = root.substream(2).seed();
    let mut shuffle_rng = root.substream(3);

    let weights = EncoderWeights::init(config, init_seed)?;
    let mut params = weights.flatten();
    let n = params.len();
    let mut m_state = vec![0.0; n];
    let mut v_state = vec![0.0; n];
    let mut step = 0u64;

    let initial_loss = evaluation_loss(&weights, config, dataset)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite loss before training: {initial_loss}"
        )));
    }

    let mut epoch_losses = Vec::with_capacity(train_config.epochs);
    let mut mask_counter = 0u64;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..train_config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(train_config.batch_size) {
            let weights = EncoderWeights::unflatten(config, &params)?;
            let examples: Vec<Example> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let plans: Vec<StochasticityPlan> = chunk
                .iter()
                .map(|_| {
                    let p = StochasticityPlan::all_layers(mask_seed, mask_counter);
                    mask_counter += 1;
                    p
                })
                .collect();
            let (loss, grads) = batch_loss_and_grads(&weights, config, &examples, &plans)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            epoch_total += loss;
            batches += 1;

            let mut g = grads.flatten();
            if train_config.clip_norm > 0.0 {
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > train_config.clip_norm {
                    let s = train_config.clip_norm / norm;
                    for x in g.iter_mut() {
                        *x *= s;
                    }
                }
            }
            step += 1;
            let b1t = 1.0 - train_config.beta1.powi(step as i32);
            let b2t = 1.0 - train_config.beta2.powi(step as i32);
            for i in 0..n {
                m_state[i] = train_config.beta1 * m_state[i] + (1.0 - train_config.beta1) * g[i];
                v_state[i] =
                    train_config.beta2 * v_state[i] + (1.0 - train_config.beta2) * g[i] * g[i];
                let mhat = m_state[i] / b1t;
                let vhat = v_state[i] / b2t;
                params[i] -= train_config.learning_rate * mhat / (vhat.sqrt() + train_config.adam_eps);
            }
        }
        epoch_losses.push(epoch_total / batches.max(1) as f64);
    }

    let weights = EncoderWeights::unflatten(config, &params)?;
    let final_loss = evaluation_loss(&weights, config, dataset)?;
    Ok(TrainOutcome {
        weights,
        log: TrainLog { initial_loss, final_loss, epoch_losses },
    })
}

/// Mini-batch gradient descent on cross-entropy with dropout active.
/// See [`train_encoder_logged`] for the variant that reports losses.
pub fn train_encoder(
    dataset: &[Example],
    config: &EncoderConfig,
    train_config: &TrainConfig,
    seed: u64,
) -> Result<EncoderWeights> {
    train_encoder_logged(dataset, config, train_config, seed).map(|o| o.weights)
}
