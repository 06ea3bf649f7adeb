//! Joint task + energy training: stable BCE, margin-ranking energy loss
//! over per-layer positive/negative structures, λ and τ curricula, cosine
//! learning rate, global-norm clipping, Adam, and the epoch loop.
//!
//! Every random draw comes from a purpose-derived stream
//! (shuffle/dropout/gumbel/perturb), so enabling or disabling one
//! consumer never shifts the draws of another.

use crate::data::{encode_batch, reverse_complement, SequenceRecord};
use rand::Rng;
use crate::energy::traced as energy_traced;
use crate::error::{Error, Result};
use crate::meanfield::traced as mf_traced;
use crate::model::{
    forward_traced, ClassifierParams, DropoutMasks, ModelConfig, ModelVars, TracedForward,
};
use crate::numerics::rng::{derive_seed, seeded_rng};
use crate::numerics::{sigmoid, softplus, Tape, Tensor};
use crate::sampler::{perturb_negative, sample_gumbel, NegativeSamplerConfig};
use crate::attention::AttentionMode;
use crate::energy::StructureState;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch: usize,
    pub clip_norm: f64,
    pub margin: f64,
    pub lambda_max: f64,
    /// λ stays 0 through this many leading epochs
    pub lambda_warmup: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    /// straight-through hard gates for epochs strictly after this
    pub hard_after: usize,
    pub seed: u64,
    pub neg: NegativeSamplerConfig,
    /// fraction of the training set held out when no validation set is
    /// provided
    pub val_fraction: f64,
    /// reverse-complement each training sample with probability 1/2
    pub augment_rc: bool,
    /// decoupled weight decay on embedding and projection matrices;
    /// norms, biases, and the energy parameters are exempt
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            lr_min: 1e-6,
            epochs: 10,
            batch: 64,
            clip_norm: 1.0,
            margin: 1.0,
            lambda_max: 0.1,
            lambda_warmup: 3,
            tau_start: 1.0,
            tau_end: 0.5,
            hard_after: 3,
            seed: 0,
            neg: NegativeSamplerConfig::default(),
            val_fraction: 0.1,
            augment_rc: false,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr_min > 0.0 && self.lr >= self.lr_min) {
            return Err(Error::InvalidArgument(
                "learning rates must satisfy lr ≥ lr_min > 0".into(),
            ));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.clip_norm > 0.0 && self.margin > 0.0) {
            return Err(Error::InvalidArgument(
                "clip_norm and margin must be positive".into(),
            ));
        }
        if self.lambda_max < 0.0 {
            return Err(Error::InvalidArgument("lambda_max must be ≥ 0".into()));
        }
        if !(self.tau_start > 0.0 && self.tau_end > 0.0) {
            return Err(Error::InvalidArgument("temperatures must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument("val_fraction outside [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(
                "weight_decay must be a finite value ≥ 0".into(),
            ));
        }
        self.neg.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub mean_pos_energy: f64,
    pub mean_neg_energy: f64,
    pub lambda: f64,
    pub tau: f64,
    pub lr: f64,
}

pub fn metrics_to_jsonl(metrics: &[EpochMetrics]) -> String {
    metrics
        .iter()
        .map(|m| serde_json::to_string(m).expect("metrics serialize"))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn metrics_from_jsonl(text: &str) -> Result<Vec<EpochMetrics>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Msg(format!("metrics line: {e}"))))
        .collect()
}

// ---- losses ----

/// Stable binary cross-entropy on the logit:
/// y·softplus(−ŷ) + (1−y)·softplus(ŷ).
pub fn bce_loss(logit: f64, target: f64) -> f64 {
    target * softplus(-logit) + (1.0 - target) * softplus(logit)
}

/// max(0, E_pos − E_neg + m).
pub fn energy_margin_loss(e_pos: f64, e_neg: f64, margin: f64) -> f64 {
    (e_pos - e_neg + margin).max(0.0)
}

/// task + λ·energy.
pub fn total_loss(task: f64, energy: f64, lambda: f64) -> f64 {
    task + lambda * energy
}

// ---- schedules ----

/// λ = 0 through the warmup epochs, then linear to λ_max at the final
/// epoch. Epochs are 1-based.
pub fn lambda_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch <= cfg.lambda_warmup || cfg.epochs <= cfg.lambda_warmup {
        0.0
    } else {
        cfg.lambda_max * (epoch - cfg.lambda_warmup) as f64
            / (cfg.epochs - cfg.lambda_warmup) as f64
    }
}

/// Linear τ from tau_start (epoch 1) to tau_end (final epoch).
pub fn tau_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.tau_end;
    }
    cfg.tau_start + (cfg.tau_end - cfg.tau_start) * (epoch - 1) as f64 / (cfg.epochs - 1) as f64
}

/// Hard straight-through sampling for epochs after the boundary.
pub fn hard_schedule(cfg: &TrainConfig, epoch: usize) -> bool {
    epoch > cfg.hard_after
}

/// lr_min + ½(lr − lr_min)(1 + cos(π·step/total)).
pub fn cosine_lr(cfg: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let frac = if total_steps == 0 {
        1.0
    } else {
        step as f64 / total_steps as f64
    };
    cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

// ---- optimizer ----

/// Weight decay targets: embedding and projection matrices only. Layer
/// norms, biases, and the energy parameters keep their scale.
fn entry_decays(name: &str) -> bool {
    let tail = name.rsplit('.').next().unwrap_or(name);
    matches!(
        tail,
        "embedding" | "positional" | "w" | "wq" | "wk" | "wv" | "wo" | "w1" | "w2"
    )
}

/// Per-flat-entry decay mask in canonical parameter order.
fn decay_mask(layout: &[(String, Vec<usize>)]) -> Vec<bool> {
    layout
        .iter()
        .flat_map(|(name, shape)| {
            let n: usize = shape.iter().product();
            std::iter::repeat(entry_decays(name)).take(n)
        })
        .collect()
}

/// Rescales to `max_norm` when the global L2 norm exceeds it; returns the
/// pre-clip norm.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for i in 0..params.len() {
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * grads[i];
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

// ---- data plumbing ----

/// Seeded split into (train, validation).
pub fn split_train_val(
    records: &[SequenceRecord],
    val_fraction: f64,
    seed: u64,
) -> (Vec<SequenceRecord>, Vec<SequenceRecord>) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    let mut rng = seeded_rng(derive_seed(seed, "split", 0));
    shuffle(&mut idx, &mut rng);
    let n_val = ((records.len() as f64) * val_fraction).round() as usize;
    let (val_idx, train_idx) = idx.split_at(n_val.min(records.len()));
    (
        train_idx.iter().map(|&i| records[i].clone()).collect(),
        val_idx.iter().map(|&i| records[i].clone()).collect(),
    )
}

fn shuffle<R: rand::Rng>(idx: &mut [usize], rng: &mut R) {
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
}

/// Mean BCE and accuracy of deterministic predictions over a record set.
pub fn evaluate(
    params: &ClassifierParams,
    cfg: &ModelConfig,
    records: &[SequenceRecord],
) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let batch = encode_batch(records, cfg.max_len)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..batch.len() {
        let logit = crate::model::predict(params, cfg, &batch.tokens[i], &batch.mask[i])?;
        loss += bce_loss(logit, batch.labels[i]);
        if (sigmoid(logit) > 0.5) == (batch.labels[i] > 0.5) {
            correct += 1;
        }
    }
    Ok((loss / batch.len() as f64, correct as f64 / batch.len() as f64))
}

// ---- the epoch loop ----

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_val_acc: f64,
    pub best_epoch: usize,
    pub best_params: ClassifierParams,
}

struct SampleGrad {
    grad: Vec<f64>,
    loss: f64,
    correct: bool,
    pos_energy: f64,
    neg_energy: f64,
    energy_terms: usize,
}

/// Forward + backward for one sample; the gradient comes back in the
/// canonical flat order.
#[allow(clippy::too_many_arguments)]
fn sample_pass(
    params: &ClassifierParams,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    tokens: &[usize],
    mask: &[bool],
    label: f64,
    lambda: f64,
    sample_uid: u64,
) -> Result<SampleGrad> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, true);

    let noise: Option<Vec<(Tensor, Tensor)>> = if cfg.mode == AttentionMode::BmHard {
        let mut rng = seeded_rng(derive_seed(tcfg.seed, "gumbel", sample_uid));
        let frames = cfg.frames();
        Some(
            (0..cfg.num_layers)
                .map(|_| {
                    (
                        sample_gumbel(&[cfg.heads, frames, frames], &mut rng),
                        sample_gumbel(&[cfg.heads, frames, frames], &mut rng),
                    )
                })
                .collect(),
        )
    } else {
        None
    };
    let dropout = if cfg.dropout > 0.0 {
        let mut rng = seeded_rng(derive_seed(tcfg.seed, "dropout", sample_uid));
        Some(DropoutMasks::sample(cfg, &mut rng))
    } else {
        None
    };

    let fwd: TracedForward = forward_traced(
        &mut tape,
        tokens,
        mask,
        &vars,
        cfg,
        noise.as_deref(),
        dropout.as_ref(),
    )?;
    let task = tape.bce_with_logits(fwd.logit, label);

    let mut pos_energy = 0.0;
    let mut neg_energy = 0.0;
    let mut energy_terms = 0usize;
    // λ = 0 takes the pure task path: the energy graph is never built, so
    // the trajectory is bit-identical to an energy-disabled run
    let loss_var = if lambda > 0.0 && !fwd.layers.is_empty() {
        let mut perturb_rng = seeded_rng(derive_seed(tcfg.seed, "perturb", sample_uid));
        let mut energy_sum = None;
        for (l, layer_fwd) in fwd.layers.iter().enumerate() {
            let att = &vars.layers[l].attn;
            let r_pos = mf_traced::update_r_step(&mut tape, layer_fwd.s, att.w_lat, att.b_lat, att.c_lat);
            let e_pos = energy_traced::total_energy(
                &mut tape, layer_fwd.h, layer_fwd.j, att.w_lat, att.b_lat, att.c_lat,
                layer_fwd.s, r_pos,
            );
            let state = StructureState {
                s: tape.value(layer_fwd.s).clone(),
                r: tape.value(layer_fwd.r).clone(),
            };
            let s_neg = perturb_negative(&state, &tcfg.neg, &mut perturb_rng, &fwd.frame_valid)?;
            let s_neg_var = tape.constant(s_neg.s);
            let r_neg = mf_traced::update_r_step(&mut tape, s_neg_var, att.w_lat, att.b_lat, att.c_lat);
            let e_neg = energy_traced::total_energy(
                &mut tape, layer_fwd.h, layer_fwd.j, att.w_lat, att.b_lat, att.c_lat,
                s_neg_var, r_neg,
            );
            pos_energy += tape.value(e_pos).scalar_value();
            neg_energy += tape.value(e_neg).scalar_value();
            energy_terms += 1;
            let gap = tape.sub(e_pos, e_neg);
            let shifted = tape.add_scalar(gap, tcfg.margin);
            let hinge = tape.relu(shifted);
            energy_sum = Some(match energy_sum {
                None => hinge,
                Some(acc) => tape.add(acc, hinge),
            });
        }
        match energy_sum {
            Some(e) => {
                let scaled = tape.mul_scalar(e, lambda);
                tape.add(task, scaled)
            }
            None => task,
        }
    } else {
        task
    };

    let loss = tape.value(loss_var).scalar_value();
    let grads = tape.backward(loss_var)?;
    let logit = tape.value(fwd.logit).scalar_value();
    Ok(SampleGrad {
        grad: vars.grad_flat(&grads),
        loss,
        correct: (sigmoid(logit) > 0.5) == (label > 0.5),
        pos_energy,
        neg_energy,
        energy_terms,
    })
}

/// Loss and flat-ordered gradient of one sample under the joint
/// objective. Noise, dropout, and negative-phase draws all come from the
/// purpose streams keyed by `sample_uid`, so repeated calls with the same
/// arguments are identical — the entry point for end-to-end gradient
/// verification.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss_and_grad(
    params: &ClassifierParams,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    tokens: &[usize],
    mask: &[bool],
    label: f64,
    lambda: f64,
    sample_uid: u64,
) -> Result<(f64, Vec<f64>)> {
    let sg = sample_pass(params, cfg, tcfg, tokens, mask, label, lambda, sample_uid)?;
    Ok((sg.loss, sg.grad))
}

/// Full training run. `val`: explicit validation records, or None to hold
/// out `val_fraction` of `data` with a seeded split. `on_epoch` fires
/// after each epoch with that epoch's metrics; returning false stops the
/// run early (the completed epoch still counts).
pub fn train(
    params: &mut ClassifierParams,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    data: &[SequenceRecord],
    val: Option<&[SequenceRecord]>,
    mut on_epoch: impl FnMut(&EpochMetrics) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    params.validate(cfg)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    let (train_recs, val_recs): (Vec<_>, Vec<_>) = match val {
        Some(v) => (data.to_vec(), v.to_vec()),
        None => split_train_val(data, tcfg.val_fraction, tcfg.seed),
    };
    let batch = encode_batch(&train_recs, cfg.max_len)?;
    let n = batch.len();
    let batches_per_epoch = n.div_ceil(tcfg.batch);
    let total_steps = tcfg.epochs * batches_per_epoch;

    let mut flat = params.flat();
    let mut adam = AdamState::new(flat.len());
    let decays = decay_mask(&params.layout());
    let mut metrics = Vec::with_capacity(tcfg.epochs);
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut best_params = params.clone();
    let mut step = 0usize;

    for epoch in 1..=tcfg.epochs {
        let lambda = lambda_schedule(tcfg, epoch);
        let tau = tau_schedule(tcfg, epoch);
        let mut epoch_cfg = cfg.clone();
        epoch_cfg.gumbel.tau = tau;
        epoch_cfg.gumbel.hard = hard_schedule(tcfg, epoch);

        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = seeded_rng(derive_seed(tcfg.seed, "shuffle", epoch as u64));
        shuffle(&mut order, &mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut pos_e = 0.0;
        let mut neg_e = 0.0;
        let mut e_terms = 0usize;
        let mut last_lr = cosine_lr(tcfg, step, total_steps);

        for (batch_idx, chunk) in order.chunks(tcfg.batch).enumerate() {
            let lr = cosine_lr(tcfg, step, total_steps);
            last_lr = lr;
            let mut grad_sum = vec![0.0; flat.len()];
            for (k, &i) in chunk.iter().enumerate() {
                let sample_uid =
                    ((epoch as u64) << 40) ^ ((batch_idx as u64) << 20) ^ (k as u64);
                let rc_buf;
                let tokens: &[usize] = if tcfg.augment_rc {
                    let mut aug_rng =
                        seeded_rng(derive_seed(tcfg.seed, "augment", sample_uid));
                    if aug_rng.gen_bool(0.5) {
                        rc_buf = reverse_complement(&batch.tokens[i], &batch.mask[i]);
                        &rc_buf
                    } else {
                        &batch.tokens[i]
                    }
                } else {
                    &batch.tokens[i]
                };
                let sg = sample_pass(
                    params,
                    &epoch_cfg,
                    tcfg,
                    tokens,
                    &batch.mask[i],
                    batch.labels[i],
                    lambda,
                    sample_uid,
                )?;
                if !sg.loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss in epoch {epoch}, batch {batch_idx}"
                    )));
                }
                for (g, s) in grad_sum.iter_mut().zip(&sg.grad) {
                    *g += s;
                }
                epoch_loss += sg.loss;
                epoch_correct += sg.correct as usize;
                pos_e += sg.pos_energy;
                neg_e += sg.neg_energy;
                e_terms += sg.energy_terms;
            }
            let scale = 1.0 / chunk.len() as f64;
            for g in grad_sum.iter_mut() {
                *g *= scale;
            }
            clip_gradients(&mut grad_sum, tcfg.clip_norm);
            if tcfg.weight_decay > 0.0 {
                let keep = 1.0 - lr * tcfg.weight_decay;
                for (p, &d) in flat.iter_mut().zip(&decays) {
                    if d {
                        *p *= keep;
                    }
                }
            }
            adam_step(&mut flat, &grad_sum, &mut adam, lr)?;
            params.assign_flat(&flat)?;
            step += 1;
        }

        let (val_loss, val_acc) = evaluate(params, cfg, &val_recs)?;
        let m = EpochMetrics {
            epoch,
            train_loss: epoch_loss / n as f64,
            train_acc: epoch_correct as f64 / n as f64,
            val_loss,
            val_acc,
            mean_pos_energy: if e_terms > 0 { pos_e / e_terms as f64 } else { 0.0 },
            mean_neg_energy: if e_terms > 0 { neg_e / e_terms as f64 } else { 0.0 },
            lambda,
            tau,
            lr: last_lr,
        };
        if val_acc.is_finite() && val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            best_params = params.clone();
        }
        let keep_going = on_epoch(&m);
        metrics.push(m);
        if !keep_going {
            break;
        }
    }
    if !best_val_acc.is_finite() {
        best_params = params.clone();
    }
    Ok(TrainOutcome {
        metrics,
        best_val_acc,
        best_epoch,
        best_params,
    })
}
