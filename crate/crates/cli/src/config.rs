//! Run configuration: one flat, serializable view of the model and
//! training settings plus data paths. Values come from (in order of
//! precedence) command-line flags, a JSON config file, and defaults;
//! the seed additionally falls back to `BOLTZGATE_SEED`.

use boltzgate::attention::AttentionMode;
use boltzgate::error::{Error, Result};
use boltzgate::meanfield::{SolverConfig, UpdateMode};
use boltzgate::model::ModelConfig;
use boltzgate::sampler::{GumbelConfig, NegativeMode, NegativeSamplerConfig};
use boltzgate::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SEED_ENV: &str = "BOLTZGATE_SEED";

/// Sentinel accepted by `--data`: generate the synthetic regulatory-code
/// dataset instead of reading a file.
pub const SYNTH_DATA: &str = "synth";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // data & run plumbing
    pub data: Option<String>,
    pub val: Option<String>,
    pub out: String,
    pub mode: String,
    pub seed: Option<u64>,
    /// 0 = use every available core
    pub threads: usize,

    // model
    pub max_len: usize,
    pub d_model: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub latent: usize,
    pub kernel: usize,
    pub stride: usize,
    pub heads: usize,
    pub mf_iters: usize,
    pub mf_damping: f64,

    // training
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub clip_norm: f64,
    pub margin: f64,
    pub lambda_max: f64,
    pub lambda_warmup: usize,
    pub tau_start: f64,
    pub tau_end: f64,
    pub hard_after: usize,
    pub neg: String,
    pub rho: f64,
    pub anneal_steps: usize,
    pub val_fraction: f64,
    pub augment_rc: bool,
    pub weight_decay: f64,

    // synthetic data (when data = "synth")
    pub synth_n: usize,
    pub synth_noise: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            data: None,
            val: None,
            out: "runs/boltzgate".into(),
            mode: "bm_soft".into(),
            seed: None,
            threads: 0,
            max_len: m.max_len,
            d_model: m.d_model,
            layers: m.num_layers,
            ffn_dim: m.ffn_dim,
            dropout: m.dropout,
            latent: m.num_latent,
            kernel: m.conv_kernel,
            stride: m.conv_stride,
            heads: m.heads,
            mf_iters: m.solver.iterations,
            mf_damping: m.solver.damping,
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            lr_min: t.lr_min,
            clip_norm: t.clip_norm,
            margin: t.margin,
            lambda_max: t.lambda_max,
            lambda_warmup: t.lambda_warmup,
            tau_start: t.tau_start,
            tau_end: t.tau_end,
            hard_after: t.hard_after,
            neg: "perturb".into(),
            rho: t.neg.rho,
            anneal_steps: t.neg.anneal_steps,
            val_fraction: t.val_fraction,
            augment_rc: t.augment_rc,
            weight_decay: t.weight_decay,
            synth_n: 2000,
            synth_noise: 0.05,
        }
    }
}

pub fn parse_mode(s: &str) -> Result<AttentionMode> {
    match s {
        "softmax" => Ok(AttentionMode::Softmax),
        "bm_soft" => Ok(AttentionMode::BmSoft),
        "bm_hard" => Ok(AttentionMode::BmHard),
        other => Err(Error::InvalidArgument(format!(
            "unknown mode '{other}' (expected softmax, bm_soft, or bm_hard)"
        ))),
    }
}

pub fn mode_name(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::Softmax => "softmax",
        AttentionMode::BmSoft => "bm_soft",
        AttentionMode::BmHard => "bm_hard",
    }
}

fn parse_neg(s: &str) -> Result<NegativeMode> {
    match s {
        "perturb" => Ok(NegativeMode::Perturb),
        "anneal" => Ok(NegativeMode::Anneal),
        other => Err(Error::InvalidArgument(format!(
            "unknown negative sampler '{other}' (expected perturb or anneal)"
        ))),
    }
}

impl RunConfig {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::InvalidArgument(format!(
                "config {}: {e}",
                path.as_ref().display()
            ))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialize")
    }

    /// Fill the seed from the environment when neither a flag nor the
    /// config file set one.
    pub fn resolve_seed(&mut self) -> Result<u64> {
        if self.seed.is_none() {
            if let Ok(v) = std::env::var(SEED_ENV) {
                let parsed = v.parse::<u64>().map_err(|_| {
                    Error::InvalidArgument(format!("{SEED_ENV}='{v}' is not a valid seed"))
                })?;
                self.seed = Some(parsed);
            }
        }
        let seed = self.seed.unwrap_or(0);
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn resolve_threads(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab_size: 6,
            max_len: self.max_len,
            d_model: self.d_model,
            num_layers: self.layers,
            ffn_dim: self.ffn_dim,
            dropout: self.dropout,
            num_latent: self.latent,
            conv_kernel: self.kernel,
            conv_stride: self.stride,
            heads: self.heads,
            mode: parse_mode(&self.mode)?,
            solver: SolverConfig {
                iterations: self.mf_iters,
                damping: self.mf_damping,
                update_mode: UpdateMode::Parallel,
                ..SolverConfig::default()
            },
            gumbel: GumbelConfig {
                tau: self.tau_start,
                hard: false,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            lr_min: self.lr_min,
            epochs: self.epochs,
            batch: self.batch,
            clip_norm: self.clip_norm,
            margin: self.margin,
            lambda_max: self.lambda_max,
            lambda_warmup: self.lambda_warmup,
            tau_start: self.tau_start,
            tau_end: self.tau_end,
            hard_after: self.hard_after,
            seed: self.seed.unwrap_or(0),
            neg: NegativeSamplerConfig {
                rho: self.rho,
                mode: parse_neg(&self.neg)?,
                anneal_steps: self.anneal_steps,
                ..NegativeSamplerConfig::default()
            },
            val_fraction: self.val_fraction,
            augment_rc: self.augment_rc,
            weight_decay: self.weight_decay,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
