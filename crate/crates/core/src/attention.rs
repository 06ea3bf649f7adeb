//! Attention layer in three modes: standard softmax, BM-gated soft
//! (mean-field marginals as gates), and BM-gated hard (Gumbel-sampled
//! gates). The gated modes replace the row softmax with independent
//! per-edge gates, so rows are free to leave the simplex, and aggregate
//! with a normalizing ε guard instead of a partition function.

use crate::energy::{EnergyParams, StructureState};
use crate::error::{Error, Result};
use crate::meanfield::SolverConfig;
use crate::numerics::rng::seeded_rng;
use crate::numerics::{Tape, Tensor, Var};
use crate::sampler::GumbelConfig;
use rand::Rng;

/// Denominator guard in gated aggregation.
pub const AGG_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Softmax,
    BmSoft,
    BmHard,
}

#[derive(Clone, Debug)]
pub struct AttentionLayerParams {
    pub heads: usize,
    /// [d_model, d_model] each; applied as y = x·W
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub energy: EnergyParams,
    pub eps: f64,
}

impl AttentionLayerParams {
    /// Fresh layer: projections N(0, 1/d_model); couplings and latent
    /// weights start at zero so the gates begin as pure bias-field
    /// sigmoids; c_lat = 0.5.
    pub fn init<R: Rng>(
        heads: usize,
        d_model: usize,
        s_dim: usize,
        m_dim: usize,
        rng: &mut R,
    ) -> Self {
        let std = (1.0 / d_model as f64).sqrt();
        AttentionLayerParams {
            heads,
            wq: Tensor::randn(&[d_model, d_model], std, rng),
            wk: Tensor::randn(&[d_model, d_model], std, rng),
            wv: Tensor::randn(&[d_model, d_model], std, rng),
            wo: Tensor::randn(&[d_model, d_model], std, rng),
            energy: EnergyParams {
                w_diag: Tensor::zeros(&[heads, d_model / heads]),
                w_lat: Tensor::zeros(&[heads, s_dim, m_dim]),
                b_lat: Tensor::zeros(&[heads, m_dim]),
                c_lat: 0.5,
            },
            eps: AGG_EPS,
        }
    }

    pub fn validate(&self, d_model: usize) -> Result<()> {
        if self.heads == 0 || d_model % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {d_model} not divisible into {} heads",
                self.heads
            )));
        }
        for (name, w) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ] {
            if w.shape() != [d_model, d_model] {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: got {:?}, expected [{d_model}, {d_model}]",
                    w.shape()
                )));
            }
        }
        if self.energy.w_diag.shape() != [self.heads, d_model / self.heads] {
            return Err(Error::ShapeMismatch(format!(
                "w_diag: got {:?}, expected [{}, {}]",
                self.energy.w_diag.shape(),
                self.heads,
                d_model / self.heads
            )));
        }
        if self.energy.w_lat.shape()[0] != self.heads
            || self.energy.b_lat.shape()[0] != self.heads
        {
            return Err(Error::ShapeMismatch(
                "energy parameter head dimension disagrees with layer heads".into(),
            ));
        }
        Ok(())
    }
}

/// Tape handles for one attention layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub w_diag: Var,
    pub w_lat: Var,
    pub b_lat: Var,
    pub c_lat: Var,
}

impl AttentionVars {
    pub fn register(tape: &mut Tape, p: &AttentionLayerParams, trainable: bool) -> Self {
        let mut put = |t: Tensor| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        AttentionVars {
            wq: put(p.wq.clone()),
            wk: put(p.wk.clone()),
            wv: put(p.wv.clone()),
            wo: put(p.wo.clone()),
            w_diag: put(p.energy.w_diag.clone()),
            w_lat: put(p.energy.w_lat.clone()),
            b_lat: put(p.energy.b_lat.clone()),
            c_lat: put(Tensor::scalar(p.energy.c_lat)),
        }
    }
}

/// Traced forward pass of the BM-gated layer plus the handles the energy
/// loss needs afterwards.
#[derive(Clone, Copy, Debug)]
pub struct BmForward {
    /// [T, d_model] layer output (before any residual connection)
    pub out: Var,
    /// mean-field marginals s (the positive phase)
    pub s: Var,
    /// latent marginals r
    pub r: Var,
    /// gates actually used for aggregation
    pub gates: Var,
    /// bias field h
    pub h: Var,
    /// pairwise coupling J
    pub j: Var,
}

pub mod traced {
    use super::*;
    use crate::energy::traced::{bias_field, pair_coupling};
    use crate::meanfield::traced::solve;
    use crate::sampler::traced::{gumbel_hard, gumbel_soft};

    /// Project to per-head Q, K, V: [T, d_model] -> three [H, T, d_h].
    pub fn project_qkv(tape: &mut Tape, x: Var, vars: &AttentionVars, heads: usize) -> (Var, Var, Var) {
        let q2 = tape.matmul(x, vars.wq, false, false);
        let k2 = tape.matmul(x, vars.wk, false, false);
        let v2 = tape.matmul(x, vars.wv, false, false);
        (
            tape.split_heads(q2, heads),
            tape.split_heads(k2, heads),
            tape.split_heads(v2, heads),
        )
    }

    /// Row-softmax attention over QKᵀ/√d_h with masked keys at −1e4.
    pub fn softmax_attention(
        tape: &mut Tape,
        q: Var,
        k: Var,
        v: Var,
        key_valid: &[bool],
    ) -> Result<Var> {
        if !key_valid.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("all keys masked".into()));
        }
        // masked scaled scores coincide with the bias field
        let scores = bias_field(tape, q, k, key_valid);
        let weights = tape.softmax_last(scores);
        Ok(tape.bmm(weights, v, false, false))
    }

    /// o_ht = (Σ_s gate·v_s)/(Σ_s gate + ε); zero gates give a zero row.
    pub fn gated_aggregate(tape: &mut Tape, gates: Var, v: Var, eps: f64) -> Var {
        let num = tape.bmm(gates, v, false, false);
        let denom = tape.sum_last(gates);
        let denom = tape.add_scalar(denom, eps);
        tape.div_broadcast_last(num, denom)
    }

    /// Full BM-gated layer: bias field and coupling from Q/K, mean-field
    /// solve, mode-dependent gates, ε-normalized aggregation, output
    /// projection. `noise` must be present for `BmHard`.
    #[allow(clippy::too_many_arguments)]
    pub fn bm_gated_forward(
        tape: &mut Tape,
        x: Var,
        vars: &AttentionVars,
        heads: usize,
        mode: AttentionMode,
        solver: &SolverConfig,
        gumbel: &GumbelConfig,
        noise: Option<&(Tensor, Tensor)>,
        key_valid: &[bool],
    ) -> Result<BmForward> {
        if !key_valid.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("all keys masked".into()));
        }
        solver.validate()?;
        let (q, k, v) = project_qkv(tape, x, vars, heads);
        let h = bias_field(tape, q, k, key_valid);
        let j = pair_coupling(tape, k, vars.w_diag, key_valid);
        let (s, r) = solve(
            tape,
            h,
            j,
            vars.w_lat,
            vars.b_lat,
            vars.c_lat,
            solver.iterations,
            solver.damping,
            key_valid,
        );
        let gates = match mode {
            AttentionMode::BmSoft => s,
            AttentionMode::BmHard => {
                gumbel.validate()?;
                let (g0, g1) = noise.ok_or_else(|| {
                    Error::InvalidArgument("bm_hard mode requires gumbel noise".into())
                })?;
                if gumbel.hard {
                    gumbel_hard(tape, s, gumbel.tau, g0, g1, key_valid)
                } else {
                    gumbel_soft(tape, s, gumbel.tau, g0, g1, key_valid)
                }
            }
            AttentionMode::Softmax => {
                return Err(Error::InvalidArgument(
                    "bm_gated_forward expects a bm mode".into(),
                ))
            }
        };
        let eps = AGG_EPS;
        let heads_out = gated_aggregate(tape, gates, v, eps);
        let merged = tape.merge_heads(heads_out);
        let out = tape.matmul(merged, vars.wo, false, false);
        Ok(BmForward { out, s, r, gates, h, j })
    }

    /// Softmax-mode layer: standard multi-head attention plus output
    /// projection.
    pub fn softmax_forward(
        tape: &mut Tape,
        x: Var,
        vars: &AttentionVars,
        heads: usize,
        key_valid: &[bool],
    ) -> Result<Var> {
        let (q, k, v) = project_qkv(tape, x, vars, heads);
        let heads_out = softmax_attention(tape, q, k, v, key_valid)?;
        let merged = tape.merge_heads(heads_out);
        Ok(tape.matmul(merged, vars.wo, false, false))
    }
}

/// One attention layer forward outside any training tape. Returns the
/// output, the mean-field state, and the gates used (empty tensors for
/// softmax mode, which has no gating graph).
pub fn forward(
    x: &Tensor,
    params: &AttentionLayerParams,
    mode: AttentionMode,
    solver: &SolverConfig,
    gumbel: &GumbelConfig,
    noise: Option<&(Tensor, Tensor)>,
    key_valid: &[bool],
) -> Result<(Tensor, StructureState, Tensor)> {
    let d_model = x.shape()[1];
    params.validate(d_model)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = AttentionVars::register(&mut tape, params, false);
    match mode {
        AttentionMode::Softmax => {
            let out = traced::softmax_forward(&mut tape, xv, &vars, params.heads, key_valid)?;
            Ok((
                tape.value(out).clone(),
                StructureState {
                    s: Tensor::zeros(&[0]),
                    r: Tensor::zeros(&[0]),
                },
                Tensor::zeros(&[0]),
            ))
        }
        _ => {
            let fwd = traced::bm_gated_forward(
                &mut tape,
                xv,
                &vars,
                params.heads,
                mode,
                solver,
                gumbel,
                noise,
                key_valid,
            )?;
            Ok((
                tape.value(fwd.out).clone(),
                StructureState {
                    s: tape.value(fwd.s).clone(),
                    r: tape.value(fwd.r).clone(),
                },
                tape.value(fwd.gates).clone(),
            ))
        }
    }
}

/// Deterministic identity-free layer used by tests and examples.
pub fn random_layer(heads: usize, d_model: usize, s_dim: usize, m_dim: usize, seed: u64) -> AttentionLayerParams {
    AttentionLayerParams::init(heads, d_model, s_dim, m_dim, &mut seeded_rng(seed))
}
