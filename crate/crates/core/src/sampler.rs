//! Gumbel-Softmax gate sampling and negative-phase structure generators.
//!
//! The soft path relaxes each Bernoulli gate through a two-class Gumbel
//! softmax at temperature τ; the hard path snaps the forward value to the
//! argmax while the tape keeps the soft gradient (straight-through). The
//! negative phase perturbs the positive structure by flipping a random
//! subset of edges, or optionally anneals toward low energy with a
//! Metropolis chain.

use crate::energy::{BiasField, EnergyParams, PairwiseCoupling, StructureState, EPS_P};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tape, Tensor, Var};
use rand::Rng;

#[derive(Clone, Copy, Debug)]
pub struct GumbelConfig {
    pub tau: f64,
    /// straight-through hard gates when true
    pub hard: bool,
}

impl GumbelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 10.0) {
            return Err(Error::InvalidArgument(format!(
                "gumbel temperature {} outside (0, 10]",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeMode {
    Perturb,
    Anneal,
}

#[derive(Clone, Debug)]
pub struct NegativeSamplerConfig {
    /// fraction of unmasked edges flipped by the perturbation sampler
    pub rho: f64,
    pub mode: NegativeMode,
    /// annealing chain length
    pub anneal_steps: usize,
    /// geometric temperature ladder endpoints
    pub t_init: f64,
    pub t_final: f64,
}

impl Default for NegativeSamplerConfig {
    fn default() -> Self {
        NegativeSamplerConfig {
            rho: 0.1,
            mode: NegativeMode::Perturb,
            anneal_steps: 200,
            t_init: 1.0,
            t_final: 0.05,
        }
    }
}

impl NegativeSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "flip fraction {} outside (0, 1]",
                self.rho
            )));
        }
        if self.mode == NegativeMode::Anneal {
            if self.anneal_steps == 0 {
                return Err(Error::InvalidArgument("anneal_steps must be ≥ 1".into()));
            }
            if !(self.t_final > 0.0 && self.t_init >= self.t_final) {
                return Err(Error::InvalidArgument(
                    "temperature ladder requires t_init ≥ t_final > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One standard Gumbel draw per entry: g = −ln(−ln U), U ∈ (0, 1).
pub fn sample_gumbel<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.sample(rand::distributions::Open01);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Traced sampling paths used inside the training forward pass.
pub mod traced {
    use super::*;
    use crate::energy::traced::key_mask3;

    /// Two-class logits (α⁰, α¹) = (ln(1−s), ln s) from clamped gates.
    pub fn gate_logits(tape: &mut Tape, s: Var) -> (Var, Var) {
        let sc = tape.clamp(s, EPS_P, 1.0 - EPS_P);
        let a1 = tape.ln(sc);
        let om = tape.one_minus(sc);
        let a0 = tape.ln(om);
        (a0, a1)
    }

    /// Class-1 component of the two-class Gumbel softmax:
    /// σ(((α¹+g¹) − (α⁰+g⁰))/τ), with masked edges forced to zero.
    pub fn gumbel_soft(
        tape: &mut Tape,
        s: Var,
        tau: f64,
        g0: &Tensor,
        g1: &Tensor,
        key_valid: &[bool],
    ) -> Var {
        let (heads, t) = {
            let ss = tape.value(s).shape();
            (ss[0], ss[1])
        };
        let (a0, a1) = gate_logits(tape, s);
        let g0v = tape.constant(g0.clone());
        let g1v = tape.constant(g1.clone());
        let p1 = tape.add(a1, g1v);
        let p0 = tape.add(a0, g0v);
        let d = tape.sub(p1, p0);
        let dt = tape.mul_scalar(d, 1.0 / tau);
        let sig = tape.sigmoid(dt);
        let keep = tape.constant(key_mask3(heads, t, key_valid));
        tape.mul(sig, keep)
    }

    /// Hard argmax forward / soft gradient backward. Ties go to class 1,
    /// which on the soft value means z̃ ≥ 0.5 (σ is monotone and τ > 0).
    pub fn gumbel_hard(
        tape: &mut Tape,
        s: Var,
        tau: f64,
        g0: &Tensor,
        g1: &Tensor,
        key_valid: &[bool],
    ) -> Var {
        let soft = gumbel_soft(tape, s, tau, g0, g1, key_valid);
        let s_dim = key_valid.len();
        let hard_data: Vec<f64> = tape
            .value(soft)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if key_valid[i % s_dim] && v >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let hard = Tensor::new(tape.value(soft).shape().to_vec(), hard_data).unwrap();
        tape.straight_through(soft, hard)
    }
}

/// (α⁰, α¹) logit pair for each gate.
pub fn gate_logits(s: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let (a0, a1) = traced::gate_logits(&mut tape, sv);
    (tape.value(a0).clone(), tape.value(a1).clone())
}

/// Soft relaxed gates in (0, 1); masked edges exactly 0.
pub fn gumbel_soft_sample(
    s: &Tensor,
    cfg: &GumbelConfig,
    g0: &Tensor,
    g1: &Tensor,
    key_valid: &[bool],
) -> Result<Tensor> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let z = traced::gumbel_soft(&mut tape, sv, cfg.tau, g0, g1, key_valid);
    Ok(tape.value(z).clone())
}

/// Hard {0,1} gates from the perturbed argmax.
pub fn gumbel_hard_sample(
    s: &Tensor,
    cfg: &GumbelConfig,
    g0: &Tensor,
    g1: &Tensor,
    key_valid: &[bool],
) -> Result<Tensor> {
    cfg.validate()?;
    if !cfg.hard {
        return Err(Error::InvalidArgument(
            "gumbel_hard_sample requires cfg.hard = true".into(),
        ));
    }
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let z = traced::gumbel_hard(&mut tape, sv, cfg.tau, g0, g1, key_valid);
    Ok(tape.value(z).clone())
}

/// Negative-phase structure: binarize s_pos at 0.5, flip ⌈ρ·E⌉ uniformly
/// chosen unmasked edges, report as {EPS_P, 1−EPS_P} values. r is carried
/// over unchanged.
pub fn perturb_negative<R: Rng>(
    s_pos: &StructureState,
    cfg: &NegativeSamplerConfig,
    rng: &mut R,
    key_valid: &[bool],
) -> Result<StructureState> {
    cfg.validate()?;
    let s_dim = s_pos.s.shape()[2];
    let mut unmasked: Vec<usize> = (0..s_pos.s.len())
        .filter(|i| key_valid[i % s_dim])
        .collect();
    if unmasked.is_empty() {
        return Err(Error::InvalidArgument(
            "no unmasked edges to perturb".into(),
        ));
    }
    let e = unmasked.len();
    // small negative shift keeps exact-integer products from rounding up
    let n_flip = (((cfg.rho * e as f64) - 1e-9).ceil().max(1.0) as usize).min(e);
    for k in 0..n_flip {
        let pick = rng.gen_range(k..e);
        unmasked.swap(k, pick);
    }
    let mut bits: Vec<bool> = s_pos.s.data().iter().map(|&v| v > 0.5).collect();
    for &idx in &unmasked[..n_flip] {
        bits[idx] = !bits[idx];
    }
    let data: Vec<f64> = bits
        .iter()
        .enumerate()
        .map(|(i, &on)| {
            if !key_valid[i % s_dim] {
                0.0
            } else if on {
                1.0 - EPS_P
            } else {
                EPS_P
            }
        })
        .collect();
    Ok(StructureState {
        s: Tensor::new(s_pos.s.shape().to_vec(), data).unwrap(),
        r: s_pos.r.clone(),
    })
}

/// Simulated-annealing negative phase: Metropolis single-flip chain on the
/// binary gate energy with latent units Gibbs-resampled from their
/// conditionals, cooling on a geometric ladder; returns the best-energy
/// state visited. Cost grows with S² per sweep — intended for small
/// structures or opt-in use.
pub fn anneal_negative<R: Rng>(
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    cfg: &NegativeSamplerConfig,
    rng: &mut R,
    key_valid: &[bool],
) -> Result<StructureState> {
    cfg.validate()?;
    let (heads, t_dim, s_dim) = (h.h.shape()[0], h.h.shape()[1], h.h.shape()[2]);
    let m_dim = params.b_lat.shape()[1];
    let edges: Vec<(usize, usize, usize)> = (0..heads)
        .flat_map(|hh| (0..t_dim).flat_map(move |t| (0..s_dim).map(move |i| (hh, t, i))))
        .filter(|&(_, _, i)| key_valid[i])
        .collect();
    if edges.is_empty() {
        return Err(Error::InvalidArgument("no unmasked edges to anneal".into()));
    }

    let mut z = vec![false; heads * t_dim * s_dim];
    for &(hh, t, i) in &edges {
        z[(hh * t_dim + t) * s_dim + i] = rng.gen_bool(0.5);
    }
    let mut u = vec![false; heads * t_dim * m_dim];

    let zi = |z: &[bool], hh: usize, t: usize, i: usize| z[(hh * t_dim + t) * s_dim + i];
    let ui = |u: &[bool], hh: usize, t: usize, m: usize| u[(hh * t_dim + t) * m_dim + m];

    let total = |z: &[bool], u: &[bool]| -> f64 {
        let mut e = 0.0;
        for hh in 0..heads {
            for t in 0..t_dim {
                for i in 0..s_dim {
                    if !zi(z, hh, t, i) {
                        continue;
                    }
                    e -= h.h.at(&[hh, t, i]);
                    for k in (i + 1)..s_dim {
                        if zi(z, hh, t, k) {
                            e -= j.j.at(&[hh, i, k]);
                        }
                    }
                    for m in 0..m_dim {
                        if ui(u, hh, t, m) {
                            e -= params.c_lat * params.w_lat.at(&[hh, i, m]);
                        }
                    }
                }
                for m in 0..m_dim {
                    if ui(u, hh, t, m) {
                        e -= params.c_lat * params.b_lat.at(&[hh, m]);
                    }
                }
            }
        }
        e
    };

    let resample_u = |z: &[bool], u: &mut [bool], rng: &mut R| {
        for hh in 0..heads {
            for t in 0..t_dim {
                for m in 0..m_dim {
                    let mut field = params.b_lat.at(&[hh, m]);
                    for i in 0..s_dim {
                        if zi(z, hh, t, i) {
                            field += params.w_lat.at(&[hh, i, m]);
                        }
                    }
                    u[(hh * t_dim + t) * m_dim + m] = rng.gen_bool(sigmoid(params.c_lat * field));
                }
            }
        }
    };

    resample_u(&z, &mut u, rng);
    let mut energy = total(&z, &u);
    let mut best = (z.clone(), u.clone(), energy);
    let steps = cfg.anneal_steps;
    for step in 0..steps {
        let frac = if steps > 1 {
            step as f64 / (steps - 1) as f64
        } else {
            1.0
        };
        let temp = cfg.t_init * (cfg.t_final / cfg.t_init).powf(frac);

        resample_u(&z, &mut u, rng);
        energy = total(&z, &u);
        if energy < best.2 {
            best = (z.clone(), u.clone(), energy);
        }

        for _ in 0..edges.len() {
            let &(hh, t, i) = &edges[rng.gen_range(0..edges.len())];
            // field on edge i given the rest; zero diagonal of J excludes i
            let mut field = h.h.at(&[hh, t, i]);
            for k in 0..s_dim {
                if zi(&z, hh, t, k) {
                    field += j.j.at(&[hh, i, k]);
                }
            }
            for m in 0..m_dim {
                if ui(&u, hh, t, m) {
                    field += params.c_lat * params.w_lat.at(&[hh, i, m]);
                }
            }
            let on = zi(&z, hh, t, i);
            let delta = if on { field } else { -field }; // energy change of the flip
            if delta <= 0.0 || rng.gen_range(0.0..1.0) < (-delta / temp).exp() {
                z[(hh * t_dim + t) * s_dim + i] = !on;
                energy += delta;
                if energy < best.2 {
                    best = (z.clone(), u.clone(), energy);
                }
            }
        }
    }

    let (bz, bu, _) = best;
    let s_data: Vec<f64> = bz
        .iter()
        .enumerate()
        .map(|(idx, &on)| {
            if !key_valid[idx % s_dim] {
                0.0
            } else if on {
                1.0 - EPS_P
            } else {
                EPS_P
            }
        })
        .collect();
    let r_data: Vec<f64> = bu
        .iter()
        .map(|&on| if on { 1.0 - EPS_P } else { EPS_P })
        .collect();
    Ok(StructureState {
        s: Tensor::new(vec![heads, t_dim, s_dim], s_data).unwrap(),
        r: Tensor::new(vec![heads, t_dim, m_dim], r_data).unwrap(),
    })
}
