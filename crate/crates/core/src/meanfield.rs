//! Naive mean-field solver for the gating posterior.
//!
//! Finds a factorized Bernoulli state (s, r) by damped fixed-point
//! iteration on the stationarity conditions of the variational free
//! energy:
//!
//!   s = σ(h + J·s + c_lat·W·r)        r = σ(c_lat·(b + Wᵀ·s))
//!
//! Parallel damped sweeps are the training path (fixed sweep count keeps
//! the unrolled tape static); sequential coordinate updates exist for the
//! monotonicity diagnostics, where each update is the exact coordinate
//! minimizer of F and the free energy can only go down.

use crate::energy::{self, BiasField, EnergyParams, PairwiseCoupling, StructureState, EPS_P};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    Parallel,
    Sequential,
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// sweep count K
    pub iterations: usize,
    /// blend weight on the previous state in parallel mode
    pub damping: f64,
    /// convergence threshold, used only by diagnostic solves
    pub tolerance: f64,
    pub update_mode: UpdateMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 3,
            damping: 0.5,
            tolerance: 1e-8,
            update_mode: UpdateMode::Parallel,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("solver iterations must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument(format!(
                "damping {} outside [0, 1]",
                self.damping
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Convergence diagnostics from a solve.
#[derive(Clone, Debug, Default)]
pub struct SolveTrace {
    /// fixed-point mismatch max|σ(φ) − s| at the returned state
    pub residual: f64,
    /// free energy after each full sweep
    pub free_energy_per_sweep: Vec<f64>,
    /// sequential mode only: free energy after every coordinate update
    pub free_energy_per_update: Vec<f64>,
}

/// Traced update steps; the plain operations below delegate here so the
/// solver arithmetic exists exactly once.
pub mod traced {
    use super::*;
    use crate::energy::traced::key_mask3;

    /// s⁰ = σ(h), clamped, with masked positions forced to exact zero.
    pub fn init_s_step(tape: &mut Tape, h: Var, key_valid: &[bool]) -> Var {
        let (heads, t) = {
            let hs = tape.value(h).shape();
            (hs[0], hs[1])
        };
        let sig = tape.sigmoid(h);
        let cl = tape.clamp(sig, EPS_P, 1.0 - EPS_P);
        let keep = tape.constant(key_mask3(heads, t, key_valid));
        tape.mul(cl, keep)
    }

    /// r = σ(c_lat·(b + Wᵀs)), clamped to the valid probability band.
    pub fn update_r_step(tape: &mut Tape, s: Var, w_lat: Var, b_lat: Var, c_lat: Var) -> Var {
        let sw = tape.bmm(s, w_lat, false, false); // [H,T,M]
        let field = tape.add_broadcast_rows(sw, b_lat);
        let scaled = tape.scale_by_var(field, c_lat);
        let sig = tape.sigmoid(scaled);
        tape.clamp(sig, EPS_P, 1.0 - EPS_P)
    }

    /// One damped parallel sweep of the edge probabilities.
    pub fn update_s_step(
        tape: &mut Tape,
        s_prev: Var,
        r: Var,
        h: Var,
        j: Var,
        w_lat: Var,
        c_lat: Var,
        damping: f64,
        key_valid: &[bool],
    ) -> Var {
        let (heads, t) = {
            let hs = tape.value(h).shape();
            (hs[0], hs[1])
        };
        let js = tape.bmm(s_prev, j, false, false); // symmetric J: row/column agree
        let wr = tape.bmm(r, w_lat, false, true); // [H,T,S]
        let wrc = tape.scale_by_var(wr, c_lat);
        let partial = tape.add(h, js);
        let field = tape.add(partial, wrc);
        let sig = tape.sigmoid(field);
        let cl = tape.clamp(sig, EPS_P, 1.0 - EPS_P);
        let keep = tape.constant(key_mask3(heads, t, key_valid));
        let cand = tape.mul(cl, keep);
        if damping == 0.0 {
            cand
        } else {
            let kept = tape.mul_scalar(s_prev, damping);
            let new = tape.mul_scalar(cand, 1.0 - damping);
            tape.add(kept, new)
        }
    }

    /// K alternating sweeps (r then s), fully unrolled on the tape.
    #[allow(clippy::too_many_arguments)]
    pub fn solve(
        tape: &mut Tape,
        h: Var,
        j: Var,
        w_lat: Var,
        b_lat: Var,
        c_lat: Var,
        iterations: usize,
        damping: f64,
        key_valid: &[bool],
    ) -> (Var, Var) {
        assert!(iterations >= 1, "solver needs at least one sweep");
        let mut s = init_s_step(tape, h, key_valid);
        let mut r = update_r_step(tape, s, w_lat, b_lat, c_lat);
        s = update_s_step(tape, s, r, h, j, w_lat, c_lat, damping, key_valid);
        for _ in 1..iterations {
            r = update_r_step(tape, s, w_lat, b_lat, c_lat);
            s = update_s_step(tape, s, r, h, j, w_lat, c_lat, damping, key_valid);
        }
        (s, r)
    }
}

/// σ(h) with masked entries forced to zero.
pub fn init_s(h: &BiasField, key_valid: &[bool]) -> Tensor {
    let mut tape = Tape::new();
    let hv = tape.constant(h.h.clone());
    let s = traced::init_s_step(&mut tape, hv, key_valid);
    tape.value(s).clone()
}

/// Latent update from the current edge probabilities.
pub fn update_r(s: &Tensor, params: &EnergyParams) -> Tensor {
    let mut tape = Tape::new();
    let sv = tape.constant(s.clone());
    let wv = tape.constant(params.w_lat.clone());
    let bv = tape.constant(params.b_lat.clone());
    let cv = tape.constant(Tensor::scalar(params.c_lat));
    let r = traced::update_r_step(&mut tape, sv, wv, bv, cv);
    tape.value(r).clone()
}

/// One edge-probability sweep: damped parallel, or sequential in index
/// order with damping 0 using the freshest values.
#[allow(clippy::too_many_arguments)]
pub fn update_s(
    s_prev: &Tensor,
    r: &Tensor,
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    cfg: &SolverConfig,
    key_valid: &[bool],
) -> Tensor {
    match cfg.update_mode {
        UpdateMode::Parallel => {
            let mut tape = Tape::new();
            let sv = tape.constant(s_prev.clone());
            let rv = tape.constant(r.clone());
            let hv = tape.constant(h.h.clone());
            let jv = tape.constant(j.j.clone());
            let wv = tape.constant(params.w_lat.clone());
            let cv = tape.constant(Tensor::scalar(params.c_lat));
            let out = traced::update_s_step(
                &mut tape,
                sv,
                rv,
                hv,
                jv,
                wv,
                cv,
                cfg.damping,
                key_valid,
            );
            tape.value(out).clone()
        }
        UpdateMode::Sequential => {
            let mut s = s_prev.clone();
            sequential_sweep(&mut s, r, h, j, params, key_valid, |_| {});
            s
        }
    }
}

/// Sequential coordinate updates over (head, query, key) in index order.
/// Each assignment is the exact minimizer of F in that coordinate;
/// `on_update` observes the state after every assignment.
fn sequential_sweep(
    s: &mut Tensor,
    r: &Tensor,
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    key_valid: &[bool],
    mut on_update: impl FnMut(&Tensor),
) {
    let (heads, t_dim, s_dim) = (s.shape()[0], s.shape()[1], s.shape()[2]);
    let m_dim = params.b_lat.shape()[1];
    for hh in 0..heads {
        for t in 0..t_dim {
            for i in 0..s_dim {
                if !key_valid[i] {
                    continue;
                }
                let mut field = h.h.at(&[hh, t, i]);
                for sp in 0..s_dim {
                    field += j.j.at(&[hh, i, sp]) * s.at(&[hh, t, sp]);
                }
                for m in 0..m_dim {
                    field += params.c_lat * params.w_lat.at(&[hh, i, m]) * r.at(&[hh, t, m]);
                }
                let val = sigmoid(field).clamp(EPS_P, 1.0 - EPS_P);
                s.set(&[hh, t, i], val);
                on_update(s);
            }
        }
    }
}

/// Fixed-point mismatch of the state: max |σ(φ(s, update_r(s))) − s| over
/// unmasked entries. One further sweep can move s by at most this much
/// (times 1 − damping).
pub fn fixed_point_residual(
    q: &StructureState,
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    key_valid: &[bool],
) -> f64 {
    let r = update_r(&q.s, params);
    let cfg = SolverConfig {
        damping: 0.0,
        ..SolverConfig::default()
    };
    let cand = update_s(&q.s, &r, h, j, params, &cfg, key_valid);
    cand.data()
        .iter()
        .zip(q.s.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// K alternating sweeps from s⁰ = σ(h). Free energy is recorded after
/// every sweep (and after every coordinate update in sequential mode).
pub fn solve(
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    cfg: &SolverConfig,
    key_valid: &[bool],
) -> Result<(StructureState, SolveTrace)> {
    cfg.validate()?;
    let mut trace = SolveTrace::default();
    let mut s = init_s(h, key_valid);
    let mut r;
    let mut per_update: Vec<f64> = Vec::new();
    for _ in 0..cfg.iterations {
        r = update_r(&s, params);
        match cfg.update_mode {
            UpdateMode::Parallel => {
                s = update_s(&s, &r, h, j, params, cfg, key_valid);
            }
            UpdateMode::Sequential => {
                let state_f = |s: &Tensor, r: &Tensor| {
                    let q = StructureState {
                        s: s.clone(),
                        r: r.clone(),
                    };
                    energy::free_energy(h, j, params, &q, key_valid).expect("free energy")
                };
                per_update.push(state_f(&s, &r));
                sequential_sweep(&mut s, &r, h, j, params, key_valid, |snapshot| {
                    per_update.push(state_f(snapshot, &r));
                });
            }
        }
        let q = StructureState {
            s: s.clone(),
            r: update_r(&s, params),
        };
        trace
            .free_energy_per_sweep
            .push(energy::free_energy(h, j, params, &q, key_valid)?);
    }
    let r_final = update_r(&s, params);
    let state = StructureState { s, r: r_final };
    trace.residual = fixed_point_residual(&state, h, j, params, key_valid);
    trace.free_energy_per_update = per_update;
    Ok((state, trace))
}

/// Diagnostic solve: sweeps until the fixed-point residual drops to
/// `cfg.tolerance`, up to `max_sweeps`. Training never early-exits; this
/// entry point exists for convergence studies and the self-consistency
/// checks.
pub fn solve_converged(
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    cfg: &SolverConfig,
    key_valid: &[bool],
    max_sweeps: usize,
) -> Result<(StructureState, SolveTrace)> {
    cfg.validate()?;
    let mut trace = SolveTrace::default();
    let mut s = init_s(h, key_valid);
    for _ in 0..max_sweeps {
        let r = update_r(&s, params);
        s = match cfg.update_mode {
            UpdateMode::Parallel => update_s(&s, &r, h, j, params, cfg, key_valid),
            UpdateMode::Sequential => {
                let mut sn = s.clone();
                sequential_sweep(&mut sn, &r, h, j, params, key_valid, |_| {});
                sn
            }
        };
        let q = StructureState {
            s: s.clone(),
            r: update_r(&s, params),
        };
        trace
            .free_energy_per_sweep
            .push(energy::free_energy(h, j, params, &q, key_valid)?);
        trace.residual = fixed_point_residual(&q, h, j, params, key_valid);
        if trace.residual <= cfg.tolerance {
            return Ok((q, trace));
        }
    }
    let state = StructureState {
        r: update_r(&s, params),
        s,
    };
    trace.residual = fixed_point_residual(&state, h, j, params, key_valid);
    Ok((state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::tiny_instance_fields;
    use crate::numerics::fd::{finite_diff_gradient, max_relative_error};
    use crate::oracle::{self, TinyInstance};
    use rand::Rng;

    fn full_mask(s: usize) -> Vec<bool> {
        vec![true; s]
    }

    fn random_tiny(s: usize, m: usize, scale: f64, seed: u64) -> TinyInstance {
        let mut rng = crate::numerics::rng::seeded_rng(seed);
        let mut inst = TinyInstance {
            h: vec![0.0; s],
            j: vec![0.0; s * s],
            w: vec![0.0; s * m],
            b: vec![0.0; m],
            c_lat: 0.5,
        };
        for v in inst.h.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for i in 0..s {
            for k in (i + 1)..s {
                let val = rng.gen_range(-scale..scale);
                inst.j[i * s + k] = val;
                inst.j[k * s + i] = val;
            }
        }
        for v in inst.w.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        for v in inst.b.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
        inst
    }

    #[test]
    fn init_s_closed_forms() {
        let h = BiasField {
            h: Tensor::new(vec![1, 1, 3], vec![0.0, 3.0f64.ln(), crate::energy::NEG_MASK]).unwrap(),
        };
        let s = init_s(&h, &[true, true, false]);
        assert!((s.data()[0] - 0.5).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        assert_eq!(s.data()[2], 0.0, "masked entry must be exactly zero");
    }

    #[test]
    fn update_r_closed_forms() {
        // s=0, b=0 → 0.5
        let params = EnergyParams {
            w_diag: Tensor::zeros(&[1, 1]),
            w_lat: Tensor::zeros(&[1, 1, 1]),
            b_lat: Tensor::zeros(&[1, 1]),
            c_lat: 0.5,
        };
        let s0 = Tensor::zeros(&[1, 1, 1]);
        let r = update_r(&s0, &params);
        assert!((r.data()[0] - 0.5).abs() < 1e-15);

        // W=0 → σ(c_lat·b) independent of s
        let params_b = EnergyParams {
            b_lat: Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            ..params.clone()
        };
        let s1 = Tensor::full(&[1, 1, 1], 0.9);
        let r = update_r(&s1, &params_b);
        assert!((r.data()[0] - sigmoid(1.0)).abs() < 1e-15);

        // S=1, M=1, s=1, W=2, b=0, c_lat=0.5 → σ(1)
        let params_w = EnergyParams {
            w_lat: Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap(),
            ..params
        };
        let s2 = Tensor::full(&[1, 1, 1], 1.0);
        let r = update_r(&s2, &params_w);
        assert!((r.data()[0] - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn decoupled_update_is_exact_in_one_step() {
        let mut inst = random_tiny(4, 2, 0.1, 31);
        inst.j.iter_mut().for_each(|v| *v = 0.0); // decouple: J = W = 0
        inst.w.iter_mut().for_each(|v| *v = 0.0);
        let (h, j, params) = tiny_instance_fields(&inst);
        let cfg = SolverConfig {
            damping: 0.0,
            iterations: 1,
            ..SolverConfig::default()
        };
        let (state, trace) = solve(&h, &j, &params, &cfg, &full_mask(4)).unwrap();
        let post = oracle::enumerate(&inst).unwrap();
        for (got, want) in state.s.data().iter().zip(&post.marginals_z) {
            assert!((got - want).abs() < 1e-12, "got {got}, oracle {want}");
        }
        for (got, want) in state.r.data().iter().zip(&post.marginals_u) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(trace.residual < 1e-12, "decoupled residual {}", trace.residual);
    }

    #[test]
    fn fixed_point_is_stationary_under_any_damping() {
        let inst = random_tiny(4, 2, 0.3, 32);
        let (h, j, params) = tiny_instance_fields(&inst);
        let cfg = SolverConfig::default();
        let (state, _) = solve_converged(&h, &j, &params, &cfg, &full_mask(4), 500).unwrap();
        for damping in [0.0, 0.3, 0.9] {
            let cfg_d = SolverConfig {
                damping,
                ..SolverConfig::default()
            };
            let r = update_r(&state.s, &params);
            let next = update_s(&state.s, &r, &h, &j, &params, &cfg_d, &full_mask(4));
            let diff = next
                .data()
                .iter()
                .zip(state.s.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-7, "damping {damping}: fixed point moved {diff}");
        }
    }

    #[test]
    fn weak_coupling_marginals_near_oracle() {
        for seed in 40..45 {
            let inst = random_tiny(5, 2, 0.1, seed);
            let (h, j, params) = tiny_instance_fields(&inst);
            let cfg = SolverConfig::default();
            let (state, _) = solve_converged(&h, &j, &params, &cfg, &full_mask(5), 200).unwrap();
            let post = oracle::enumerate(&inst).unwrap();
            for (got, want) in state.s.data().iter().zip(&post.marginals_z) {
                assert!(
                    (got - want).abs() <= 0.05,
                    "seed {seed}: mean-field {got} vs exact {want}"
                );
            }
        }
    }

    #[test]
    fn sequential_free_energy_never_increases() {
        for seed in 50..60 {
            let inst = random_tiny(4, 2, 1.0, seed);
            let (h, j, params) = tiny_instance_fields(&inst);
            let cfg = SolverConfig {
                update_mode: UpdateMode::Sequential,
                iterations: 5,
                ..SolverConfig::default()
            };
            let (_, trace) = solve(&h, &j, &params, &cfg, &full_mask(4)).unwrap();
            assert!(!trace.free_energy_per_update.is_empty());
            for pair in trace.free_energy_per_update.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-10,
                    "seed {seed}: free energy rose {} → {}",
                    pair[0],
                    pair[1]
                );
            }
        }
    }

    #[test]
    fn converged_state_is_self_consistent() {
        let inst = random_tiny(5, 3, 0.5, 61);
        let (h, j, params) = tiny_instance_fields(&inst);
        let cfg = SolverConfig::default();
        let (state, trace) = solve_converged(&h, &j, &params, &cfg, &full_mask(5), 1000).unwrap();
        assert!(trace.residual <= 1e-8, "residual {}", trace.residual);
        // one further sweep moves s by at most the residual
        let r = update_r(&state.s, &params);
        let next = update_s(&state.s, &r, &h, &j, &params, &cfg, &full_mask(5));
        let diff = next
            .data()
            .iter()
            .zip(state.s.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-8, "post-convergence sweep moved s by {diff}");
    }

    #[test]
    fn mask_respected_after_every_sweep() {
        let inst = random_tiny(4, 2, 0.8, 62);
        let (_h, j, params) = tiny_instance_fields(&inst);
        // rebuild with a mask: positions 1 and 3 padded
        let valid = vec![true, false, true, false];
        let hm = crate::energy::compute_bias_field(
            &Tensor::randn(&[1, 1, 3], 1.0, &mut crate::numerics::rng::seeded_rng(63)),
            &Tensor::randn(&[1, 4, 3], 1.0, &mut crate::numerics::rng::seeded_rng(64)),
            &valid,
        )
        .unwrap();
        for k in 1..4 {
            let cfg = SolverConfig {
                iterations: k,
                ..SolverConfig::default()
            };
            let (state, _) = solve(&hm, &j, &params, &cfg, &valid).unwrap();
            for t in 0..1 {
                for (i, ok) in valid.iter().enumerate() {
                    let v = state.s.at(&[0, t, i]);
                    if *ok {
                        assert!(v > 0.0 && v < 1.0);
                    } else {
                        assert_eq!(v, 0.0, "sweep {k}: masked edge must stay zero");
                    }
                }
            }
        }
    }

    #[test]
    fn unrolled_solver_gradients_match_finite_differences() {
        // d/dθ of sum(s_K) + sum(r_K) for θ ∈ {h, J(sym), W, b, c_lat}
        let s_dim = 3;
        let m_dim = 2;
        let inst = random_tiny(s_dim, m_dim, 0.4, 70);
        let valid = full_mask(s_dim);

        let run = |hv: &[f64], jv: &[f64], wv: &[f64], bv: &[f64], c: f64| -> (f64, Option<(Tensor, Tensor, Tensor, Tensor, f64)>) {
            let mut tape = Tape::new();
            let h = tape.param(Tensor::new(vec![1, 1, s_dim], hv.to_vec()).unwrap());
            let j = tape.param(Tensor::new(vec![1, s_dim, s_dim], jv.to_vec()).unwrap());
            let w = tape.param(Tensor::new(vec![1, s_dim, m_dim], wv.to_vec()).unwrap());
            let b = tape.param(Tensor::new(vec![1, m_dim], bv.to_vec()).unwrap());
            let c_lat = tape.param(Tensor::scalar(c));
            let (s, r) = traced::solve(&mut tape, h, j, w, b, c_lat, 2, 0.5, &valid);
            let ss = tape.sum_all(s);
            let sr = tape.sum_all(r);
            let out = tape.add(ss, sr);
            let val = tape.scalar(out);
            let grads = tape.backward(out).unwrap();
            let g = (
                grads.wrt_or_zeros(h, &[1, 1, s_dim]),
                grads.wrt_or_zeros(j, &[1, s_dim, s_dim]),
                grads.wrt_or_zeros(w, &[1, s_dim, m_dim]),
                grads.wrt_or_zeros(b, &[1, m_dim]),
                grads.wrt_or_zeros(c_lat, &[]).scalar_value(),
            );
            (val, Some(g))
        };

        let (_, grads) = run(&inst.h, &inst.j, &inst.w, &inst.b, inst.c_lat);
        let (gh, gj, gw, gb, gc) = grads.unwrap();

        let fd_h = finite_diff_gradient(
            |theta| Ok(run(theta, &inst.j, &inst.w, &inst.b, inst.c_lat).0),
            &inst.h,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(gh.data(), &fd_h) <= 1e-4, "h gradient");

        let fd_j = finite_diff_gradient(
            |theta| Ok(run(&inst.h, theta, &inst.w, &inst.b, inst.c_lat).0),
            &inst.j,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(gj.data(), &fd_j) <= 1e-4, "J gradient");

        let fd_w = finite_diff_gradient(
            |theta| Ok(run(&inst.h, &inst.j, theta, &inst.b, inst.c_lat).0),
            &inst.w,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(gw.data(), &fd_w) <= 1e-4, "W gradient");

        let fd_b = finite_diff_gradient(
            |theta| Ok(run(&inst.h, &inst.j, &inst.w, theta, inst.c_lat).0),
            &inst.b,
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(gb.data(), &fd_b) <= 1e-4, "b gradient");

        let fd_c = finite_diff_gradient(
            |theta| Ok(run(&inst.h, &inst.j, &inst.w, &inst.b, theta[0]).0),
            &[inst.c_lat],
            1e-5,
        )
        .unwrap();
        assert!(max_relative_error(&[gc], &fd_c) <= 1e-4, "c_lat gradient");
    }

    #[test]
    fn solver_config_validation() {
        let bad = SolverConfig {
            iterations: 0,
            ..SolverConfig::default()
        };
        let inst = random_tiny(2, 1, 0.1, 80);
        let (h, j, params) = tiny_instance_fields(&inst);
        assert!(solve(&h, &j, &params, &bad, &full_mask(2)).is_err());
    }
}
