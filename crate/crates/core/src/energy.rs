//! Boltzmann-style energy over gating graphs.
//!
//! The energy of a gate configuration z (edges) and latent units u is
//!
//!   E = −Σ h·z  −  ½ Σ_{s≠s'} J z z'  +  c_lat·(−Σ b·u − Σ W z u)
//!
//! with the bias field h from query–key similarity and the pairwise
//! coupling J from a diagonal bilinear form over keys. All public entry
//! points delegate to the traced implementations in [`traced`], so the
//! numbers used in plain evaluation and on the gradient tape are produced
//! by the same code.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::oracle::TinyInstance;

/// Additive mask value for padded key positions; exp(NEG_MASK + x)
/// underflows to exact zero for any score x of ordinary magnitude.
pub const NEG_MASK: f64 = -1e4;

/// Probability clamp for entropy and logit computations.
pub const EPS_P: f64 = 1e-6;

/// Query–key bias field, [H × T × S]; masked key columns hold [`NEG_MASK`].
#[derive(Clone, Debug)]
pub struct BiasField {
    pub h: Tensor,
}

/// Symmetric zero-diagonal pairwise couplings, [H × S × S]; masked rows
/// and columns are zero.
#[derive(Clone, Debug)]
pub struct PairwiseCoupling {
    pub j: Tensor,
}

/// Learnable pieces of the energy besides the projections.
#[derive(Clone, Debug)]
pub struct EnergyParams {
    /// diagonal of the coupling bilinear form, [H × d_h]
    pub w_diag: Tensor,
    /// edge-to-latent couplings, [H × S × M], indexed by absolute key position
    pub w_lat: Tensor,
    /// latent biases, [H × M]
    pub b_lat: Tensor,
    /// latent term coefficient
    pub c_lat: f64,
}

/// Factorized Bernoulli state: edge probabilities s [H × T × S] and latent
/// probabilities r [H × T × M]. Masked key positions have s = 0 exactly;
/// everything else lives in [EPS_P, 1−EPS_P].
#[derive(Clone, Debug)]
pub struct StructureState {
    pub s: Tensor,
    pub r: Tensor,
}

/// Traced builders shared by plain evaluation and training.
pub mod traced {
    use super::*;

    /// 0/1 mask over [H × T × S] from key validity.
    pub(crate) fn key_mask3(h: usize, t: usize, key_valid: &[bool]) -> Tensor {
        let s = key_valid.len();
        let mut data = vec![0.0; h * t * s];
        for chunk in data.chunks_mut(s) {
            for (v, ok) in chunk.iter_mut().zip(key_valid) {
                *v = if *ok { 1.0 } else { 0.0 };
            }
        }
        Tensor::new(vec![h, t, s], data).unwrap()
    }

    /// h = QKᵀ/√d_h with masked key columns forced to NEG_MASK.
    pub fn bias_field(tape: &mut Tape, q: Var, k: Var, key_valid: &[bool]) -> Var {
        let (heads, t, dh) = {
            let qs = tape.value(q).shape();
            (qs[0], qs[1], qs[2])
        };
        let s = key_valid.len();
        let raw = tape.bmm(q, k, false, true);
        let scaled = tape.mul_scalar(raw, 1.0 / (dh as f64).sqrt());
        let keep = tape.constant(key_mask3(heads, t, key_valid));
        let mut fill = vec![0.0; heads * t * s];
        for chunk in fill.chunks_mut(s) {
            for (v, ok) in chunk.iter_mut().zip(key_valid) {
                if !*ok {
                    *v = NEG_MASK;
                }
            }
        }
        let fill = tape.constant(Tensor::new(vec![heads, t, s], fill).unwrap());
        let kept = tape.mul(scaled, keep);
        tape.add(kept, fill)
    }

    /// J = symmetrize(K·diag(w)·Kᵀ)/d_h with zero diagonal and masked
    /// rows/columns zeroed. Symmetry is exact to the bit, not just up to
    /// rounding: the pairwise energy contracts J against identical
    /// left/right vectors, and downstream checks compare transposed entries
    /// with `==`.
    pub fn pair_coupling(tape: &mut Tape, k: Var, w_diag: Var, key_valid: &[bool]) -> Var {
        let (heads, s, dh) = {
            let ks = tape.value(k).shape();
            (ks[0], ks[1], ks[2])
        };
        debug_assert_eq!(key_valid.len(), s);
        let kw = tape.mul_broadcast_rows(k, w_diag);
        let raw = tape.bmm(kw, k, false, true);
        let scaled = tape.mul_scalar(raw, 1.0 / dh as f64);
        let sym = tape.symmetrize(scaled);
        let mut mask = vec![0.0; heads * s * s];
        for h in 0..heads {
            for i in 0..s {
                for j in 0..s {
                    if key_valid[i] && key_valid[j] {
                        mask[(h * s + i) * s + j] = 1.0;
                    }
                }
            }
        }
        let mask = tape.constant(Tensor::new(vec![heads, s, s], mask).unwrap());
        let masked = tape.mul(sym, mask);
        tape.zero_diag(masked)
    }

    /// −Σ h·z. Masked entries contribute 0 because z is exactly 0 there.
    pub fn energy_bias(tape: &mut Tape, h: Var, z: Var) -> Var {
        let prod = tape.mul(h, z);
        let total = tape.sum_all(prod);
        tape.neg(total)
    }

    /// −½ Σ_{s≠s'} J z z' per (head, query); the zero diagonal of J makes
    /// the full bilinear form equal the off-diagonal sum.
    pub fn energy_pair(tape: &mut Tape, j: Var, z: Var) -> Var {
        let zj = tape.bmm(z, j, false, false); // [H,T,S]
        let quad = tape.mul(zj, z);
        let total = tape.sum_all(quad);
        tape.mul_scalar(total, -0.5)
    }

    /// c_lat·(−Σ b·u − Σ W z u) with c_lat a rank-0 variable.
    pub fn energy_latent(
        tape: &mut Tape,
        w_lat: Var,
        b_lat: Var,
        c_lat: Var,
        z: Var,
        u: Var,
    ) -> Var {
        let bu = tape.mul_broadcast_rows(u, b_lat);
        let bias_term = tape.sum_all(bu);
        let zw = tape.bmm(z, w_lat, false, false); // [H,T,M]
        let zwu = tape.mul(zw, u);
        let pair_term = tape.sum_all(zwu);
        let total = tape.add(bias_term, pair_term);
        let neg = tape.neg(total);
        tape.scale_by_var(neg, c_lat)
    }

    /// Bias + pairwise + latent energy of one (soft or hard) configuration.
    pub fn total_energy(
        tape: &mut Tape,
        h: Var,
        j: Var,
        w_lat: Var,
        b_lat: Var,
        c_lat: Var,
        z: Var,
        u: Var,
    ) -> Var {
        let eb = energy_bias(tape, h, z);
        let ep = energy_pair(tape, j, z);
        let el = energy_latent(tape, w_lat, b_lat, c_lat, z, u);
        let bp = tape.add(eb, ep);
        tape.add(bp, el)
    }
}

fn expect_shape(name: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::ShapeMismatch(format!(
            "{name}: got {:?}, expected {:?}",
            t.shape(),
            shape
        )));
    }
    Ok(())
}

/// h_hts = q_ht·k_hs/√d_h; masked key positions set to [`NEG_MASK`].
pub fn compute_bias_field(q: &Tensor, k: &Tensor, key_valid: &[bool]) -> Result<BiasField> {
    if q.ndim() != 3 || k.ndim() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "bias field expects rank-3 Q and K, got {:?} and {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let (heads, dh) = (q.shape()[0], q.shape()[2]);
    expect_shape("K", k, &[heads, key_valid.len(), dh])?;
    if dh == 0 {
        return Err(Error::InvalidArgument("head width must be at least 1".into()));
    }
    let mut tape = Tape::new();
    let qv = tape.constant(q.clone());
    let kv = tape.constant(k.clone());
    let h = traced::bias_field(&mut tape, qv, kv, key_valid);
    Ok(BiasField {
        h: tape.value(h).clone(),
    })
}

/// J_{ss'} = (Σ_d w_d k_sd k_s'd)/d_h off-diagonal, exactly symmetric,
/// masked rows/columns zero.
pub fn compute_pair_coupling(
    k: &Tensor,
    w_diag: &Tensor,
    key_valid: &[bool],
) -> Result<PairwiseCoupling> {
    if k.ndim() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "pair coupling expects rank-3 K, got {:?}",
            k.shape()
        )));
    }
    let (heads, dh) = (k.shape()[0], k.shape()[2]);
    expect_shape("K", k, &[heads, key_valid.len(), dh])?;
    expect_shape("w_diag", w_diag, &[heads, dh])?;
    let mut tape = Tape::new();
    let kv = tape.constant(k.clone());
    let wv = tape.constant(w_diag.clone());
    let j = traced::pair_coupling(&mut tape, kv, wv, key_valid);
    Ok(PairwiseCoupling {
        j: tape.value(j).clone(),
    })
}

fn check_symmetric(j: &Tensor) -> Result<()> {
    let (heads, s) = (j.shape()[0], j.shape()[1]);
    for h in 0..heads {
        for i in 0..s {
            for k in 0..i {
                if j.data()[(h * s + i) * s + k] != j.data()[(h * s + k) * s + i] {
                    return Err(Error::AsymmetricCoupling);
                }
            }
        }
    }
    Ok(())
}

/// −Σ h·z over all heads, queries, and keys.
pub fn energy_bias(h: &BiasField, z: &Tensor) -> Result<f64> {
    expect_shape("z", z, h.h.shape())?;
    let mut tape = Tape::new();
    let hv = tape.constant(h.h.clone());
    let zv = tape.constant(z.clone());
    let e = traced::energy_bias(&mut tape, hv, zv);
    Ok(tape.scalar(e))
}

/// −½ Σ_{s≠s'} J z z'; rejects an asymmetric coupling.
pub fn energy_pair(j: &PairwiseCoupling, z: &Tensor) -> Result<f64> {
    let s = z.shape()[2];
    expect_shape("J", &j.j, &[z.shape()[0], s, s])?;
    check_symmetric(&j.j)?;
    let mut tape = Tape::new();
    let jv = tape.constant(j.j.clone());
    let zv = tape.constant(z.clone());
    let e = traced::energy_pair(&mut tape, jv, zv);
    Ok(tape.scalar(e))
}

/// c_lat·(−Σ b·u − Σ W z u).
pub fn energy_latent(params: &EnergyParams, z: &Tensor, u: &Tensor) -> Result<f64> {
    let (heads, t, s) = (z.shape()[0], z.shape()[1], z.shape()[2]);
    let m = params.b_lat.shape()[1];
    expect_shape("u", u, &[heads, t, m])?;
    expect_shape("W_lat", &params.w_lat, &[heads, s, m])?;
    let mut tape = Tape::new();
    let wv = tape.constant(params.w_lat.clone());
    let bv = tape.constant(params.b_lat.clone());
    let cv = tape.constant(Tensor::scalar(params.c_lat));
    let zv = tape.constant(z.clone());
    let uv = tape.constant(u.clone());
    let e = traced::energy_latent(&mut tape, wv, bv, cv, zv, uv);
    Ok(tape.scalar(e))
}

/// Full energy of one configuration.
pub fn total_energy(
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    z: &Tensor,
    u: &Tensor,
) -> Result<f64> {
    check_symmetric(&j.j)?;
    Ok(energy_bias(h, z)? + energy_pair(j, z)? + energy_latent(params, z, u)?)
}

/// Expected energy under the factorized state: the energy polynomial
/// evaluated at (s, r). Exact because the zero diagonal of J leaves only
/// off-diagonal pairs, where E_q[z z'] = s s' under independence.
pub fn expected_energy(
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    q: &StructureState,
) -> Result<f64> {
    total_energy(h, j, params, &q.s, &q.r)
}

/// Sum of Bernoulli entropies over unmasked edges and all latent units.
/// Entries are clamped to [EPS_P, 1−EPS_P] first, which realizes the
/// 0·log 0 = 0 convention for deterministic entries.
pub fn entropy(q: &StructureState, key_valid: &[bool]) -> f64 {
    fn bern(p: f64) -> f64 {
        let p = p.clamp(EPS_P, 1.0 - EPS_P);
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }
    let s_dim = q.s.shape()[2];
    let mut total = 0.0;
    for (idx, &p) in q.s.data().iter().enumerate() {
        if key_valid[idx % s_dim] {
            total += bern(p);
        }
    }
    for &p in q.r.data() {
        total += bern(p);
    }
    total
}

/// F(q) = E_q[E] − H(q); upper-bounds −log Z for every factorized q.
pub fn free_energy(
    h: &BiasField,
    j: &PairwiseCoupling,
    params: &EnergyParams,
    q: &StructureState,
    key_valid: &[bool],
) -> Result<f64> {
    Ok(expected_energy(h, j, params, q)? - entropy(q, key_valid))
}

/// View a [`TinyInstance`] as one-head, one-query fields with a full mask.
/// Bridges the enumeration oracle to the solver and energy code in tests
/// and in the oracle verification suite.
pub fn tiny_instance_fields(inst: &TinyInstance) -> (BiasField, PairwiseCoupling, EnergyParams) {
    let s = inst.num_edges();
    let m = inst.num_latent();
    let h = BiasField {
        h: Tensor::new(vec![1, 1, s], inst.h.clone()).unwrap(),
    };
    let j = PairwiseCoupling {
        j: Tensor::new(vec![1, s, s], inst.j.clone()).unwrap(),
    };
    let params = EnergyParams {
        w_diag: Tensor::zeros(&[1, 1]),
        w_lat: Tensor::new(vec![1, s, m], inst.w.clone()).unwrap(),
        b_lat: Tensor::new(vec![1, m], inst.b.clone()).unwrap(),
        c_lat: inst.c_lat,
    };
    (h, j, params)
}
