//! Exact enumeration over tiny gating systems.
//!
//! Restricts the gating energy to one head and one query and brute-forces
//! all 2^(S+M) binary states. Everything else in the crate is judged
//! against the numbers produced here, so this module stays as close to the
//! defining sums as possible: no shared kernels, no reuse of the model's
//! energy code.

use crate::error::{Error, Result};
use crate::numerics::logsumexp;

/// One-head, one-query instance small enough to enumerate.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    /// bias field, length S
    pub h: Vec<f64>,
    /// couplings, row-major [S × S]; symmetric with zero diagonal
    pub j: Vec<f64>,
    /// edge-to-latent couplings, row-major [S × M]
    pub w: Vec<f64>,
    /// latent biases, length M
    pub b: Vec<f64>,
    /// latent term coefficient
    pub c_lat: f64,
}

/// Exact Boltzmann posterior over all binary states of a [`TinyInstance`].
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    pub log_partition: f64,
    /// p(state), indexed by the state encoding below, length 2^(S+M)
    pub probabilities: Vec<f64>,
    pub marginals_z: Vec<f64>,
    pub marginals_u: Vec<f64>,
}

/// States are encoded little-endian: bit i (i < S) is z_i, bit S+m is u_m.
/// The order is part of the contract so probability vectors are comparable
/// across runs.
pub const ENUMERATION_GUARD_BITS: usize = 20;

impl TinyInstance {
    pub fn num_edges(&self) -> usize {
        self.h.len()
    }

    pub fn num_latent(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (s, m) = (self.num_edges(), self.num_latent());
        if s + m > ENUMERATION_GUARD_BITS {
            return Err(Error::InstanceTooLarge(s + m, ENUMERATION_GUARD_BITS));
        }
        if self.j.len() != s * s {
            return Err(Error::ShapeMismatch(format!(
                "coupling matrix has {} entries, expected {}",
                self.j.len(),
                s * s
            )));
        }
        if self.w.len() != s * m {
            return Err(Error::ShapeMismatch(format!(
                "latent coupling has {} entries, expected {}",
                self.w.len(),
                s * m
            )));
        }
        for i in 0..s {
            if self.j[i * s + i] != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "coupling diagonal must be zero, J[{i},{i}] = {}",
                    self.j[i * s + i]
                )));
            }
            for k in 0..i {
                if self.j[i * s + k] != self.j[k * s + i] {
                    return Err(Error::AsymmetricCoupling);
                }
            }
        }
        Ok(())
    }

    /// Energy of one encoded state, straight from the defining sums.
    pub fn state_energy(&self, state: usize) -> f64 {
        let (s, m) = (self.num_edges(), self.num_latent());
        let z = |i: usize| (state >> i) & 1 == 1;
        let u = |i: usize| (state >> (s + i)) & 1 == 1;
        let mut e_bias = 0.0;
        for i in 0..s {
            if z(i) {
                e_bias -= self.h[i];
            }
        }
        // −½ Σ_{i≠k} J_ik z_i z_k = −Σ_{i<k} J_ik z_i z_k for symmetric J
        let mut e_pair = 0.0;
        for i in 0..s {
            if z(i) {
                for k in (i + 1)..s {
                    if z(k) {
                        e_pair -= self.j[i * s + k];
                    }
                }
            }
        }
        let mut e_lat = 0.0;
        for mm in 0..m {
            if u(mm) {
                e_lat -= self.b[mm];
                for i in 0..s {
                    if z(i) {
                        e_lat -= self.w[i * m + mm];
                    }
                }
            }
        }
        e_bias + e_pair + self.c_lat * e_lat
    }
}

/// Enumerate every binary state and return the exact posterior.
pub fn enumerate(inst: &TinyInstance) -> Result<ExactPosterior> {
    inst.validate()?;
    let (s, m) = (inst.num_edges(), inst.num_latent());
    let n_states = 1usize << (s + m);
    let neg_energy: Vec<f64> = (0..n_states).map(|st| -inst.state_energy(st)).collect();
    let log_partition = logsumexp(&neg_energy)?;
    let probabilities: Vec<f64> = neg_energy.iter().map(|v| (v - log_partition).exp()).collect();
    let mut marginals_z = vec![0.0; s];
    let mut marginals_u = vec![0.0; m];
    for (st, &p) in probabilities.iter().enumerate() {
        for (i, mz) in marginals_z.iter_mut().enumerate() {
            if (st >> i) & 1 == 1 {
                *mz += p;
            }
        }
        for (mm, mu) in marginals_u.iter_mut().enumerate() {
            if (st >> (s + mm)) & 1 == 1 {
                *mu += p;
            }
        }
    }
    Ok(ExactPosterior {
        log_partition,
        probabilities,
        marginals_z,
        marginals_u,
    })
}

/// −log Z: the infimum of the variational free energy over all
/// distributions, factorized or not.
pub fn exact_min_free_energy(inst: &TinyInstance) -> Result<f64> {
    Ok(-enumerate(inst)?.log_partition)
}

/// Exact marginal q(z_s = 1) under the Boltzmann distribution.
pub fn exact_gate_probability(inst: &TinyInstance, edge: usize) -> Result<f64> {
    if edge >= inst.num_edges() {
        return Err(Error::InvalidArgument(format!(
            "edge index {edge} out of range for {} edges",
            inst.num_edges()
        )));
    }
    Ok(enumerate(inst)?.marginals_z[edge])
}
