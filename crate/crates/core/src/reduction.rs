//! The analytic reduction from power minimization to discrete quadratic
//! maximization, and everything needed to go back: surrogate factor
//! construction, objective evaluation, the true largest eigenvalue, minimum
//! transmit power, precoder recovery and an SNR audit.
//!
//! For a fixed phase configuration the optimal precoder direction is the
//! dominant eigenvector of the weighted channel outer-product matrix and the
//! optimal power is `P = γ·M·Πσ² / μ_max`. Candidate ranking during
//! optimization uses the stacked-factor surrogate `‖Tv‖²` (exact for M = 1, a
//! trace lower bound otherwise); reported powers always use the true `μ_max`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::numerics::{hermitian_max_eig, CMat, CVec, DEFAULT_TOL};
use crate::scenario::{mw_to_dbm, PhaseAlphabet, ProblemInstance};
use crate::{Error, Result};

/// Effective channels below this eigenvalue are treated as unable to meet any
/// SNR floor.
const MU_FLOOR: f64 = 1e-300;

/// Stacked surrogate factor `T` (MD × N) with `T^H T = Σ_m c_m R_m^H R_m`.
///
/// Built by vertically stacking `√c_m · R_m^H`: algebraically exact, O(MDN)
/// memory, no N×N factorization.
#[derive(Clone, Debug)]
pub struct QuadraticSurrogate {
    t: CMat,
    weights: Vec<f64>,
}

impl QuadraticSurrogate {
    /// The factor matrix `T`.
    pub fn matrix(&self) -> &CMat {
        &self.t
    }

    /// Surrogate weights `c_m = Π_{i≠m} σ_i²`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `‖Tv‖²` for a unit-modulus configuration vector.
    pub fn objective(&self, v: &CVec) -> f64 {
        (&self.t * v).norm_squared()
    }

    /// Rank of the factor, `M·D`.
    pub fn rank(&self) -> usize {
        self.t.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.t.ncols()
    }
}

/// Build the surrogate factor for an instance. With a single user the empty
/// weight product is 1 and `‖Tv‖²` is the exact objective.
pub fn build_surrogate(instance: &ProblemInstance) -> QuadraticSurrogate {
    let weights = instance.noise_weights();
    let md = instance.rank();
    let n = instance.n_units();
    let d = instance.antennas();
    let mut t = CMat::zeros(md, n);
    for (m, factor) in instance.factors().iter().enumerate() {
        let scale = C64::new(weights[m].sqrt(), 0.0);
        let block = factor.adjoint() * scale;
        t.rows_mut(m * d, d).copy_from(&block);
    }
    QuadraticSurrogate { t, weights }
}

/// `‖Tv‖²`.
pub fn surrogate_objective(surrogate: &QuadraticSurrogate, v: &CVec) -> f64 {
    surrogate.objective(v)
}

/// A discrete configuration as per-unit alphabet indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhaseVector {
    pub indices: Vec<u32>,
}

impl PhaseVector {
    pub fn new(indices: Vec<u32>) -> Self {
        Self { indices }
    }

    pub fn validate(&self, alphabets: &[PhaseAlphabet]) -> Result<()> {
        if self.indices.len() != alphabets.len() {
            return Err(Error::invalid(format!(
                "phase vector has {} indices for {} units",
                self.indices.len(),
                alphabets.len()
            )));
        }
        for (n, (&idx, alphabet)) in self.indices.iter().zip(alphabets).enumerate() {
            if idx as usize >= alphabet.size() {
                return Err(Error::invalid(format!(
                    "unit {n}: index {idx} out of range for alphabet of size {}",
                    alphabet.size()
                )));
            }
        }
        Ok(())
    }

    pub fn phases(&self, alphabets: &[PhaseAlphabet]) -> Vec<f64> {
        self.indices
            .iter()
            .zip(alphabets)
            .map(|(&idx, alphabet)| alphabet.phase(idx as usize))
            .collect()
    }

    /// The unimodular vector `v` with `v_n = e^{jθ_n}`.
    pub fn unit_vector(&self, alphabets: &[PhaseAlphabet]) -> CVec {
        CVec::from_iterator(
            self.indices.len(),
            self.indices
                .iter()
                .zip(alphabets)
                .map(|(&idx, alphabet)| C64::from_polar(1.0, alphabet.phase(idx as usize))),
        )
    }
}

/// Weighted outer-product matrix `Σ_m c_m (R_m^H v)(R_m^H v)^H` (D × D).
fn weighted_outer(instance: &ProblemInstance, v: &CVec) -> CMat {
    let d = instance.antennas();
    let weights = instance.noise_weights();
    let mut acc = CMat::zeros(d, d);
    for (m, factor) in instance.factors().iter().enumerate() {
        let y = factor.adjoint() * v;
        acc += &y * y.adjoint() * C64::new(weights[m], 0.0);
    }
    acc
}

/// Largest eigenvalue of the weighted channel outer-product matrix for a
/// fixed configuration. For a single user this is exactly `‖Tv‖²` (one
/// nonzero eigenvalue), evaluated without an eigensolve.
pub fn true_mu_max(instance: &ProblemInstance, v: &CVec) -> Result<f64> {
    if instance.users() == 1 {
        let y = instance.factor(0).adjoint() * v;
        return Ok(y.norm_squared());
    }
    let outer = weighted_outer(instance, v);
    let (mu, _) = hermitian_max_eig(&outer, DEFAULT_TOL)?;
    Ok(mu)
}

/// Transmit power in both linear and log units.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Power {
    pub mw: f64,
    pub dbm: f64,
}

/// `P = γ·M·Πσ² / μ_max` from a precomputed eigenvalue.
pub fn min_power_from_mu(instance: &ProblemInstance, mu_max: f64) -> Result<Power> {
    if !(mu_max > MU_FLOOR) {
        return Err(Error::Infeasible(format!(
            "effective channel is degenerate (mu_max = {mu_max:.3e}); no finite power meets the SNR floor"
        )));
    }
    let mw =
        instance.gamma() * instance.users() as f64 * instance.noise_product() / mu_max;
    Ok(Power {
        mw,
        dbm: mw_to_dbm(mw),
    })
}

/// Minimum transmit power meeting the average-SNR floor for configuration `v`.
pub fn min_power(instance: &ProblemInstance, v: &CVec) -> Result<Power> {
    let mu = true_mu_max(instance, v)?;
    min_power_from_mu(instance, mu)
}

/// Optimal precoder for a fixed configuration: direction is the dominant
/// eigenvector of the weighted outer-product matrix, magnitude the smallest
/// power making the average-SNR constraint tight, so `‖w‖² = min_power(v)`.
pub fn recover_precoder(instance: &ProblemInstance, v: &CVec) -> Result<CVec> {
    let outer = weighted_outer(instance, v);
    let (mu, q) = hermitian_max_eig(&outer, DEFAULT_TOL)?;
    let power = min_power_from_mu(instance, mu)?;
    Ok(q * C64::new(power.mw.sqrt(), 0.0))
}

/// Per-user SNRs `|v^H R_m w|² / σ_m²` and their average.
#[derive(Clone, Debug, Serialize)]
pub struct SnrAudit {
    pub per_user: Vec<f64>,
    pub average: f64,
}

pub fn achieved_snrs(instance: &ProblemInstance, v: &CVec, w: &CVec) -> SnrAudit {
    let per_user: Vec<f64> = instance
        .factors()
        .iter()
        .zip(instance.noise_mw())
        .map(|(factor, &sigma)| {
            let y = factor.adjoint() * v;
            y.dotc(w).norm_sqr() / sigma
        })
        .collect();
    let average = per_user.iter().sum::<f64>() / per_user.len() as f64;
    SnrAudit { per_user, average }
}

/// Counters describing one traversal run. Rejections are ordinary outcomes.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct TraversalStats {
    /// Boundary systems enumerated.
    pub systems: u64,
    /// Systems whose real form had an unexpected kernel dimension.
    pub rejected_rank: u64,
    /// PAT systems where neither sign satisfied the positivity condition.
    pub rejected_sign: u64,
    /// Auxiliary points that passed the positivity condition.
    pub accepted_points: u64,
    /// Auxiliary points recovery ran on.
    pub recovered_points: u64,
    /// Index vectors produced by recovery (pre-deduplication).
    pub recovered_candidates: u64,
    /// Objective evaluations performed.
    pub evaluated_candidates: u64,
    /// Units hit with `|a_n|` below 1e-12 during recovery (τ undefined).
    pub undefined_tau: u64,
}

/// Full solve outcome: the winning configuration, both objective readings,
/// power, precoder, SNR audit, the closed-form search-space size and
/// traversal counters.
#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub method: String,
    pub best: PhaseVector,
    pub phases: Vec<f64>,
    /// Surrogate objective `‖Tv‖²` of the winner.
    pub objective: f64,
    /// Largest eigenvalue of the weighted outer-product matrix.
    pub mu_max: f64,
    pub power_mw: f64,
    pub power_dbm: f64,
    /// Precoder as (re, im) pairs.
    pub precoder: Vec<(f64, f64)>,
    pub snr_average: f64,
    pub snr_per_user: Vec<f64>,
    /// Closed-form candidate-set size `Σ_I 2^L Π_{n∈I} b_n` for the solver's
    /// system size (exhaustive domain size for oracle methods).
    pub candidate_count: u128,
    pub stats: TraversalStats,
    pub wall_ms: f64,
}

/// Assemble the final report for a winning index vector.
pub(crate) fn finalize_report(
    instance: &ProblemInstance,
    surrogate: &QuadraticSurrogate,
    method: &str,
    best: PhaseVector,
    candidate_count: u128,
    stats: TraversalStats,
    wall_ms: f64,
) -> Result<SolveReport> {
    let v = best.unit_vector(instance.alphabets());
    let objective = surrogate.objective(&v);
    let mu_max = true_mu_max(instance, &v)?;
    let power = min_power_from_mu(instance, mu_max)?;
    let w = recover_precoder(instance, &v)?;
    let audit = achieved_snrs(instance, &v, &w);
    Ok(SolveReport {
        method: method.to_string(),
        phases: best.phases(instance.alphabets()),
        best,
        objective,
        mu_max,
        power_mw: power.mw,
        power_dbm: power.dbm,
        precoder: w.iter().map(|z| (z.re, z.im)).collect(),
        snr_average: audit.average,
        snr_per_user: audit.per_user,
        candidate_count,
        stats,
        wall_ms,
    })
}
