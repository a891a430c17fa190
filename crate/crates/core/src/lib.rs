//! Discrete phase configuration for RIS-assisted MISO downlinks.
//!
//! A reconfigurable intelligent surface (RIS) steers a reflected wavefront by
//! selecting, per unit, one phase out of a finite per-unit alphabet. Real
//! hardware rarely offers uniformly spaced alphabets: spacing varies within a
//! unit and bit resolution varies across units. This crate minimizes the
//! access-point transmit power subject to an average-SNR floor over such
//! non-uniform discrete alphabets.
//!
//! The solver stack:
//!
//! * [`scenario`] builds phase alphabets and channel factors (i.i.d. Gaussian
//!   or far-field geometric) into a [`ProblemInstance`].
//! * [`reduction`] eliminates the precoder analytically, leaving a discrete
//!   unimodular quadratic maximization with objective `‖Tv‖²`.
//! * [`pat`] is the partition-and-traversal solver: it enumerates the vertices
//!   of the boundary-surface arrangement in the auxiliary-variable sphere and
//!   recovers every candidate configuration adjacent to each vertex. Together
//!   with the exhaustive oracle it is the correctness anchor of the crate.
//! * [`epat`] trades the guarantee for speed: `d`-equation systems instead of
//!   `2MD−1`, linear system count at `d = 1`.
//! * [`baselines`] holds the exhaustive oracle, an eigenvector
//!   closest-point-projection baseline, and a random-sampling floor.
//! * [`bench`] drives seeded experiment sweeps and emits CSV/JSON.

pub mod baselines;
pub mod bench;
pub mod epat;
pub mod numerics;
pub mod pat;
pub mod reduction;
pub mod scenario;

pub use baselines::{
    cpp_baseline, exhaustive_search, exhaustive_search_opts, random_baseline, BaselineResult,
};
pub use epat::{
    candidate_count, candidate_count_sizes, count_ratio_db, epat_optimize, exhaustive_count,
    pc_lower_bound, EpatConfig,
};
pub use numerics::{C64, CMat, CVec, RMat, RVec};
pub use pat::pat_optimize;
pub use reduction::{
    achieved_snrs, build_surrogate, min_power, recover_precoder, surrogate_objective, true_mu_max,
    PhaseVector, Power, QuadraticSurrogate, SolveReport,
};
pub use scenario::{
    gen_farfield_channels, gen_iid_channels, parametric_alphabet, random_alphabets, PhaseAlphabet,
    ProblemInstance, RisGeometry, ScenarioConfig,
};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by construction, solving and the benchmark harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("eigensolver failed to converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("search domain of size {size} exceeds the configured cap {cap}")]
    DomainTooLarge { size: String, cap: u128 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
