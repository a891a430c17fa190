//! Partition-and-traversal (PAT) global optimizer.
//!
//! The unimodular quadratic maximization `max ‖Tv‖²` is lifted with a unit
//! auxiliary vector `v̄ ∈ C^{MD}`: `max Re(v̄^H T v)` splits per unit into
//! `|a_n| cos(θ_n − τ_n)` with `a = v̄^H T`, so for fixed `v̄` the best discrete
//! phase of unit `n` is the alphabet phase circularly nearest to `τ_n`. The
//! map `v̄ → v` is piecewise constant; its cells are cut by the boundary
//! surfaces `τ_n = ψ` for the circular midpoints `ψ` between adjacent
//! alphabet phases. PAT enumerates all vertices of this arrangement — every
//! choice of `2MD−1` boundary surfaces — solves the real form of each vertex
//! system, recovers the `2^{2MD−1}` configurations adjacent to the vertex and
//! traverses them, keeping only the running maximizer.
//!
//! Traversal is a deterministic stream of independent systems merged by an
//! associative max with an exact lexicographic tie-break, so results are
//! identical no matter how work is scheduled.

use num_complex::Complex64 as C64;
use rayon::iter::{ParallelBridge, ParallelIterator};

use crate::epat::candidate_count_u128;
use crate::numerics::{circular_distance, real_nullspace_basis, CMat, CVec, RMat, DEFAULT_TOL};
use crate::reduction::{
    build_surrogate, finalize_report, PhaseVector, QuadraticSurrogate, SolveReport,
    TraversalStats,
};
use crate::scenario::{PhaseAlphabet, ProblemInstance};
use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// Units with `|a_n|` below this are counted as recovery-degenerate and keep
/// index 0.
const UNDEFINED_TAU_FLOOR: f64 = 1e-12;

/// Pivot threshold (relative to the largest entry) below which the fast
/// elimination path defers to the SVD for the rank decision.
const PIVOT_RTOL: f64 = 1e-8;

/// Circular midpoints between consecutive alphabet phases, per unit.
///
/// `ψ_i = φ_i + ((φ_{i+1} − φ_i) mod 2π)/2` with the successor index taken
/// modulo the alphabet size. Frozen units get an empty set.
#[derive(Clone, Debug)]
pub struct BoundarySet {
    midpoints: Vec<Vec<f64>>,
}

impl BoundarySet {
    /// Midpoint set `Ψ_n` of one unit; empty for frozen units.
    pub fn unit(&self, n: usize) -> &[f64] {
        &self.midpoints[n]
    }

    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }
}

pub fn boundary_midpoints(alphabets: &[PhaseAlphabet]) -> BoundarySet {
    let midpoints = alphabets
        .iter()
        .map(|alphabet| {
            if alphabet.is_frozen() {
                return Vec::new();
            }
            let phases = alphabet.phases();
            let b = phases.len();
            (0..b)
                .map(|i| {
                    let gap = (phases[(i + 1) % b] - phases[i]).rem_euclid(TAU);
                    (phases[i] + 0.5 * gap).rem_euclid(TAU)
                })
                .collect()
        })
        .collect();
    BoundarySet { midpoints }
}

/// Index of the alphabet phase circularly nearest to `tau`; the first index
/// wins ties, which resolves exact boundary hits toward the lower-indexed
/// side.
pub fn nearest_phase(alphabet: &PhaseAlphabet, tau: f64) -> usize {
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (k, &phi) in alphabet.phases().iter().enumerate() {
        let d = circular_distance(phi, tau);
        if d < best_dist {
            best_dist = d;
            best = k;
        }
    }
    best
}

/// One boundary system: the chosen units `I` and, per unit, which midpoint of
/// its `Ψ` set is active.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntersectionSystem {
    /// Chosen unit indices, ascending. All non-frozen.
    pub units: Vec<usize>,
    /// Midpoint index into `Ψ_unit` for each chosen unit.
    pub boundary_indices: Vec<usize>,
}

impl IntersectionSystem {
    /// Boundary values `ω_i ∈ Ψ_i`.
    pub fn omegas(&self, boundary: &BoundarySet) -> Vec<f64> {
        self.units
            .iter()
            .zip(&self.boundary_indices)
            .map(|(&u, &k)| boundary.unit(u)[k])
            .collect()
    }

    /// Stacked complex matrix with rows `t_i^H e^{−jω_i}`.
    pub fn complex_matrix(&self, surrogate: &QuadraticSurrogate, boundary: &BoundarySet) -> CMat {
        let md = surrogate.rank();
        let t = surrogate.matrix();
        CMat::from_fn(self.units.len(), md, |i, d| {
            let u = self.units[i];
            let omega = boundary.unit(u)[self.boundary_indices[i]];
            t[(d, u)].conj() * C64::from_polar(1.0, -omega)
        })
    }

    /// Real homogeneous form `[Im C | Re C]` acting on `[Re v̄; Im v̄]`.
    pub fn real_form(&self, surrogate: &QuadraticSurrogate, boundary: &BoundarySet) -> RMat {
        let c = self.complex_matrix(surrogate, boundary);
        let md = surrogate.rank();
        RMat::from_fn(c.nrows(), 2 * md, |i, j| {
            if j < md {
                c[(i, j)].im
            } else {
                c[(i, j - md)].re
            }
        })
    }
}

/// Lexicographic stream over all size-`l` subsets of the non-frozen units
/// crossed with all boundary choices. Total count `Σ_{|I|=l} Π_{n∈I} b_n`.
pub fn enumerate_systems(
    instance: &ProblemInstance,
    l: usize,
) -> Result<impl Iterator<Item = IntersectionSystem> + '_> {
    let non_frozen = instance.non_frozen_units();
    if l == 0 || l > non_frozen.len() {
        return Err(Error::invalid(format!(
            "cannot pick {l} boundary equations from {} non-frozen units",
            non_frozen.len()
        )));
    }
    let boundary = boundary_midpoints(instance.alphabets());
    let mut comb = Combinations::new(non_frozen.len(), l);
    let mut units: Vec<usize> = Vec::new();
    let mut radix: Vec<usize> = Vec::new();
    let mut fresh = true;
    Ok(std::iter::from_fn(move || loop {
        if fresh {
            let positions = comb.next()?;
            units = positions.iter().map(|&p| non_frozen[p as usize]).collect();
            radix = vec![0; l];
            fresh = false;
            return Some(IntersectionSystem {
                units: units.clone(),
                boundary_indices: radix.clone(),
            });
        }
        let sizes: Vec<usize> = units.iter().map(|&u| boundary.unit(u).len()).collect();
        if increment_radix(&mut radix, &sizes) {
            return Some(IntersectionSystem {
                units: units.clone(),
                boundary_indices: radix.clone(),
            });
        }
        fresh = true;
    }))
}

/// A solved vertex of the boundary arrangement.
#[derive(Clone, Debug)]
pub struct AuxiliaryPoint {
    /// Unit auxiliary vector, sign-fixed so `Re(C v̄) > 0` componentwise.
    pub vbar: CVec,
    /// `max_i |Im((C v̄)_i)|`.
    pub imag_residual: f64,
}

/// Outcome of one intersection solve. Rejections are ordinary outcomes.
#[derive(Clone, Debug)]
pub enum IntersectionOutcome {
    Accepted(AuxiliaryPoint),
    /// Real form had kernel dimension ≠ 1.
    RankDeficient { kernel_dim: usize },
    /// Neither `v̄` nor `−v̄` made every component of `Re(C v̄)` positive:
    /// the chosen surfaces meet only in the mod-π extension, not at an
    /// actual vertex.
    SignInfeasible,
}

/// Solve one `2MD−1`-row system: extract the one-dimensional kernel of the
/// real form and pick the sign satisfying the positivity condition.
pub fn solve_intersection(
    surrogate: &QuadraticSurrogate,
    boundary: &BoundarySet,
    system: &IntersectionSystem,
    tol: f64,
) -> IntersectionOutcome {
    let md = surrogate.rank();
    let l = system.units.len();
    let mut c_rows = vec![C64::new(0.0, 0.0); l * md];
    let t = surrogate.matrix();
    for (i, (&u, &k)) in system
        .units
        .iter()
        .zip(&system.boundary_indices)
        .enumerate()
    {
        let omega = boundary.unit(u)[k];
        let rot = C64::from_polar(1.0, -omega);
        for d in 0..md {
            c_rows[i * md + d] = t[(d, u)].conj() * rot;
        }
    }
    let mut scratch = KernelScratch::new(l, 2 * md);
    match kernel_point(&c_rows, l, md, tol, &mut scratch) {
        KernelOutcome::One(vbar, residual) => {
            match sign_select(&c_rows, l, md, &vbar) {
                Some(signed) => IntersectionOutcome::Accepted(AuxiliaryPoint {
                    vbar: CVec::from_vec(signed),
                    imag_residual: residual,
                }),
                None => IntersectionOutcome::SignInfeasible,
            }
        }
        KernelOutcome::Degenerate(dim) => IntersectionOutcome::RankDeficient { kernel_dim: dim },
    }
}

/// All configurations adjacent to an accepted vertex: nearest phase for every
/// unit outside `I`, both sides of the active boundary for units in `I`.
/// Duplicate index vectors are removed (they cannot occur for valid
/// alphabets, but the contract promises a set).
pub fn recover_candidates(
    surrogate: &QuadraticSurrogate,
    alphabets: &[PhaseAlphabet],
    point: &AuxiliaryPoint,
    system: &IntersectionSystem,
) -> Vec<PhaseVector> {
    let n = alphabets.len();
    let md = surrogate.rank();
    let t = surrogate.matrix();
    let l = system.units.len();

    let mut base = vec![0u32; n];
    for unit in 0..n {
        if system.units.contains(&unit) {
            continue;
        }
        let mut a_n = C64::new(0.0, 0.0);
        for d in 0..md {
            a_n += point.vbar[d].conj() * t[(d, unit)];
        }
        base[unit] = best_phase_for(alphabets[unit].phases(), a_n) as u32;
    }

    let mut out = Vec::with_capacity(1 << l);
    let mut seen = std::collections::HashSet::new();
    for mask in 0u64..(1u64 << l) {
        let mut indices = base.clone();
        for (i, (&unit, &k)) in system
            .units
            .iter()
            .zip(&system.boundary_indices)
            .enumerate()
        {
            let b = alphabets[unit].size();
            let side = if mask >> i & 1 == 0 { k } else { (k + 1) % b };
            indices[unit] = side as u32;
        }
        if seen.insert(indices.clone()) {
            out.push(PhaseVector::new(indices));
        }
    }
    out
}

/// Options shared by the traversal-based solvers.
#[derive(Clone, Copy, Debug)]
pub struct TraversalOptions {
    /// Residual/rank tolerance, relative.
    pub tol: f64,
    /// Split the system stream across threads. The merged result is
    /// schedule-independent either way.
    pub parallel: bool,
}

impl Default for TraversalOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            parallel: true,
        }
    }
}

/// Globally optimal discrete configuration via partition and traversal.
pub fn pat_optimize(instance: &ProblemInstance) -> Result<SolveReport> {
    pat_optimize_with(instance, &TraversalOptions::default())
}

pub fn pat_optimize_with(
    instance: &ProblemInstance,
    options: &TraversalOptions,
) -> Result<SolveReport> {
    let start = std::time::Instant::now();
    let surrogate = build_surrogate(instance);
    let l = 2 * instance.rank() - 1;
    let non_frozen = instance.non_frozen_units();

    if non_frozen.len() < l {
        // Too few boundary families for the arrangement argument; the
        // feasible set is tiny, enumerate it outright.
        let (indices, _objective, evaluated) =
            crate::baselines::exhaustive_scan(&surrogate, instance.alphabets(), options.parallel);
        let stats = TraversalStats {
            evaluated_candidates: evaluated as u64,
            ..TraversalStats::default()
        };
        return finalize_report(
            instance,
            &surrogate,
            "pat(exhaustive-fallback)",
            PhaseVector::new(indices),
            evaluated,
            stats,
            start.elapsed().as_secs_f64() * 1e3,
        );
    }

    let engine = Engine::new(instance, &surrogate, l, EngineMode::Pat, options.tol);
    let (best, stats) = engine.run(options.parallel);
    let best = best.ok_or_else(|| {
        Error::Infeasible(
            "traversal produced no candidates; the effective channel is degenerate".into(),
        )
    })?;
    let count = candidate_count_u128(instance.alphabets(), l);
    finalize_report(
        instance,
        &surrogate,
        "pat",
        PhaseVector::new(best.indices),
        count,
        stats,
        start.elapsed().as_secs_f64() * 1e3,
    )
}

// ---------------------------------------------------------------------------
// Traversal engine, shared by PAT and E-PAT.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EngineMode {
    /// One-dimensional kernels only, positivity-filtered.
    Pat,
    /// Full kernel basis, recovery from both signs of every basis vector.
    Epat,
}

pub(crate) struct Engine<'a> {
    t: &'a CMat,
    md: usize,
    n: usize,
    l: usize,
    mode: EngineMode,
    tol: f64,
    non_frozen: Vec<usize>,
    /// e^{jφ} per unit per alphabet index.
    phasors: Vec<Vec<C64>>,
    /// e^{−jψ} per unit per midpoint index.
    omega_rot: Vec<Vec<C64>>,
    /// Midpoint count per unit (0 for frozen).
    boundary_sizes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct BestCandidate {
    pub objective: f64,
    pub indices: Vec<u32>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        instance: &'a ProblemInstance,
        surrogate: &'a QuadraticSurrogate,
        l: usize,
        mode: EngineMode,
        tol: f64,
    ) -> Self {
        let boundary = boundary_midpoints(instance.alphabets());
        let phasors = instance
            .alphabets()
            .iter()
            .map(|a| a.phases().iter().map(|&p| C64::from_polar(1.0, p)).collect())
            .collect();
        let omega_rot: Vec<Vec<C64>> = (0..instance.n_units())
            .map(|u| {
                boundary
                    .unit(u)
                    .iter()
                    .map(|&w| C64::from_polar(1.0, -w))
                    .collect()
            })
            .collect();
        let boundary_sizes = (0..instance.n_units())
            .map(|u| boundary.unit(u).len())
            .collect();
        Engine {
            t: surrogate.matrix(),
            md: surrogate.rank(),
            n: instance.n_units(),
            l,
            mode,
            tol,
            non_frozen: instance.non_frozen_units(),
            phasors,
            omega_rot,
            boundary_sizes,
        }
    }

    pub(crate) fn run(&self, parallel: bool) -> (Option<BestCandidate>, TraversalStats) {
        const SUBSET_BATCH: usize = 64;
        let l = self.l;
        let mut comb = Combinations::new(self.non_frozen.len(), l);
        let batches = std::iter::from_fn(move || {
            let mut batch: Vec<u32> = Vec::with_capacity(SUBSET_BATCH * l);
            for _ in 0..SUBSET_BATCH {
                match comb.next() {
                    Some(positions) => batch.extend_from_slice(positions),
                    None => break,
                }
            }
            if batch.is_empty() {
                None
            } else {
                Some(batch)
            }
        });

        let merge = |a: (Option<BestCandidate>, TraversalStats),
                     b: (Option<BestCandidate>, TraversalStats)| {
            let stats = add_stats(a.1, b.1);
            let best = match (a.0, b.0) {
                (None, b) => b,
                (a, None) => a,
                (Some(x), Some(y)) => Some(better(x, y)),
            };
            (best, stats)
        };

        if parallel {
            batches
                .par_bridge()
                .map_init(
                    || Scratch::new(self.n, self.md, l),
                    |scratch, batch| {
                        for positions in batch.chunks_exact(l) {
                            self.process_subset(positions, scratch);
                        }
                        (scratch.take_best(), scratch.take_stats())
                    },
                )
                .reduce(|| (None, TraversalStats::default()), merge)
        } else {
            let mut scratch = Scratch::new(self.n, self.md, l);
            for batch in batches {
                for positions in batch.chunks_exact(l) {
                    self.process_subset(positions, &mut scratch);
                }
            }
            (scratch.take_best(), scratch.take_stats())
        }
    }

    /// Every boundary-value combination of one unit subset.
    fn process_subset(&self, positions: &[u32], scratch: &mut Scratch) {
        let l = self.l;
        let md = self.md;
        for (i, &p) in positions.iter().enumerate() {
            scratch.units[i] = self.non_frozen[p as usize];
        }
        for i in 0..l {
            scratch.radix[i] = 0;
            scratch.radix_sizes[i] = self.boundary_sizes[scratch.units[i]];
        }

        loop {
            scratch.stats.systems += 1;

            // C rows: conj(t_u) rotated by e^{−jω}.
            for i in 0..l {
                let u = scratch.units[i];
                let rot = self.omega_rot[u][scratch.radix[i]];
                let col = &self.t.as_slice()[u * md..(u + 1) * md];
                for d in 0..md {
                    scratch.c_rows[i * md + d] = col[d].conj() * rot;
                }
            }

            match self.mode {
                EngineMode::Pat => {
                    match kernel_point(&scratch.c_rows, l, md, self.tol, &mut scratch.kernel) {
                        KernelOutcome::One(vbar, _residual) => {
                            match sign_select(&scratch.c_rows, l, md, &vbar) {
                                Some(signed) => {
                                    scratch.stats.accepted_points += 1;
                                    self.recover_and_fold(&signed, scratch);
                                }
                                None => scratch.stats.rejected_sign += 1,
                            }
                        }
                        KernelOutcome::Degenerate(_) => scratch.stats.rejected_rank += 1,
                    }
                }
                EngineMode::Epat => {
                    // `d = 2MD−1` degenerates to single-point systems and can
                    // use the fast path; smaller d always goes through the SVD
                    // to get the orthonormal basis of the whole kernel.
                    let basis: Vec<Vec<C64>> = if l == 2 * md - 1 {
                        match kernel_point(&scratch.c_rows, l, md, self.tol, &mut scratch.kernel)
                        {
                            KernelOutcome::One(vbar, _) => vec![vbar],
                            KernelOutcome::Degenerate(_) => {
                                svd_kernel_basis(&scratch.c_rows, l, md, self.tol)
                            }
                        }
                    } else {
                        svd_kernel_basis(&scratch.c_rows, l, md, self.tol)
                    };
                    if basis.len() != 2 * md - l {
                        scratch.stats.rejected_rank += 1;
                    }
                    for vbar in basis {
                        self.epat_points(&vbar, l, md, scratch);
                    }
                }
            }

            if !increment_radix(&mut scratch.radix, &scratch.radix_sizes) {
                break;
            }
        }
    }

    /// E-PAT point handling: test positivity for the diagnostics, recover
    /// from both signs regardless.
    fn epat_points(&self, vbar: &[C64], l: usize, md: usize, scratch: &mut Scratch) {
        let mut all_pos = true;
        let mut all_neg = true;
        for i in 0..l {
            let mut z = C64::new(0.0, 0.0);
            for d in 0..md {
                z += scratch.c_rows[i * md + d] * vbar[d];
            }
            if z.re <= 0.0 {
                all_pos = false;
            }
            if z.re >= 0.0 {
                all_neg = false;
            }
        }
        if all_pos || all_neg {
            scratch.stats.accepted_points += 1;
        } else {
            scratch.stats.rejected_sign += 1;
        }
        self.recover_and_fold(vbar, scratch);
        let negated: Vec<C64> = vbar.iter().map(|z| -z).collect();
        self.recover_and_fold(&negated, scratch);
    }

    /// Recovery rule around one auxiliary point: nearest phase off the chosen
    /// units, both adjacent phases on them, Gray-coded scan of the 2^L side
    /// combinations, fold the per-system winner into the scratch best.
    fn recover_and_fold(&self, vbar: &[C64], scratch: &mut Scratch) {
        let md = self.md;
        let l = self.l;
        let t = self.t.as_slice();
        scratch.stats.recovered_points += 1;

        // Base indices and the fixed part of Tv in one pass over the columns.
        scratch.y0.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let mut subset_ptr = 0usize;
        for unit in 0..self.n {
            if subset_ptr < l && scratch.units[subset_ptr] == unit {
                subset_ptr += 1;
                continue;
            }
            let col = &t[unit * md..(unit + 1) * md];
            let phasors = &self.phasors[unit];
            let k = if phasors.len() == 1 {
                0
            } else {
                let mut a_n = C64::new(0.0, 0.0);
                for d in 0..md {
                    a_n += vbar[d].conj() * col[d];
                }
                if a_n.norm_sqr() < UNDEFINED_TAU_FLOOR * UNDEFINED_TAU_FLOOR {
                    scratch.stats.undefined_tau += 1;
                    0
                } else {
                    // argmax_k Re(e^{jφ_k} a_n) == nearest circular phase.
                    let mut best = 0usize;
                    let mut best_val = f64::NEG_INFINITY;
                    for (kk, p) in phasors.iter().enumerate() {
                        let val = p.re * a_n.re - p.im * a_n.im;
                        if val > best_val {
                            best_val = val;
                            best = kk;
                        }
                    }
                    best
                }
            };
            scratch.base[unit] = k as u32;
            let p = self.phasors[unit][k];
            for d in 0..md {
                scratch.y0[d] += col[d] * p;
            }
        }

        // Side phasors and deltas for the chosen units.
        for i in 0..l {
            let unit = scratch.units[i];
            let b = self.phasors[unit].len();
            let k = scratch.radix[i];
            scratch.side_lo[i] = k as u32;
            scratch.side_hi[i] = ((k + 1) % b) as u32;
            let lo = self.phasors[unit][k];
            let hi = self.phasors[unit][(k + 1) % b];
            scratch.delta[i] = hi - lo;
        }

        // Start from all-lower sides.
        for d in 0..md {
            scratch.y[d] = scratch.y0[d];
        }
        for i in 0..l {
            let unit = scratch.units[i];
            let col = &t[unit * md..(unit + 1) * md];
            let p = self.phasors[unit][scratch.side_lo[i] as usize];
            for d in 0..md {
                scratch.y[d] += col[d] * p;
            }
        }
        let mut best_gray = 0u64;
        let mut best_val = norm_sq(&scratch.y[..md]);
        let combos = 1u64 << l;
        let mut gray = 0u64;
        for g in 1..combos {
            let flip = g.trailing_zeros() as usize;
            gray ^= 1 << flip;
            let unit = scratch.units[flip];
            let col = &t[unit * md..(unit + 1) * md];
            let delta = if gray >> flip & 1 == 1 {
                scratch.delta[flip]
            } else {
                -scratch.delta[flip]
            };
            for d in 0..md {
                scratch.y[d] += col[d] * delta;
            }
            let val = norm_sq(&scratch.y[..md]);
            if val > best_val {
                best_val = val;
                best_gray = gray;
            }
        }
        scratch.stats.recovered_candidates += combos;
        scratch.stats.evaluated_candidates += combos;

        // Exact re-evaluation of the in-system winner.
        for d in 0..md {
            scratch.y[d] = scratch.y0[d];
        }
        for i in 0..l {
            let unit = scratch.units[i];
            let side = if best_gray >> i & 1 == 0 {
                scratch.side_lo[i]
            } else {
                scratch.side_hi[i]
            };
            scratch.base[unit] = side;
            let col = &t[unit * md..(unit + 1) * md];
            let p = self.phasors[unit][side as usize];
            for d in 0..md {
                scratch.y[d] += col[d] * p;
            }
        }
        let exact = norm_sq(&scratch.y[..md]);
        scratch.offer(exact);
    }
}

fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn better(a: BestCandidate, b: BestCandidate) -> BestCandidate {
    if a.objective > b.objective {
        a
    } else if b.objective > a.objective {
        b
    } else if a.indices <= b.indices {
        a
    } else {
        b
    }
}

fn add_stats(a: TraversalStats, b: TraversalStats) -> TraversalStats {
    TraversalStats {
        systems: a.systems + b.systems,
        rejected_rank: a.rejected_rank + b.rejected_rank,
        rejected_sign: a.rejected_sign + b.rejected_sign,
        accepted_points: a.accepted_points + b.accepted_points,
        recovered_points: a.recovered_points + b.recovered_points,
        recovered_candidates: a.recovered_candidates + b.recovered_candidates,
        evaluated_candidates: a.evaluated_candidates + b.evaluated_candidates,
        undefined_tau: a.undefined_tau + b.undefined_tau,
    }
}

/// Per-worker working memory; one heap allocation per rayon split.
struct Scratch {
    units: Vec<usize>,
    radix: Vec<usize>,
    radix_sizes: Vec<usize>,
    c_rows: Vec<C64>,
    kernel: KernelScratch,
    base: Vec<u32>,
    y0: Vec<C64>,
    y: Vec<C64>,
    side_lo: Vec<u32>,
    side_hi: Vec<u32>,
    delta: Vec<C64>,
    best: Option<BestCandidate>,
    stats: TraversalStats,
}

impl Scratch {
    fn new(n: usize, md: usize, l: usize) -> Self {
        Scratch {
            units: vec![0; l],
            radix: vec![0; l],
            radix_sizes: vec![0; l],
            c_rows: vec![C64::new(0.0, 0.0); l * md],
            kernel: KernelScratch::new(l, 2 * md),
            base: vec![0; n],
            y0: vec![C64::new(0.0, 0.0); md],
            y: vec![C64::new(0.0, 0.0); md],
            side_lo: vec![0; l],
            side_hi: vec![0; l],
            delta: vec![C64::new(0.0, 0.0); l],
            best: None,
            stats: TraversalStats::default(),
        }
    }

    /// Fold the candidate currently materialized in `self.base`.
    fn offer(&mut self, objective: f64) {
        let replace = match &self.best {
            None => true,
            Some(b) => {
                objective > b.objective
                    || (objective == b.objective
                        && self.base.as_slice() < b.indices.as_slice())
            }
        };
        if replace {
            self.best = Some(BestCandidate {
                objective,
                indices: self.base.clone(),
            });
        }
    }

    fn take_best(&mut self) -> Option<BestCandidate> {
        self.best.take()
    }

    fn take_stats(&mut self) -> TraversalStats {
        std::mem::take(&mut self.stats)
    }
}

// ---------------------------------------------------------------------------
// Kernel extraction
// ---------------------------------------------------------------------------

pub(crate) struct KernelScratch {
    work: Vec<f64>,
    perm: Vec<usize>,
    x: Vec<f64>,
}

impl KernelScratch {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        KernelScratch {
            work: vec![0.0; rows * cols],
            perm: vec![0; cols],
            x: vec![0.0; cols],
        }
    }
}

pub(crate) enum KernelOutcome {
    /// Unit kernel vector of the real form, folded back to complex, plus the
    /// achieved imaginary residual `max_i |Im(C v̄)_i|`.
    One(Vec<C64>, f64),
    /// Kernel dimension ≠ 1 at the given tolerance.
    Degenerate(usize),
}

/// Kernel of the real form of an `l × md` complex boundary system. The fast
/// path is full-pivot elimination for the generic rank-deficiency-one case;
/// anything suspicious falls back to the SVD.
pub(crate) fn kernel_point(
    c_rows: &[C64],
    l: usize,
    md: usize,
    tol: f64,
    scratch: &mut KernelScratch,
) -> KernelOutcome {
    let cols = 2 * md;
    debug_assert_eq!(scratch.work.len(), l * cols);

    // Real form [Im C | Re C] on [Re v̄; Im v̄].
    for i in 0..l {
        for d in 0..md {
            let z = c_rows[i * md + d];
            scratch.work[i * cols + d] = z.im;
            scratch.work[i * cols + md + d] = z.re;
        }
    }

    if l == cols - 1 {
        if let Some(residual_bound) = eliminate_rank_full(&mut scratch.work, l, cols, &mut scratch.perm, &mut scratch.x)
        {
            let _ = residual_bound;
            let vbar: Vec<C64> = (0..md)
                .map(|d| C64::new(scratch.x[d], scratch.x[md + d]))
                .collect();
            // Verify against the original rows; fall back on any doubt.
            let (residual, cnorm) = imag_residual(c_rows, l, md, &vbar);
            if residual <= tol.max(1e-14) * cnorm.max(f64::MIN_POSITIVE) {
                return KernelOutcome::One(vbar, residual);
            }
        }
    }

    // Robust path: SVD-based kernel with relative singular-value threshold.
    let a = RMat::from_row_slice(l, cols, &scratch.work);
    let basis = real_nullspace_basis(&a, tol);
    if basis.len() == 1 {
        let u = &basis[0];
        let vbar: Vec<C64> = (0..md).map(|d| C64::new(u[d], u[md + d])).collect();
        let (residual, _) = imag_residual(c_rows, l, md, &vbar);
        KernelOutcome::One(vbar, residual)
    } else {
        KernelOutcome::Degenerate(basis.len())
    }
}

/// Orthonormal kernel basis of the real form, folded back to complex vectors.
pub(crate) fn svd_kernel_basis(c_rows: &[C64], l: usize, md: usize, tol: f64) -> Vec<Vec<C64>> {
    let cols = 2 * md;
    let a = RMat::from_fn(l, cols, |i, j| {
        let z = c_rows[i * md + (j % md)];
        if j < md {
            z.im
        } else {
            z.re
        }
    });
    real_nullspace_basis(&a, tol)
        .into_iter()
        .map(|u| (0..md).map(|d| C64::new(u[d], u[md + d])).collect())
        .collect()
}

fn imag_residual(c_rows: &[C64], l: usize, md: usize, vbar: &[C64]) -> (f64, f64) {
    let mut worst = 0.0f64;
    let mut cnorm_sq = 0.0f64;
    for i in 0..l {
        let mut z = C64::new(0.0, 0.0);
        for d in 0..md {
            let c = c_rows[i * md + d];
            z += c * vbar[d];
            cnorm_sq += c.norm_sqr();
        }
        worst = worst.max(z.im.abs());
    }
    (worst, cnorm_sq.sqrt())
}

/// Full-pivot Gaussian elimination on an `(cols−1) × cols` row-major matrix.
/// Returns `Some(())` with the unit kernel vector written to `x` when every
/// pivot clears the relative threshold (rank = cols−1); `None` hands the
/// decision to the SVD.
fn eliminate_rank_full(
    work: &mut [f64],
    rows: usize,
    cols: usize,
    perm: &mut [usize],
    x: &mut [f64],
) -> Option<()> {
    for (j, p) in perm.iter_mut().enumerate() {
        *p = j;
    }
    let max_abs = work.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_abs == 0.0 {
        return None;
    }
    let threshold = PIVOT_RTOL * max_abs;

    for k in 0..rows {
        let mut pivot = 0.0f64;
        let (mut pi, mut pj) = (k, k);
        for i in k..rows {
            for j in k..cols {
                let v = work[i * cols + j].abs();
                if v > pivot {
                    pivot = v;
                    pi = i;
                    pj = j;
                }
            }
        }
        if pivot <= threshold {
            return None;
        }
        if pi != k {
            for j in 0..cols {
                work.swap(k * cols + j, pi * cols + j);
            }
        }
        if pj != k {
            for i in 0..rows {
                work.swap(i * cols + k, i * cols + pj);
            }
            perm.swap(k, pj);
        }
        let pk = work[k * cols + k];
        for i in k + 1..rows {
            let f = work[i * cols + k] / pk;
            if f != 0.0 {
                work[i * cols + k] = 0.0;
                for j in k + 1..cols {
                    work[i * cols + j] -= f * work[k * cols + j];
                }
            }
        }
    }

    // Free variable is the last permuted column; back-substitute.
    x[cols - 1] = 1.0;
    for k in (0..rows).rev() {
        let mut s = 0.0;
        for j in k + 1..cols {
            s += work[k * cols + j] * x[j];
        }
        x[k] = -s / work[k * cols + k];
    }
    // Undo the column permutation and normalize.
    let mut out = vec![0.0f64; cols];
    for j in 0..cols {
        out[perm[j]] = x[j];
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (xj, oj) in x.iter_mut().zip(&out) {
        *xj = oj / norm;
    }
    Some(())
}

/// Pick the sign of `v̄` making every `Re(C v̄)_i` strictly positive.
pub(crate) fn sign_select(c_rows: &[C64], l: usize, md: usize, vbar: &[C64]) -> Option<Vec<C64>> {
    let mut all_pos = true;
    let mut all_neg = true;
    for i in 0..l {
        let mut z = C64::new(0.0, 0.0);
        for d in 0..md {
            z += c_rows[i * md + d] * vbar[d];
        }
        if z.re <= 0.0 {
            all_pos = false;
        }
        if z.re >= 0.0 {
            all_neg = false;
        }
        if !all_pos && !all_neg {
            return None;
        }
    }
    if all_pos {
        Some(vbar.to_vec())
    } else if all_neg {
        Some(vbar.iter().map(|z| -z).collect())
    } else {
        None
    }
}

/// Best alphabet index for recovery weight `a_n`: maximizes `Re(e^{jφ} a_n)`.
fn best_phase_for(phases: &[f64], a_n: C64) -> usize {
    if a_n.norm_sqr() < UNDEFINED_TAU_FLOOR * UNDEFINED_TAU_FLOOR {
        return 0;
    }
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (k, &phi) in phases.iter().enumerate() {
        let p = C64::from_polar(1.0, phi);
        let val = p.re * a_n.re - p.im * a_n.im;
        if val > best_val {
            best_val = val;
            best = k;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Subset / radix enumeration
// ---------------------------------------------------------------------------

pub(crate) struct Combinations {
    n: usize,
    l: usize,
    state: Vec<u32>,
    started: bool,
    done: bool,
}

impl Combinations {
    pub(crate) fn new(n: usize, l: usize) -> Self {
        Combinations {
            n,
            l,
            state: (0..l as u32).collect(),
            started: false,
            done: l > n || l == 0,
        }
    }

    /// Lexicographic successor; returns the current combination as positions
    /// into the underlying list.
    pub(crate) fn next(&mut self) -> Option<&[u32]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.state);
        }
        let l = self.l;
        let n = self.n as u32;
        let mut i = l;
        loop {
            if i == 0 {
                self.done = true;
                return None;
            }
            i -= 1;
            if self.state[i] != n - (l - i) as u32 {
                break;
            }
        }
        self.state[i] += 1;
        for j in i + 1..l {
            self.state[j] = self.state[j - 1] + 1;
        }
        Some(&self.state)
    }
}

fn increment_radix(radix: &mut [usize], sizes: &[usize]) -> bool {
    for i in (0..radix.len()).rev() {
        radix[i] += 1;
        if radix[i] < sizes[i] {
            return true;
        }
        radix[i] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::exhaustive_scan;
    use crate::scenario::{gen_iid_channels, random_alphabets, PhaseAlphabet};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PI: f64 = std::f64::consts::PI;

    fn instance_with(
        users: usize,
        antennas: usize,
        sizes: &[usize],
        seed: u64,
    ) -> ProblemInstance {
        let n = sizes.len();
        let factors = gen_iid_channels(users, antennas, &[n], 1.0, seed).unwrap();
        let alphabets = random_alphabets(n, sizes, seed ^ 0xABCD).unwrap();
        ProblemInstance::new(vec![n], factors, vec![1e-5; users], 1e4, alphabets).unwrap()
    }

    #[test]
    fn midpoints_uniform_two_bit() {
        let a = PhaseAlphabet::new(vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]).unwrap();
        let bs = boundary_midpoints(&[a]);
        let expect = [PI / 4.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 7.0 * PI / 4.0];
        for (m, e) in bs.unit(0).iter().zip(expect) {
            assert_relative_eq!(*m, e, max_relative = 1e-14);
        }
    }

    #[test]
    fn midpoints_squeezed_alphabet_wraps() {
        let a = crate::scenario::parametric_alphabet(1).unwrap();
        let bs = boundary_midpoints(&[a]);
        let expect = [PI / 40.0, 3.0 * PI / 40.0, PI / 8.0, 43.0 * PI / 40.0];
        for (m, e) in bs.unit(0).iter().zip(expect) {
            assert_relative_eq!(*m, e, max_relative = 1e-12);
        }
    }

    #[test]
    fn midpoints_one_bit() {
        let a = PhaseAlphabet::new(vec![0.0, PI]).unwrap();
        let bs = boundary_midpoints(&[a]);
        let expect = [PI / 2.0, 3.0 * PI / 2.0];
        for (m, e) in bs.unit(0).iter().zip(expect) {
            assert_relative_eq!(*m, e, max_relative = 1e-14);
        }
    }

    #[test]
    fn midpoints_frozen_empty() {
        let a = PhaseAlphabet::singleton(1.0).unwrap();
        let bs = boundary_midpoints(&[a]);
        assert!(bs.unit(0).is_empty());
    }

    #[test]
    fn nearest_phase_examples() {
        let a = PhaseAlphabet::new(vec![0.0, PI]).unwrap();
        assert_eq!(nearest_phase(&a, PI / 4.0), 0);

        let squeezed = crate::scenario::parametric_alphabet(1).unwrap();
        assert_eq!(nearest_phase(&squeezed, PI), 3);

        let single = PhaseAlphabet::singleton(0.3).unwrap();
        assert_eq!(nearest_phase(&single, 5.0), 0);
    }

    #[test]
    fn nearest_phase_matches_argmin_over_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let b = rng.gen_range(1..9usize);
            let alphabets = random_alphabets(1, &[b], rng.gen()).unwrap();
            let alphabet = &alphabets[0];
            let tau = rng.gen::<f64>() * TAU;
            let fast = best_phase_for(alphabet.phases(), C64::from_polar(1.0, -tau));
            let reference = nearest_phase(alphabet, tau);
            let d_fast = circular_distance(alphabet.phase(fast), tau);
            let d_ref = circular_distance(alphabet.phase(reference), tau);
            assert!(
                (d_fast - d_ref).abs() < 1e-12,
                "fast pick {fast} vs argmin {reference} for tau {tau}"
            );
        }
    }

    #[test]
    fn enumerate_counts() {
        // 4 non-frozen units, all b=2, L=1 -> 8 systems.
        let inst = instance_with(1, 1, &[2, 2, 2, 2], 3);
        assert_eq!(enumerate_systems(&inst, 1).unwrap().count(), 8);

        // b = (2,4,4), L=2 -> 2*4 + 2*4 + 4*4 = 32.
        let inst = instance_with(1, 1, &[2, 4, 4], 4);
        assert_eq!(enumerate_systems(&inst, 2).unwrap().count(), 32);

        // frozen units are excluded from enumeration
        let inst = instance_with(1, 1, &[1, 2, 1, 2], 5);
        assert_eq!(enumerate_systems(&inst, 1).unwrap().count(), 4);
    }

    #[test]
    fn enumerate_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sizes: Vec<usize> = (0..20).map(|_| *[1, 2, 4].iter().nth(rng.gen_range(0..3)).unwrap()).collect();
        let inst = instance_with(1, 2, &sizes, 6);
        let enumerated = enumerate_systems(&inst, 3).unwrap().count() as u128;
        let closed = candidate_count_u128(inst.alphabets(), 3) >> 3; // systems = count / 2^L
        assert_eq!(enumerated, closed);
    }

    #[test]
    fn scalar_intersection_explicit() {
        // MD = 1: the system row is conj(t_u) e^{-j w}; the accepted point has
        // t_u^H vbar = positive real, i.e. vbar = e^{j(w - arg(conj(t_u)))}.
        let inst = instance_with(1, 1, &[2, 2], 9);
        let surrogate = build_surrogate(&inst);
        let boundary = boundary_midpoints(inst.alphabets());
        let system = IntersectionSystem {
            units: vec![0],
            boundary_indices: vec![0],
        };
        match solve_intersection(&surrogate, &boundary, &system, DEFAULT_TOL) {
            IntersectionOutcome::Accepted(point) => {
                assert_relative_eq!(point.vbar.norm(), 1.0, max_relative = 1e-12);
                let c = system.complex_matrix(&surrogate, &boundary);
                let z = (&c * &point.vbar)[0];
                assert!(z.re > 0.0);
                assert!(z.im.abs() <= 1e-10 * c.norm());
            }
            other => panic!("expected acceptance, got {other:?}"),
        }
    }

    #[test]
    fn collinear_rows_rejected() {
        // Units 0 and 1 get complex-proportional channel columns: every
        // system picking both forces t_0^H v̄ = 0, so the boundary values are
        // incompatible and the solve must reject (degenerate kernel or sign
        // failure), never emit a spurious accepted point.
        let alpha = C64::new(0.6, 0.8);
        let t0 = [C64::new(1.0, 0.2), C64::new(-0.3, 0.7)];
        let t2 = [C64::new(0.4, -0.9), C64::new(1.1, 0.5)];
        let t = CMat::from_fn(2, 3, |d, n| match n {
            0 => t0[d],
            1 => alpha * t0[d],
            _ => t2[d],
        });
        // M=1, D=2, N=3; the stored factor is T^H.
        let factors = vec![t.adjoint()];
        let alphabets = random_alphabets(3, &[2, 2, 2], 11).unwrap();
        let inst = ProblemInstance::new(vec![3], factors, vec![1e-5], 1e4, alphabets).unwrap();
        let surrogate = build_surrogate(&inst);
        let boundary = boundary_midpoints(inst.alphabets());
        let mut rejections = 0usize;
        let mut systems = 0usize;
        for system in enumerate_systems(&inst, 3).unwrap() {
            systems += 1;
            match solve_intersection(&surrogate, &boundary, &system, DEFAULT_TOL) {
                IntersectionOutcome::RankDeficient { .. }
                | IntersectionOutcome::SignInfeasible => rejections += 1,
                IntersectionOutcome::Accepted(p) => {
                    // fp noise can pass the strict sign check with z ≈ 0 on
                    // the collinear pair; the point is then harmless junk,
                    // but it must still satisfy the solved equations.
                    let z = system.complex_matrix(&surrogate, &boundary) * &p.vbar;
                    let worst = z.iter().map(|zi| zi.im.abs()).fold(0.0f64, f64::max);
                    assert!(worst <= 1e-9);
                }
            }
        }
        assert_eq!(systems, 8);
        assert!(rejections > 0, "no degenerate system was rejected");
    }

    #[test]
    fn accepted_points_satisfy_residual_audit() {
        let inst = instance_with(1, 2, &[4, 2, 4, 2, 4], 13);
        let surrogate = build_surrogate(&inst);
        let boundary = boundary_midpoints(inst.alphabets());
        let mut accepted = 0;
        for system in enumerate_systems(&inst, 3).unwrap() {
            if let IntersectionOutcome::Accepted(p) =
                solve_intersection(&surrogate, &boundary, &system, DEFAULT_TOL)
            {
                accepted += 1;
                let c = system.complex_matrix(&surrogate, &boundary);
                let z = &c * &p.vbar;
                let worst = z.iter().map(|zi| zi.im.abs()).fold(0.0f64, f64::max);
                assert!(worst <= 1e-10 * c.norm().max(1e-30), "residual {worst}");
                assert!(z.iter().all(|zi| zi.re > 0.0));
                assert_relative_eq!(p.vbar.norm(), 1.0, max_relative = 1e-12);
            }
        }
        assert!(accepted > 0);
    }

    #[test]
    fn recovery_candidate_counts() {
        let inst = instance_with(1, 1, &[2, 4, 2, 1], 15);
        let surrogate = build_surrogate(&inst);
        let boundary = boundary_midpoints(inst.alphabets());
        let system = enumerate_systems(&inst, 1)
            .unwrap()
            .next()
            .expect("at least one system");
        if let IntersectionOutcome::Accepted(point) =
            solve_intersection(&surrogate, &boundary, &system, DEFAULT_TOL)
        {
            let candidates =
                recover_candidates(&surrogate, inst.alphabets(), &point, &system);
            assert_eq!(candidates.len(), 2);
            // the two candidates differ only at the boundary unit
            let diff: Vec<usize> = (0..4)
                .filter(|&n| candidates[0].indices[n] != candidates[1].indices[n])
                .collect();
            assert_eq!(diff, vec![system.units[0]]);
            // frozen unit keeps index 0
            assert!(candidates.iter().all(|c| c.indices[3] == 0));
        } else {
            panic!("single-equation system must be accepted for a generic instance");
        }
    }

    #[test]
    fn hand_checked_two_unit_optimum() {
        // D=1, M=1, N=2, alphabets {0, π}²; factor column gives
        // T = [1, e^{jπ/4}]: optimum 2 + √2 at (0,0) (global-flip twin (1,1)).
        let factors = vec![CMat::from_row_slice(
            2,
            1,
            &[C64::new(1.0, 0.0), C64::from_polar(1.0, -PI / 4.0)],
        )];
        let alphabets = vec![
            PhaseAlphabet::new(vec![0.0, PI]).unwrap(),
            PhaseAlphabet::new(vec![0.0, PI]).unwrap(),
        ];
        let inst = ProblemInstance::new(vec![2], factors, vec![1e-5], 1e4, alphabets).unwrap();
        let report = pat_optimize(&inst).unwrap();
        assert_relative_eq!(report.objective, 2.0 + 2f64.sqrt(), max_relative = 1e-12);
        assert!(
            report.best.indices == vec![0, 0] || report.best.indices == vec![1, 1],
            "winner {:?}",
            report.best.indices
        );
        assert_eq!(report.stats.systems, 4);
    }

    #[test]
    fn all_singleton_returns_the_only_v() {
        let inst = instance_with(1, 2, &[1, 1, 1, 1], 21);
        let report = pat_optimize(&inst).unwrap();
        assert_eq!(report.best.indices, vec![0, 0, 0, 0]);
        assert_eq!(report.method, "pat(exhaustive-fallback)");
    }

    #[test]
    fn oracle_equivalence_quick() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..25 {
            let users = if trial % 2 == 0 { 1 } else { 2 };
            let antennas = if users == 2 { 1 } else { rng.gen_range(1..3usize) };
            let n = rng.gen_range(4..9usize);
            let sizes: Vec<usize> = (0..n).map(|_| if rng.gen() { 2 } else { 4 }).collect();
            let inst = instance_with(users, antennas, &sizes, 3000 + trial);
            let report = pat_optimize(&inst).unwrap();
            let surrogate = build_surrogate(&inst);
            let (_, oracle_obj, _) = exhaustive_scan(&surrogate, inst.alphabets(), false);
            assert_relative_eq!(report.objective, oracle_obj, max_relative = 1e-9);
        }
    }

    #[test]
    fn traversal_parallel_and_sequential_agree_exactly() {
        let inst = instance_with(2, 1, &[4, 2, 4, 2, 4, 2, 4], 77);
        let seq = pat_optimize_with(
            &inst,
            &TraversalOptions {
                parallel: false,
                ..TraversalOptions::default()
            },
        )
        .unwrap();
        let par = pat_optimize_with(&inst, &TraversalOptions::default()).unwrap();
        assert_eq!(seq.best.indices, par.best.indices);
        assert_eq!(seq.objective.to_bits(), par.objective.to_bits());
        assert_eq!(seq.stats.systems, par.stats.systems);
        assert_eq!(seq.stats.rejected_sign, par.stats.rejected_sign);
    }

    #[test]
    fn combinations_enumerate_lexicographically() {
        let mut c = Combinations::new(4, 2);
        let mut all = Vec::new();
        while let Some(s) = c.next() {
            all.push(s.to_vec());
        }
        assert_eq!(
            all,
            vec![
                vec![0, 1],
                vec![0, 2],
                vec![0, 3],
                vec![1, 2],
                vec![1, 3],
                vec![2, 3]
            ]
        );
    }
}
