//! Efficient PAT: `d`-equation boundary systems instead of `2MD−1`.
//!
//! Each system under-determines the auxiliary vector, so its real form has a
//! `(2MD−d)`-dimensional kernel; the orthonormal kernel basis vectors (and
//! their negations) serve as auxiliary points on the `(2MD−1−d)`-dimensional
//! boundary stratum. Recovery runs from every point whether or not it passes
//! the positivity condition — positivity only certifies vertex-cone
//! membership, and extra candidates can only help. The system count drops
//! from `O(N^{2MD−1})` to `O(N^d)`; at `d = 1` it is linear in `N`.
//!
//! The price is a success probability rather than a guarantee; [`pc_lower_bound`]
//! gives the simplex-face bound `p_c ≥ 1 − p_e^B` with `B = C(2MD, 2MD−d)`.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::pat::{Engine, EngineMode, TraversalOptions};
use crate::reduction::{build_surrogate, finalize_report, PhaseVector, SolveReport};
use crate::scenario::{PhaseAlphabet, ProblemInstance};
use crate::{Error, Result};

/// E-PAT parameters.
#[derive(Clone, Copy, Debug)]
pub struct EpatConfig {
    /// Equations per boundary system, `1 ≤ d ≤ 2MD−1`.
    pub d: usize,
    /// Auxiliary points taken per system, as a multiple of the kernel basis.
    /// Reserved for future point-generation strategies; only 1 is
    /// implemented.
    pub points_multiplier: usize,
    pub options: TraversalOptions,
}

impl EpatConfig {
    /// `d = MD`: the simplex-face bound `C(2MD, 2MD−d)` peaks there, which
    /// makes it the best error/complexity trade.
    pub fn for_instance(instance: &ProblemInstance) -> Self {
        Self::with_d(instance.rank())
    }

    pub fn with_d(d: usize) -> Self {
        EpatConfig {
            d,
            points_multiplier: 1,
            options: TraversalOptions::default(),
        }
    }
}

/// Near-optimal discrete configuration from size-`d` boundary systems.
///
/// The result objective never exceeds [`crate::pat_optimize`]'s; with
/// `d = 2MD−1` the system set coincides with PAT's and the objectives match.
pub fn epat_optimize(instance: &ProblemInstance, config: &EpatConfig) -> Result<SolveReport> {
    let start = std::time::Instant::now();
    let rank = instance.rank();
    if config.d == 0 || config.d > 2 * rank - 1 {
        return Err(Error::invalid(format!(
            "d must satisfy 1 <= d <= 2MD-1 = {}, got {}",
            2 * rank - 1,
            config.d
        )));
    }
    if config.points_multiplier != 1 {
        return Err(Error::invalid(
            "points_multiplier > 1 is reserved for future point-generation strategies",
        ));
    }
    let surrogate = build_surrogate(instance);
    let non_frozen = instance.non_frozen_units();

    if non_frozen.len() < config.d {
        let (indices, _objective, evaluated) = crate::baselines::exhaustive_scan(
            &surrogate,
            instance.alphabets(),
            config.options.parallel,
        );
        let stats = crate::reduction::TraversalStats {
            evaluated_candidates: evaluated as u64,
            ..Default::default()
        };
        return finalize_report(
            instance,
            &surrogate,
            "epat(exhaustive-fallback)",
            PhaseVector::new(indices),
            evaluated,
            stats,
            start.elapsed().as_secs_f64() * 1e3,
        );
    }

    let engine = Engine::new(
        instance,
        &surrogate,
        config.d,
        EngineMode::Epat,
        config.options.tol,
    );
    let (best, stats) = engine.run(config.options.parallel);
    let best = best.ok_or_else(|| {
        Error::Infeasible(
            "traversal produced no candidates; the effective channel is degenerate".into(),
        )
    })?;
    let count = candidate_count_u128(instance.alphabets(), config.d);
    finalize_report(
        instance,
        &surrogate,
        &format!("epat(d={})", config.d),
        PhaseVector::new(best.indices),
        count,
        stats,
        start.elapsed().as_secs_f64() * 1e3,
    )
}

/// Lower bound on E-PAT's optimality probability.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ProbabilityBound {
    /// Per-system failure probability.
    pub p_e: f64,
    /// Boundary strata connected to the optimal subregion, at least
    /// `C(2MD, 2MD−d)` by the simplex-face count.
    pub b: u128,
    /// `1 − p_e^B`.
    pub p_c_low: f64,
}

/// `p_c ≥ 1 − p_e^B` with `B = C(2MD, 2MD−d)`.
pub fn pc_lower_bound(p_e: f64, md: usize, d: usize) -> Result<ProbabilityBound> {
    if !(0.0..=1.0).contains(&p_e) {
        return Err(Error::invalid(format!("p_e must lie in [0,1], got {p_e}")));
    }
    if md == 0 || d == 0 || d > 2 * md - 1 {
        return Err(Error::invalid(format!(
            "need 1 <= d <= 2MD-1, got d={d}, MD={md}"
        )));
    }
    let b = binomial(2 * md as u64, (2 * md - d) as u64);
    let b_u128 = b.to_u128().ok_or_else(|| {
        Error::invalid("binomial coefficient exceeds u128; MD is unreasonably large")
    })?;
    let p_c_low = if p_e == 0.0 {
        1.0
    } else {
        1.0 - p_e.powf(b_u128 as f64)
    };
    Ok(ProbabilityBound {
        p_e,
        b: b_u128,
        p_c_low,
    })
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for i in 0..k {
        num *= n - i;
        den *= i + 1;
    }
    num / den
}

/// Closed-form candidate-set size `Σ_{|I|=L} 2^L Π_{n∈I} b_n` over the
/// non-frozen units, as a big integer (the value overflows 64 bits well
/// before `N = 100`).
///
/// Evaluated through the elementary symmetric polynomial `e_L` of the
/// alphabet sizes, not by enumerating subsets.
pub fn candidate_count(alphabets: &[PhaseAlphabet], l: usize) -> BigUint {
    let sizes: Vec<usize> = alphabets.iter().map(|a| a.size()).collect();
    candidate_count_sizes(&sizes, l)
}

/// [`candidate_count`] from an alphabet-size profile alone; sizes of 1 mark
/// frozen units and drop out of the subset pool.
pub fn candidate_count_sizes(sizes: &[usize], l: usize) -> BigUint {
    let pool: Vec<u64> = sizes
        .iter()
        .filter(|&&b| b > 1)
        .map(|&b| b as u64)
        .collect();
    elementary_symmetric(&pool, l) << l
}

/// Exhaustive search-domain size `Π_n b_n` over all units.
pub fn exhaustive_count(alphabets: &[PhaseAlphabet]) -> BigUint {
    alphabets
        .iter()
        .map(|a| BigUint::from(a.size()))
        .product()
}

/// `candidate_count` clamped into `u128` for report fields.
pub(crate) fn candidate_count_u128(alphabets: &[PhaseAlphabet], l: usize) -> u128 {
    candidate_count(alphabets, l)
        .to_u128()
        .unwrap_or(u128::MAX)
}

fn elementary_symmetric(values: &[u64], l: usize) -> BigUint {
    if l > values.len() {
        return BigUint::zero();
    }
    let mut e: Vec<BigUint> = vec![BigUint::zero(); l + 1];
    e[0] = BigUint::one();
    for &v in values {
        for k in (1..=l).rev() {
            let add = &e[k - 1] * v;
            e[k] += add;
        }
    }
    e.pop().expect("l+1 coefficients")
}

/// `10·log10(a/b)` for big-integer counts, usable far beyond f64 range.
pub fn count_ratio_db(a: &BigUint, b: &BigUint) -> f64 {
    10.0 * (log10_biguint(a) - log10_biguint(b))
}

fn log10_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 53 {
        return (x.to_u64().expect("fits") as f64).log10();
    }
    let shift = bits - 53;
    let top = (x >> shift).to_u64().expect("53 bits fit") as f64;
    top.log10() + shift as f64 * std::f64::consts::LOG10_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pat::pat_optimize;
    use crate::scenario::{gen_iid_channels, random_alphabets};
    use crate::ProblemInstance;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance_with(
        users: usize,
        antennas: usize,
        sizes: &[usize],
        seed: u64,
    ) -> ProblemInstance {
        let n = sizes.len();
        let factors = gen_iid_channels(users, antennas, &[n], 1.0, seed).unwrap();
        let alphabets = random_alphabets(n, sizes, seed ^ 0x5A5A).unwrap();
        ProblemInstance::new(vec![n], factors, vec![1e-5; users], 1e4, alphabets).unwrap()
    }

    #[test]
    fn pc_bound_examples() {
        let b = pc_lower_bound(0.5, 2, 2).unwrap();
        assert_eq!(b.b, 6);
        assert_relative_eq!(b.p_c_low, 0.984375, max_relative = 1e-12);
        assert_relative_eq!(pc_lower_bound(0.0, 2, 1).unwrap().p_c_low, 1.0);
        assert_relative_eq!(pc_lower_bound(1.0, 2, 1).unwrap().p_c_low, 0.0);
        assert!(pc_lower_bound(1.5, 2, 1).is_err());
        assert!(pc_lower_bound(0.5, 2, 4).is_err());
    }

    #[test]
    fn counts_small_cases() {
        let alphabets = random_alphabets(4, &[2, 2, 2, 2], 1).unwrap();
        assert_eq!(candidate_count(&alphabets, 1), BigUint::from(16u32));
        assert_eq!(exhaustive_count(&alphabets), BigUint::from(16u32));
        // frozen units drop out of the subset pool but not the exhaustive
        // domain
        let alphabets = random_alphabets(3, &[1, 2, 4], 2).unwrap();
        assert_eq!(candidate_count(&alphabets, 1), BigUint::from(2u32 * (2 + 4)));
        assert_eq!(exhaustive_count(&alphabets), BigUint::from(8u32));
    }

    #[test]
    fn count_matches_subset_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..20 {
            let n = rng.gen_range(5..30usize);
            let sizes: Vec<usize> = (0..n)
                .map(|_| [1usize, 2, 4, 8][rng.gen_range(0..4)])
                .collect();
            let alphabets = random_alphabets(n, &sizes, rng.gen()).unwrap();
            let l = rng.gen_range(1..4usize);
            let closed = candidate_count(&alphabets, l);

            // Brute force over all subsets of the non-frozen units.
            let pool: Vec<u64> = sizes.iter().filter(|&&b| b > 1).map(|&b| b as u64).collect();
            let mut total = BigUint::zero();
            let mut idx = vec![0usize; l];
            if pool.len() >= l {
                for (i, s) in idx.iter_mut().enumerate() {
                    *s = i;
                }
                loop {
                    let prod: u64 = idx.iter().map(|&i| pool[i]).product();
                    total += prod << l;
                    // next combination
                    let mut i = l;
                    loop {
                        if i == 0 {
                            idx.clear();
                            break;
                        }
                        i -= 1;
                        if idx[i] != pool.len() - (l - i) {
                            break;
                        }
                    }
                    if idx.is_empty() {
                        break;
                    }
                    idx[i] += 1;
                    for j in i + 1..l {
                        idx[j] = idx[j - 1] + 1;
                    }
                }
            }
            assert_eq!(closed, total, "n={n} l={l} sizes={sizes:?}");
        }
    }

    #[test]
    fn ratio_db_matches_f64_in_range() {
        let a = BigUint::from(1_000_000u64);
        let b = BigUint::from(10u64);
        assert_relative_eq!(count_ratio_db(&a, &b), 50.0, max_relative = 1e-12);
        // beyond f64: 2^2000 vs 2^1000 is 1000 * 10log10(2) dB
        let big_a = BigUint::one() << 2000;
        let big_b = BigUint::one() << 1000;
        assert_relative_eq!(
            count_ratio_db(&big_a, &big_b),
            1000.0 * 10.0 * std::f64::consts::LOG10_2,
            max_relative = 1e-9
        );
    }

    #[test]
    fn degenerate_d_equals_pat() {
        let mut rng = ChaCha8Rng::seed_from_u64(88);
        for trial in 0..10 {
            let n = rng.gen_range(5..8usize);
            let sizes: Vec<usize> = (0..n).map(|_| if rng.gen() { 2 } else { 4 }).collect();
            let inst = instance_with(2, 1, &sizes, 500 + trial);
            let pat = pat_optimize(&inst).unwrap();
            let epat = epat_optimize(&inst, &EpatConfig::with_d(3)).unwrap();
            assert_relative_eq!(epat.objective, pat.objective, max_relative = 1e-12);
        }
    }

    #[test]
    fn dominance_and_linear_count_at_d1() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for trial in 0..10 {
            let n = 20;
            let sizes: Vec<usize> = (0..n).map(|_| if rng.gen() { 2 } else { 4 }).collect();
            let inst = instance_with(2, 1, &sizes, 700 + trial);
            let pat = pat_optimize(&inst).unwrap();
            let epat = epat_optimize(&inst, &EpatConfig::with_d(1)).unwrap();
            assert!(
                epat.objective <= pat.objective * (1.0 + 1e-9),
                "epat {} > pat {}",
                epat.objective,
                pat.objective
            );
            // candidate count is Σ_n 2·b_n: linear in N
            let expect: u128 = sizes.iter().map(|&b| 2 * b as u128).sum();
            assert_eq!(epat.candidate_count, expect);
        }
    }

    #[test]
    fn monotone_trend_in_d() {
        // The monotone invariant at a desk-scale configuration: mean relative
        // error non-increasing, optimality rate non-decreasing in d.
        let reps = 500;
        let mut err = [0.0f64; 3];
        let mut opt = [0usize; 3];
        for rep in 0..reps {
            let inst = instance_with(2, 1, &[2; 12], 10_000 + rep as u64);
            let pat = pat_optimize(&inst).unwrap();
            for (slot, d) in [1usize, 2, 3].iter().enumerate() {
                let epat = epat_optimize(&inst, &EpatConfig::with_d(*d)).unwrap();
                err[slot] += (pat.objective - epat.objective) / pat.objective;
                if epat.objective >= pat.objective * (1.0 - 1e-9) {
                    opt[slot] += 1;
                }
            }
        }
        for e in &mut err {
            *e /= reps as f64;
        }
        assert!(
            err[0] >= err[1] && err[1] >= err[2],
            "relative error not non-increasing: {err:?}"
        );
        assert!(
            opt[0] <= opt[1] && opt[1] <= opt[2],
            "optimality rate not non-decreasing: {opt:?}"
        );
        // d = 2MD-1 recovers the PAT result everywhere
        assert_eq!(opt[2], reps);
    }

    #[test]
    fn kernel_points_satisfy_imaginary_equations() {
        use crate::pat::{boundary_midpoints, enumerate_systems, svd_kernel_basis};
        use num_complex::Complex64 as C64;
        let inst = instance_with(1, 2, &[4, 4, 2, 2, 4], 1234);
        let surrogate = crate::reduction::build_surrogate(&inst);
        let boundary = boundary_midpoints(inst.alphabets());
        let md = surrogate.rank();
        for system in enumerate_systems(&inst, 2).unwrap().take(40) {
            let c = system.complex_matrix(&surrogate, &boundary);
            let mut c_rows = vec![C64::new(0.0, 0.0); system.units.len() * md];
            for i in 0..system.units.len() {
                for d in 0..md {
                    c_rows[i * md + d] = c[(i, d)];
                }
            }
            let basis = svd_kernel_basis(&c_rows, system.units.len(), md, 1e-10);
            assert_eq!(basis.len(), 2 * md - system.units.len());
            for vbar in &basis {
                let v = crate::numerics::CVec::from_vec(vbar.clone());
                let z = &c * &v;
                let worst = z.iter().map(|zi| zi.im.abs()).fold(0.0f64, f64::max);
                assert!(worst <= 1e-10 * c.norm(), "residual {worst}");
            }
        }
    }

    #[test]
    fn multiplier_reserved() {
        let inst = instance_with(1, 1, &[2, 2, 2], 7);
        let mut cfg = EpatConfig::with_d(1);
        cfg.points_multiplier = 2;
        assert!(epat_optimize(&inst, &cfg).is_err());
    }

    #[test]
    fn default_d_is_rank() {
        let inst = instance_with(2, 2, &[2; 8], 8);
        assert_eq!(EpatConfig::for_instance(&inst).d, 4);
    }
}
