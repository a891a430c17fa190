//! Shared helpers for the integration suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use risopt::reduction::{PhaseVector, QuadraticSurrogate};
use risopt::scenario::{gen_iid_channels, random_alphabets, PhaseAlphabet};
use risopt::ProblemInstance;

pub const GAMMA: f64 = 1e4; // 40 dBm
pub const NOISE_MW: f64 = 1e-5; // -50 dBm

/// Seeded i.i.d. instance with unit channel variance and the shared link
/// parameters.
pub fn make_instance(
    users: usize,
    antennas: usize,
    sizes: &[usize],
    seed: u64,
) -> ProblemInstance {
    let n = sizes.len();
    let factors = gen_iid_channels(users, antennas, &[n], 1.0, seed).expect("channels");
    let alphabets = random_alphabets(n, sizes, seed ^ 0x00C0_FFEE).expect("alphabets");
    ProblemInstance::new(vec![n], factors, vec![NOISE_MW; users], GAMMA, alphabets)
        .expect("instance")
}

/// Mixed 1-/2-bit size profile (alphabet sizes 2 and 4).
pub fn mixed_sizes(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| if rng.gen() { 2 } else { 4 }).collect()
}

/// Independent oracle: recursive enumeration of every index vector with a
/// from-scratch objective per leaf. Deliberately shares no code with the
/// incremental exhaustive scan or the traversal engines.
pub fn naive_best(
    surrogate: &QuadraticSurrogate,
    alphabets: &[PhaseAlphabet],
) -> (Vec<u32>, f64) {
    fn rec(
        alphabets: &[PhaseAlphabet],
        surrogate: &QuadraticSurrogate,
        prefix: &mut Vec<u32>,
        best: &mut (Vec<u32>, f64),
    ) {
        if prefix.len() == alphabets.len() {
            let v = PhaseVector::new(prefix.clone()).unit_vector(alphabets);
            let obj = surrogate.objective(&v);
            if obj > best.1 {
                *best = (prefix.clone(), obj);
            }
            return;
        }
        for k in 0..alphabets[prefix.len()].size() {
            prefix.push(k as u32);
            rec(alphabets, surrogate, prefix, best);
            prefix.pop();
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    rec(alphabets, surrogate, &mut Vec::new(), &mut best);
    best
}

/// Uniformly random feasible configuration.
pub fn random_phase_vector(instance: &ProblemInstance, rng: &mut ChaCha8Rng) -> PhaseVector {
    PhaseVector::new(
        instance
            .alphabets()
            .iter()
            .map(|a| rng.gen_range(0..a.size()) as u32)
            .collect(),
    )
}
