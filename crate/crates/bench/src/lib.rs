//! Shared instance builders for the criterion benches.

use risopt::scenario::{gen_iid_channels, random_alphabets};
use risopt::ProblemInstance;

/// Seeded i.i.d. instance with the given alphabet-size profile.
pub fn bench_instance(
    users: usize,
    antennas: usize,
    sizes: &[usize],
    seed: u64,
) -> ProblemInstance {
    let n = sizes.len();
    let factors = gen_iid_channels(users, antennas, &[n], 1.0, seed).expect("channels");
    let alphabets = random_alphabets(n, sizes, seed ^ 0x9E37_79B9).expect("alphabets");
    ProblemInstance::new(vec![n], factors, vec![1e-5; users], 1e4, alphabets)
        .expect("instance")
}
