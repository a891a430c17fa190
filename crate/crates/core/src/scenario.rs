//! Scenario construction: phase alphabets, channel factors and the assembled
//! [`ProblemInstance`].
//!
//! Noise powers and the SNR floor are stored in linear milliwatt/ratio units;
//! dBm appears only at the config boundary. Units with a single admissible
//! phase are "frozen": their phase is fixed everywhere downstream and they
//! are excluded from boundary-index enumeration.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::numerics::{normalize_angle, CMat};
use crate::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;
const PI: f64 = std::f64::consts::PI;

/// Convert dBm to linear milliwatts (also dB to linear ratio).
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Convert linear milliwatts to dBm.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Ordered set of admissible phases for one RIS unit.
///
/// Phases are strictly increasing within `[0, 2π)`; a single-phase alphabet
/// marks a frozen unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhaseAlphabet {
    phases: Vec<f64>,
}

impl PhaseAlphabet {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::invalid("phase alphabet must hold at least one phase"));
        }
        for &p in &phases {
            if !p.is_finite() || !(0.0..TAU).contains(&p) {
                return Err(Error::invalid(format!(
                    "phase {p} outside [0, 2π) in alphabet"
                )));
            }
        }
        if phases.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "alphabet phases must be strictly increasing (duplicates rejected)",
            ));
        }
        Ok(Self { phases })
    }

    /// Evenly spaced `2^bits` phases starting at 0.
    pub fn uniform(bits: u32) -> Self {
        let b = 1usize << bits;
        let phases = (0..b).map(|i| i as f64 * TAU / b as f64).collect();
        Self { phases }
    }

    pub fn singleton(phase: f64) -> Result<Self> {
        Self::new(vec![normalize_angle(phase)])
    }

    pub fn size(&self) -> usize {
        self.phases.len()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn phase(&self, index: usize) -> f64 {
        self.phases[index]
    }

    /// Frozen units have exactly one admissible phase.
    pub fn is_frozen(&self) -> bool {
        self.phases.len() == 1
    }
}

impl TryFrom<Vec<f64>> for PhaseAlphabet {
    type Error = Error;
    fn try_from(phases: Vec<f64>) -> Result<Self> {
        PhaseAlphabet::new(phases)
    }
}

impl From<PhaseAlphabet> for Vec<f64> {
    fn from(a: PhaseAlphabet) -> Vec<f64> {
        a.phases
    }
}

/// The 4-phase alphabet `{0, kπ/20, kπ/10, 3kπ/20}` for `k ∈ 1..=10`.
///
/// `k = 10` gives the uniform 2-bit alphabet; smaller `k` squeezes all four
/// phases into a narrowing arc.
pub fn parametric_alphabet(k: u32) -> Result<PhaseAlphabet> {
    if !(1..=10).contains(&k) {
        return Err(Error::invalid(format!(
            "parametric alphabet expects 1 <= k <= 10, got {k}"
        )));
    }
    let step = k as f64 * PI / 20.0;
    PhaseAlphabet::new(vec![0.0, step, 2.0 * step, 3.0 * step])
}

/// Draw `n` alphabets with the given per-unit sizes, phases uniform on
/// `[0, 2π)` and sorted. Deterministic for a fixed seed.
pub fn random_alphabets(n: usize, sizes: &[usize], seed: u64) -> Result<Vec<PhaseAlphabet>> {
    if sizes.len() != n {
        return Err(Error::invalid(format!(
            "size profile has {} entries for {n} units",
            sizes.len()
        )));
    }
    if let Some(&z) = sizes.iter().find(|&&b| b == 0) {
        return Err(Error::invalid(format!("alphabet size must be positive, got {z}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for &b in sizes {
        // Exact duplicates from a continuous draw are measure-zero, but the
        // alphabet invariant demands strict ordering, so redraw on collision.
        loop {
            let mut phases: Vec<f64> = (0..b).map(|_| rng.gen::<f64>() * TAU).collect();
            phases.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if phases.windows(2).all(|w| w[1] > w[0]) {
                out.push(PhaseAlphabet { phases });
                break;
            }
        }
    }
    Ok(out)
}

/// Polar coordinates relative to a RIS panel: range (m), inclination and
/// azimuth (rad).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Polar {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

/// Far-field geometry of one RIS panel.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PanelGeometry {
    /// Unit positions `p_{k,n}` in panel coordinates (m).
    pub unit_positions: Vec<[f64; 3]>,
    /// One entry per AP antenna, relative to this panel.
    pub ap_antennas: Vec<Polar>,
    /// One entry per user, relative to this panel.
    pub users: Vec<Polar>,
}

/// Far-field scene description: positions, wavelength and scatter gain.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RisGeometry {
    /// Carrier wavelength λ (m).
    pub wavelength: f64,
    /// Isotropic scatter gain ξ (dimensionless).
    pub scatter_gain: f64,
    pub panels: Vec<PanelGeometry>,
}

fn steering_direction(theta: f64, phi: f64) -> [f64; 3] {
    [
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    ]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Phase/path-loss channel factors from far-field geometry. Deterministic.
///
/// Row `n` of factor `m` is the product of the reflect-path gain of unit `n`
/// toward user `m` and the incident steering row of unit `n`, so the factor
/// matrix carries the full AP → RIS → user response except the programmable
/// phase.
pub fn gen_farfield_channels(
    geometry: &RisGeometry,
    users: usize,
    antennas: usize,
) -> Result<Vec<CMat>> {
    if geometry.wavelength <= 0.0 {
        return Err(Error::invalid("wavelength must be positive"));
    }
    let lambda = geometry.wavelength;
    let xi = geometry.scatter_gain;
    let n_total: usize = geometry.panels.iter().map(|p| p.unit_positions.len()).sum();
    if n_total == 0 {
        return Err(Error::invalid("geometry has no RIS units"));
    }
    for (k, panel) in geometry.panels.iter().enumerate() {
        if panel.ap_antennas.len() != antennas {
            return Err(Error::invalid(format!(
                "panel {k}: expected {antennas} AP antenna coordinates, got {}",
                panel.ap_antennas.len()
            )));
        }
        if panel.users.len() != users {
            return Err(Error::invalid(format!(
                "panel {k}: expected {users} user coordinates, got {}",
                panel.users.len()
            )));
        }
        for polar in panel.ap_antennas.iter().chain(panel.users.iter()) {
            if polar.r <= 0.0 {
                return Err(Error::invalid("far-field radii must be strictly positive"));
            }
        }
    }

    let wavenumber = TAU / lambda;
    let mut factors = vec![CMat::zeros(n_total, antennas); users];
    for (m, factor) in factors.iter_mut().enumerate() {
        let mut row = 0usize;
        for panel in &geometry.panels {
            let user = panel.users[m];
            let user_dir = steering_direction(user.theta, user.phi);
            // h^H entry: outgoing spherical wave toward the user plus the
            // unit's steering phase in the user direction.
            let user_gain = C64::from_polar(xi / user.r, -wavenumber * user.r);
            for p in &panel.unit_positions {
                let h_conj =
                    user_gain * C64::from_polar(1.0, wavenumber * dot3(p, &user_dir));
                for (d, ap) in panel.ap_antennas.iter().enumerate() {
                    let ap_dir = steering_direction(ap.theta, ap.phi);
                    let g = C64::from_polar(1.0, wavenumber * dot3(p, &ap_dir))
                        * C64::from_polar(1.0 / ap.r, -wavenumber * ap.r);
                    factor[(row, d)] = h_conj * g;
                }
                row += 1;
            }
        }
    }
    Ok(factors)
}

/// Per-user channel factors from i.i.d. circularly-symmetric Gaussian draws
/// with variance `sigma0_sq` per complex entry. Deterministic for a fixed
/// seed: the AP→RIS matrices are drawn first (panel by panel, row major),
/// then the RIS→user rows per user and panel.
pub fn gen_iid_channels(
    users: usize,
    antennas: usize,
    panel_sizes: &[usize],
    sigma0_sq: f64,
    seed: u64,
) -> Result<Vec<CMat>> {
    if users == 0 || antennas == 0 || panel_sizes.is_empty() {
        return Err(Error::invalid("need at least one user, antenna and panel"));
    }
    if panel_sizes.iter().any(|&n| n == 0) {
        return Err(Error::invalid("every panel needs at least one unit"));
    }
    if !(sigma0_sq > 0.0) {
        return Err(Error::invalid("channel variance must be positive"));
    }
    let n_total: usize = panel_sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (sigma0_sq / 2.0).sqrt();
    let draw = |rng: &mut ChaCha8Rng| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    };

    // G_k ∈ C^{n_k × D}, shared by all users.
    let g: Vec<CMat> = panel_sizes
        .iter()
        .map(|&nk| CMat::from_fn(nk, antennas, |_, _| draw(&mut rng)))
        .collect();

    let mut factors = Vec::with_capacity(users);
    for _ in 0..users {
        let mut factor = CMat::zeros(n_total, antennas);
        let mut row = 0usize;
        for (k, &nk) in panel_sizes.iter().enumerate() {
            for local in 0..nk {
                let h = draw(&mut rng);
                for d in 0..antennas {
                    factor[(row, d)] = h.conj() * g[k][(local, d)];
                }
                row += 1;
            }
        }
        factors.push(factor);
    }
    Ok(factors)
}

/// The complete optimization input: channel factors `R_m` (N×D), noise powers
/// (mW), the average-SNR floor (linear ratio) and the per-unit alphabets.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    users: usize,
    antennas: usize,
    panel_sizes: Vec<usize>,
    factors: Vec<CMat>,
    noise_mw: Vec<f64>,
    gamma: f64,
    alphabets: Vec<PhaseAlphabet>,
}

impl ProblemInstance {
    pub fn new(
        panel_sizes: Vec<usize>,
        factors: Vec<CMat>,
        noise_mw: Vec<f64>,
        gamma: f64,
        alphabets: Vec<PhaseAlphabet>,
    ) -> Result<Self> {
        let users = factors.len();
        if users == 0 {
            return Err(Error::invalid("need at least one user channel factor"));
        }
        let n_total: usize = panel_sizes.iter().sum();
        if n_total == 0 {
            return Err(Error::invalid("need at least one RIS unit"));
        }
        let antennas = factors[0].ncols();
        if antennas == 0 {
            return Err(Error::invalid("need at least one AP antenna"));
        }
        for (m, f) in factors.iter().enumerate() {
            if f.nrows() != n_total || f.ncols() != antennas {
                return Err(Error::invalid(format!(
                    "factor {m} is {}x{}, expected {n_total}x{antennas}",
                    f.nrows(),
                    f.ncols()
                )));
            }
            if f.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::invalid(format!("factor {m} has non-finite entries")));
            }
        }
        if noise_mw.len() != users {
            return Err(Error::invalid(format!(
                "{} noise powers for {users} users",
                noise_mw.len()
            )));
        }
        if noise_mw.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise powers must be positive and finite"));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::invalid("SNR floor must be positive and finite"));
        }
        if alphabets.len() != n_total {
            return Err(Error::invalid(format!(
                "{} alphabets for {n_total} units",
                alphabets.len()
            )));
        }
        Ok(Self {
            users,
            antennas,
            panel_sizes,
            factors,
            noise_mw,
            gamma,
            alphabets,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn panel_sizes(&self) -> &[usize] {
        &self.panel_sizes
    }

    /// Total number of RIS units N.
    pub fn n_units(&self) -> usize {
        self.alphabets.len()
    }

    /// Rank of the quadratic problem, `M·D`.
    pub fn rank(&self) -> usize {
        self.users * self.antennas
    }

    pub fn factor(&self, m: usize) -> &CMat {
        &self.factors[m]
    }

    pub fn factors(&self) -> &[CMat] {
        &self.factors
    }

    pub fn noise_mw(&self) -> &[f64] {
        &self.noise_mw
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alphabets(&self) -> &[PhaseAlphabet] {
        &self.alphabets
    }

    pub fn alphabet(&self, n: usize) -> &PhaseAlphabet {
        &self.alphabets[n]
    }

    /// Indices of units with more than one admissible phase.
    pub fn non_frozen_units(&self) -> Vec<usize> {
        (0..self.n_units())
            .filter(|&n| !self.alphabets[n].is_frozen())
            .collect()
    }

    /// Surrogate weights `c_m = Π_{i≠m} σ_i²`.
    pub fn noise_weights(&self) -> Vec<f64> {
        (0..self.users)
            .map(|m| {
                self.noise_mw
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != m)
                    .map(|(_, &s)| s)
                    .product()
            })
            .collect()
    }

    /// Product of all noise powers, `Π σ_m²`.
    pub fn noise_product(&self) -> f64 {
        self.noise_mw.iter().product()
    }
}

/// How per-unit alphabets are produced for a scenario.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ChannelModel {
    Iid,
    Farfield,
}

/// JSON scenario description. Field names follow the documented schema:
/// `{M, D, K, n_k[], bit_profile | two_bit_ratio, gamma_dbm, noise_dbm[],
/// sigma0_sq, channel_model, geometry?, seed}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "M")]
    pub users: usize,
    #[serde(rename = "D")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub panels: usize,
    #[serde(rename = "n_k")]
    pub panel_sizes: Vec<usize>,
    /// Per-unit alphabet sizes `b_n`. Mutually exclusive with `two_bit_ratio`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_profile: Option<Vec<usize>>,
    /// Fraction of 2-bit (size 4) units; the rest are 1-bit (size 2). The
    /// first `round(ratio·N)` units get size 4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_bit_ratio: Option<f64>,
    pub gamma_dbm: f64,
    /// One entry per user, or a single entry broadcast to all users.
    pub noise_dbm: Vec<f64>,
    #[serde(default = "default_sigma0")]
    pub sigma0_sq: f64,
    pub channel_model: ChannelModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<RisGeometry>,
    pub seed: u64,
}

fn default_sigma0() -> f64 {
    1.0
}

/// Derive independent deterministic substreams from one seed.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ScenarioConfig {
    /// Alphabet sizes implied by `bit_profile` / `two_bit_ratio`.
    pub fn alphabet_sizes(&self) -> Result<Vec<usize>> {
        let n: usize = self.panel_sizes.iter().sum();
        match (&self.bit_profile, self.two_bit_ratio) {
            (Some(profile), None) => {
                if profile.len() != n {
                    return Err(Error::Config(format!(
                        "bit_profile has {} entries for N={n}",
                        profile.len()
                    )));
                }
                Ok(profile.clone())
            }
            (None, Some(ratio)) => {
                if !(0.0..=1.0).contains(&ratio) {
                    return Err(Error::Config(format!(
                        "two_bit_ratio must lie in [0,1], got {ratio}"
                    )));
                }
                let k2 = (ratio * n as f64).round() as usize;
                Ok((0..n).map(|i| if i < k2 { 4 } else { 2 }).collect())
            }
            (Some(_), Some(_)) => Err(Error::Config(
                "bit_profile and two_bit_ratio are mutually exclusive".into(),
            )),
            (None, None) => Err(Error::Config(
                "one of bit_profile or two_bit_ratio is required".into(),
            )),
        }
    }

    /// Build the instance: alphabets from substream 1, channels from
    /// substream 2 of `seed`.
    pub fn build(&self) -> Result<ProblemInstance> {
        if self.panel_sizes.len() != self.panels {
            return Err(Error::Config(format!(
                "n_k lists {} panels but K={}",
                self.panel_sizes.len(),
                self.panels
            )));
        }
        let n: usize = self.panel_sizes.iter().sum();
        let sizes = self.alphabet_sizes()?;
        let alphabets = random_alphabets(n, &sizes, derive_seed(self.seed, 1))?;

        let noise_mw: Vec<f64> = if self.noise_dbm.len() == 1 {
            vec![dbm_to_mw(self.noise_dbm[0]); self.users]
        } else {
            if self.noise_dbm.len() != self.users {
                return Err(Error::Config(format!(
                    "noise_dbm has {} entries for M={}",
                    self.noise_dbm.len(),
                    self.users
                )));
            }
            self.noise_dbm.iter().copied().map(dbm_to_mw).collect()
        };

        let factors = match self.channel_model {
            ChannelModel::Iid => gen_iid_channels(
                self.users,
                self.antennas,
                &self.panel_sizes,
                self.sigma0_sq,
                derive_seed(self.seed, 2),
            )?,
            ChannelModel::Farfield => {
                let geometry = self.geometry.as_ref().ok_or_else(|| {
                    Error::Config("channel_model \"farfield\" requires geometry".into())
                })?;
                gen_farfield_channels(geometry, self.users, self.antennas)?
            }
        };

        ProblemInstance::new(
            self.panel_sizes.clone(),
            factors,
            noise_mw,
            dbm_to_mw(self.gamma_dbm),
            alphabets,
        )
    }
}
