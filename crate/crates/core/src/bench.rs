//! Experiment harness: builds seeded scenarios, runs the solver lineup,
//! aggregates metrics and emits CSV/JSON.
//!
//! Every trial is fully determined by `(config, base_seed)`: the trial seed
//! mixes the sweep-point index and repetition, and alphabets/channels draw
//! from derived substreams. Emitted files are byte-reproducible except for
//! the wall-time columns, which necessarily vary run to run.
//!
//! Presets encode the stated experiment parameters (γ = 40 dBm, σ² = −50 dBm,
//! 1/2-bit units with uniformly random phase sets) and fill every unstated
//! one (N, repetitions, σ₀², the M/D split) with documented defaults marked
//! "assumed" in the README.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use rayon::iter::{IntoParallelIterator, ParallelIterator};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    cpp_baseline, exhaustive_search_opts, random_baseline, DEFAULT_EXHAUSTIVE_CAP,
};
use crate::epat::{candidate_count_sizes, count_ratio_db, epat_optimize, EpatConfig};
use crate::pat::{pat_optimize_with, TraversalOptions};
use crate::scenario::{
    dbm_to_mw, derive_seed, gen_iid_channels, parametric_alphabet, random_alphabets,
    PhaseAlphabet, ProblemInstance,
};
use crate::{Error, Result};

fn default_sigma0() -> f64 {
    1.0
}

fn default_cap() -> u128 {
    DEFAULT_EXHAUSTIVE_CAP
}

fn default_random_trials() -> u64 {
    100
}

/// How a sweep point's alphabets are produced.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AlphabetSpec {
    /// Random phases with explicit per-unit sizes.
    Sizes { sizes: Vec<usize> },
    /// Random phases; `round(ratio·N)` leading units get size 4, the rest 2.
    TwoBitRatio { ratio: f64 },
    /// Every unit gets `{0, kπ/20, kπ/10, 3kπ/20}`.
    Parametric { k: u32 },
    /// Every unit gets the uniform `2^bits`-phase alphabet.
    UniformBits { bits: u32 },
    /// Every unit gets `2^bits` uniformly random phases.
    RandomBits { bits: u32 },
}

impl AlphabetSpec {
    /// Per-unit alphabet sizes (fixed, independent of the seed).
    pub fn sizes(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            AlphabetSpec::Sizes { sizes } => {
                if sizes.len() != n {
                    return Err(Error::Config(format!(
                        "alphabet size list has {} entries for N={n}",
                        sizes.len()
                    )));
                }
                Ok(sizes.clone())
            }
            AlphabetSpec::TwoBitRatio { ratio } => {
                if !(0.0..=1.0).contains(ratio) {
                    return Err(Error::Config(format!("ratio {ratio} outside [0,1]")));
                }
                let k2 = (ratio * n as f64).round() as usize;
                Ok((0..n).map(|i| if i < k2 { 4 } else { 2 }).collect())
            }
            AlphabetSpec::Parametric { .. } => Ok(vec![4; n]),
            AlphabetSpec::UniformBits { bits } | AlphabetSpec::RandomBits { bits } => {
                Ok(vec![1usize << bits; n])
            }
        }
    }

    pub fn realize(&self, n: usize, seed: u64) -> Result<Vec<PhaseAlphabet>> {
        match self {
            AlphabetSpec::Parametric { k } => Ok(vec![parametric_alphabet(*k)?; n]),
            AlphabetSpec::UniformBits { bits } => Ok(vec![PhaseAlphabet::uniform(*bits); n]),
            _ => random_alphabets(n, &self.sizes(n)?, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Pat,
    Epat,
    Exhaustive,
    Cpp,
    Random,
    /// Search-space accounting only; no instances are solved.
    Count,
}

impl Solver {
    fn tag(self) -> &'static str {
        match self {
            Solver::Pat => "pat",
            Solver::Epat => "epat",
            Solver::Exhaustive => "exhaustive",
            Solver::Cpp => "eig+cpp",
            Solver::Random => "random",
            Solver::Count => "count",
        }
    }
}

/// One sweep point: a complete scenario shape plus the solvers to run on it.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub label: String,
    #[serde(rename = "M")]
    pub users: usize,
    #[serde(rename = "D")]
    pub antennas: usize,
    pub panel_sizes: Vec<usize>,
    pub alphabets: AlphabetSpec,
    /// E-PAT parameter; defaults to MD when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub solvers: Vec<Solver>,
}

impl SweepPoint {
    pub fn n_units(&self) -> usize {
        self.panel_sizes.iter().sum()
    }

    pub fn rank(&self) -> usize {
        self.users * self.antennas
    }

    pub fn epat_d(&self) -> usize {
        self.d.unwrap_or_else(|| self.rank())
    }
}

/// A whole experiment: shared link parameters plus the sweep points.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `fig7|fig8|fig9|fig10|fig11|table1|custom`.
    pub experiment: String,
    pub repetitions: usize,
    pub base_seed: u64,
    pub gamma_dbm: f64,
    pub noise_dbm: f64,
    #[serde(default = "default_sigma0")]
    pub sigma0_sq: f64,
    #[serde(default = "default_cap")]
    pub exhaustive_cap: u128,
    #[serde(default = "default_random_trials")]
    pub random_trials: u64,
    pub points: Vec<SweepPoint>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if self.points.is_empty() {
            return Err(Error::Config("sweep needs at least one point".into()));
        }
        for p in &self.points {
            if p.users == 0 || p.antennas == 0 || p.n_units() == 0 {
                return Err(Error::Config(format!("point {}: empty dimensions", p.label)));
            }
            if p.solvers.is_empty() {
                return Err(Error::Config(format!("point {}: no solvers", p.label)));
            }
            p.alphabets.sizes(p.n_units())?;
        }
        Ok(())
    }
}

/// One solver run on one seeded instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub label: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "MD")]
    pub md: usize,
    pub d: Option<usize>,
    pub rep: usize,
    pub seed: u64,
    pub solver: String,
    pub objective: Option<f64>,
    pub mu_max: Option<f64>,
    pub power_dbm: Option<f64>,
    pub candidate_count: Option<String>,
    pub wall_ms: Option<f64>,
    /// Which method backed the optimality column.
    pub oracle: Option<String>,
    pub optimal: Option<bool>,
    pub error: Option<String>,
}

/// Aggregated E-PAT-vs-PAT metrics for one configuration.
#[derive(Clone, Debug, Serialize)]
pub struct MetricsRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "MD")]
    pub md: usize,
    pub d: usize,
    /// Mean over trials of `(obj_PAT − obj_EPAT)/obj_PAT`.
    pub rel_err_mean: f64,
    /// Closed-form candidate-count ratio E-PAT/PAT, percent.
    pub ratio_vs_pat_pct: f64,
    /// Closed-form candidate-count ratio E-PAT/exhaustive, percent.
    pub ratio_vs_exhaustive_pct: f64,
    /// Fraction of trials with `obj_EPAT ≥ obj_PAT·(1 − 1e−9)`, percent.
    pub opt_prob_pct: f64,
    /// Mean E-PAT wall time.
    pub wall_ms_mean: f64,
    #[serde(skip)]
    pub trials: usize,
    /// Trials dropped for a non-positive PAT objective.
    #[serde(skip)]
    pub excluded_trials: usize,
}

/// Per-point-per-solver summary for the figure-style presets.
#[derive(Clone, Debug, Serialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub label: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "MD")]
    pub md: usize,
    pub d: Option<usize>,
    pub solver: String,
    pub reps: usize,
    pub failures: usize,
    pub mean_power_dbm: f64,
    pub mean_objective: f64,
    pub opt_pct: Option<f64>,
    pub oracle: Option<String>,
    pub mean_wall_ms: f64,
}

/// Search-space accounting for one configuration.
#[derive(Clone, Debug, Serialize)]
pub struct CountRow {
    pub label: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "MD")]
    pub md: usize,
    pub method: String,
    pub d: Option<usize>,
    pub count: String,
    pub count_exhaustive: String,
    pub vs_exhaustive_db: f64,
    pub vs_pat_db: Option<f64>,
}

/// Everything one experiment run produced.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub metrics: Vec<MetricsRow>,
    pub aggregates: Vec<AggregateRow>,
    pub counts: Vec<CountRow>,
}

/// Run every sweep point. Trials within a point run in parallel with
/// sequential solvers inside, so wall times stay meaningful and results are
/// schedule-independent. Per-trial failures are recorded and the run
/// continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut records = Vec::new();
    let mut metrics = Vec::new();
    let mut aggregates = Vec::new();
    let mut counts = Vec::new();

    for (point_index, point) in config.points.iter().enumerate() {
        if point.solvers.contains(&Solver::Count) {
            counts.extend(count_point(point)?);
            continue;
        }
        let point_records: Vec<Vec<TrialRecord>> = (0..config.repetitions)
            .into_par_iter()
            .map(|rep| run_trial(config, point, point_index, rep))
            .collect();
        let point_records: Vec<TrialRecord> = point_records.into_iter().flatten().collect();

        for &solver in &point.solvers {
            aggregates.push(aggregate(point, config, &point_records, solver.tag()));
        }
        if point.solvers.contains(&Solver::Pat) && point.solvers.contains(&Solver::Epat) {
            let sizes = point.alphabets.sizes(point.n_units())?;
            metrics.push(compute_metrics(&point_records, &sizes)?);
        }
        records.extend(point_records);
    }

    Ok(ExperimentOutput {
        config: config.clone(),
        records,
        metrics,
        aggregates,
        counts,
    })
}

fn run_trial(
    config: &ExperimentConfig,
    point: &SweepPoint,
    point_index: usize,
    rep: usize,
) -> Vec<TrialRecord> {
    let n = point.n_units();
    let md = point.rank();
    let trial_seed = derive_seed(config.base_seed, ((point_index as u64) << 32) | rep as u64);
    let record_base = |solver: &str| TrialRecord {
        experiment: config.experiment.clone(),
        label: point.label.clone(),
        n,
        md,
        d: if solver.starts_with("epat") {
            Some(point.epat_d())
        } else {
            None
        },
        rep,
        seed: trial_seed,
        solver: solver.to_string(),
        objective: None,
        mu_max: None,
        power_dbm: None,
        candidate_count: None,
        wall_ms: None,
        oracle: None,
        optimal: None,
        error: None,
    };

    let instance = match build_instance(config, point, trial_seed) {
        Ok(instance) => instance,
        Err(e) => {
            let mut r = record_base("setup");
            r.error = Some(e.to_string());
            return vec![r];
        }
    };

    let sequential = TraversalOptions {
        parallel: false,
        ..TraversalOptions::default()
    };
    let mut out = Vec::with_capacity(point.solvers.len());
    for &solver in &point.solvers {
        let mut record = record_base(solver.tag());
        match solver {
            Solver::Pat => match pat_optimize_with(&instance, &sequential) {
                Ok(report) => {
                    record.objective = Some(report.objective);
                    record.mu_max = Some(report.mu_max);
                    record.power_dbm = Some(report.power_dbm);
                    record.candidate_count = Some(report.candidate_count.to_string());
                    record.wall_ms = Some(report.wall_ms);
                }
                Err(e) => record.error = Some(e.to_string()),
            },
            Solver::Epat => {
                let cfg = EpatConfig {
                    d: point.epat_d(),
                    points_multiplier: 1,
                    options: sequential,
                };
                match epat_optimize(&instance, &cfg) {
                    Ok(report) => {
                        record.objective = Some(report.objective);
                        record.mu_max = Some(report.mu_max);
                        record.power_dbm = Some(report.power_dbm);
                        record.candidate_count = Some(report.candidate_count.to_string());
                        record.wall_ms = Some(report.wall_ms);
                    }
                    Err(e) => record.error = Some(e.to_string()),
                }
            }
            Solver::Exhaustive => {
                match exhaustive_search_opts(&instance, config.exhaustive_cap, false) {
                    Ok(result) => {
                        record.objective = Some(result.objective);
                        record.mu_max = Some(result.mu_max);
                        record.power_dbm = Some(result.power_dbm);
                        record.candidate_count = Some(result.evaluated.to_string());
                        record.wall_ms = Some(result.wall_ms);
                    }
                    Err(e) => record.error = Some(e.to_string()),
                }
            }
            Solver::Cpp => match cpp_baseline(&instance) {
                Ok(result) => {
                    record.objective = Some(result.objective);
                    record.mu_max = Some(result.mu_max);
                    record.power_dbm = Some(result.power_dbm);
                    record.wall_ms = Some(result.wall_ms);
                }
                Err(e) => record.error = Some(e.to_string()),
            },
            Solver::Random => {
                match random_baseline(&instance, config.random_trials, derive_seed(trial_seed, 3))
                {
                    Ok(result) => {
                        record.objective = Some(result.objective);
                        record.mu_max = Some(result.mu_max);
                        record.power_dbm = Some(result.power_dbm);
                        record.wall_ms = Some(result.wall_ms);
                    }
                    Err(e) => record.error = Some(e.to_string()),
                }
            }
            Solver::Count => unreachable!("count points are handled separately"),
        }
        out.push(record);
    }

    // Mark optimality against the strongest oracle that ran.
    let oracle = ["exhaustive", "pat"].iter().find_map(|tag| {
        out.iter()
            .find(|r| r.solver == *tag && r.objective.is_some())
            .map(|r| (r.solver.clone(), r.objective.unwrap()))
    });
    if let Some((tag, oracle_obj)) = oracle {
        for r in &mut out {
            if let Some(obj) = r.objective {
                r.oracle = Some(tag.clone());
                r.optimal = Some(obj >= oracle_obj * (1.0 - 1e-9));
            }
        }
    }
    out
}

fn build_instance(
    config: &ExperimentConfig,
    point: &SweepPoint,
    trial_seed: u64,
) -> Result<ProblemInstance> {
    let n = point.n_units();
    let alphabets = point.alphabets.realize(n, derive_seed(trial_seed, 1))?;
    let factors = gen_iid_channels(
        point.users,
        point.antennas,
        &point.panel_sizes,
        config.sigma0_sq,
        derive_seed(trial_seed, 2),
    )?;
    ProblemInstance::new(
        point.panel_sizes.clone(),
        factors,
        vec![dbm_to_mw(config.noise_dbm); point.users],
        dbm_to_mw(config.gamma_dbm),
        alphabets,
    )
}

fn aggregate(
    point: &SweepPoint,
    config: &ExperimentConfig,
    records: &[TrialRecord],
    solver: &str,
) -> AggregateRow {
    let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.solver == solver).collect();
    let ok: Vec<&&TrialRecord> = rows.iter().filter(|r| r.objective.is_some()).collect();
    let mean = |f: &dyn Fn(&TrialRecord) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let with_oracle: Vec<&&TrialRecord> =
        ok.iter().filter(|r| r.optimal.is_some()).copied().collect();
    let opt_pct = if with_oracle.is_empty() {
        None
    } else {
        Some(
            100.0 * with_oracle.iter().filter(|r| r.optimal == Some(true)).count() as f64
                / with_oracle.len() as f64,
        )
    };
    AggregateRow {
        experiment: config.experiment.clone(),
        label: point.label.clone(),
        n: point.n_units(),
        md: point.rank(),
        d: if solver == "epat" {
            Some(point.epat_d())
        } else {
            None
        },
        solver: solver.to_string(),
        reps: rows.len(),
        failures: rows.len() - ok.len(),
        mean_power_dbm: mean(&|r| r.power_dbm.unwrap_or(f64::NAN)),
        mean_objective: mean(&|r| r.objective.unwrap_or(f64::NAN)),
        opt_pct,
        oracle: with_oracle
            .first()
            .and_then(|r| r.oracle.clone()),
        mean_wall_ms: mean(&|r| r.wall_ms.unwrap_or(f64::NAN)),
    }
}

/// Fold matched PAT/E-PAT trial records into one metrics row. Trials with a
/// non-positive PAT objective are excluded and counted in
/// `excluded_trials`.
pub fn compute_metrics(records: &[TrialRecord], alphabet_sizes: &[usize]) -> Result<MetricsRow> {
    let pat: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| r.solver == "pat" && r.objective.is_some())
        .collect();
    let epat: Vec<&TrialRecord> = records
        .iter()
        .filter(|r| r.solver == "epat" && r.objective.is_some())
        .collect();
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("no records to aggregate"))?;
    let epat_first = epat
        .first()
        .ok_or_else(|| Error::invalid("no successful E-PAT records"))?;
    let d = epat_first.d.unwrap_or(0);
    let md = first.md;

    let mut rel_err_sum = 0.0;
    let mut optimal = 0usize;
    let mut trials = 0usize;
    let mut excluded = 0usize;
    let mut wall_sum = 0.0;
    for e in &epat {
        let Some(p) = pat.iter().find(|p| p.rep == e.rep) else {
            continue;
        };
        let pat_obj = p.objective.unwrap();
        let epat_obj = e.objective.unwrap();
        if !(pat_obj > 0.0) {
            excluded += 1;
            continue;
        }
        trials += 1;
        rel_err_sum += (pat_obj - epat_obj) / pat_obj;
        if epat_obj >= pat_obj * (1.0 - 1e-9) {
            optimal += 1;
        }
        wall_sum += e.wall_ms.unwrap_or(0.0);
    }
    if trials == 0 {
        return Err(Error::invalid(
            "no trial has both a PAT and an E-PAT result with positive PAT objective",
        ));
    }

    let l_pat = 2 * md - 1;
    let count_pat = candidate_count_sizes(alphabet_sizes, l_pat);
    let count_epat = candidate_count_sizes(alphabet_sizes, d);
    let count_exhaustive: BigUint = alphabet_sizes
        .iter()
        .map(|&b| BigUint::from(b))
        .product();
    let pct = |a: &BigUint, b: &BigUint| 100.0 * 10f64.powf(count_ratio_db(a, b) / 10.0);

    Ok(MetricsRow {
        n: first.n,
        md,
        d,
        rel_err_mean: rel_err_sum / trials as f64,
        ratio_vs_pat_pct: pct(&count_epat, &count_pat),
        ratio_vs_exhaustive_pct: pct(&count_epat, &count_exhaustive),
        opt_prob_pct: 100.0 * optimal as f64 / trials as f64,
        wall_ms_mean: wall_sum / trials as f64,
        trials,
        excluded_trials: excluded,
    })
}

fn count_point(point: &SweepPoint) -> Result<Vec<CountRow>> {
    let n = point.n_units();
    let md = point.rank();
    let sizes = point.alphabets.sizes(n)?;
    let exhaustive: BigUint = sizes.iter().map(|&b| BigUint::from(b)).product();
    let pat_count = candidate_count_sizes(&sizes, 2 * md - 1);
    let mut rows = Vec::new();
    match point.d {
        None => rows.push(CountRow {
            label: point.label.clone(),
            n,
            md,
            method: "pat".into(),
            d: None,
            count: pat_count.to_string(),
            count_exhaustive: exhaustive.to_string(),
            vs_exhaustive_db: count_ratio_db(&pat_count, &exhaustive),
            vs_pat_db: None,
        }),
        Some(d) => {
            let epat_count = candidate_count_sizes(&sizes, d);
            rows.push(CountRow {
                label: point.label.clone(),
                n,
                md,
                method: format!("epat(d={d})"),
                d: Some(d),
                count: epat_count.to_string(),
                count_exhaustive: exhaustive.to_string(),
                vs_exhaustive_db: count_ratio_db(&epat_count, &exhaustive),
                vs_pat_db: Some(count_ratio_db(&epat_count, &pat_count)),
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

/// Build a named preset. Documented parameter choices the source material
/// leaves open: σ₀² = 1, M = MD with D = 1 for the table rows, 1-bit units
/// for the table rows, and the N values of every figure sweep.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig {
        experiment: name.to_string(),
        repetitions: 0,
        base_seed: 20240 + match name {
            "table1" => 1,
            "fig7" => 7,
            "fig8" => 8,
            "fig9" => 9,
            "fig10" => 10,
            "fig11" => 11,
            _ => 0,
        },
        gamma_dbm: 40.0,
        noise_dbm: -50.0,
        sigma0_sq: 1.0,
        exhaustive_cap: DEFAULT_EXHAUSTIVE_CAP,
        random_trials: 100,
        points: Vec::new(),
    };
    match name {
        "table1" => {
            let mut cfg = base;
            cfg.repetitions = 500;
            for (n, md, d) in [(20usize, 2usize, 1usize), (20, 2, 2), (20, 3, 3)] {
                cfg.points.push(SweepPoint {
                    label: format!("N={n},MD={md},d={d}"),
                    users: md,
                    antennas: 1,
                    panel_sizes: vec![n],
                    alphabets: AlphabetSpec::Sizes { sizes: vec![2; n] },
                    d: Some(d),
                    solvers: vec![Solver::Pat, Solver::Epat],
                });
            }
            Ok(cfg)
        }
        "fig7" => {
            let mut cfg = base;
            cfg.repetitions = 100;
            for bits in 1..=7u32 {
                for (mode, spec) in [
                    ("uniform", AlphabetSpec::UniformBits { bits }),
                    ("random", AlphabetSpec::RandomBits { bits }),
                ] {
                    cfg.points.push(SweepPoint {
                        label: format!("bits={bits},{mode}"),
                        users: 1,
                        antennas: 1,
                        panel_sizes: vec![8],
                        alphabets: spec,
                        d: None,
                        solvers: vec![Solver::Pat, Solver::Cpp, Solver::Random, Solver::Exhaustive],
                    });
                }
            }
            Ok(cfg)
        }
        "fig8" => {
            let mut cfg = base;
            cfg.repetitions = 100;
            for k in 1..=10u32 {
                cfg.points.push(SweepPoint {
                    label: format!("k={k}"),
                    users: 1,
                    antennas: 2,
                    panel_sizes: vec![10],
                    alphabets: AlphabetSpec::Parametric { k },
                    d: None,
                    solvers: vec![Solver::Pat, Solver::Cpp, Solver::Random, Solver::Exhaustive],
                });
            }
            Ok(cfg)
        }
        "fig9" => {
            let mut cfg = base;
            cfg.repetitions = 100;
            for tenths in 0..=10u32 {
                let ratio = tenths as f64 / 10.0;
                cfg.points.push(SweepPoint {
                    label: format!("ratio={ratio:.1}"),
                    users: 1,
                    antennas: 2,
                    panel_sizes: vec![10],
                    alphabets: AlphabetSpec::TwoBitRatio { ratio },
                    d: None,
                    solvers: vec![Solver::Pat, Solver::Cpp, Solver::Random, Solver::Exhaustive],
                });
            }
            Ok(cfg)
        }
        "fig10" => {
            let mut cfg = base;
            cfg.repetitions = 50;
            for (users, antennas) in [(1usize, 1usize), (1, 2), (3, 1), (2, 2)] {
                for n in [4usize, 6, 8, 10] {
                    cfg.points.push(SweepPoint {
                        label: format!("M={users},D={antennas},N={n}"),
                        users,
                        antennas,
                        panel_sizes: vec![n],
                        alphabets: AlphabetSpec::TwoBitRatio { ratio: 0.5 },
                        d: Some(users * antennas),
                        solvers: vec![
                            Solver::Pat,
                            Solver::Epat,
                            Solver::Cpp,
                            Solver::Random,
                            Solver::Exhaustive,
                        ],
                    });
                }
            }
            Ok(cfg)
        }
        "fig11" => {
            let mut cfg = base;
            cfg.repetitions = 1;
            for md in [2usize, 3] {
                for ratio_pct in [20u32, 50, 80] {
                    for n in (10..=100usize).step_by(10) {
                        let ratio = ratio_pct as f64 / 100.0;
                        let alphabets = AlphabetSpec::TwoBitRatio { ratio };
                        let mk = |d: Option<usize>| SweepPoint {
                            label: format!("MD={md},ratio={ratio:.1},N={n}"),
                            users: md,
                            antennas: 1,
                            panel_sizes: vec![n],
                            alphabets: alphabets.clone(),
                            d,
                            solvers: vec![Solver::Count],
                        };
                        cfg.points.push(mk(None));
                        for d in 1..=(2 * md - 1) {
                            cfg.points.push(mk(Some(d)));
                        }
                    }
                }
            }
            Ok(cfg)
        }
        other => Err(Error::Config(format!(
            "unknown preset {other:?}; expected table1|fig7|fig8|fig9|fig10|fig11"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
}

impl std::str::FromStr for EmitFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EmitFormat::Csv),
            "json" => Ok(EmitFormat::Json),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize rows to CSV with a stable column order; an empty slice yields a
/// header-only file.
pub fn emit_csv<T: Serialize>(rows: &[T], header_probe: &T, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut writer = csv::WriterBuilder::new().from_writer(file);
    if rows.is_empty() {
        // serialize one probe row to fix the header, then drop its data line
        let mut buf = csv::WriterBuilder::new().from_writer(Vec::new());
        buf.serialize(header_probe)
            .map_err(|e| Error::Config(format!("csv serialization failed: {e}")))?;
        let bytes = buf
            .into_inner()
            .map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        let text = String::from_utf8_lossy(&bytes);
        let header = text.lines().next().unwrap_or_default();
        let mut file = writer
            .into_inner()
            .map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
        writeln!(file, "{header}").map_err(io_err(path))?;
        return Ok(());
    }
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Config(format!("csv serialization failed: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Config(format!("csv flush failed: {e}")))?;
    Ok(())
}

/// Pretty JSON with trailing newline.
pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("json serialization failed: {e}")))?;
    writeln!(file, "{text}").map_err(io_err(path))?;
    Ok(())
}

/// Write every product of a run under `dir` using `stem` as the file-name
/// base: per-trial records, aggregate tables and the provenance sidecar
/// `<stem>.config.json`. Returns the written paths.
pub fn write_output(
    output: &ExperimentOutput,
    dir: &Path,
    stem: &str,
    format: EmitFormat,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let config_path = dir.join(format!("{stem}.config.json"));
    emit_json(&output.config, &config_path)?;
    written.push(config_path);

    match format {
        EmitFormat::Json => {
            let path = dir.join(format!("{stem}.json"));
            emit_json(output, &path)?;
            written.push(path);
        }
        EmitFormat::Csv => {
            if !output.records.is_empty() {
                let path = dir.join(format!("{stem}.records.csv"));
                emit_csv(&output.records, &output.records[0], &path)?;
                written.push(path);
            }
            if !output.metrics.is_empty() {
                let path = dir.join(format!("{stem}.metrics.csv"));
                emit_csv(&output.metrics, &output.metrics[0], &path)?;
                written.push(path);
            }
            if !output.aggregates.is_empty() {
                let path = dir.join(format!("{stem}.aggregates.csv"));
                emit_csv(&output.aggregates, &output.aggregates[0], &path)?;
                written.push(path);
            }
            if !output.counts.is_empty() {
                let path = dir.join(format!("{stem}.counts.csv"));
                emit_csv(&output.counts, &output.counts[0], &path)?;
                written.push(path);
            }
        }
    }
    Ok(written)
}
