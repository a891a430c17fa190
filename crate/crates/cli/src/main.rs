//! `risopt` — solve, benchmark and size discrete RIS phase-configuration
//! problems from the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use risopt::bench::{preset, run_experiment, write_output, EmitFormat, ExperimentConfig};
use risopt::epat::{candidate_count_sizes, count_ratio_db, EpatConfig};
use risopt::pat::{pat_optimize_with, TraversalOptions};
use risopt::scenario::ScenarioConfig;
use risopt::{epat_optimize, exhaustive_search};

#[derive(Parser)]
#[command(
    name = "risopt",
    version,
    about = "Discrete phase configuration for RIS-assisted MISO links under non-uniform quantization"
)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and print the SolveReport as JSON.
    Solve(SolveArgs),
    /// Run only the exhaustive oracle on one scenario.
    Oracle(OracleArgs),
    /// Run an experiment preset or a custom experiment config.
    Bench(BenchArgs),
    /// Candidate-count calculator: search-space sizes and ratios.
    Count(CountArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Scenario config (JSON).
    config: PathBuf,
    /// Solver: pat or epat.
    #[arg(long, default_value = "pat")]
    solver: String,
    /// E-PAT equations per system (default MD).
    #[arg(long)]
    d: Option<usize>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Scenario config (JSON).
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse domains larger than this.
    #[arg(long, default_value_t = risopt::baselines::DEFAULT_EXHAUSTIVE_CAP)]
    exhaustive_cap: u128,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Preset name (table1|fig7|fig8|fig9|fig10|fig11) or a JSON experiment
    /// config path.
    spec: String,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Override the experiment base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the repetition count.
    #[arg(long)]
    reps: Option<usize>,
    /// Override the E-PAT parameter d on every sweep point.
    #[arg(long)]
    d: Option<usize>,
    /// Override the exhaustive-oracle cap.
    #[arg(long)]
    exhaustive_cap: Option<u128>,
}

#[derive(Args)]
struct CountArgs {
    /// Per-unit alphabet sizes, comma separated (e.g. "2,4,4,2").
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["n", "two_bit_ratio", "bits"])]
    sizes: Option<Vec<usize>>,
    /// Unit count, combined with --bits or --two-bit-ratio.
    #[arg(long)]
    n: Option<usize>,
    /// Fraction of 2-bit (size-4) units; the rest are 1-bit.
    #[arg(long)]
    two_bit_ratio: Option<f64>,
    /// Uniform bit resolution for all units.
    #[arg(long)]
    bits: Option<u32>,
    /// Problem rank MD.
    #[arg(long)]
    md: usize,
    /// E-PAT parameter; when set, the E-PAT count is reported too.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("rayon thread pool")?;
    }
    match cli.command {
        Command::Solve(args) => solve(args),
        Command::Oracle(args) => oracle(args),
        Command::Bench(args) => bench(args),
        Command::Count(args) => count(args),
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading scenario config {}", path.display()))?;
    let mut config: ScenarioConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn print_or_write<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let config = load_scenario(&args.config, args.seed)?;
    let instance = config.build()?;
    let report = match args.solver.as_str() {
        "pat" => pat_optimize_with(&instance, &TraversalOptions::default())?,
        "epat" => {
            let cfg = EpatConfig {
                d: args.d.unwrap_or_else(|| instance.rank()),
                ..EpatConfig::for_instance(&instance)
            };
            epat_optimize(&instance, &cfg)?
        }
        other => bail!("unknown solver {other:?}; expected pat or epat"),
    };
    print_or_write(&report, args.out.as_deref())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let config = load_scenario(&args.config, args.seed)?;
    let instance = config.build()?;
    let result = exhaustive_search(&instance, args.exhaustive_cap)?;
    print_or_write(&result, args.out.as_deref())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut config: ExperimentConfig = if args.spec.ends_with(".json") {
        let text = std::fs::read_to_string(&args.spec)
            .with_context(|| format!("reading experiment config {}", args.spec))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.spec))?
    } else {
        preset(&args.spec)?
    };
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(reps) = args.reps {
        config.repetitions = reps;
    }
    if let Some(cap) = args.exhaustive_cap {
        config.exhaustive_cap = cap;
    }
    if let Some(d) = args.d {
        for point in &mut config.points {
            point.d = Some(d);
        }
    }
    let format: EmitFormat = args.format.parse()?;
    let stem = if args.spec.ends_with(".json") {
        Path::new(&args.spec)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("experiment")
            .to_string()
    } else {
        args.spec.clone()
    };

    eprintln!(
        "running {} ({} points x {} reps, base seed {})",
        config.experiment,
        config.points.len(),
        config.repetitions,
        config.base_seed
    );
    let output = run_experiment(&config)?;
    let written = write_output(&output, &args.out, &stem, format)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn count(args: CountArgs) -> Result<()> {
    let sizes: Vec<usize> = if let Some(sizes) = args.sizes {
        sizes
    } else {
        let n = args
            .n
            .context("--n is required when --sizes is not given")?;
        if let Some(ratio) = args.two_bit_ratio {
            if !(0.0..=1.0).contains(&ratio) {
                bail!("--two-bit-ratio must lie in [0,1]");
            }
            let k2 = (ratio * n as f64).round() as usize;
            (0..n).map(|i| if i < k2 { 4 } else { 2 }).collect()
        } else if let Some(bits) = args.bits {
            vec![1usize << bits; n]
        } else {
            bail!("give --sizes, or --n with --bits or --two-bit-ratio");
        }
    };
    if args.md == 0 {
        bail!("--md must be positive");
    }
    let l_pat = 2 * args.md - 1;
    let pat = candidate_count_sizes(&sizes, l_pat);
    let exhaustive: num_bigint::BigUint = sizes
        .iter()
        .map(|&b| num_bigint::BigUint::from(b))
        .product();

    let mut report = serde_json::json!({
        "n": sizes.len(),
        "md": args.md,
        "sizes": sizes,
        "count_pat": pat.to_string(),
        "count_exhaustive": exhaustive.to_string(),
        "pat_vs_exhaustive_db": count_ratio_db(&pat, &exhaustive),
    });
    if let Some(d) = args.d {
        if d == 0 || d > l_pat {
            bail!("--d must satisfy 1 <= d <= 2*md-1 = {l_pat}");
        }
        let epat = candidate_count_sizes(&sizes, d);
        report["d"] = serde_json::json!(d);
        report["count_epat"] = serde_json::json!(epat.to_string());
        report["epat_vs_pat_db"] = serde_json::json!(count_ratio_db(&epat, &pat));
        report["epat_vs_exhaustive_db"] = serde_json::json!(count_ratio_db(&epat, &exhaustive));
    }
    print_or_write(&report, args.out.as_deref())
}
