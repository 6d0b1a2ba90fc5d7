//! Command-line front end: `run` executes an experiment config and writes
//! a CSV results table; `verify` runs reduced-scale property suites.
//!
//! Exit codes: 0 success, 1 run/verify failure, 2 config schema violation,
//! 3 DP capacity exceeded.

mod config;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use config::ConfigFile;
use fademac_core::{Error, ExperimentResult, ExperimentSpec, PolicyKind};

#[derive(Parser)]
#[command(name = "fademac", version, about = "Energy allocation policies on fading multiple-access channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write the CSV results table
    Run(RunArgs),
    /// Run the reduced-scale property suites against a config
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML experiment configuration
    config: PathBuf,
    /// Override the experiment seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count; the CSV bytes are identical for any value
    #[arg(long)]
    threads: Option<usize>,
    /// Override the CSV output path
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to a comma-separated subset of the configured policies
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<String>>,
    /// Reuse DP value tables cached in this directory
    #[arg(long)]
    dp_cache: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Path to a TOML experiment configuration
    config: PathBuf,
    /// Worker thread count
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAPACITY: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
    };
    ExitCode::from(code)
}

fn load_spec(path: &PathBuf, dp_cache: Option<PathBuf>) -> Result<(ConfigFile, ExperimentSpec), u8> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("error: config: cannot read {}: {e}", path.display());
            return Err(EXIT_CONFIG);
        }
    };
    let file = match ConfigFile::parse(&text) {
        Ok(file) => file,
        Err(e) => {
            eprintln!("error: config: {}: {e}", path.display());
            return Err(EXIT_CONFIG);
        }
    };
    let spec = match file.to_spec(dp_cache) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: config: {}: {e}", path.display());
            return Err(EXIT_CONFIG);
        }
    };
    Ok((file, spec))
}

fn install_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, u8> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            eprintln!("error: config: --threads must be at least 1");
            return Err(EXIT_CONFIG);
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| {
        eprintln!("error: internal: building thread pool: {e}");
        EXIT_FAILURE
    })
}

fn cmd_run(args: RunArgs) -> u8 {
    let (file, mut spec) = match load_spec(&args.config, args.dp_cache.clone()) {
        Ok(pair) => pair,
        Err(code) => return code,
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(names) = &args.policies {
        let mut selected = Vec::new();
        for name in names {
            match PolicyKind::from_str(name) {
                Ok(kind) => selected.push(kind),
                Err(e) => {
                    eprintln!("error: config: --policies: {e}");
                    return EXIT_CONFIG;
                }
            }
        }
        spec.policies = selected;
    }
    let pool = match install_pool(args.threads) {
        Ok(pool) => pool,
        Err(code) => return code,
    };

    let result = match pool.install(|| fademac_core::run_experiment(&spec)) {
        Ok(result) => result,
        Err(e @ Error::Capacity(_)) => {
            eprintln!("error: {e}");
            eprintln!("hint: reduce solver.dp_grid_points, lower solver.dp_max_users, or drop dp_optimal from experiment.policies");
            return EXIT_CAPACITY;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };

    for point in &result.points {
        let mut line = format!("sweep={}", format_float(point.sweep_value));
        for stats in &point.stats {
            line.push_str(&format!(
                " {}={} (se {}, {:.2}s)",
                stats.policy.name(),
                format_float(stats.mean_bits),
                format_float(stats.stderr_bits),
                stats.runtime_secs,
            ));
        }
        println!("{line}");
        for skip in &point.skipped {
            println!(
                "sweep={} {} skipped: {}",
                format_float(point.sweep_value),
                skip.policy.name(),
                skip.reason
            );
        }
    }

    let out_path = args.out.unwrap_or_else(|| file.output.csv_path.clone());
    let csv = render_csv(&result, spec.seed);
    if let Err(e) = std::fs::write(&out_path, csv) {
        eprintln!("error: io: writing {}: {e}", out_path.display());
        return EXIT_FAILURE;
    }
    println!("wrote {}", out_path.display());

    // a capacity skip means the exact DP was requested but infeasible
    let capacity_skip = result.points.iter().any(|p| {
        p.skipped
            .iter()
            .any(|s| matches!(s.reason, Error::Capacity(_)))
    });
    if capacity_skip {
        eprintln!("error: capacity: dp_optimal was requested but its state grid exceeds the memory budget");
        eprintln!("hint: reduce solver.dp_grid_points or drop dp_optimal from experiment.policies");
        return EXIT_CAPACITY;
    }
    EXIT_OK
}

fn cmd_verify(args: VerifyArgs) -> u8 {
    let (file, spec) = match load_spec(&args.config, None) {
        Ok(pair) => pair,
        Err(code) => return code,
    };
    let pool = match install_pool(args.threads) {
        Ok(pool) => pool,
        Err(code) => return code,
    };
    let mut reports = vec![verify::CheckReport {
        name: "config_round_trip",
        status: match file
            .to_toml()
            .map_err(|e| e.to_string())
            .and_then(|text| ConfigFile::parse(&text))
        {
            Ok(reparsed) if reparsed == file => verify::CheckStatus::Pass,
            Ok(_) => verify::CheckStatus::Fail("reserialized config parses differently".into()),
            Err(e) => verify::CheckStatus::Fail(e),
        },
    }];
    reports.extend(pool.install(|| verify::run_suite(&spec)));
    let mut failures = Vec::new();
    for report in &reports {
        match &report.status {
            verify::CheckStatus::Pass => println!("PASS {}", report.name),
            verify::CheckStatus::Skip(reason) => println!("SKIP {} ({reason})", report.name),
            verify::CheckStatus::Fail(reason) => {
                println!("FAIL {}: {reason}", report.name);
                failures.push(report.name);
            }
        }
    }
    if failures.is_empty() {
        println!("all checks passed");
        EXIT_OK
    } else {
        eprintln!("error: verify: {} check(s) failed: {}", failures.len(), failures.join(", "));
        EXIT_FAILURE
    }
}

/// Shortest round-trip decimal form, reused everywhere a float reaches an
/// output byte so CSV files stay byte-stable.
fn format_float(x: f64) -> String {
    format!("{x}")
}

fn render_csv(result: &ExperimentResult, seed: u64) -> String {
    let mut out = String::from("sweep_value,policy,mean_bits,stderr_bits,n_realizations,seed\n");
    for point in &result.points {
        for stats in &point.stats {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                format_float(point.sweep_value),
                stats.policy.name(),
                format_float(stats.mean_bits),
                format_float(stats.stderr_bits),
                stats.n_realizations,
                seed,
            ));
        }
    }
    out
}
