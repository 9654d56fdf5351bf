use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use moreau_cli::data::{ClassificationParams, RegressionParams};
use moreau_cli::{cmd_compare, cmd_envelope, cmd_gen_data, cmd_run, parse_json, FunctionSpec, GenSpec};

/// Solvers for Moreau-envelope regularized nonconvex consensus problems.
///
/// Exit status: 0 converged, 2 stopped at the iteration budget, 1 error.
/// Log verbosity follows RUST_LOG (default `warn`).
#[derive(Parser)]
#[command(name = "moreau", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem; writes trace.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export a synthetic dataset as A.bin plus manifest.json.
    GenData {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Sample a loss and its Moreau envelope on a grid.
    Envelope {
        /// Stack as JSON, e.g. '{"stack":"l0","nu":0.01}'.
        #[arg(long)]
        function: String,
        #[arg(long)]
        lambda: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = -1.0)]
        from: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 1.0)]
        to: f64,
        #[arg(long, default_value_t = 201)]
        samples: usize,
        /// CSV file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several algorithms on one problem; writes comparison.csv/json.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct GenCommon {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum GenKind {
    /// Linear regression with a fraction of shifted responses.
    Regression {
        #[arg(long, default_value_t = 200)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0.6)]
        outlier_frac: f64,
        #[arg(long)]
        outlier_magnitude: Option<f64>,
        #[arg(long, default_value_t = 0.03)]
        noise_sigma: f64,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Two-class data with signal and noise features.
    Classification {
        /// Training examples; n/4 more are held out.
        #[arg(long, default_value_t = 1200)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        d_signal: usize,
        #[arg(long, default_value_t = 40)]
        d_noise: usize,
        /// Labeled training examples.
        #[arg(long, conflicts_with = "all_labeled")]
        labeled: Option<usize>,
        /// Label every training example.
        #[arg(long)]
        all_labeled: bool,
        #[arg(long, default_value_t = 0.1)]
        margin_violation_frac: f64,
        #[command(flatten)]
        common: GenCommon,
    },
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Run { config, out, seed } => Ok(cmd_run(&config, out, seed)?.code()),
        Command::Compare { config, out, seed } => Ok(cmd_compare(&config, out, seed)?.code()),
        Command::GenData { kind } => {
            let (spec, common) = match kind {
                GenKind::Regression { m, n, outlier_frac, outlier_magnitude, noise_sigma, common } => (
                    GenSpec::Regression(RegressionParams { m, n, outlier_frac, outlier_magnitude, noise_sigma }),
                    common,
                ),
                GenKind::Classification { n, d_signal, d_noise, labeled, all_labeled, margin_violation_frac, common } => {
                    let labeled = match (labeled, all_labeled) {
                        (Some(l), _) => Some(l),
                        (None, true) => None,
                        (None, false) => anyhow::bail!("pass --labeled <count> or --all-labeled"),
                    };
                    let params = ClassificationParams { n, d_signal, d_noise, labeled, margin_violation_frac };
                    (GenSpec::Classification(params), common)
                }
            };
            cmd_gen_data(&spec, &common.out, common.seed)?;
            Ok(0)
        }
        Command::Envelope { function, lambda, from, to, samples, out } => {
            let f: FunctionSpec = parse_json(&function).context("parsing --function")?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    cmd_envelope(&f, lambda, from, to, samples, std::io::BufWriter::new(file))?;
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    cmd_envelope(&f, lambda, from, to, samples, &mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
