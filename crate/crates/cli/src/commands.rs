use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use moreau_core::experiments::{self, SPARSITY_TOL};
use moreau_core::{gap_report, run, Algorithm, GapReport, SolverState, StopReason};
use serde::{Deserialize, Serialize};

use crate::config::{read_json, CompareConfig, FunctionSpec, InitSpec, Instance, RunConfig, SolverOverrides};
use crate::data::{self, ClassificationParams, RegressionParams};

pub const TRACE: &str = "trace.csv";
pub const SUMMARY: &str = "summary.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";

/// Process exit status: 0 converged, 2 iteration budget exhausted, 1 error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Self::Converged => 0,
            Self::MaxIters => 2,
        }
    }

    fn of(stop: StopReason) -> Self {
        match stop {
            StopReason::Converged => Self::Converged,
            StopReason::MaxIters => Self::MaxIters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub stop: StopReason,
    pub iterations: usize,
    pub wall_time_secs: f64,
    /// `e_λf(Au) + g(u)` at the final iterate.
    pub objective: f64,
    pub rho: f64,
    pub sigma: f64,
    pub norm: f64,
    pub gap: GapReport,
    /// `‖u‖₀ / n`
    pub sparsity: f64,
    /// Holdout error, classification problems only.
    pub test_error: Option<f64>,
    pub state: SolverState,
}

/// Config file location, used to resolve relative paths inside it.
fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn out_dir(cli: Option<PathBuf>, config: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    let dir = cli.or(config).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn sparsity(u: &[f64]) -> f64 {
    u.iter().filter(|x| x.abs() > SPARSITY_TOL).count() as f64 / u.len() as f64
}

fn solve(
    inst: &Instance,
    algorithm: Algorithm,
    solver: &SolverOverrides,
    init: &InitSpec,
    seed: u64,
    tol: f64,
) -> anyhow::Result<(RunSummary, moreau_core::Trace)> {
    let p = &inst.problem;
    let cfg = solver.resolve(algorithm, p.lambda(), seed);
    let start = init.build(p)?;
    let clock = Instant::now();
    let out = run(p, algorithm, &cfg, start).with_context(|| format!("{algorithm} failed"))?;
    let wall = clock.elapsed().as_secs_f64();
    let s = &out.state;
    let v = algorithm.regularized_point(p.lambda(), s);
    let gap = gap_report(p, &s.u, &s.z, &s.y, &v, tol)?;
    let test_error = match &inst.classification {
        Some((train, holdout)) => Some(experiments::metrics(p, train, &s.u, holdout)?.test_error),
        None => None,
    };
    log::info!("{algorithm}: {:?} after {} iterations, gap {:.3e}", out.stop, s.t, gap.total);
    let summary = RunSummary {
        algorithm,
        stop: out.stop,
        iterations: s.t,
        wall_time_secs: wall,
        objective: p.regularized_objective(&s.u)?,
        rho: out.rho,
        sigma: out.sigma,
        norm: out.norm,
        gap,
        sparsity: sparsity(&s.u),
        test_error,
        state: out.state,
    };
    Ok((summary, out.trace))
}

fn write_trace(path: &Path, trace: &moreau_core::Trace) -> anyhow::Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    trace.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs one solver; writes `trace.csv` and `summary.json` into the output directory.
pub fn cmd_run(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<Status> {
    let cfg: RunConfig = read_json(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let inst = cfg.problem.build(&base_dir(config_path), seed)?;
    let dir = out_dir(out, cfg.out)?;
    let (summary, trace) = solve(&inst, cfg.algorithm, &cfg.solver, &cfg.init, seed, cfg.diagnostics_tol)?;
    write_trace(&dir.join(TRACE), &trace)?;
    write_json(&dir.join(SUMMARY), &summary)?;
    Ok(Status::of(summary.stop))
}

#[derive(Debug, Clone)]
pub enum GenSpec {
    Regression(RegressionParams),
    Classification(ClassificationParams),
}

/// Writes `A.bin` (plus `holdout.bin` for classification) and `manifest.json`.
pub fn cmd_gen_data(spec: &GenSpec, out: &Path, seed: u64) -> anyhow::Result<()> {
    match spec {
        GenSpec::Regression(p) => data::save_regression(out, p, seed)?,
        GenSpec::Classification(p) => data::save_classification(out, p, seed)?,
    };
    Ok(())
}

/// Samples `(v, f(v), e_λf(v))` on a uniform grid over `[lo, hi]` as CSV.
pub fn cmd_envelope<W: Write>(f: &FunctionSpec, lambda: f64, lo: f64, hi: f64, samples: usize, mut w: W) -> anyhow::Result<()> {
    let f = f.build()?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        bail!("invalid range [{lo}, {hi}]");
    }
    if samples < 2 && lo != hi {
        bail!("need at least two samples for a nondegenerate range");
    }
    writeln!(w, "v,f,envelope")?;
    // centred parametrization keeps grids over symmetric ranges exactly symmetric
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    for k in 0..samples {
        let v = if samples == 1 {
            lo
        } else {
            let r = (2 * k) as f64 - (samples - 1) as f64;
            mid + half * r / (samples - 1) as f64
        };
        writeln!(w, "{},{},{}", v, f.eval(v), f.envelope(v, lambda)?)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub test_error: Option<f64>,
    pub objective: f64,
    pub sparsity: f64,
    pub iterations: usize,
    pub gap: f64,
    pub stop: StopReason,
}

impl ComparisonRow {
    pub const CSV_HEADER: &'static str = "algorithm,test_error,objective,sparsity,iterations,gap,stop";
}

/// Runs every listed algorithm concurrently on the same problem.
///
/// Writes `comparison.csv`, `comparison.json` and one `trace_<algorithm>.csv` per run.
pub fn cmd_compare(config_path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<Status> {
    let cfg: CompareConfig = read_json(config_path)?;
    if cfg.algorithms.is_empty() {
        bail!("`algorithms` must name at least one algorithm");
    }
    for (i, a) in cfg.algorithms.iter().enumerate() {
        if cfg.algorithms[..i].contains(a) {
            bail!("algorithm {a} listed twice");
        }
    }
    let seed = seed.unwrap_or(cfg.seed);
    let inst = cfg.problem.build(&base_dir(config_path), seed)?;
    let dir = out_dir(out, cfg.out.clone())?;
    let results: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg
            .algorithms
            .iter()
            .map(|&alg| {
                let (inst, cfg) = (&inst, &cfg);
                scope.spawn(move || solve(inst, alg, &cfg.solver, &cfg.init, seed, cfg.diagnostics_tol))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        let (summary, trace) = r?;
        write_trace(&dir.join(format!("trace_{}.csv", summary.algorithm)), &trace)?;
        rows.push(ComparisonRow {
            algorithm: summary.algorithm,
            test_error: summary.test_error,
            objective: summary.objective,
            sparsity: summary.sparsity,
            iterations: summary.iterations,
            gap: summary.gap.total,
            stop: summary.stop,
        });
    }
    let mut csv = String::from(ComparisonRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        let te = r.test_error.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:?}\n",
            r.algorithm, te, r.objective, r.sparsity, r.iterations, r.gap, r.stop
        ));
    }
    fs::write(dir.join(COMPARISON_CSV), csv)?;
    write_json(&dir.join(COMPARISON_JSON), &rows)?;
    let all_converged = rows.iter().all(|r| r.stop == StopReason::Converged);
    Ok(if all_converged { Status::Converged } else { Status::MaxIters })
}
