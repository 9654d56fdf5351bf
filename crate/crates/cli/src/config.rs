//! JSON configuration for `run` and `compare`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use moreau_core::experiments::{self, ClassificationDataset};
use moreau_core::{
    Algorithm, ConsensusProblem, ConvexPiece, DenseMatrix, Escalation, LinearOperator, PiecewiseConvexFunction,
    Regularizer, RhoSchedule, SeparableLoss, SolverConfig, SolverState,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{self, ClassificationParams, RegressionParams};

/// Parses JSON, reporting the offending field path and position on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> anyhow::Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        anyhow::anyhow!("at `{path}` (line {}, column {}): {inner}", inner.line(), inner.column())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_json(&text).with_context(|| format!("parsing {}", path.display()))
}

/// A scalar loss, either a named stack or an explicit list of pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stack", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionSpec {
    /// `min(δ₀(z - shift), ν)`
    L0 {
        nu: f64,
        #[serde(default)]
        shift: f64,
    },
    Hinge { theta: f64 },
    SymmetricHinge,
    Zero,
    Custom {
        pieces: Vec<ConvexPiece>,
        #[serde(default)]
        shift: f64,
    },
}

impl FunctionSpec {
    pub fn build(&self) -> moreau_core::Result<PiecewiseConvexFunction> {
        Ok(match self {
            Self::L0 { nu, shift } => PiecewiseConvexFunction::l0(*nu)?.shifted(*shift),
            Self::Hinge { theta } => PiecewiseConvexFunction::hinge(*theta)?,
            Self::SymmetricHinge => PiecewiseConvexFunction::symmetric_hinge(),
            Self::Zero => PiecewiseConvexFunction::zero(),
            Self::Custom { pieces, shift } => PiecewiseConvexFunction::with_shift(pieces.clone(), *shift)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    /// Raw little-endian `f64`, row-major.
    File { path: PathBuf, rows: usize, cols: usize },
}

impl MatrixSpec {
    pub fn load(&self, base: &Path) -> anyhow::Result<DenseMatrix> {
        match self {
            Self::Rows(rows) => Ok(DenseMatrix::from_rows(rows)?),
            Self::File { path, rows, cols } => data::read_matrix(&base.join(path), *rows, *cols),
        }
    }
}

fn default_regression_lambda() -> f64 {
    0.05
}
fn default_nu() -> f64 {
    0.01
}
fn default_alpha() -> f64 {
    0.025
}
fn default_beta() -> f64 {
    0.416
}
fn default_ssl_lambda() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Inline {
        matrix: MatrixSpec,
        /// One function per row, or a single function applied to every row.
        loss: Vec<FunctionSpec>,
        #[serde(default = "zero_regularizer")]
        regularizer: Regularizer,
        lambda: f64,
    },
    /// Robust regression with the truncated quadratic loss.
    Regression {
        data: RegressionParams,
        #[serde(default = "default_regression_lambda")]
        lambda: f64,
        #[serde(default = "default_nu")]
        nu: f64,
    },
    /// Sparse semi-supervised classification.
    Ssl {
        data: ClassificationParams,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_ssl_lambda")]
        lambda: f64,
    },
    /// A directory written by `gen-data`.
    Dataset {
        manifest: PathBuf,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        nu: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default)]
        beta: Option<f64>,
    },
}

fn zero_regularizer() -> Regularizer {
    Regularizer::Zero
}

/// A problem ready to solve, plus the holdout set for classification.
pub struct Instance {
    pub problem: ConsensusProblem,
    pub classification: Option<(ClassificationDataset, ClassificationDataset)>,
}

impl ProblemSpec {
    /// `base` resolves relative paths; `seed` drives the generators.
    pub fn build(&self, base: &Path, seed: u64) -> anyhow::Result<Instance> {
        match self {
            Self::Inline { matrix, loss, regularizer, lambda } => {
                let a = matrix.load(base)?;
                let fs = loss.iter().map(FunctionSpec::build).collect::<moreau_core::Result<Vec<_>>>()?;
                let loss = match fs.len() {
                    1 => SeparableLoss::repeated(fs[0].clone(), a.rows()),
                    _ => SeparableLoss::new(fs)?,
                };
                let problem = ConsensusProblem::new(a, loss, *regularizer, *lambda)?;
                Ok(Instance { problem, classification: None })
            }
            Self::Regression { data, lambda, nu } => {
                let d = data.generate(seed)?;
                let problem = experiments::build_regression_problem(&d, *lambda, *nu)?;
                Ok(Instance { problem, classification: None })
            }
            Self::Ssl { data, alpha, beta, lambda } => {
                let (train, holdout) = data.generate(seed)?;
                let problem = experiments::build_ssl_problem(&train, *alpha, *beta, *lambda)?;
                Ok(Instance { problem, classification: Some((train, holdout)) })
            }
            Self::Dataset { manifest, lambda, nu, alpha, beta } => {
                let path = base.join(manifest);
                match data::load(&path)? {
                    data::Loaded::Regression(d) => {
                        if alpha.is_some() || beta.is_some() {
                            bail!("alpha/beta apply to classification datasets only");
                        }
                        let problem = experiments::build_regression_problem(
                            &d,
                            lambda.unwrap_or_else(default_regression_lambda),
                            nu.unwrap_or_else(default_nu),
                        )?;
                        Ok(Instance { problem, classification: None })
                    }
                    data::Loaded::Classification(train, holdout) => {
                        if nu.is_some() {
                            bail!("nu applies to regression datasets only");
                        }
                        let problem = experiments::build_ssl_problem(
                            &train,
                            alpha.unwrap_or_else(default_alpha),
                            beta.unwrap_or_else(default_beta),
                            lambda.unwrap_or_else(default_ssl_lambda),
                        )?;
                        Ok(Instance { problem, classification: Some((train, holdout)) })
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Fixed(f64),
    Schedule(RhoSchedule),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EscalationSpec {
    /// `true` for the default policy, `false` to disable.
    Enabled(bool),
    Custom(Escalation),
}

/// Overrides applied on top of [`SolverConfig::defaults_for`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    #[serde(default)]
    pub rho: Option<RhoSpec>,
    #[serde(default)]
    pub sigma_fraction: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub palm_tau: Option<f64>,
    #[serde(default)]
    pub stop_eps: Option<f64>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub norm_tol: Option<f64>,
    #[serde(default)]
    pub escalation: Option<EscalationSpec>,
}

impl SolverOverrides {
    pub fn resolve(&self, algorithm: Algorithm, lambda: f64, seed: u64) -> SolverConfig {
        let mut cfg = SolverConfig::defaults_for(algorithm, lambda);
        cfg.seed = seed;
        match self.rho {
            Some(RhoSpec::Fixed(rho)) => cfg.rho = RhoSchedule::fixed(rho),
            Some(RhoSpec::Schedule(s)) => cfg.rho = s,
            None => {}
        }
        if let Some(x) = self.sigma_fraction {
            cfg.sigma_fraction = x;
        }
        if self.sigma.is_some() {
            cfg.sigma = self.sigma;
        }
        if let Some(x) = self.palm_tau {
            cfg.palm_tau = x;
        }
        if let Some(x) = self.stop_eps {
            cfg.stop_eps = x;
        }
        if let Some(x) = self.max_iters {
            cfg.max_iters = x;
        }
        if let Some(x) = self.norm_tol {
            cfg.norm_tol = x;
        }
        match self.escalation {
            Some(EscalationSpec::Enabled(true)) => cfg.escalation = Some(Escalation::default()),
            Some(EscalationSpec::Enabled(false)) => cfg.escalation = None,
            Some(EscalationSpec::Custom(e)) => cfg.escalation = Some(e),
            None => {}
        }
        cfg
    }
}

/// Initial iterate; missing blocks are zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub u: Option<Vec<f64>>,
    #[serde(default)]
    pub z: Option<Vec<f64>>,
    #[serde(default)]
    pub y: Option<Vec<f64>>,
}

impl InitSpec {
    pub fn build(&self, p: &ConsensusProblem) -> moreau_core::Result<SolverState> {
        let zeros = SolverState::zeros(p);
        SolverState::new(
            p,
            self.u.clone().unwrap_or(zeros.u),
            self.z.clone().unwrap_or(zeros.z),
            self.y.clone().unwrap_or(zeros.y),
        )
    }
}

fn default_diagnostics_tol() -> f64 {
    moreau_core::diagnostics::DEFAULT_REL_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub init: InitSpec,
    /// Seeds data generation and the norm estimate.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Relative active-set tolerance of the diagnostics.
    #[serde(default = "default_diagnostics_tol")]
    pub diagnostics_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub problem: ProblemSpec,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_diagnostics_tol")]
    pub diagnostics_tol: f64,
}
