//! Iterative schemes for the lifted consensus problem and the ADMM/PALM baselines.
//!
//! All schemes share a linearized `u`-step `u⁺ = P_σ g(u - σ ∇)` and differ in the
//! `z`- and multiplier updates:
//!
//! | algorithm          | z-update                                  | multiplier                           |
//! |--------------------|-------------------------------------------|--------------------------------------|
//! | primal-dual        | `P_{1/ρ} f(Au⁺ + (1/ρ - λ) y)`            | `(y + ρ(Au⁺ - z⁺)) / (1 + ρλ)`       |
//! | proximal penalty   | `P_λ f(Au⁺)`                              | `(Au⁺ - z⁺) / λ` (diagnostic only)    |
//! | linearized ADMM    | `P_{1/ρ} e_λ f(Au⁺ + y/ρ)`                | `y + ρ(Au⁺ - z⁺)`                    |
//! | vanilla ADMM       | same, with an exact `u`-subproblem        | `y + ρ(Au⁺ - z⁺)`                    |
//! | PALM               | `P_τ f(z + (τ/λ)(Au⁺ - z))`               | `(Au⁺ - z⁺) / λ` (diagnostic only)    |

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::consensus::{operator_norm, ConsensusProblem, LinearOperator, Regularizer, SolverState};
use crate::diagnostics::{optimality_gap, DEFAULT_REL_TOL};
use crate::error::{Divergence, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Multiblock primal-dual scheme on the lifted problem.
    #[serde(alias = "alg1")]
    PrimalDual,
    /// Gauss-Seidel prox-gradient on the quadratic penalty.
    #[serde(alias = "alg2")]
    ProximalPenalty,
    LinearizedAdmm,
    VanillaAdmm,
    Palm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::PrimalDual,
        Algorithm::ProximalPenalty,
        Algorithm::LinearizedAdmm,
        Algorithm::VanillaAdmm,
        Algorithm::Palm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::PrimalDual => "primal_dual",
            Algorithm::ProximalPenalty => "proximal_penalty",
            Algorithm::LinearizedAdmm => "linearized_admm",
            Algorithm::VanillaAdmm => "vanilla_admm",
            Algorithm::Palm => "palm",
        }
    }

    /// Whether the scheme uses a penalty parameter ρ.
    pub fn uses_rho(&self) -> bool {
        matches!(
            self,
            Algorithm::PrimalDual | Algorithm::LinearizedAdmm | Algorithm::VanillaAdmm
        )
    }

    pub fn is_admm(&self) -> bool {
        matches!(self, Algorithm::LinearizedAdmm | Algorithm::VanillaAdmm)
    }

    /// The point `(v, y)` of the regularized problem paired with a state.
    ///
    /// ADMM runs directly on `e_λ f`, so its `z` already is `v`; the lifted
    /// schemes recover `v = z + λ y`.
    pub fn regularized_point(&self, lambda: f64, s: &SolverState) -> Vec<f64> {
        if self.is_admm() {
            s.z.clone()
        } else {
            s.z.iter().zip(&s.y).map(|(z, y)| z + lambda * y).collect()
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primal_dual" | "alg1" => Ok(Algorithm::PrimalDual),
            "proximal_penalty" | "alg2" => Ok(Algorithm::ProximalPenalty),
            "linearized_admm" => Ok(Algorithm::LinearizedAdmm),
            "vanilla_admm" => Ok(Algorithm::VanillaAdmm),
            "palm" => Ok(Algorithm::Palm),
            other => Err(Error::InvalidParameter(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Ratio `initial / target` of the default warmup.
pub const WARMUP_START: f64 = 1e-5;

/// `ρ_t = min(target, initial · growth^t)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RhoSchedule {
    pub initial: f64,
    pub growth: f64,
    pub target: f64,
}

impl RhoSchedule {
    pub fn fixed(rho: f64) -> Self {
        Self {
            initial: rho,
            growth: 1.0,
            target: rho,
        }
    }

    /// Warmup from `target · 1e-5` with growth `1.05`, reaching the target
    /// after about 240 iterations.
    ///
    /// A tiny start makes the first `z`-steps nearly unconstrained, so the
    /// iterates settle in the basin of the data instead of the trivial point
    /// `u = 0` where every coordinate sits on a flat piece.
    pub fn warmup(target: f64) -> Self {
        Self {
            initial: target * WARMUP_START,
            growth: 1.05,
            target,
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        if self.initial >= self.target || self.growth == 1.0 {
            return self.target.min(self.initial);
        }
        let exp = t.min(i32::MAX as usize) as i32;
        (self.initial * self.growth.powi(exp)).min(self.target)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.initial > 0.0
            && self.target > 0.0
            && self.growth >= 1.0
            && self.initial.is_finite()
            && self.target.is_finite()
            && self.growth.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid rho schedule {self:?}")))
        }
    }
}

/// Keeps growing ρ past its target while the optimality gap stagnates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Escalation {
    pub cap: f64,
    pub growth: f64,
    /// Iterations between gap checkpoints.
    pub window: usize,
    /// Relative gap change below which the gap counts as stagnant.
    pub rel_change: f64,
}

impl Default for Escalation {
    fn default() -> Self {
        Self {
            cap: 8000.0,
            growth: 1.05,
            window: 500,
            rel_change: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub rho: RhoSchedule,
    /// `c` in `σ = c / (ρ ‖A‖²)`, or `σ = c λ / ‖A‖²` for the penalty schemes.
    #[serde(default = "default_sigma_fraction")]
    pub sigma_fraction: f64,
    /// Fixed `σ` overriding the rule.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// PALM `z`-step `τ = palm_tau · λ`.
    #[serde(default = "default_palm_tau")]
    pub palm_tau: f64,
    #[serde(default = "default_stop_eps")]
    pub stop_eps: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: u64,
    /// Relative accuracy of the `‖A‖` estimate.
    #[serde(default = "default_norm_tol")]
    pub norm_tol: f64,
    /// Used by the ADMM baselines only.
    #[serde(default)]
    pub escalation: Option<Escalation>,
}

fn default_sigma_fraction() -> f64 {
    0.9
}
fn default_palm_tau() -> f64 {
    0.5
}
fn default_stop_eps() -> f64 {
    1e-7
}
fn default_max_iters() -> usize {
    60_000
}
fn default_norm_tol() -> f64 {
    1e-6
}

impl SolverConfig {
    /// Defaults for `algorithm`: warmup of ρ to `1.05/λ`, `c = 0.9`, and ρ
    /// escalation up to 8000 for the ADMM baselines.
    pub fn defaults_for(algorithm: Algorithm, lambda: f64) -> Self {
        Self {
            rho: RhoSchedule::warmup(1.05 / lambda),
            sigma_fraction: default_sigma_fraction(),
            sigma: None,
            palm_tau: default_palm_tau(),
            stop_eps: default_stop_eps(),
            max_iters: default_max_iters(),
            seed: 0,
            norm_tol: default_norm_tol(),
            escalation: algorithm.is_admm().then(Escalation::default),
        }
    }
}

/// Step sizes for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub rho: f64,
    pub sigma: f64,
    pub tau: f64,
}

/// Checks the step-size rules of `algorithm` for the given `‖A‖` estimate.
pub fn check_step_rules(p: &ConsensusProblem, algorithm: Algorithm, norm: f64, steps: Steps) -> Result<()> {
    let lam = p.lambda();
    let n2 = norm * norm;
    let Steps { rho, sigma, tau } = steps;
    if algorithm.uses_rho() && !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    if algorithm != Algorithm::VanillaAdmm && !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    match algorithm {
        Algorithm::PrimalDual => {
            // ρλ = 1 is admitted; it reproduces the proximal penalty dynamics.
            if rho * lam < 1.0 - 1e-12 {
                return Err(Error::StepSizeRule {
                    rule: "ρλ ≥ 1",
                    detail: format!("ρλ = {}", rho * lam),
                });
            }
            if sigma * rho * n2 >= 1.0 {
                return Err(Error::StepSizeRule {
                    rule: "σρ‖A‖² < 1",
                    detail: format!("σρ‖A‖² = {}", sigma * rho * n2),
                });
            }
        }
        Algorithm::LinearizedAdmm => {
            if sigma * rho * n2 >= 1.0 {
                return Err(Error::StepSizeRule {
                    rule: "σρ‖A‖² < 1",
                    detail: format!("σρ‖A‖² = {}", sigma * rho * n2),
                });
            }
        }
        Algorithm::VanillaAdmm => {}
        Algorithm::ProximalPenalty | Algorithm::Palm => {
            if sigma * n2 >= lam {
                return Err(Error::StepSizeRule {
                    rule: "σ‖A‖² < λ",
                    detail: format!("σ‖A‖² = {}, λ = {lam}", sigma * n2),
                });
            }
            if algorithm == Algorithm::Palm && !(tau > 0.0 && tau < lam) {
                return Err(Error::StepSizeRule {
                    rule: "0 < τ < λ",
                    detail: format!("τ = {tau}, λ = {lam}"),
                });
            }
        }
    }
    Ok(())
}

/// Buffers reused across iterations. `au` always holds `A u` for the current `u`.
#[derive(Debug, Clone)]
struct Workspace {
    au: Vec<f64>,
    tmp_m: Vec<f64>,
    grad: Vec<f64>,
}

impl Workspace {
    fn new(p: &ConsensusProblem, s: &SolverState) -> Self {
        Self {
            au: p.matrix().mul_vec(&s.u),
            tmp_m: vec![0.0; p.m()],
            grad: vec![0.0; p.n()],
        }
    }
}

/// `u ← P_σ g(u - γ Aᵀ tmp_m)` and refresh `au`.
fn linearized_u_step(p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, gamma: f64, sigma: f64) {
    p.matrix().apply_transpose(&ws.tmp_m, &mut ws.grad);
    for (u, g) in s.u.iter_mut().zip(&ws.grad) {
        *u -= gamma * g;
    }
    p.regularizer().prox_in_place(&mut s.u, sigma);
    p.matrix().apply(&s.u, &mut ws.au);
}

fn primal_dual_in_place(p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, rho: f64, sigma: f64) {
    let lam = p.lambda();
    // at ρλ = 1 the multiplier drops out of both primal updates; dropping it
    // exactly keeps rounding residue from breaking ties in set-valued proxes
    let unit = (rho * lam - 1.0).abs() <= 4.0 * f64::EPSILON;
    if unit {
        for j in 0..p.m() {
            ws.tmp_m[j] = ws.au[j] - s.z[j];
        }
        linearized_u_step(p, s, ws, sigma * rho, sigma);
        p.loss().prox_into(&ws.au, lam, &mut s.z);
    } else {
        for j in 0..p.m() {
            ws.tmp_m[j] = s.y[j] + rho * (ws.au[j] - s.z[j] - lam * s.y[j]);
        }
        linearized_u_step(p, s, ws, sigma, sigma);
        let c = 1.0 / rho - lam;
        for j in 0..p.m() {
            ws.tmp_m[j] = ws.au[j] + c * s.y[j];
        }
        p.loss().prox_into(&ws.tmp_m, 1.0 / rho, &mut s.z);
    }
    for j in 0..p.m() {
        s.y[j] = (s.y[j] + rho * (ws.au[j] - s.z[j])) / (1.0 + rho * lam);
    }
    s.t += 1;
}

fn proximal_penalty_in_place(p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, sigma: f64) {
    let lam = p.lambda();
    for j in 0..p.m() {
        ws.tmp_m[j] = ws.au[j] - s.z[j];
    }
    linearized_u_step(p, s, ws, sigma / lam, sigma);
    p.loss().prox_into(&ws.au, lam, &mut s.z);
    for j in 0..p.m() {
        s.y[j] = (ws.au[j] - s.z[j]) / lam;
    }
    s.t += 1;
}

fn palm_in_place(p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, sigma: f64, tau: f64) {
    let lam = p.lambda();
    for j in 0..p.m() {
        ws.tmp_m[j] = ws.au[j] - s.z[j];
    }
    linearized_u_step(p, s, ws, sigma / lam, sigma);
    for j in 0..p.m() {
        ws.tmp_m[j] = s.z[j] + (tau / lam) * (ws.au[j] - s.z[j]);
    }
    p.loss().prox_into(&ws.tmp_m, tau, &mut s.z);
    for j in 0..p.m() {
        s.y[j] = (ws.au[j] - s.z[j]) / lam;
    }
    s.t += 1;
}

/// ADMM `z`- and `y`-updates on `e_λ f`, given a fresh `au`.
fn admm_zy(p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, rho: f64) {
    for j in 0..p.m() {
        ws.tmp_m[j] = ws.au[j] + s.y[j] / rho;
    }
    p.loss().envelope_prox_into(&ws.tmp_m, p.lambda(), 1.0 / rho, &mut s.z);
    for j in 0..p.m() {
        s.y[j] += rho * (ws.au[j] - s.z[j]);
    }
    s.t += 1;
}

fn linearized_admm_in_place(p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, rho: f64, sigma: f64) {
    for j in 0..p.m() {
        ws.tmp_m[j] = s.y[j] + rho * (ws.au[j] - s.z[j]);
    }
    linearized_u_step(p, s, ws, sigma, sigma);
    admm_zy(p, s, ws, rho);
}

/// Exact solver for `argmin_u g(u) + (ρ/2)‖Au - z + y/ρ‖²`.
#[derive(Debug, Clone)]
pub enum ExactUStep {
    /// `g = 0`: normal equations `AᵀA u = Aᵀ(z - y/ρ)` through a Cholesky factor.
    NormalEquations(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// `AᵀA` diagonal: coordinatewise closed form (also covers `α‖u‖₀ + β‖u‖²`).
    Diagonal(Vec<f64>),
}

impl ExactUStep {
    /// Capability check and factorization.
    pub fn new(p: &ConsensusProblem) -> Result<Self> {
        let n = p.n();
        let gram = p.matrix().gram();
        let diag: Vec<f64> = (0..n).map(|i| gram[i * n + i]).collect();
        let scale = diag.iter().copied().fold(0.0, f64::max);
        let is_diag = (0..n).all(|a| (0..n).all(|b| a == b || gram[a * n + b].abs() <= 1e-14 * scale));
        match p.regularizer() {
            Regularizer::Zero => {
                let g = DMatrix::from_row_slice(n, n, &gram);
                g.cholesky().map(ExactUStep::NormalEquations).ok_or_else(|| {
                    Error::Unsupported("vanilla ADMM needs AᵀA positive definite when g = 0".into())
                })
            }
            Regularizer::L0PlusL2 { beta, .. } if is_diag => {
                if diag.iter().any(|&d| d <= 0.0) && *beta == 0.0 {
                    return Err(Error::Unsupported(
                        "vanilla ADMM u-subproblem unbounded for a zero column with β = 0".into(),
                    ));
                }
                Ok(ExactUStep::Diagonal(diag))
            }
            Regularizer::L0PlusL2 { .. } => Err(Error::Unsupported(
                "vanilla ADMM with α‖u‖₀ + β‖u‖² requires AᵀA diagonal".into(),
            )),
        }
    }

    fn solve(&self, p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, rho: f64) {
        for j in 0..p.m() {
            ws.tmp_m[j] = s.z[j] - s.y[j] / rho;
        }
        p.matrix().apply_transpose(&ws.tmp_m, &mut ws.grad);
        match self {
            ExactUStep::NormalEquations(chol) => {
                let x = chol.solve(&DVector::from_column_slice(&ws.grad));
                s.u.copy_from_slice(x.as_slice());
            }
            ExactUStep::Diagonal(d) => {
                for ((u, &c), &dj) in s.u.iter_mut().zip(&ws.grad).zip(d) {
                    *u = match *p.regularizer() {
                        Regularizer::Zero => c / dj,
                        Regularizer::L0PlusL2 { alpha, beta } => {
                            // minimize α[u≠0] + β u² + (ρ/2)(d u² - 2 c u)
                            let curv = 2.0 * beta + rho * dj;
                            let nz = rho * c / curv;
                            if alpha - 0.5 * rho * c * nz < 0.0 {
                                nz
                            } else {
                                0.0
                            }
                        }
                    };
                }
            }
        }
        p.matrix().apply(&s.u, &mut ws.au);
    }
}

fn vanilla_admm_in_place(p: &ConsensusProblem, s: &mut SolverState, ws: &mut Workspace, exact: &ExactUStep, rho: f64) {
    exact.solve(p, s, ws, rho);
    admm_zy(p, s, ws, rho);
}

fn check_state(p: &ConsensusProblem, s: &SolverState) -> Result<()> {
    p.check_u(&s.u)?;
    p.check_m("z", &s.z)?;
    p.check_m("y", &s.y)
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
    }
}

/// One iteration of the multiblock primal-dual scheme.
pub fn step_primal_dual(p: &ConsensusProblem, s: &SolverState, rho: f64, sigma: f64) -> Result<SolverState> {
    check_state(p, s)?;
    check_positive("rho", rho)?;
    check_positive("sigma", sigma)?;
    let mut next = s.clone();
    let mut ws = Workspace::new(p, s);
    primal_dual_in_place(p, &mut next, &mut ws, rho, sigma);
    Ok(next)
}

/// One iteration of the proximal penalty method; `y` is set to `(Au⁺ - z⁺)/λ`.
pub fn step_proximal_penalty(p: &ConsensusProblem, s: &SolverState, sigma: f64) -> Result<SolverState> {
    check_state(p, s)?;
    check_positive("sigma", sigma)?;
    let mut next = s.clone();
    let mut ws = Workspace::new(p, s);
    proximal_penalty_in_place(p, &mut next, &mut ws, sigma);
    Ok(next)
}

pub fn step_linearized_admm(p: &ConsensusProblem, s: &SolverState, rho: f64, sigma: f64) -> Result<SolverState> {
    check_state(p, s)?;
    check_positive("rho", rho)?;
    check_positive("sigma", sigma)?;
    let mut next = s.clone();
    let mut ws = Workspace::new(p, s);
    linearized_admm_in_place(p, &mut next, &mut ws, rho, sigma);
    Ok(next)
}

/// One vanilla ADMM iteration. Factorizes `AᵀA` on every call; [`run`] caches it.
pub fn step_vanilla_admm(p: &ConsensusProblem, s: &SolverState, rho: f64) -> Result<SolverState> {
    check_state(p, s)?;
    check_positive("rho", rho)?;
    let exact = ExactUStep::new(p)?;
    let mut next = s.clone();
    let mut ws = Workspace::new(p, s);
    vanilla_admm_in_place(p, &mut next, &mut ws, &exact, rho);
    Ok(next)
}

pub fn step_palm(p: &ConsensusProblem, s: &SolverState, sigma: f64, tau: f64) -> Result<SolverState> {
    check_state(p, s)?;
    check_positive("sigma", sigma)?;
    check_positive("tau", tau)?;
    let mut next = s.clone();
    let mut ws = Workspace::new(p, s);
    palm_in_place(p, &mut next, &mut ws, sigma, tau);
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// `e_λ f(Au) + g(u)`
    pub objective: f64,
    /// `𝔔_ρ(u, z, y)` at the current ρ
    pub lyapunov: f64,
    /// `Q(u, z)`
    pub penalty: f64,
    /// `‖Au - v‖` with `v` the regularized point of the state
    pub feas: f64,
    pub du: f64,
    pub dz: f64,
    pub dy: f64,
    pub rho: f64,
}

/// Per-iteration records. Record 0 describes the initial state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub const CSV_HEADER: &'static str = "t,objective,lyapunov,penalty,feas,du,dz,dy,rho";

    pub fn push(&mut self, r: TraceRecord) {
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with a header line, `.` decimals and LF line endings.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.t, r.objective, r.lyapunov, r.penalty, r.feas, r.du, r.dz, r.dy, r.rho
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SolverState,
    pub trace: Trace,
    pub stop: StopReason,
    /// ρ used in the last iteration (0 for schemes without ρ).
    pub rho: f64,
    /// σ used in the last iteration.
    pub sigma: f64,
    /// The `‖A‖` estimate behind the step-size rules.
    pub norm: f64,
}

struct Runner<'a> {
    p: &'a ConsensusProblem,
    algorithm: Algorithm,
    cfg: &'a SolverConfig,
    norm: f64,
    exact: Option<ExactUStep>,
}

impl Runner<'_> {
    fn steps(&self, rho: f64) -> Steps {
        let n2 = self.norm * self.norm;
        let lam = self.p.lambda();
        let sigma = self.cfg.sigma.unwrap_or_else(|| {
            if n2 == 0.0 {
                1.0
            } else if self.algorithm.uses_rho() {
                self.cfg.sigma_fraction / (rho * n2)
            } else {
                self.cfg.sigma_fraction * lam / n2
            }
        });
        Steps {
            rho,
            sigma,
            tau: self.cfg.palm_tau * lam,
        }
    }

    fn iterate(&self, s: &mut SolverState, ws: &mut Workspace, steps: Steps) {
        let p = self.p;
        match self.algorithm {
            Algorithm::PrimalDual => primal_dual_in_place(p, s, ws, steps.rho, steps.sigma),
            Algorithm::ProximalPenalty => proximal_penalty_in_place(p, s, ws, steps.sigma),
            Algorithm::LinearizedAdmm => linearized_admm_in_place(p, s, ws, steps.rho, steps.sigma),
            Algorithm::VanillaAdmm => {
                let exact = self.exact.as_ref().expect("factorized before the loop");
                vanilla_admm_in_place(p, s, ws, exact, steps.rho)
            }
            Algorithm::Palm => palm_in_place(p, s, ws, steps.sigma, steps.tau),
        }
    }

    fn record(&self, s: &SolverState, au: &[f64], rho: f64, deltas: [f64; 3]) -> TraceRecord {
        let p = self.p;
        let v = self.algorithm.regularized_point(p.lambda(), s);
        let feas = au
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // ρ-free schemes report 𝔔 at ρ = 1/λ, where it matches their penalty dynamics
        let rho_q = if self.algorithm.uses_rho() { rho } else { 1.0 / p.lambda() };
        TraceRecord {
            t: s.t,
            objective: p.objective_with_au(&s.u, au),
            lyapunov: p.lyapunov_with_au(&s.u, &s.z, &s.y, rho_q, au),
            penalty: p.penalty_with_au(&s.u, &s.z, au),
            feas,
            du: deltas[0],
            dz: deltas[1],
            dy: deltas[2],
            rho: if self.algorithm.uses_rho() { rho } else { 0.0 },
        }
    }

    fn gap_total(&self, s: &SolverState) -> Result<f64> {
        let v = self.algorithm.regularized_point(self.p.lambda(), s);
        Ok(optimality_gap(self.p, &s.u, &v, &s.y, DEFAULT_REL_TOL)?.total)
    }
}

fn delta(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut sq = 0.0;
    let mut inf: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sq += d * d;
        inf = inf.max(d.abs());
    }
    (sq.sqrt(), inf)
}

/// Runs `algorithm` from `init` until the iterate change falls below
/// `cfg.stop_eps` in the ∞-norm, or `cfg.max_iters` iterations.
///
/// The stopping test is inactive while ρ still changes (warmup or
/// escalation). Non-finite iterates abort with [`Error::Diverged`].
pub fn run(p: &ConsensusProblem, algorithm: Algorithm, cfg: &SolverConfig, init: SolverState) -> Result<RunOutcome> {
    check_state(p, &init)?;
    if !init.is_finite() {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    cfg.rho.validate()?;
    if cfg.stop_eps.is_nan() || cfg.stop_eps < 0.0 {
        return Err(Error::InvalidParameter("stop_eps must be nonnegative".into()));
    }
    let est = operator_norm(p.matrix(), cfg.norm_tol, cfg.seed)?;
    let exact = if algorithm == Algorithm::VanillaAdmm {
        Some(ExactUStep::new(p)?)
    } else {
        None
    };
    let runner = Runner {
        p,
        algorithm,
        cfg,
        norm: est.value,
        exact,
    };
    let escalation = if algorithm.is_admm() { cfg.escalation } else { None };
    if let Some(e) = escalation {
        if !(e.cap >= cfg.rho.target && e.growth >= 1.0 && e.window > 0) {
            return Err(Error::InvalidParameter(format!("invalid escalation {e:?}")));
        }
    }
    // rules are required at the target; warmup iterations run below it
    check_step_rules(p, algorithm, runner.norm, runner.steps(cfg.rho.target))?;
    if let Some(e) = escalation {
        check_step_rules(p, algorithm, runner.norm, runner.steps(e.cap))?;
    }

    let mut s = init;
    s.t = 0;
    let mut ws = Workspace::new(p, &s);
    let mut trace = Trace::default();
    let rho0 = if algorithm.uses_rho() { cfg.rho.at(0) } else { 0.0 };
    trace.push(runner.record(&s, &ws.au, rho0, [0.0; 3]));

    let mut escalated_rho: Option<f64> = None;
    let mut last_gap: Option<f64> = None;
    let mut stop = StopReason::MaxIters;
    let mut steps = runner.steps(rho0);
    let mut old = s.clone();

    for k in 0..cfg.max_iters {
        let rho = if algorithm.uses_rho() {
            match escalated_rho {
                Some(r) => r,
                None => cfg.rho.at(k),
            }
        } else {
            0.0
        };
        steps = runner.steps(rho);
        old.clone_from(&s);
        runner.iterate(&mut s, &mut ws, steps);

        let (du, du_inf) = delta(&s.u, &old.u);
        let (dz, dz_inf) = delta(&s.z, &old.z);
        let (dy, dy_inf) = delta(&s.y, &old.y);
        trace.push(runner.record(&s, &ws.au, rho, [du, dz, dy]));

        if !s.is_finite() {
            return Err(Error::Diverged(Box::new(Divergence { t: s.t, trace })));
        }

        if let Some(e) = escalation {
            match escalated_rho {
                Some(r) => escalated_rho = Some((r * e.growth).min(e.cap)),
                None if rho >= cfg.rho.target && (k + 1) % e.window == 0 && du_inf.max(dz_inf).max(dy_inf) >= cfg.stop_eps => {
                    let gap = runner.gap_total(&s)?;
                    if let Some(prev) = last_gap {
                        let change = (gap - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
                        if change < e.rel_change {
                            log::debug!("{algorithm}: gap stagnant at t = {}, escalating rho", s.t);
                            escalated_rho = Some((rho * e.growth).min(e.cap));
                        }
                    }
                    last_gap = Some(gap);
                }
                None => {}
            }
        }

        // the stopping test only applies once ρ has settled
        let next_rho = if algorithm.uses_rho() {
            escalated_rho.unwrap_or_else(|| cfg.rho.at(k + 1))
        } else {
            0.0
        };
        if next_rho == rho && du_inf.max(dz_inf).max(dy_inf) < cfg.stop_eps {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok(RunOutcome {
        state: s,
        trace,
        stop,
        rho: steps.rho,
        sigma: steps.sigma,
        norm: runner.norm,
    })
}
