//! Problem model `min e_λ f(v) + g(u)  s.t.  Au = v` and its lifted merit values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::prox::SeparableLoss;

/// Matrix-vector access used by the solvers.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = A x`
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = Aᵀ y`
    fn apply_transpose(&self, y: &[f64], out: &mut [f64]);
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len("matrix data", rows * cols, data.len())?;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("matrix must be nonempty".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_len("matrix row", n, r.len())?;
        }
        Self::from_row_major(rows.len(), n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self {
            rows: n,
            cols: n,
            data,
        }
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::identity(d.len());
        for (i, &x) in d.iter().enumerate() {
            m.data[i * d.len() + i] = x;
        }
        m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Row-major little-endian `f64` bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        let expected = rows.checked_mul(cols).and_then(|k| k.checked_mul(8)).ok_or_else(|| {
            Error::InvalidParameter(format!("matrix shape {rows}×{cols} overflows"))
        })?;
        check_len("matrix bytes", expected, bytes.len())?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_row_major(rows, cols, data)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    /// `AᵀA` as a dense symmetric row-major `n × n` matrix.
    pub fn gram(&self) -> Vec<f64> {
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..n {
                let ra = r[a];
                for b in 0..n {
                    g[a * n + b] += ra * r[b];
                }
            }
        }
        g
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.apply(x, &mut out);
        out
    }

    pub fn mul_transpose_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.apply_transpose(y, &mut out);
        out
    }
}

impl LinearOperator for DenseMatrix {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), x);
        }
    }

    fn apply_transpose(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(i)) {
                    *o += a * yi;
                }
            }
        }
    }
}

/// Regularizer `g` on `u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regularizer {
    Zero,
    /// `α ‖u‖₀ + β ‖u‖²`
    L0PlusL2 { alpha: f64, beta: f64 },
}

impl Regularizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Regularizer::Zero => Ok(()),
            Regularizer::L0PlusL2 { alpha, beta } => {
                if alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "regularizer weights must be nonnegative, got alpha={alpha}, beta={beta}"
                    )))
                }
            }
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match *self {
            Regularizer::Zero => 0.0,
            Regularizer::L0PlusL2 { alpha, beta } => u
                .iter()
                .map(|&x| if x != 0.0 { alpha + beta * x * x } else { 0.0 })
                .sum(),
        }
    }

    /// Exact coordinatewise prox with step `step`. Ties go to zero.
    pub fn prox_scalar(&self, x: f64, step: f64) -> f64 {
        match *self {
            Regularizer::Zero => x,
            Regularizer::L0PlusL2 { alpha, beta } => {
                let nz = x / (1.0 + 2.0 * beta * step);
                let d = nz - x;
                let cost_nz = alpha + beta * nz * nz + d * d / (2.0 * step);
                let cost_zero = x * x / (2.0 * step);
                if cost_nz < cost_zero {
                    nz
                } else {
                    0.0
                }
            }
        }
    }

    pub fn prox_in_place(&self, x: &mut [f64], step: f64) {
        if let Regularizer::Zero = self {
            return;
        }
        x.iter_mut().for_each(|v| *v = self.prox_scalar(*v, step));
    }
}

/// `min e_λ f(v) + g(u)  s.t.  Au = v` with a separable loss `f`.
#[derive(Debug, Clone)]
pub struct ConsensusProblem {
    a: DenseMatrix,
    loss: SeparableLoss,
    reg: Regularizer,
    lambda: f64,
}

impl ConsensusProblem {
    pub fn new(a: DenseMatrix, loss: SeparableLoss, reg: Regularizer, lambda: f64) -> Result<Self> {
        check_len("loss coordinates", a.rows(), loss.len())?;
        reg.validate()?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self { a, loss, reg, lambda })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn loss(&self) -> &SeparableLoss {
        &self.loss
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `m`, the number of rows / loss coordinates.
    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// `n`, the dimension of `u`.
    pub fn n(&self) -> usize {
        self.a.cols()
    }

    pub(crate) fn check_u(&self, u: &[f64]) -> Result<()> {
        check_len("u", self.n(), u.len())
    }

    pub(crate) fn check_m(&self, what: &'static str, x: &[f64]) -> Result<()> {
        check_len(what, self.m(), x.len())
    }

    /// `e_λ f(Au) + g(u)`
    pub fn regularized_objective(&self, u: &[f64]) -> Result<f64> {
        self.check_u(u)?;
        let au = self.a.mul_vec(u);
        Ok(self.objective_with_au(u, &au))
    }

    pub(crate) fn objective_with_au(&self, u: &[f64], au: &[f64]) -> f64 {
        self.loss.envelope(au, self.lambda) + self.reg.eval(u)
    }

    /// `Q(u, z) = f(z) + g(u) + ‖Au - z‖² / (2λ)`
    pub fn quadratic_penalty(&self, u: &[f64], z: &[f64]) -> Result<f64> {
        self.check_u(u)?;
        self.check_m("z", z)?;
        let au = self.a.mul_vec(u);
        Ok(self.penalty_with_au(u, z, &au))
    }

    pub(crate) fn penalty_with_au(&self, u: &[f64], z: &[f64], au: &[f64]) -> f64 {
        let r2: f64 = au.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        self.loss.eval(z) + self.reg.eval(u) + r2 / (2.0 * self.lambda)
    }

    /// `𝔔_ρ(u, z, y) = f(z) - (λ/2)‖y‖² + g(u) + ⟨Au - z, y⟩ + (ρ/2)‖Au - z - λy‖²`
    pub fn lyapunov(&self, u: &[f64], z: &[f64], y: &[f64], rho: f64) -> Result<f64> {
        self.check_u(u)?;
        self.check_m("z", z)?;
        self.check_m("y", y)?;
        check_rho(rho)?;
        let au = self.a.mul_vec(u);
        Ok(self.lyapunov_with_au(u, z, y, rho, &au))
    }

    pub(crate) fn lyapunov_with_au(&self, u: &[f64], z: &[f64], y: &[f64], rho: f64, au: &[f64]) -> f64 {
        let lam = self.lambda;
        let mut inner = 0.0;
        let mut yy = 0.0;
        let mut res = 0.0;
        for ((&a, &zi), &yi) in au.iter().zip(z).zip(y) {
            let r = a - zi;
            inner += r * yi;
            yy += yi * yi;
            let s = r - lam * yi;
            res += s * s;
        }
        self.loss.eval(z) - 0.5 * lam * yy + self.reg.eval(u) + inner + 0.5 * rho * res
    }

    /// Augmented Lagrangian of the lifted problem with the explicit `w` block.
    pub fn augmented_lagrangian(&self, u: &[f64], z: &[f64], w: &[f64], y: &[f64], rho: f64) -> Result<f64> {
        self.check_u(u)?;
        self.check_m("z", z)?;
        self.check_m("w", w)?;
        self.check_m("y", y)?;
        check_rho(rho)?;
        let au = self.a.mul_vec(u);
        let mut ww = 0.0;
        let mut inner = 0.0;
        let mut res = 0.0;
        for (((&a, &zi), &wi), &yi) in au.iter().zip(z).zip(w).zip(y) {
            let r = a - zi - wi;
            ww += wi * wi;
            inner += yi * r;
            res += r * r;
        }
        Ok(self.loss.eval(z) + self.reg.eval(u) + ww / (2.0 * self.lambda) + inner + 0.5 * rho * res)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")))
    }
}

/// Iterates `(u, z, y)` and the iteration counter. The lifted `w` is `λ y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub t: usize,
}

impl SolverState {
    /// `u = 0`, `z = Au = 0`, `y = 0`.
    pub fn zeros(p: &ConsensusProblem) -> Self {
        Self {
            u: vec![0.0; p.n()],
            z: vec![0.0; p.m()],
            y: vec![0.0; p.m()],
            t: 0,
        }
    }

    /// Feasible start `z = Au`, `y = 0`.
    pub fn feasible_from(p: &ConsensusProblem, u: Vec<f64>) -> Result<Self> {
        p.check_u(&u)?;
        let z = p.matrix().mul_vec(&u);
        Ok(Self {
            u,
            z,
            y: vec![0.0; p.m()],
            t: 0,
        })
    }

    pub fn new(p: &ConsensusProblem, u: Vec<f64>, z: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        p.check_u(&u)?;
        p.check_m("z", &z)?;
        p.check_m("y", &y)?;
        Ok(Self { u, z, y, t: 0 })
    }

    pub fn w(&self, lambda: f64) -> Vec<f64> {
        self.y.iter().map(|y| lambda * y).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.z).chain(&self.y).all(|x| x.is_finite())
    }
}

/// Spectral norm estimate from power iteration on `AᵀA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    /// Estimate inflated by `(1 + tol)`.
    pub value: f64,
    /// Set when `A` is the zero matrix; `value` is then 0.
    pub is_zero: bool,
    pub iterations: usize,
}

pub const POWER_ITERATION_CAP: usize = 10_000;

/// Largest singular value of `A` by power iteration on `AᵀA`.
///
/// The start vector is a Gaussian drawn from `seed`. Stops once the eigen-residual
/// `‖AᵀA x - μ x‖ / μ` drops below `tol`.
pub fn operator_norm<A: LinearOperator>(a: &A, tol: f64, seed: u64) -> Result<NormEstimate> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!("norm tolerance must lie in (0, 1), got {tol}")));
    }
    let n = a.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut ax = vec![0.0; a.rows()];
    let mut bx = vec![0.0; n];
    normalize(&mut x);
    for it in 1..=POWER_ITERATION_CAP {
        a.apply(&x, &mut ax);
        a.apply_transpose(&ax, &mut bx);
        let mu = dot(&x, &bx);
        if mu <= 0.0 {
            if is_zero_operator(a) {
                return Ok(NormEstimate {
                    value: 0.0,
                    is_zero: true,
                    iterations: it,
                });
            }
            return Err(Error::Evaluation("power iteration start vector in the null space".into()));
        }
        let res = bx
            .iter()
            .zip(&x)
            .map(|(b, xi)| (b - mu * xi) * (b - mu * xi))
            .sum::<f64>()
            .sqrt();
        if res <= tol * mu {
            return Ok(NormEstimate {
                value: mu.sqrt() * (1.0 + tol),
                is_zero: false,
                iterations: it,
            });
        }
        x.copy_from_slice(&bx);
        normalize(&mut x);
    }
    Err(Error::NotConverged {
        what: "power iteration",
        iterations: POWER_ITERATION_CAP,
    })
}

fn is_zero_operator<A: LinearOperator>(a: &A) -> bool {
    let n = a.cols();
    let mut e = vec![0.0; n];
    let mut out = vec![0.0; a.rows()];
    (0..n).all(|j| {
        e.iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        a.apply(&e, &mut out);
        out.iter().all(|&v| v == 0.0)
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = norm2(x);
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}
