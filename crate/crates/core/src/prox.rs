//! Exact proximal mappings and Moreau envelopes of piecewise convex functions.
//!
//! A scalar loss is represented as a pointwise minimum `f = min_i f_i` over a
//! closed set of convex pieces. Every piece has a closed-form prox, so the prox of
//! `f` is obtained exactly by computing each piece's candidate and keeping the one
//! with the smallest value of `f_i(z) + (z - v)^2 / (2 step)`, which is the piece
//! envelope at `v`. The same min-structure gives `e_λ f = min_i e_λ f_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance for active-set membership.
pub const DEFAULT_ACTIVE_TOL: f64 = 1e-9;

/// Relative pivot tolerance used by [`licq_holds`].
pub const LICQ_PIVOT_TOL: f64 = 1e-10;

/// A proper, convex, lower semi-continuous scalar function with a closed-form prox.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexPiece {
    /// `z ↦ 0`
    Zero,
    /// `z ↦ c`
    Constant { c: f64 },
    /// `0` at the origin, `+∞` elsewhere.
    IndicatorOrigin,
    /// `z ↦ max(0, 1 - θ z)` with `θ ∈ {-1, +1}`.
    Hinge { theta: f64 },
    /// `z ↦ (a / 2) z²`
    ScaledQuadratic { a: f64 },
    /// `z ↦ β z²`
    L2Square { beta: f64 },
}

/// Closed interval `[lo, hi]`, possibly unbounded, used for convex subdifferentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn real_line() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn between(a: f64, b: f64) -> Self {
        Self {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    /// Distance from `x` to the interval.
    pub fn dist(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

impl ConvexPiece {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ConvexPiece::Zero | ConvexPiece::IndicatorOrigin => true,
            ConvexPiece::Constant { c } => c.is_finite(),
            ConvexPiece::Hinge { theta } => theta == 1.0 || theta == -1.0,
            ConvexPiece::ScaledQuadratic { a } => a.is_finite() && a >= 0.0,
            ConvexPiece::L2Square { beta } => beta.is_finite() && beta >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid piece {self:?}")))
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            ConvexPiece::Zero => 0.0,
            ConvexPiece::Constant { c } => c,
            ConvexPiece::IndicatorOrigin => {
                if z == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ConvexPiece::Hinge { theta } => (1.0 - theta * z).max(0.0),
            ConvexPiece::ScaledQuadratic { a } => 0.5 * a * z * z,
            ConvexPiece::L2Square { beta } => beta * z * z,
        }
    }

    /// Unique minimizer of `piece(z) + (z - v)² / (2 step)`.
    pub fn prox_step(&self, v: f64, step: f64) -> f64 {
        match *self {
            ConvexPiece::Zero | ConvexPiece::Constant { .. } => v,
            ConvexPiece::IndicatorOrigin => 0.0,
            ConvexPiece::Hinge { theta } => {
                // prox of (1 - w)_+ in the coordinate w = θ z
                let w = theta * v;
                let pw = if w >= 1.0 {
                    w
                } else if w <= 1.0 - step {
                    w + step
                } else {
                    1.0
                };
                theta * pw
            }
            ConvexPiece::ScaledQuadratic { a } => v / (1.0 + a * step),
            ConvexPiece::L2Square { beta } => v / (1.0 + 2.0 * beta * step),
        }
    }

    pub fn envelope(&self, v: f64, lambda: f64) -> f64 {
        let p = self.prox_step(v, lambda);
        let d = p - v;
        self.eval(p) + d * d / (2.0 * lambda)
    }

    pub fn envelope_grad(&self, v: f64, lambda: f64) -> f64 {
        (v - self.prox_step(v, lambda)) / lambda
    }

    /// Prox of the envelope `e_λ piece` with step `step`.
    ///
    /// Uses `P_s(e_λ h)(v) = (λ v + s P_{λ+s} h(v)) / (λ + s)`; the attained value
    /// equals `e_{λ+s} h(v)`.
    pub fn envelope_prox(&self, v: f64, lambda: f64, step: f64) -> f64 {
        let p = self.prox_step(v, lambda + step);
        // written as a correction to v so flat pieces return v exactly
        v + step * (p - v) / (lambda + step)
    }

    /// Convex subdifferential at `z`, `None` outside the domain.
    pub fn subdifferential(&self, z: f64) -> Option<Interval> {
        self.subdifferential_within(z, 0.0)
    }

    /// Subdifferential at `z`, treating kinks within `radius` of `z` as hit.
    ///
    /// Used with a rounding-level radius when `z` comes from a shifted frame.
    pub fn subdifferential_within(&self, z: f64, radius: f64) -> Option<Interval> {
        match *self {
            ConvexPiece::Zero | ConvexPiece::Constant { .. } => Some(Interval::point(0.0)),
            ConvexPiece::IndicatorOrigin => (z.abs() <= radius).then(Interval::real_line),
            ConvexPiece::Hinge { theta } => {
                let w = theta * z;
                Some(if w < 1.0 - radius {
                    Interval::point(-theta)
                } else if w > 1.0 + radius {
                    Interval::point(0.0)
                } else {
                    Interval::between(-theta, 0.0)
                })
            }
            ConvexPiece::ScaledQuadratic { a } => Some(Interval::point(a * z)),
            ConvexPiece::L2Square { beta } => Some(Interval::point(2.0 * beta * z)),
        }
    }
}

/// Result of a prox evaluation: the minimizer and the piece that attained it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxPoint {
    pub point: f64,
    pub piece: usize,
}

/// Indices of pieces attaining a pointwise minimum up to `tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub tolerance: f64,
}

impl ActiveSet {
    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &ActiveSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// `f(z) = min_i f_i(z - shift)`.
///
/// The shift translates every piece, which lets a loss act on residuals `z - b`
/// while the consensus variable stays `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConvexFunction {
    pieces: Vec<ConvexPiece>,
    #[serde(default)]
    shift: f64,
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

impl PiecewiseConvexFunction {
    pub fn new(pieces: Vec<ConvexPiece>) -> Result<Self> {
        Self::with_shift(pieces, 0.0)
    }

    pub fn with_shift(pieces: Vec<ConvexPiece>, shift: f64) -> Result<Self> {
        let f = Self { pieces, shift };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pieces.is_empty() {
            return Err(Error::InvalidParameter(
                "piecewise function needs at least one piece".into(),
            ));
        }
        if !self.shift.is_finite() {
            return Err(Error::InvalidParameter("shift must be finite".into()));
        }
        self.pieces.iter().try_for_each(ConvexPiece::validate)
    }

    /// `ν ‖·‖₀` as `{indicator of the origin, constant ν}`.
    pub fn l0(nu: f64) -> Result<Self> {
        Self::new(vec![
            ConvexPiece::IndicatorOrigin,
            ConvexPiece::Constant { c: nu },
        ])
    }

    pub fn hinge(theta: f64) -> Result<Self> {
        Self::new(vec![ConvexPiece::Hinge { theta }])
    }

    /// `min_{θ ∈ {-1, 1}} (1 - θ z)_+`
    pub fn symmetric_hinge() -> Self {
        Self {
            pieces: vec![
                ConvexPiece::Hinge { theta: 1.0 },
                ConvexPiece::Hinge { theta: -1.0 },
            ],
            shift: 0.0,
        }
    }

    pub fn zero() -> Self {
        Self {
            pieces: vec![ConvexPiece::Zero],
            shift: 0.0,
        }
    }

    pub fn pieces(&self) -> &[ConvexPiece] {
        &self.pieces
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn shifted(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn eval(&self, z: f64) -> f64 {
        let x = z - self.shift;
        self.pieces
            .iter()
            .map(|p| p.eval(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn piece_value(&self, i: usize, z: f64) -> f64 {
        self.pieces[i].eval(z - self.shift)
    }

    pub fn piece_envelope(&self, i: usize, v: f64, lambda: f64) -> f64 {
        self.pieces[i].envelope(v - self.shift, lambda)
    }

    pub fn piece_envelope_grad(&self, i: usize, v: f64, lambda: f64) -> f64 {
        self.pieces[i].envelope_grad(v - self.shift, lambda)
    }

    /// Subdifferential of piece `i` at `z`; kinks are matched up to the rounding
    /// error of the shift.
    pub fn piece_subdifferential(&self, i: usize, z: f64) -> Option<Interval> {
        let radius = if self.shift == 0.0 {
            0.0
        } else {
            4.0 * f64::EPSILON * (z.abs() + self.shift.abs())
        };
        self.pieces[i].subdifferential_within(z - self.shift, radius)
    }

    /// Picks the candidate with the smallest attained value. Exact ties go to the
    /// indicator piece (hard-thresholding convention), otherwise to the lowest index.
    fn select<F: Fn(&ConvexPiece) -> (f64, f64)>(&self, candidate: F) -> (ProxPoint, f64) {
        let mut best = ProxPoint { point: 0.0, piece: 0 };
        let mut best_val = f64::INFINITY;
        let mut best_is_indicator = false;
        for (i, piece) in self.pieces.iter().enumerate() {
            let (point, val) = candidate(piece);
            let is_indicator = matches!(piece, ConvexPiece::IndicatorOrigin);
            let better = if i == 0 {
                true
            } else {
                val < best_val || (val == best_val && is_indicator && !best_is_indicator)
            };
            if better {
                best = ProxPoint { point, piece: i };
                best_val = val;
                best_is_indicator = is_indicator;
            }
        }
        (best, best_val)
    }

    /// Exact prox without parameter validation; `step` must be positive.
    pub(crate) fn prox_unchecked(&self, v: f64, step: f64) -> ProxPoint {
        let x = v - self.shift;
        let (mut best, _) = self.select(|piece| {
            let p = piece.prox_step(x, step);
            let d = p - x;
            (p, piece.eval(p) + d * d / (2.0 * step))
        });
        best.point += self.shift;
        best
    }

    /// Global minimizer of `f(z) + (z - v)² / (2 step)`.
    pub fn prox(&self, v: f64, step: f64) -> Result<ProxPoint> {
        check_positive("prox step", step)?;
        Ok(self.prox_unchecked(v, step))
    }

    pub(crate) fn envelope_unchecked(&self, v: f64, lambda: f64) -> f64 {
        let x = v - self.shift;
        self.pieces
            .iter()
            .map(|p| p.envelope(x, lambda))
            .fold(f64::INFINITY, f64::min)
    }

    /// `e_λ f(v) = min_i e_λ f_i(v)`.
    pub fn envelope(&self, v: f64, lambda: f64) -> Result<f64> {
        check_positive("lambda", lambda)?;
        Ok(self.envelope_unchecked(v, lambda))
    }

    /// Exact prox of `e_λ f` with step `step`: per-piece envelope prox, then min
    /// selection on `e_{λ+step} f_i`.
    pub(crate) fn envelope_prox_unchecked(&self, v: f64, lambda: f64, step: f64) -> ProxPoint {
        let x = v - self.shift;
        let (mut best, _) = self.select(|piece| {
            let p = piece.envelope_prox(x, lambda, step);
            let d = p - x;
            (p, piece.envelope(p, lambda) + d * d / (2.0 * step))
        });
        best.point += self.shift;
        best
    }

    pub fn envelope_prox(&self, v: f64, lambda: f64, step: f64) -> Result<ProxPoint> {
        check_positive("lambda", lambda)?;
        check_positive("prox step", step)?;
        Ok(self.envelope_prox_unchecked(v, lambda, step))
    }

    fn active_by<F: Fn(usize) -> f64>(&self, value: F, tol: f64) -> ActiveSet {
        let values: Vec<f64> = (0..self.pieces.len()).map(value).collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let indices = if min.is_finite() {
            values
                .iter()
                .enumerate()
                .filter(|(_, &x)| x <= min + tol)
                .map(|(i, _)| i)
                .collect()
        } else {
            Vec::new()
        };
        ActiveSet {
            indices,
            tolerance: tol,
        }
    }

    /// Pieces with `e_λ f_i(v) ≤ e_λ f(v) + tol`.
    pub fn envelope_active_set(&self, v: f64, lambda: f64, tol: f64) -> Result<ActiveSet> {
        check_positive("lambda", lambda)?;
        check_tol(tol)?;
        Ok(self.active_by(|i| self.piece_envelope(i, v, lambda), tol))
    }

    /// Pieces with `f_i(z) ≤ f(z) + tol`. Empty when `f(z) = +∞`.
    pub fn function_active_set(&self, z: f64, tol: f64) -> Result<ActiveSet> {
        check_tol(tol)?;
        Ok(self.active_by(|i| self.piece_value(i, z), tol))
    }

    /// Gradients `∇e_λ f_i(v) = (v - P_λ f_i(v)) / λ` of the envelope-active pieces.
    pub fn envelope_subgradients(&self, v: f64, lambda: f64, tol: f64) -> Result<Vec<(usize, f64)>> {
        let active = self.envelope_active_set(v, lambda, tol)?;
        Ok(active
            .indices
            .iter()
            .map(|&i| (i, self.piece_envelope_grad(i, v, lambda)))
            .collect())
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol >= 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "tolerance must be nonnegative, got {tol}"
        )))
    }
}

/// Coordinatewise sum `f(v) = Σ_j f_j(v_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeparableLoss {
    coords: Vec<PiecewiseConvexFunction>,
}

impl SeparableLoss {
    pub fn new(coords: Vec<PiecewiseConvexFunction>) -> Result<Self> {
        coords.iter().try_for_each(PiecewiseConvexFunction::validate)?;
        Ok(Self { coords })
    }

    pub fn repeated(f: PiecewiseConvexFunction, m: usize) -> Self {
        Self {
            coords: vec![f; m],
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[PiecewiseConvexFunction] {
        &self.coords
    }

    pub fn coord(&self, j: usize) -> &PiecewiseConvexFunction {
        &self.coords[j]
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.coords.iter().zip(z).map(|(f, &x)| f.eval(x)).sum()
    }

    pub fn envelope(&self, v: &[f64], lambda: f64) -> f64 {
        self.coords
            .iter()
            .zip(v)
            .map(|(f, &x)| f.envelope_unchecked(x, lambda))
            .sum()
    }

    /// Coordinatewise prox of `f` written into `out`.
    pub fn prox_into(&self, v: &[f64], step: f64, out: &mut [f64]) {
        for ((f, &x), o) in self.coords.iter().zip(v).zip(out.iter_mut()) {
            *o = f.prox_unchecked(x, step).point;
        }
    }

    /// Coordinatewise prox of `e_λ f` written into `out`.
    pub fn envelope_prox_into(&self, v: &[f64], lambda: f64, step: f64, out: &mut [f64]) {
        for ((f, &x), o) in self.coords.iter().zip(v).zip(out.iter_mut()) {
            *o = f.envelope_prox_unchecked(x, lambda, step).point;
        }
    }
}

/// Linear independence of the lifted normals `(g_i, -1) ∈ ℝ^{m+1}`.
///
/// Modified Gram-Schmidt; a column whose remaining norm falls below
/// `LICQ_PIVOT_TOL` times the largest lifted column norm counts as dependent.
pub fn licq_holds(gradients: &[Vec<f64>], m: usize) -> Result<bool> {
    if gradients.is_empty() {
        return Ok(true);
    }
    for g in gradients {
        crate::error::check_len("licq gradient", m, g.len())?;
    }
    if gradients.len() > m + 1 {
        return Ok(false);
    }
    let mut cols: Vec<Vec<f64>> = gradients
        .iter()
        .map(|g| {
            let mut c = g.clone();
            c.push(-1.0);
            c
        })
        .collect();
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for c in cols.iter_mut() {
        for q in &basis {
            let proj: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
            c.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
        }
        let r = norm(c);
        if r <= LICQ_PIVOT_TOL * scale {
            return Ok(false);
        }
        basis.push(c.iter().map(|x| x / r).collect());
    }
    Ok(true)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}
