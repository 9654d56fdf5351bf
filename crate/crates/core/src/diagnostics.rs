//! Optimality diagnostics at (approximate) limit points.
//!
//! * the optimality gap of the regularized problem at `(u, v, y)`,
//! * lifted criticality residuals at `(u, z, y)`,
//! * the active-set qualification `A_f(z) ⊂ A_{e_λ f}(z + λ y)`,
//! * LICQ of the lifted active normals at `v`.
//!
//! Active sets use the per-coordinate tolerance `rel · (1 + |value|)`.

use serde::{Deserialize, Serialize};

use crate::consensus::{norm2, ConsensusProblem, LinearOperator, Regularizer};
use crate::error::{Error, Result};
use crate::prox::licq_holds;

/// Default relative active-set tolerance for diagnostics.
pub const DEFAULT_REL_TOL: f64 = 1e-7;

/// The three components of the optimality gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub gap_f: f64,
    pub gap_g: f64,
    pub gap_feas: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedResiduals {
    /// `dist(0, ∂f(z) - y)`
    pub r1: f64,
    /// `dist(0, ∂g(u) + Aᵀy)`
    pub r2: f64,
    /// `‖Au - z - λy‖`
    pub r3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapReport {
    pub gap_f: f64,
    pub gap_g: f64,
    pub gap_feas: f64,
    pub total: f64,
    pub qualification_holds: bool,
    pub licq_holds: bool,
    pub lifted_residuals: LiftedResiduals,
}

fn active_tol(rel: f64, value: f64) -> f64 {
    rel * (1.0 + value.abs())
}

fn check_rel(rel: f64) -> Result<()> {
    if rel >= 0.0 && rel.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("relative tolerance must be nonnegative, got {rel}")))
    }
}

/// `dist(0, ∂g(u) + Aᵀy)`, coordinatewise and aggregated in the Euclidean norm.
fn regularizer_residual(p: &ConsensusProblem, u: &[f64], y: &[f64]) -> f64 {
    let aty = p.matrix().mul_transpose_vec(y);
    match *p.regularizer() {
        Regularizer::Zero => norm2(&aty),
        Regularizer::L0PlusL2 { alpha, beta } => u
            .iter()
            .zip(&aty)
            .map(|(&uj, &gj)| {
                let d = if uj == 0.0 {
                    // the ℓ0 part contributes all of ℝ at zero
                    if alpha > 0.0 {
                        0.0
                    } else {
                        gj.abs()
                    }
                } else {
                    (2.0 * beta * uj + gj).abs()
                };
                d * d
            })
            .sum::<f64>()
            .sqrt(),
    }
}

fn residual_norm(p: &ConsensusProblem, u: &[f64], v: &[f64], y: Option<&[f64]>) -> f64 {
    let mut au = vec![0.0; p.m()];
    p.matrix().apply(u, &mut au);
    let lam = p.lambda();
    au.iter()
        .enumerate()
        .map(|(j, &a)| {
            let r = a - v[j] - y.map_or(0.0, |y| lam * y[j]);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// `dist(0, ∂e_λf(v) - y) + dist(0, ∂g(u) + Aᵀy) + ‖Au - v‖`.
///
/// The envelope subdifferential is taken as the set of active-piece gradients, so
/// `gap_f` is the distance from `y_j` to the nearest of them in each coordinate.
pub fn optimality_gap(p: &ConsensusProblem, u: &[f64], v: &[f64], y: &[f64], rel_tol: f64) -> Result<Gap> {
    p.check_u(u)?;
    p.check_m("v", v)?;
    p.check_m("y", y)?;
    check_rel(rel_tol)?;
    let lam = p.lambda();
    let mut sq = 0.0;
    for (j, f) in p.loss().coords().iter().enumerate() {
        let env = f.envelope(v[j], lam)?;
        if !env.is_finite() {
            return Err(Error::Evaluation(format!("envelope is infinite at coordinate {j}")));
        }
        let grads = f.envelope_subgradients(v[j], lam, active_tol(rel_tol, env))?;
        let d = grads
            .iter()
            .map(|&(_, g)| (g - y[j]).abs())
            .fold(f64::INFINITY, f64::min);
        sq += d * d;
    }
    let gap_f = sq.sqrt();
    let gap_g = regularizer_residual(p, u, y);
    let gap_feas = residual_norm(p, u, v, None);
    Ok(Gap {
        gap_f,
        gap_g,
        gap_feas,
        total: gap_f + gap_g + gap_feas,
    })
}

/// Residuals of the lifted criticality system at `(u, z, y)`.
///
/// `r1` uses the union of the convex subdifferentials of the function-active
/// pieces; a coordinate outside `dom f` contributes `+∞`.
pub fn lifted_residuals(p: &ConsensusProblem, u: &[f64], z: &[f64], y: &[f64], rel_tol: f64) -> Result<LiftedResiduals> {
    p.check_u(u)?;
    p.check_m("z", z)?;
    p.check_m("y", y)?;
    check_rel(rel_tol)?;
    let mut sq = 0.0;
    for (j, f) in p.loss().coords().iter().enumerate() {
        let fz = f.eval(z[j]);
        let active = f.function_active_set(z[j], active_tol(rel_tol, fz))?;
        let d = active
            .indices
            .iter()
            .filter_map(|&i| f.piece_subdifferential(i, z[j]))
            .map(|sub| sub.dist(y[j]))
            .fold(f64::INFINITY, f64::min);
        sq += d * d;
    }
    Ok(LiftedResiduals {
        r1: sq.sqrt(),
        r2: regularizer_residual(p, u, y),
        r3: residual_norm(p, u, z, Some(y)),
    })
}

/// Whether every piece active for `f` at `z_j` stays active for `e_λ f` at
/// `z_j + λ y_j`, in every coordinate.
pub fn qualification_check(p: &ConsensusProblem, z: &[f64], y: &[f64], rel_tol: f64) -> Result<bool> {
    p.check_m("z", z)?;
    p.check_m("y", y)?;
    check_rel(rel_tol)?;
    let lam = p.lambda();
    for (j, f) in p.loss().coords().iter().enumerate() {
        let fz = f.eval(z[j]);
        let fa = f.function_active_set(z[j], active_tol(rel_tol, fz))?;
        let v = z[j] + lam * y[j];
        let env = f.envelope(v, lam)?;
        let ea = f.envelope_active_set(v, lam, active_tol(rel_tol, env))?;
        if !fa.is_subset_of(&ea) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// LICQ of `{(∇e_λ f_i(v), -1) : i active}`. The loss is separable, so the
/// check runs per coordinate in `ℝ²`.
pub fn licq_check(p: &ConsensusProblem, v: &[f64], rel_tol: f64) -> Result<bool> {
    p.check_m("v", v)?;
    check_rel(rel_tol)?;
    let lam = p.lambda();
    for (j, f) in p.loss().coords().iter().enumerate() {
        let env = f.envelope(v[j], lam)?;
        let grads: Vec<Vec<f64>> = f
            .envelope_subgradients(v[j], lam, active_tol(rel_tol, env))?
            .into_iter()
            .map(|(_, g)| vec![g])
            .collect();
        if !licq_holds(&grads, 1)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Everything at once. `v` is the point of the regularized problem paired with
/// the lifted `(u, z, y)`.
pub fn gap_report(p: &ConsensusProblem, u: &[f64], z: &[f64], y: &[f64], v: &[f64], rel_tol: f64) -> Result<GapReport> {
    let gap = optimality_gap(p, u, v, y, rel_tol)?;
    Ok(GapReport {
        gap_f: gap.gap_f,
        gap_g: gap.gap_g,
        gap_feas: gap.gap_feas,
        total: gap.total,
        qualification_holds: qualification_check(p, z, y, rel_tol)?,
        licq_holds: licq_check(p, v, rel_tol)?,
        lifted_residuals: lifted_residuals(p, u, z, y, rel_tol)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::DenseMatrix;
    use crate::prox::{PiecewiseConvexFunction, SeparableLoss};

    fn scalar_l0() -> ConsensusProblem {
        let a = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let loss = SeparableLoss::repeated(PiecewiseConvexFunction::l0(0.01).unwrap(), 1);
        ConsensusProblem::new(a, loss, Regularizer::Zero, 0.05).unwrap()
    }

    #[test]
    fn gap_on_flat_branch() {
        let p = scalar_l0();
        let g = optimality_gap(&p, &[1.0], &[1.0], &[0.0], DEFAULT_REL_TOL).unwrap();
        assert_eq!(g.gap_f, 0.0);
        assert_eq!(g.total, 0.0);
        let g = optimality_gap(&p, &[1.0], &[1.0], &[0.2], DEFAULT_REL_TOL).unwrap();
        assert!((g.gap_f - 0.2).abs() < 1e-15);
        // gap_g = |Aᵀ y| for g = 0
        assert!((g.gap_g - 0.2).abs() < 1e-15);
    }

    #[test]
    fn lifted_residual_examples() {
        let p = scalar_l0();
        for y in [-3.0, 0.0, 0.7] {
            let r = lifted_residuals(&p, &[0.0], &[0.0], &[y], DEFAULT_REL_TOL).unwrap();
            assert_eq!(r.r1, 0.0);
        }
        let r = lifted_residuals(&p, &[0.5], &[0.5], &[0.3], DEFAULT_REL_TOL).unwrap();
        assert!((r.r1 - 0.3).abs() < 1e-15);
        assert!((r.r3 - 0.05 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn qualification_examples() {
        let p = scalar_l0();
        assert!(qualification_check(&p, &[0.0], &[0.0], DEFAULT_REL_TOL).unwrap());
        // z + λy = 1: indicator envelope 1/(2λ) = 10 > ν
        assert!(!qualification_check(&p, &[0.0], &[20.0], DEFAULT_REL_TOL).unwrap());
    }

    #[test]
    fn l0l2_residual_ignores_zero_coordinates() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let loss = SeparableLoss::repeated(PiecewiseConvexFunction::symmetric_hinge(), 1);
        let reg = Regularizer::L0PlusL2 { alpha: 0.025, beta: 0.5 };
        let p = ConsensusProblem::new(a, loss, reg, 0.5).unwrap();
        // Aᵀy = (1, 2); u_1 = 0 is free, u_2 = -2 gives 2·0.5·(-2) + 2 = 0
        let r = regularizer_residual(&p, &[0.0, -2.0], &[1.0]);
        assert_eq!(r, 0.0);
        let r = regularizer_residual(&p, &[0.0, -1.0], &[1.0]);
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn licq_at_symmetric_hinge_kink() {
        let a = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let loss = SeparableLoss::repeated(PiecewiseConvexFunction::symmetric_hinge(), 1);
        let p = ConsensusProblem::new(a, loss, Regularizer::Zero, 0.5).unwrap();
        assert!(licq_check(&p, &[0.0], DEFAULT_REL_TOL).unwrap());
        // duplicate pieces have identical normals
        let dup = PiecewiseConvexFunction::new(vec![
            crate::prox::ConvexPiece::Hinge { theta: 1.0 },
            crate::prox::ConvexPiece::Hinge { theta: 1.0 },
        ])
        .unwrap();
        let a = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
        let p = ConsensusProblem::new(a, SeparableLoss::repeated(dup, 1), Regularizer::Zero, 0.5).unwrap();
        assert!(!licq_check(&p, &[0.3], DEFAULT_REL_TOL).unwrap());
    }

    #[test]
    fn dimension_errors() {
        let p = scalar_l0();
        assert!(optimality_gap(&p, &[0.0, 1.0], &[0.0], &[0.0], 1e-7).is_err());
        assert!(qualification_check(&p, &[0.0, 1.0], &[0.0], 1e-7).is_err());
    }
}
