#![allow(dead_code)]

use moreau_core::{ConvexPiece, PiecewiseConvexFunction};
use proptest::prelude::*;

pub const GRID_STEP: f64 = 1e-4;

/// Kinks and other points a uniform grid would miss.
fn special_points(f: &PiecewiseConvexFunction) -> Vec<f64> {
    let s = f.shift();
    let mut pts = vec![s];
    for p in f.pieces() {
        if let ConvexPiece::Hinge { theta } = p {
            pts.push(s + 1.0 / theta);
        }
    }
    pts
}

/// `min_z f(z) + (z - v)² / (2 step)` over multiples of `GRID_STEP` spanning
/// `v ± 10 step`, the origin and the shift, plus the special points of `f`.
pub fn grid_min(f: &PiecewiseConvexFunction, v: f64, step: f64) -> f64 {
    let lo = (v - 10.0 * step).min(0.0).min(f.shift());
    let hi = (v + 10.0 * step).max(0.0).max(f.shift());
    let obj = |z: f64| {
        let fz = f.eval(z);
        if fz.is_finite() {
            fz + (z - v) * (z - v) / (2.0 * step)
        } else {
            f64::INFINITY
        }
    };
    let k0 = (lo / GRID_STEP).floor() as i64;
    let k1 = (hi / GRID_STEP).ceil() as i64;
    let mut best = f64::INFINITY;
    for k in k0..=k1 {
        best = best.min(obj(k as f64 * GRID_STEP));
    }
    for z in special_points(f) {
        best = best.min(obj(z));
    }
    best
}

pub fn prox_objective(f: &PiecewiseConvexFunction, z: f64, v: f64, step: f64) -> f64 {
    f.eval(z) + (z - v) * (z - v) / (2.0 * step)
}

pub fn piece() -> impl Strategy<Value = ConvexPiece> {
    prop_oneof![
        Just(ConvexPiece::Zero),
        (-1.0..1.0f64).prop_map(|c| ConvexPiece::Constant { c }),
        Just(ConvexPiece::IndicatorOrigin),
        Just(ConvexPiece::Hinge { theta: 1.0 }),
        Just(ConvexPiece::Hinge { theta: -1.0 }),
        (0.0..5.0f64).prop_map(|a| ConvexPiece::ScaledQuadratic { a }),
        (0.0..5.0f64).prop_map(|beta| ConvexPiece::L2Square { beta }),
    ]
}

/// Stacks of one to three pieces with a small shift.
pub fn stack() -> impl Strategy<Value = PiecewiseConvexFunction> {
    (prop::collection::vec(piece(), 1..=3), -0.5..0.5f64)
        .prop_map(|(pieces, shift)| PiecewiseConvexFunction::with_shift(pieces, shift).unwrap())
}
