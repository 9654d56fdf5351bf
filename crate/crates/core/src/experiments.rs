//! Synthetic benchmarks: robust regression with impulsive noise and joint
//! feature selection with a semi-supervised SVM.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::consensus::{ConsensusProblem, DenseMatrix, LinearOperator, Regularizer};
use crate::error::{Error, Result};
use crate::prox::{PiecewiseConvexFunction, SeparableLoss};

/// Projection margin of the classification generator before label flips.
pub const CLASS_MARGIN: f64 = 1.0;

/// Coordinates with `|u_j|` above this count as nonzero.
pub const SPARSITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    pub a: DenseMatrix,
    pub b: Vec<f64>,
    pub ground_truth_u: Vec<f64>,
    pub outlier_mask: Vec<bool>,
    /// Constant added to the outlier entries.
    pub outlier_magnitude: f64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// `b = A u_true + N(0, noise_sigma²) + magnitude · mask` with i.i.d. standard
/// normal `A` and `u_true`.
///
/// The mask selects `⌊outlier_frac · m⌋` rows uniformly without replacement.
/// `outlier_magnitude` defaults to ten times the standard deviation of `A u_true`.
pub fn gen_regression(
    m: usize,
    n: usize,
    outlier_frac: f64,
    outlier_magnitude: Option<f64>,
    noise_sigma: f64,
    seed: u64,
) -> Result<RegressionDataset> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!("dataset shape {m}×{n} must be nonempty")));
    }
    if !(0.0..=1.0).contains(&outlier_frac) {
        return Err(Error::InvalidParameter(format!("outlier_frac must lie in [0, 1], got {outlier_frac}")));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise_sigma must be nonnegative, got {noise_sigma}")));
    }
    if let Some(c) = outlier_magnitude {
        if !c.is_finite() {
            return Err(Error::InvalidParameter("outlier_magnitude must be finite".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..m * n).map(|_| gaussian(&mut rng)).collect();
    let a = DenseMatrix::from_row_major(m, n, data)?;
    let u_true: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
    let clean = a.mul_vec(&u_true);
    let magnitude = outlier_magnitude.unwrap_or_else(|| 10.0 * std_dev(&clean));

    let k = (outlier_frac * m as f64).floor() as usize;
    let mut mask = vec![false; m];
    for i in sample(&mut rng, m, k.min(m)) {
        mask[i] = true;
    }
    let b = clean
        .iter()
        .zip(&mask)
        .map(|(&c, &out)| {
            let noise = noise_sigma * gaussian(&mut rng);
            c + noise + if out { magnitude } else { 0.0 }
        })
        .collect();
    Ok(RegressionDataset {
        a,
        b,
        ground_truth_u: u_true,
        outlier_mask: mask,
        outlier_magnitude: magnitude,
    })
}

/// Truncated-quadratic robust regression: `f_i(z) = min(δ_{b_i}(z), ν)`, `g = 0`.
///
/// The constraint variable `v = Au` is kept; the offset `b_i` lives in the loss.
pub fn build_regression_problem(d: &RegressionDataset, lambda: f64, nu: f64) -> Result<ConsensusProblem> {
    if !(lambda > 0.0 && nu > 0.0) {
        return Err(Error::InvalidParameter(format!("λ and ν must be positive, got λ = {lambda}, ν = {nu}")));
    }
    let base = PiecewiseConvexFunction::l0(nu)?;
    let coords = d.b.iter().map(|&b| base.clone().shifted(b)).collect();
    ConsensusProblem::new(d.a.clone(), SeparableLoss::new(coords)?, Regularizer::Zero, lambda)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationDataset {
    /// Centered features, `N × (signal_dims + noise_dims)`.
    pub x: DenseMatrix,
    /// ±1
    pub labels: Vec<f64>,
    pub labeled_mask: Vec<bool>,
    pub signal_dims: usize,
    pub noise_dims: usize,
    /// Training column means subtracted from `x`.
    pub column_means: Vec<f64>,
    /// Unit normal of the generating hyperplane on the signal columns, zero on the noise columns.
    pub direction: Vec<f64>,
}

impl ClassificationDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled_mask.iter().filter(|&&l| l).count()
    }

    /// Label of the larger class; ties go to `+1`.
    pub fn majority_label(&self) -> f64 {
        let pos = self.labels.iter().filter(|&&y| y > 0.0).count();
        if 2 * pos >= self.labels.len() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Training set of `n` examples with `l` labeled, plus a holdout of `⌊n/4⌋`
/// examples from the same distribution.
///
/// Signal features are `y (CLASS_MARGIN + |h|) w + P⊥ g` for a random unit
/// direction `w`, with `h`, `g` standard normal and `P⊥` the projector onto
/// `w⊥`. A `margin_violation_frac` fraction of labels is flipped, which makes
/// the classes overlap. Noise columns are standard normal. Rows are shuffled,
/// the first `l` training rows are labeled, and both sets are centered with
/// the training column means.
pub fn gen_classification(
    n: usize,
    d_signal: usize,
    d_noise: usize,
    l: usize,
    margin_violation_frac: f64,
    seed: u64,
) -> Result<(ClassificationDataset, ClassificationDataset)> {
    if n == 0 || d_signal == 0 {
        return Err(Error::InvalidParameter("need at least one example and one signal dimension".into()));
    }
    if l > n {
        return Err(Error::InvalidParameter(format!("l = {l} exceeds N = {n}")));
    }
    if !(0.0..=1.0).contains(&margin_violation_frac) {
        return Err(Error::InvalidParameter(format!(
            "margin_violation_frac must lie in [0, 1], got {margin_violation_frac}"
        )));
    }
    let dim = d_signal + d_noise;
    let total = n + n / 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut w: Vec<f64> = (0..d_signal).map(|_| gaussian(&mut rng)).collect();
    let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if wn == 0.0 {
        w[0] = 1.0;
    } else {
        w.iter_mut().for_each(|x| *x /= wn);
    }

    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(total);
    for _ in 0..total {
        let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let mut g: Vec<f64> = (0..d_signal).map(|_| gaussian(&mut rng)).collect();
        let along: f64 = g.iter().zip(&w).map(|(a, b)| a * b).sum();
        let s = y * (CLASS_MARGIN + gaussian(&mut rng).abs());
        for (gi, wi) in g.iter_mut().zip(&w) {
            *gi += (s - along) * wi;
        }
        g.extend((0..d_noise).map(|_| gaussian(&mut rng)));
        rows.push((g, y));
    }
    let flips = (margin_violation_frac * total as f64).floor() as usize;
    for i in sample(&mut rng, total, flips) {
        rows[i].1 = -rows[i].1;
    }
    rows.shuffle(&mut rng);

    let holdout_rows = rows.split_off(n);
    let mut means = vec![0.0; dim];
    for (r, _) in &rows {
        for (m, v) in means.iter_mut().zip(r) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);

    let mut direction = w;
    direction.resize(dim, 0.0);
    let build = |rows: Vec<(Vec<f64>, f64)>, labeled: usize| -> Result<ClassificationDataset> {
        let count = rows.len();
        let mut data = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for (r, y) in rows {
            data.extend(r.iter().zip(&means).map(|(v, m)| v - m));
            labels.push(y);
        }
        let x = if count == 0 {
            // an empty holdout still carries its column count
            DenseMatrix::from_row_major(1, dim, vec![0.0; dim])?
        } else {
            DenseMatrix::from_row_major(count, dim, data)?
        };
        Ok(ClassificationDataset {
            x,
            labels,
            labeled_mask: (0..count).map(|i| i < labeled).collect(),
            signal_dims: d_signal,
            noise_dims: d_noise,
            column_means: means.clone(),
            direction: direction.clone(),
        })
    };
    let train = build(rows, l)?;
    let holdout = build(holdout_rows, 0)?;
    Ok((train, holdout))
}

/// Semi-supervised SVM with feature selection:
/// unlabeled rows get `min_θ (1 - θ v)_+`, labeled rows `(1 - θ_j v)_+`, and
/// `g = α‖u‖₀ + β‖u‖²`.
pub fn build_ssl_problem(d: &ClassificationDataset, alpha: f64, beta: f64, lambda: f64) -> Result<ConsensusProblem> {
    if d.is_empty() {
        return Err(Error::InvalidParameter("empty classification dataset".into()));
    }
    let coords = d
        .labels
        .iter()
        .zip(&d.labeled_mask)
        .map(|(&y, &labeled)| {
            if labeled {
                PiecewiseConvexFunction::hinge(y)
            } else {
                Ok(PiecewiseConvexFunction::symmetric_hinge())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let reg = Regularizer::L0PlusL2 { alpha, beta };
    ConsensusProblem::new(d.x.clone(), SeparableLoss::new(coords)?, reg, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub test_error: f64,
    /// `‖u‖₀ / d`
    pub sparsity: f64,
    pub objective: f64,
}

/// Holdout error of `sign(Xu)`, sparsity and objective of `u` on `p`.
///
/// A zero score predicts the training majority label.
pub fn metrics(
    p: &ConsensusProblem,
    train: &ClassificationDataset,
    u: &[f64],
    holdout: &ClassificationDataset,
) -> Result<ClassificationMetrics> {
    let objective = p.regularized_objective(u)?;
    let dim = train.x.cols();
    crate::error::check_len("u", dim, u.len())?;
    crate::error::check_len("holdout columns", dim, holdout.x.cols())?;
    let fallback = train.majority_label();
    let wrong = holdout
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let score: f64 = holdout.x.row(i).iter().zip(u).map(|(a, b)| a * b).sum();
            let pred = if score > 0.0 {
                1.0
            } else if score < 0.0 {
                -1.0
            } else {
                fallback
            };
            pred != y
        })
        .count();
    let test_error = if holdout.is_empty() {
        0.0
    } else {
        wrong as f64 / holdout.len() as f64
    };
    let nnz = u.iter().filter(|x| x.abs() > SPARSITY_TOL).count();
    Ok(ClassificationMetrics {
        test_error,
        sparsity: nnz as f64 / dim as f64,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_regression_is_exact() {
        let d = gen_regression(50, 4, 0.0, None, 0.0, 3).unwrap();
        assert_eq!(d.b, d.a.mul_vec(&d.ground_truth_u));
        assert!(d.outlier_mask.iter().all(|&o| !o));
        let p = build_regression_problem(&d, 0.05, 0.01).unwrap();
        assert_eq!(p.regularized_objective(&d.ground_truth_u).unwrap(), 0.0);
    }

    #[test]
    fn outlier_count_is_floor() {
        let d = gen_regression(20000, 2, 0.6, None, 0.1, 1).unwrap();
        assert_eq!(d.outlier_mask.iter().filter(|&&o| o).count(), 12000);
        let d = gen_regression(7, 2, 0.5, Some(3.0), 0.0, 1).unwrap();
        assert_eq!(d.outlier_mask.iter().filter(|&&o| o).count(), 3);
        let clean = d.a.mul_vec(&d.ground_truth_u);
        for i in 0..7 {
            let shift = if d.outlier_mask[i] { 3.0 } else { 0.0 };
            assert!((d.b[i] - clean[i] - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn regression_rejects_bad_input() {
        assert!(gen_regression(10, 2, 1.5, None, 0.0, 0).is_err());
        assert!(gen_regression(0, 2, 0.1, None, 0.0, 0).is_err());
        let d = gen_regression(10, 2, 0.1, None, 0.0, 0).unwrap();
        assert!(build_regression_problem(&d, 0.0, 0.01).is_err());
        assert!(build_regression_problem(&d, 0.05, -1.0).is_err());
    }

    #[test]
    fn regression_loss_contributions() {
        let d = gen_regression(3, 1, 0.0, None, 0.0, 9).unwrap();
        let p = build_regression_problem(&d, 0.05, 0.01).unwrap();
        let f = p.loss().coord(0);
        assert_eq!(f.envelope(d.b[0], 0.05).unwrap(), 0.0);
        assert_eq!(f.envelope(d.b[0] + 5.0, 0.05).unwrap(), 0.01);
    }

    #[test]
    fn generators_are_deterministic() {
        let a = gen_regression(30, 3, 0.2, None, 0.5, 11).unwrap();
        let b = gen_regression(30, 3, 0.2, None, 0.5, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_regression(30, 3, 0.2, None, 0.5, 12).unwrap();
        assert_ne!(a.b, c.b);
        assert_eq!(gen_classification(40, 3, 2, 5, 0.1, 4).unwrap(), gen_classification(40, 3, 2, 5, 0.1, 4).unwrap());
    }

    #[test]
    fn classification_layout() {
        let (train, holdout) = gen_classification(200, 4, 6, 20, 0.1, 5).unwrap();
        assert_eq!(train.x.rows(), 200);
        assert_eq!(train.x.cols(), 10);
        assert_eq!(holdout.len(), 50);
        assert_eq!(train.labeled_count(), 20);
        assert!(train.labeled_mask[..20].iter().all(|&l| l));
        assert_eq!(holdout.labeled_count(), 0);
        for j in 0..10 {
            let mean: f64 = (0..200).map(|i| train.x.get(i, j)).sum::<f64>() / 200.0;
            assert!(mean.abs() <= 1e-10, "column {j} mean {mean}");
        }
        assert!(train.direction[4..].iter().all(|&w| w == 0.0));
        assert!(gen_classification(10, 2, 0, 11, 0.0, 0).is_err());
        let (full, _) = gen_classification(10, 2, 0, 10, 0.0, 0).unwrap();
        assert!(full.labeled_mask.iter().all(|&l| l));
    }

    #[test]
    fn separable_without_violations() {
        let (train, holdout) = gen_classification(300, 3, 0, 300, 0.0, 8).unwrap();
        // the generating hyperplane, shifted back by the centering offset
        let offset: f64 = train.column_means.iter().zip(&train.direction).map(|(m, w)| m * w).sum();
        for d in [&train, &holdout] {
            for i in 0..d.len() {
                let proj: f64 = d.x.row(i).iter().zip(&d.direction).map(|(a, b)| a * b).sum::<f64>() + offset;
                assert!(d.labels[i] * proj >= CLASS_MARGIN - 1e-9);
            }
        }
    }

    #[test]
    fn ssl_problem_pieces() {
        let (train, _) = gen_classification(20, 2, 1, 5, 0.0, 2).unwrap();
        let p = build_ssl_problem(&train, 0.025, 0.416, 0.5).unwrap();
        assert_eq!(p.loss().coord(0).pieces().len(), 1);
        assert_eq!(p.loss().coord(10).pieces().len(), 2);
        assert!((p.loss().coord(10).envelope(0.0, 0.5).unwrap() - 0.75).abs() < 1e-15);
        let theta = train.labels[0];
        assert_eq!(p.loss().coord(0).eval(2.0 * theta), 0.0);
        assert!(matches!(p.regularizer(), Regularizer::L0PlusL2 { .. }));
    }

    #[test]
    fn metrics_examples() {
        let (train, holdout) = gen_classification(400, 3, 2, 40, 0.0, 6).unwrap();
        let p = build_ssl_problem(&train, 0.025, 0.416, 0.5).unwrap();
        let zero = metrics(&p, &train, &[0.0; 5], &holdout).unwrap();
        let maj = train.majority_label();
        let expect = holdout.labels.iter().filter(|&&y| y != maj).count() as f64 / holdout.len() as f64;
        assert_eq!(zero.test_error, expect);
        assert_eq!(zero.sparsity, 0.0);

        // a separator must pass through the original origin, so fold the centering
        // offset into a large scale: projections are ≥ 1 in magnitude before centering
        let offset: f64 = train.column_means.iter().zip(&train.direction).map(|(m, w)| m * w).sum();
        assert!(offset.abs() < 0.5, "offset {offset}");
        let good = metrics(&p, &train, &train.direction, &holdout).unwrap();
        assert_eq!(good.test_error, 0.0);
        assert_eq!(good.sparsity, 3.0 / 5.0);

        let u = [0.0, 1.0, 0.0, 0.0, 2.0];
        assert_eq!(metrics(&p, &train, &u, &holdout).unwrap().sparsity, 0.4);
    }
}
