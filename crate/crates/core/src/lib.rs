//! Splitting methods for nonconvex consensus problems
//!
//! ```text
//! minimize  e_λ f(v) + g(u)   subject to  Au = v
//! ```
//!
//! where `f` is separable and each coordinate is a pointwise minimum of simple
//! convex pieces, `e_λ f` is its Moreau envelope and `g` is either zero or
//! `α‖u‖₀ + β‖u‖²`. The solvers work on the lifted problem with `v = z + λy`.
//!
//! ```
//! use moreau_core::{
//!     run, Algorithm, ConsensusProblem, DenseMatrix, PiecewiseConvexFunction,
//!     Regularizer, SeparableLoss, SolverConfig, SolverState, StopReason,
//! };
//!
//! let a = DenseMatrix::from_rows(&[vec![1.0]]).unwrap();
//! let loss = SeparableLoss::repeated(PiecewiseConvexFunction::l0(0.01).unwrap(), 1);
//! let p = ConsensusProblem::new(a, loss, Regularizer::Zero, 0.05).unwrap();
//! let cfg = SolverConfig::defaults_for(Algorithm::PrimalDual, p.lambda());
//! let init = SolverState::new(&p, vec![1.0], vec![0.0], vec![0.0]).unwrap();
//! let out = run(&p, Algorithm::PrimalDual, &cfg, init).unwrap();
//! assert_eq!(out.stop, StopReason::Converged);
//! ```

pub mod consensus;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod prox;
pub mod solvers;

pub use consensus::{operator_norm, ConsensusProblem, DenseMatrix, LinearOperator, NormEstimate, Regularizer, SolverState};
pub use diagnostics::{gap_report, lifted_residuals, optimality_gap, qualification_check, Gap, GapReport, LiftedResiduals};
pub use error::{Error, Result};
pub use prox::{ActiveSet, ConvexPiece, Interval, PiecewiseConvexFunction, ProxPoint, SeparableLoss};
pub use solvers::{run, Algorithm, Escalation, RhoSchedule, RunOutcome, SolverConfig, StopReason, Trace, TraceRecord};
