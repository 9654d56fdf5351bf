use moreau_core::experiments::{build_regression_problem, build_ssl_problem, gen_classification, gen_regression};
use moreau_core::solvers::{step_primal_dual, step_proximal_penalty};
use moreau_core::{operator_norm, run, Algorithm, ConsensusProblem, RhoSchedule, SolverConfig, SolverState, StopReason};
use proptest::prelude::*;

/// Small robust-regression or semi-supervised instances.
fn problem() -> impl Strategy<Value = ConsensusProblem> {
    prop_oneof![
        (5usize..30, 1usize..5, 0.0..0.7f64, 0.01..0.2f64, 0.005..0.05f64, any::<u64>()).prop_map(
            |(m, n, frac, lambda, nu, seed)| {
                let d = gen_regression(m, n, frac, None, 0.05, seed).unwrap();
                build_regression_problem(&d, lambda, nu).unwrap()
            }
        ),
        (8usize..30, 1usize..4, 0usize..3, 0.1..1.0f64, any::<u64>()).prop_map(|(n, ds, dn, lambda, seed)| {
            let (train, _) = gen_classification(n, ds, dn, n / 3, 0.1, seed).unwrap();
            build_ssl_problem(&train, 0.025, 0.416, lambda).unwrap()
        }),
    ]
}

fn fixed_config(p: &ConsensusProblem, alg: Algorithm, rho: f64, iters: usize) -> SolverConfig {
    let mut cfg = SolverConfig::defaults_for(alg, p.lambda());
    cfg.rho = RhoSchedule::fixed(rho);
    cfg.max_iters = iters;
    cfg.stop_eps = 0.0;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lyapunov_sufficient_decrease(p in problem(), excess in 0.0..2.0f64) {
        let lam = p.lambda();
        let rho = (1.0 + excess) / lam;
        let out = run(&p, Algorithm::PrimalDual, &fixed_config(&p, Algorithm::PrimalDual, rho, 300), SolverState::zeros(&p)).unwrap();
        let n2 = out.norm * out.norm;
        let cu = rho * n2 / 2.0 - 1.0 / (2.0 * out.sigma);
        let cy = 1.0 / rho - (rho * lam * lam + lam) / 2.0;
        prop_assert!(cu < 0.0 && cy <= 1e-12);
        for w in out.trace.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let slack = 1e-9 * (1.0 + a.lyapunov.abs());
            prop_assert!(b.lyapunov <= a.lyapunov + slack, "t = {}", b.t);
            prop_assert!(b.lyapunov - a.lyapunov <= cu * b.du * b.du + cy * b.dy * b.dy + slack, "t = {}", b.t);
        }
    }

    #[test]
    fn lyapunov_dominates_penalty_along_iterates(p in problem(), excess in 0.0..2.0f64) {
        let rho = (1.0 + excess) / p.lambda();
        let out = run(&p, Algorithm::PrimalDual, &fixed_config(&p, Algorithm::PrimalDual, rho, 200), SolverState::zeros(&p)).unwrap();
        let floor = out.trace.records.iter().map(|r| r.objective).fold(f64::INFINITY, f64::min);
        for r in &out.trace.records {
            prop_assert!(r.penalty <= r.lyapunov + 1e-10 * (1.0 + r.lyapunov.abs()));
            prop_assert!(r.lyapunov >= floor - 1e-10 * (1.0 + floor.abs()));
        }
    }

    #[test]
    fn multiplier_minimizes_lagrangian_in_w(p in problem(), excess in 0.0..2.0f64, scale in 0.01..2.0f64, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |k: usize| (0..k).map(|_| scale * rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (m, n) = (p.m(), p.n());
        let s = SolverState::new(&p, draw(n), draw(m), draw(m)).unwrap();
        let lam = p.lambda();
        let rho = (1.0 + excess) / lam;
        let norm = operator_norm(p.matrix(), 1e-6, 0).unwrap().value;
        let next = step_primal_dual(&p, &s, rho, 0.9 / (rho * norm * norm)).unwrap();
        let au = p.matrix().mul_vec(&next.u);
        let w_star: Vec<f64> = (0..m).map(|j| lam * (s.y[j] + rho * (au[j] - next.z[j])) / (1.0 + rho * lam)).collect();
        for j in 0..m {
            prop_assert!((next.y[j] - w_star[j] / lam).abs() <= 1e-12 * (1.0 + next.y[j].abs()));
        }
        // w* is a minimizer: perturbing it never lowers the Lagrangian
        let base = p.augmented_lagrangian(&next.u, &next.z, &w_star, &s.y, rho).unwrap();
        prop_assume!(base.is_finite());
        for delta in [1e-3, -1e-3, 0.1] {
            let w: Vec<f64> = w_star.iter().map(|w| w + delta).collect();
            let other = p.augmented_lagrangian(&next.u, &next.z, &w, &s.y, rho).unwrap();
            prop_assert!(base <= other + 1e-12 * (1.0 + base.abs()));
        }
    }

    #[test]
    fn primal_dual_reduces_to_penalty_method(p in problem()) {
        let lam = p.lambda();
        let norm = operator_norm(p.matrix(), 1e-6, 0).unwrap().value;
        let sigma = 0.9 * lam / (norm * norm);
        let mut a = SolverState::zeros(&p);
        let mut b = a.clone();
        for t in 0..200 {
            a = step_primal_dual(&p, &a, 1.0 / lam, sigma).unwrap();
            b = step_proximal_penalty(&p, &b, sigma).unwrap();
            for (x, y) in a.u.iter().chain(&a.z).zip(b.u.iter().chain(&b.z)) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "t = {}", t);
            }
        }
    }

    #[test]
    fn converged_runs_are_feasible(p in problem(), alg in prop_oneof![Just(Algorithm::PrimalDual), Just(Algorithm::ProximalPenalty), Just(Algorithm::Palm)]) {
        let mut cfg = SolverConfig::defaults_for(alg, p.lambda());
        cfg.max_iters = 20_000;
        let out = run(&p, alg, &cfg, SolverState::zeros(&p)).unwrap();
        prop_assume!(out.stop == StopReason::Converged);
        let s = &out.state;
        let au = p.matrix().mul_vec(&s.u);
        let lam = p.lambda();
        let r: f64 = au.iter().zip(&s.z).zip(&s.y).map(|((a, z), y)| (a - z - lam * y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(r <= 10.0 * cfg.stop_eps * (1.0 + out.norm), "‖Au - z - λy‖ = {}", r);
    }
}

#[test]
fn runs_are_deterministic() {
    let d = gen_regression(40, 3, 0.5, None, 0.03, 17).unwrap();
    let p = build_regression_problem(&d, 0.05, 0.01).unwrap();
    for alg in Algorithm::ALL {
        let cfg = SolverConfig::defaults_for(alg, p.lambda());
        let a = run(&p, alg, &cfg, SolverState::zeros(&p)).unwrap();
        let b = run(&p, alg, &cfg, SolverState::zeros(&p)).unwrap();
        assert_eq!(a.trace, b.trace, "{alg}");
        assert_eq!(a.state, b.state, "{alg}");
    }
}

#[test]
fn trace_csv_layout() {
    let d = gen_regression(10, 2, 0.0, None, 0.0, 1).unwrap();
    let p = build_regression_problem(&d, 0.05, 0.01).unwrap();
    let mut cfg = SolverConfig::defaults_for(Algorithm::PrimalDual, p.lambda());
    cfg.max_iters = 5;
    let out = run(&p, Algorithm::PrimalDual, &cfg, SolverState::zeros(&p)).unwrap();
    let mut buf = Vec::new();
    out.trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.split('\n').collect();
    assert_eq!(lines[0], "t,objective,lyapunov,penalty,feas,du,dz,dy,rho");
    assert_eq!(lines.len(), 1 + 6 + 1, "header, t = 0..=5, trailing newline");
    assert!(lines[1].starts_with("0,"));
    assert!(!text.contains('\r'));
}
