//! Acceptance criteria A1–A10. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fivegcs::algorithms::{
    round_point_saga, round_with_cohort, schedule_thm1, schedule_thm2, schedule_thm3, schedule_thm5, Aggregation,
    DualRule, LocalSteps, Schedule, ServerState,
};
use fivegcs::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use fivegcs::harness::{
    contraction_test, run_on_problem, sweep_t_vs_c, sweep_t_vs_k, ExperimentConfig, Method, ScheduleChoice,
};
use fivegcs::linalg;
use fivegcs::local_solvers::{check_gtps, default_prox_tol, exact_prox, gd_solve, required_k_gd, LocalSolver};
use fivegcs::objective::{LocalSubproblem, Problem};
use fivegcs::sampling::expected_sq_deviation;

use common::{fd_gradient, reference, rel_err, subsets, synthetic};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.gen_range(-1.0..1.0)).collect()
}

/// Brute-force `E‖Σ_m (P(v)_m − v_m)‖²` against the closed form.
fn a1_variance_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for m in 2..=6 {
        for c in 1..=m {
            for _ in 0..50 {
                let v: Vec<Vec<f64>> = (0..m).map(|_| rand_vec(&mut rng, 3, 2.0)).collect();
                let cohorts = subsets(m, c);
                let mut mean = 0.0;
                for s in &cohorts {
                    let mut dev = vec![0.0; 3];
                    for (k, vk) in v.iter().enumerate() {
                        let w = if s.contains(&k) { m as f64 / c as f64 - 1.0 } else { -1.0 };
                        linalg::axpy(w, vk, &mut dev);
                    }
                    mean += linalg::norm_sq(&dev);
                }
                mean /= cohorts.len() as f64;
                let closed = expected_sq_deviation(&v, c).unwrap();
                let err = (closed - mean).abs() / mean.abs().max(1e-300);
                if mean == 0.0 {
                    worst = worst.max(closed.abs());
                } else {
                    worst = worst.max(err);
                }
            }
        }
    }
    outcome(worst <= 1e-10, format!("max relative error {worst:.2e} (tol 1e-10)"))
}

/// Exact expected Lyapunov contraction for thm1, thm2 and thm3 schedules.
fn a2_contraction() -> Outcome {
    let mut failures = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for kind in ["logistic,d=10,n=20", "quadratic,d=10"] {
        for kappa in [1e2, 1e3] {
            let p = synthetic(&format!("{kind},kappa={kappa},seed=3"), 4);
            let r = reference(&p);
            let c = p.constants();
            let schedules = [
                ("thm1", schedule_thm1(&c, 2).unwrap()),
                ("thm2", schedule_thm2(&c, 2).unwrap()),
                ("thm3", schedule_thm3(&c, 2).unwrap()),
            ];
            for (name, s) in schedules {
                let rule = DualRule::for_schedule(&s);
                let state = ServerState::initial(&p, vec![0.0; p.dim()], Default::default()).unwrap();
                let report = contraction_test(&p, &r, &s, &rule, state, 100, 11, 1e-9).unwrap();
                for row in &report.rows {
                    worst_ratio = worst_ratio.max(row.expected_next / row.bound);
                }
                if !report.passed || report.rows.len() != 100 {
                    failures.push(format!("{kind} κ={kappa} {name}"));
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "12 configurations x 100 rounds; max E[Ψ']/((1-ρ)Ψ) = {worst_ratio:.4}; failures: {failures:?}"
        ),
    )
}

/// 5GCS with 10⁵ local GD steps tracks minibatch Point-SAGA.
fn a3_point_saga_limit() -> Outcome {
    let p = synthetic("logistic,d=5,n=20,kappa=100,seed=4", 4);
    let c = p.constants();
    let s = schedule_thm1(&c, 2).unwrap();
    let gd = DualRule::LocalTraining(LocalSolver::gd(100_000));
    let mut a = ServerState::initial(&p, vec![0.0; p.dim()], Default::default()).unwrap();
    let mut b = a.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let cohort = round_point_saga(&p, &mut a, &s, 5).unwrap();
        round_with_cohort(&p, &mut b, &s, &gd, 5, &cohort, Aggregation::Delta).unwrap();
        let dx = linalg::dist_sq(&a.x, &b.x).sqrt();
        let du = linalg::block_dist_sq(&a.u, &b.u).sqrt();
        worst = worst.max(dx).max(du);
    }
    outcome(worst <= 1e-8, format!("max per-round state difference {worst:.2e} (tol 1e-8)"))
}

fn base_config(clients: usize, cohort: usize, eps: f64, max_rounds: usize) -> ExperimentConfig {
    ExperimentConfig {
        synthetic: Some("unused".into()),
        clients,
        cohort,
        eps,
        max_rounds,
        ..Default::default()
    }
}

/// Rounds to accuracy plateau once `K` passes the accelerated budget.
fn a4_k_plateau() -> Outcome {
    let p = synthetic("logistic,d=10,n=30,kappa=1000,seed=1", 10);
    let r = reference(&p);
    let c = p.constants();
    let k_star = required_k_gd(&c, 2);
    let k_min = (2.0 * (4.0 * c.kappa()).ln()).ceil() as usize;
    let ks = [k_min, k_star, 2 * k_star, 10 * k_star];
    let cfg = base_config(10, 2, 1e-6, 20_000);
    let rows = sweep_t_vs_k(&p, &r, &cfg, &ks, &[0, 1, 2, 3, 4]).unwrap();
    let t: Vec<f64> = rows.iter().map(|row| row.median()).collect();
    let plateau = t[2] <= 1.05 * t[3];
    let gain = t[0] >= 2.0 * t[1];
    outcome(
        plateau && gain,
        format!(
            "K = {ks:?}: median T = {t:?} (unreached within 20000 rounds = inf); T(2K*) ≤ 1.05 T(10K*): {plateau}; T(K_min) ≥ 2 T(K*): {gain}"
        ),
    )
}

fn a5_cohort_monotone() -> Outcome {
    let p = synthetic("logistic,d=10,n=30,kappa=1000,seed=1", 8);
    let r = reference(&p);
    let cfg = ExperimentConfig {
        schedule: Some(ScheduleChoice::Thm2),
        ..base_config(8, 8, 1e-6, 100_000)
    };
    let rows = sweep_t_vs_c(&p, &r, &cfg, &[1, 2, 4, 8], &[0, 1, 2, 3, 4]).unwrap();
    let t: Vec<f64> = rows.iter().map(|row| row.median()).collect();
    let monotone = t.iter().all(|x| x.is_finite()) && t.windows(2).all(|w| w[1] <= w[0]);
    outcome(monotone, format!("C = [1, 2, 4, 8]: median T = {t:?}"))
}

fn a6_no_acceleration_without_local_steps() -> Outcome {
    let p = synthetic("logistic,d=10,n=30,kappa=1000,seed=1", 4);
    let r = reference(&p);
    let accelerated = run_on_problem(&p, &r, &base_config(4, 4, 1e-8, 200_000)).unwrap();
    let zero = run_on_problem(
        &p,
        &r,
        &ExperimentConfig {
            method: Method::FiveGcsZero,
            ..base_config(4, 4, 1e-8, 200_000)
        },
    )
    .unwrap();
    match (accelerated.summary.t_reached, zero.summary.t_reached) {
        (Some(tk), Some(t0)) => outcome(
            t0 as f64 >= 3.0 * tk as f64,
            format!("T(K=0) = {t0}, T(K*) = {tk}, ratio {:.2} (need ≥ 3)", t0 as f64 / tk as f64),
        ),
        (tk, t0) => outcome(false, format!("did not reach ε: T(K*) = {tk:?}, T(K=0) = {t0:?}")),
    }
}

/// First round with `‖x − x*‖² ≤ ε‖x⁰ − x*‖²`.
fn rounds_to_dist(trace: &[fivegcs::harness::TraceRecord], eps: f64) -> Option<u64> {
    let d0 = trace[0].dist_sq;
    trace.iter().find(|r| r.dist_sq <= eps * d0).map(|r| r.round)
}

fn a7_client_sampling_ordering() -> Outcome {
    let (m, c, cap) = (15, 3, 20_000);
    let p = synthetic("logistic,d=10,n=30,kappa=1000,seed=1", m);
    let r = reference(&p);
    let ours = run_on_problem(&p, &r, &base_config(m, c, 1e-300, 5_000)).unwrap();
    let t_ours = rounds_to_dist(&ours.trace, 1e-6);
    let mut t_base = Vec::new();
    for method in [BaselineMethod::LocalGd, BaselineMethod::Scaffold] {
        let cfg = BaselineConfig::defaults(method, &p, c);
        let trace = run_baseline(&p, cfg, cap, 0, &r.x_star, r.f_star).unwrap();
        t_base.push((method.name(), rounds_to_dist(&trace, 1e-6)));
    }
    let inf = |t: Option<u64>| t.map_or(f64::INFINITY, |t| t as f64);
    let ordering = t_ours.is_some() && t_base.iter().all(|(_, t)| inf(t_ours) < inf(*t));

    let ps = run_baseline(&p, BaselineConfig::defaults(BaselineMethod::ProxSkip, &p, c), 3_000, 0, &r.x_star, r.f_star)
        .unwrap();
    let tail: Vec<f64> = ps[ps.len() - 50..].iter().map(|t| t.dist_sq).collect();
    let nondecreasing = tail.windows(2).all(|w| w[1] >= w[0]);
    let decreases = tail.windows(2).filter(|w| w[1] < w[0]).count();
    outcome(
        ordering && nondecreasing,
        format!(
            "rounds to ‖x−x*‖² ≤ 1e-6·‖x⁰−x*‖²: 5gcs {t_ours:?}, {t_base:?} (cap {cap}); ordering: {ordering}; \
             proxskip with C<M: ‖x−x*‖² over last 50 of 3000 rounds in [{:.3e}, {:.3e}], {decreases} decreasing steps; nondecreasing: {nondecreasing}",
            tail.iter().copied().fold(f64::INFINITY, f64::min),
            tail.iter().copied().fold(0.0, f64::max),
        ),
    )
}

fn a8_oracle_hygiene() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut prox_ok = true;
    let mut worst_residual: f64 = 0.0;
    for spec in ["logistic,d=6,n=15,kappa=100,seed=2", "quadratic,d=6,kappa=100,seed=2"] {
        let p = synthetic(spec, 3);
        for _ in 0..100 {
            let x = rand_vec(&mut rng, p.dim(), 2.0);
            let u = rand_vec(&mut rng, p.dim(), 0.5);
            let m = rng.gen_range(0..3);
            let tau = rng.gen_range(0.1..5.0);
            let sub = LocalSubproblem::new(&p, m, tau, &x, &u);
            let y = rand_vec(&mut rng, p.dim(), 2.0);
            let h = 1e-5;
            worst = worst
                .max(rel_err(&fd_gradient(|z| p.f_m_value(m, z), &y, h), &p.grad_f_m(m, &y)))
                .max(rel_err(&fd_gradient(|z| p.big_f_m_value(m, z), &y, h), &p.grad_big_f_m(m, &y)))
                .max(rel_err(&fd_gradient(|z| sub.value(z), &y, h), &sub.gradient(&y)));
            let prox = exact_prox(&sub, None).unwrap();
            prox_ok &= linalg::norm(&sub.gradient(&prox)) <= default_prox_tol(&sub.center);
        }
        let r = reference(&p);
        worst_residual = worst_residual.max(r.optimality_residual(p.mu()));
    }
    outcome(
        worst <= 1e-5 && prox_ok && worst_residual <= 1e-8,
        format!(
            "max FD relative error {worst:.2e} (tol 1e-5); prox residuals within tol: {prox_ok}; max reference residual {worst_residual:.2e} (tol 1e-8)"
        ),
    )
}

fn gd_points(p: &Problem, s: &Schedule, x_hat: &[f64], u: &[Vec<f64>], k: usize) -> Vec<Vec<f64>> {
    let tau = s.tau.unwrap();
    (0..p.num_clients())
        .map(|m| {
            let sub = LocalSubproblem::new(p, m, tau, x_hat, &u[m]);
            gd_solve(&sub, x_hat, k, 1.0 / sub.smoothness())
        })
        .collect()
}

fn a9_local_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut satisfied = 0;
    for i in 0..50 {
        let kind = if i % 2 == 0 { "logistic,d=6,n=12" } else { "quadratic,d=6" };
        let kappa = 10f64.powf(rng.gen_range(1.0..3.0));
        let m = rng.gen_range(2..=6);
        let c = rng.gen_range(1..=m);
        let p = synthetic(&format!("{kind},kappa={kappa},seed={i}"), m);
        let s = schedule_thm2(&p.constants(), c).unwrap();
        let LocalSteps::Finite(k) = s.local_steps else { unreachable!() };
        let x_hat = rand_vec(&mut rng, p.dim(), 1.0);
        let u: Vec<Vec<f64>> = (0..m).map(|_| rand_vec(&mut rng, p.dim(), 0.1)).collect();
        let ys = gd_points(&p, &s, &x_hat, &u, k);
        if check_gtps(&p, s.tau.unwrap(), &x_hat, &u, &ys, None).unwrap().satisfied {
            satisfied += 1;
        }
    }
    let p = synthetic("logistic,d=6,n=12,kappa=10000,seed=1", 4);
    let s = schedule_thm2(&p.constants(), 2).unwrap();
    let x_hat = rand_vec(&mut rng, p.dim(), 1.0);
    let u = vec![vec![0.0; p.dim()]; 4];
    let ys = gd_points(&p, &s, &x_hat, &u, 0);
    let negative = check_gtps(&p, s.tau.unwrap(), &x_hat, &u, &ys, None).unwrap();
    outcome(
        satisfied == 50 && !negative.satisfied,
        format!(
            "K = required: {satisfied}/50 satisfied; K = 0 at κ=1e4: lhs {:.3e} vs rhs {:.3e}, violated: {}",
            negative.lhs, negative.rhs, !negative.satisfied
        ),
    )
}

fn a10_log_local_steps() -> Outcome {
    let p = synthetic("logistic,d=10,n=20,kappa=100,seed=5", 4);
    let r = reference(&p);
    let c = p.constants();
    let s = schedule_thm5(&c, 2).unwrap();
    let rule = DualRule::for_schedule(&s);
    let state = ServerState::initial(&p, vec![0.0; p.dim()], Default::default()).unwrap();
    let report = contraction_test(&p, &r, &s, &rule, state, 100, 3, 1e-9).unwrap();
    let eps = 1e-6;
    let cfg = ExperimentConfig {
        schedule: Some(ScheduleChoice::Thm5),
        ..base_config(4, 2, eps, 100_000)
    };
    let run = run_on_problem(&p, &r, &cfg).unwrap();
    let (l, mu, m, lf) = (c.l, c.mu, 4.0, c.lf);
    let kappa = l / mu;
    let bound = (1.0 + 16.0 * kappa / 3.0).max(m / 2.0 + 3.0 * m / 16.0 * (m * lf / l)) * (1.0 / eps).ln();
    let t = run.summary.t_reached;
    let within = t.is_some_and(|t| t as f64 <= bound * 1.01);
    outcome(
        report.passed && within,
        format!(
            "contraction test {}/100 rounds; K = {:?}; T = {t:?} vs bound {bound:.1}",
            report.rows.iter().filter(|r| r.holds).count(),
            s.local_steps
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("A1", "sampling variance identity", a1_variance_identity),
        ("A2", "exact-expectation contraction", a2_contraction),
        ("A3", "infinite-local-steps limit", a3_point_saga_limit),
        ("A4", "T-vs-K plateau", a4_k_plateau),
        ("A5", "cohort-size monotonicity", a5_cohort_monotone),
        ("A6", "no acceleration without local steps", a6_no_acceleration_without_local_steps),
        ("A7", "client-sampling ordering", a7_client_sampling_ordering),
        ("A8", "gradient and oracle hygiene", a8_oracle_hygiene),
        ("A9", "local accuracy condition", a9_local_accuracy),
        ("A10", "logarithmic local steps", a10_log_local_steps),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let status = if result.passed { "PASS" } else { "FAIL" };
        println!(
            "{id} {status} {name} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        failed += usize::from(!result.passed);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
