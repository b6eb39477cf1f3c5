//! Solvers for the local subproblem `ψ_m`, the prescribed local-step counts,
//! and the accuracy condition that local training must meet.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, spd_solve};
use crate::objective::{LocalSubproblem, Problem, ProblemConstants};
use crate::sampling::SeededRng;

/// Dimension above which the prox oracle switches from Newton to GD.
pub const NEWTON_MAX_DIM: usize = 2_000;
const PROX_MAX_NEWTON_ITERS: usize = 10_000;
const PROX_MAX_GD_ITERS: usize = 1_000_000;

/// Plain gradient descent on `ψ_m` from `y0`, `steps` times.
pub fn gd_solve(sub: &LocalSubproblem<'_>, y0: &[f64], steps: usize, stepsize: f64) -> Vec<f64> {
    let mut y = y0.to_vec();
    for _ in 0..steps {
        let g = sub.gradient(&y);
        linalg::axpy(-stepsize, &g, &mut y);
    }
    y
}

/// Default stopping tolerance of [`exact_prox`]: `1e-12 · max(1, ‖center‖)`.
pub fn default_prox_tol(center: &[f64]) -> f64 {
    1e-12 * linalg::norm(center).max(1.0)
}

/// Minimizer of `ψ_m`, i.e. `prox_{F_m/τ}(center)`, to `‖∇ψ_m(y)‖ ≤ tol`.
///
/// Damped Newton with a Cholesky solve; above [`NEWTON_MAX_DIM`] it falls
/// back to GD with stepsize `1/(L_F^{(m)} + τ)`.
pub fn exact_prox(sub: &LocalSubproblem<'_>, tol: Option<f64>) -> Result<Vec<f64>> {
    let tol = tol.unwrap_or_else(|| default_prox_tol(&sub.center));
    if !(tol > 0.0) {
        return invalid("prox tolerance must be positive");
    }
    if sub.problem.dim() > NEWTON_MAX_DIM {
        return prox_by_gd(sub, tol);
    }
    let mut y = sub.center.clone();
    let mut g = sub.gradient(&y);
    let mut gnorm = linalg::norm(&g);
    for _ in 0..PROX_MAX_NEWTON_ITERS {
        if gnorm <= tol {
            return Ok(y);
        }
        let Some(step) = spd_solve(sub.hessian(&y), &g) else {
            return prox_by_gd(sub, tol);
        };
        let value = sub.value(&y);
        let slope = linalg::dot(&g, &step);
        let mut t = 1.0;
        let accepted = loop {
            let mut trial = y.clone();
            linalg::axpy(-t, &step, &mut trial);
            let tg = sub.gradient(&trial);
            let tn = linalg::norm(&tg);
            // Near the optimum ψ-differences vanish below rounding; a smaller
            // gradient is then the meaningful progress signal.
            let tv = sub.value(&trial);
            let flat = (tv - value).abs() <= 1e-12 * (1.0 + value.abs());
            if tv <= value - 1e-4 * t * slope || (flat && tn < gnorm) {
                y = trial;
                g = tg;
                gnorm = tn;
                break true;
            }
            t *= 0.5;
            if t < 1e-12 {
                break false;
            }
        };
        if !accepted {
            break;
        }
    }
    if gnorm <= tol {
        return Ok(y);
    }
    Err(Error::NoConvergence {
        solver: "exact_prox",
        iterations: PROX_MAX_NEWTON_ITERS,
        residual: gnorm,
    })
}

fn prox_by_gd(sub: &LocalSubproblem<'_>, tol: f64) -> Result<Vec<f64>> {
    let step = 1.0 / sub.smoothness();
    let mut y = sub.center.clone();
    let mut gnorm = f64::INFINITY;
    for _ in 0..PROX_MAX_GD_ITERS {
        let g = sub.gradient(&y);
        gnorm = linalg::norm(&g);
        if gnorm <= tol {
            return Ok(y);
        }
        linalg::axpy(-step, &g, &mut y);
    }
    Err(Error::NoConvergence {
        solver: "exact_prox (gd fallback)",
        iterations: PROX_MAX_GD_ITERS,
        residual: gnorm,
    })
}

/// Expected-smoothness constant `A″` of the size-`batch` minibatch estimator
/// (sampling without replacement):
/// `(n−b)/(b(n−1)) max_i L_{g_i} + n(b−1)/(b(n−1)) (L_F^{(m)} + τ)`.
pub fn lsvrg_constant(sub: &LocalSubproblem<'_>, batch: usize) -> Result<f64> {
    let n = sub.components();
    if batch == 0 || batch > n {
        return invalid(format!("minibatch size {batch} must lie in 1..={n}"));
    }
    if n == 1 {
        return Ok(sub.smoothness());
    }
    let (nf, b) = (n as f64, batch as f64);
    let max_lg = (0..n)
        .map(|i| sub.component_smoothness(i))
        .fold(0.0, f64::max);
    Ok((nf - b) / (b * (nf - 1.0)) * max_lg + nf * (b - 1.0) / (b * (nf - 1.0)) * sub.smoothness())
}

/// Minibatch variance-reduced estimator of `∇ψ_m(x)`:
/// `∇ψ_m(anchor) + (1/b) Σ_{i∈batch} (∇g_i(x) − ∇g_i(anchor))`.
pub fn lsvrg_estimator(
    sub: &LocalSubproblem<'_>,
    x: &[f64],
    anchor: &[f64],
    anchor_grad: &[f64],
    batch: &[usize],
) -> Vec<f64> {
    let w = 1.0 / batch.len() as f64;
    let mut g = anchor_grad.to_vec();
    for &i in batch {
        sub.add_component_gradient(i, x, w, &mut g);
        sub.add_component_gradient(i, anchor, -w, &mut g);
    }
    g
}

/// Loopless SVRG on `ψ_m` with stepsize `γ₂ = 1/(6A″)` and anchor-refresh
/// probability `p = 2τγ₂`. Each iteration draws one minibatch and one
/// Bernoulli(p) from `rng`.
pub fn lsvrg_solve(
    sub: &LocalSubproblem<'_>,
    y0: &[f64],
    steps: usize,
    batch: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let a = lsvrg_constant(sub, batch)?;
    let gamma = 1.0 / (6.0 * a);
    let p = 2.0 * sub.tau * gamma;
    let n = sub.components();
    let mut x = y0.to_vec();
    let mut anchor = y0.to_vec();
    let mut anchor_grad = sub.gradient(&anchor);
    let mut pool: Vec<usize> = (0..n).collect();
    for _ in 0..steps {
        for i in 0..batch {
            let j = rng.gen_range(i..n);
            pool.swap(i, j);
        }
        let g = lsvrg_estimator(sub, &x, &anchor, &anchor_grad, &pool[..batch]);
        let refresh = rng.gen::<f64>() < p;
        if refresh {
            anchor.copy_from_slice(&x);
        }
        linalg::axpy(-gamma, &g, &mut x);
        if refresh {
            anchor_grad = sub.gradient(&anchor);
        }
    }
    Ok(x)
}

fn log4kappa(c: &ProblemConstants) -> f64 {
    (4.0 * c.kappa()).ln()
}

/// Worst-case GD local steps for the accelerated schedule:
/// `⌈(¾√(CL/(Mμ)) + 2)·log(4L/μ)⌉`.
pub fn required_k_gd(c: &ProblemConstants, cohort: usize) -> usize {
    let ratio = cohort as f64 / c.m();
    ((0.75 * (ratio * c.kappa()).sqrt() + 2.0) * log4kappa(c)).ceil() as usize
}

/// Per-client GD steps using client `m`'s own smoothness `L_m`, at the
/// smallest admissible `τ = (8/3)√(Lμ/(MC))`:
/// `⌈2((L_m − μ)/(Mτ) + 1)·log(4L/μ)⌉`.
pub fn required_k_gd_client(c: &ProblemConstants, client_l: f64, cohort: usize) -> usize {
    let tau = 8.0 / 3.0 * (c.l * c.mu / (c.m() * cohort as f64)).sqrt();
    let local_excess = (client_l - c.mu) / (c.m() * tau);
    (2.0 * (local_excess + 1.0) * log4kappa(c)).ceil() as usize
}

/// Per-client step budgets for all clients of `problem`.
pub fn required_k_gd_personalized(problem: &Problem, cohort: usize) -> Vec<usize> {
    let c = problem.constants();
    (0..problem.num_clients())
        .map(|m| required_k_gd_client(&c, problem.client_smoothness(m), cohort))
        .collect()
}

/// Relative accuracy `δ` that local training must reach,
/// `‖y − y*‖² ≤ δ‖x̂ − y*‖²`, with `a = L_F/τ`:
/// `δ = (μ/(6M)) / (4μL_F²/(3Mτ²) + a(L_F + τ)²/τ)`.
///
/// Returns `+∞` when `L_F = 0` (every `F_m` is affine, any point will do).
pub fn delta_tolerance(mu: f64, clients: usize, tau: f64, lf: f64) -> f64 {
    if lf == 0.0 {
        return f64::INFINITY;
    }
    let m = clients as f64;
    let a = lf / tau;
    (mu / (6.0 * m)) / (4.0 * mu * lf * lf / (3.0 * m * tau * tau) + a * (lf + tau).powi(2) / tau)
}

/// The universal bound `1/δ ≤ (4L/μ)²`.
pub fn delta_inverse_bound(l: f64, mu: f64) -> f64 {
    (4.0 * l / mu).powi(2)
}

/// Both sides of the local-accuracy inequality, summed over all clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtpsReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Evaluates
/// `Σ (4/τ²)(μL_F²/(3M))‖y_m − y_m*‖² + Σ (L_F/τ²)‖∇ψ_m(y_m)‖² ≤ Σ (μ/(6M))‖x̂ − y_m*‖²`
/// where `y_m*` comes from [`exact_prox`].
pub fn check_gtps(
    problem: &Problem,
    tau: f64,
    x_hat: &[f64],
    u: &[Vec<f64>],
    ys: &[Vec<f64>],
    prox_tol: Option<f64>,
) -> Result<GtpsReport> {
    let clients = problem.num_clients();
    if u.len() != clients || ys.len() != clients {
        return invalid("need one dual iterate and one local solution per client");
    }
    let (mu, lf, m) = (problem.mu(), problem.lf(), clients as f64);
    let w_dist = 4.0 / (tau * tau) * mu * lf * lf / (3.0 * m);
    let w_grad = lf / (tau * tau);
    let w_rhs = mu / (6.0 * m);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for k in 0..clients {
        let sub = LocalSubproblem::new(problem, k, tau, x_hat, &u[k]);
        let y_star = exact_prox(&sub, prox_tol)?;
        lhs += w_dist * linalg::dist_sq(&ys[k], &y_star)
            + w_grad * linalg::norm_sq(&sub.gradient(&ys[k]));
        rhs += w_rhs * linalg::dist_sq(x_hat, &y_star);
    }
    Ok(GtpsReport {
        lhs,
        rhs,
        satisfied: lhs <= rhs,
    })
}

/// Local-step budget: the same `K` for every client or one per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepBudget {
    Uniform(usize),
    PerClient(Vec<usize>),
}

impl StepBudget {
    pub fn for_client(&self, m: usize) -> usize {
        match self {
            StepBudget::Uniform(k) => *k,
            StepBudget::PerClient(ks) => ks[m],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GdStepsize {
    /// `1/(L_F^{(m)} + τ)`
    PerClient,
    /// `1/(L_F + τ)`, the worst-case constant.
    Global,
    Fixed(f64),
}

/// The local training procedure run by each client in the cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LocalSolver {
    Gd { steps: StepBudget, stepsize: GdStepsize },
    Lsvrg { steps: StepBudget, batch: usize },
    ExactProx { tol: Option<f64> },
}

impl LocalSolver {
    pub fn gd(steps: usize) -> Self {
        LocalSolver::Gd {
            steps: StepBudget::Uniform(steps),
            stepsize: GdStepsize::PerClient,
        }
    }

    pub fn exact() -> Self {
        LocalSolver::ExactProx { tol: None }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, LocalSolver::Lsvrg { .. })
    }

    /// Runs the solver on `sub` from `y0`. `rng` feeds stochastic solvers only.
    pub fn solve(&self, sub: &LocalSubproblem<'_>, y0: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
        match self {
            LocalSolver::Gd { steps, stepsize } => {
                let l_local = sub.smoothness();
                let eta = match *stepsize {
                    GdStepsize::PerClient => 1.0 / l_local,
                    GdStepsize::Global => 1.0 / (sub.problem.lf() + sub.tau),
                    GdStepsize::Fixed(eta) => {
                        if !(eta > 0.0 && eta < 2.0 / l_local) {
                            return invalid(format!(
                                "GD stepsize {eta} outside (0, {})",
                                2.0 / l_local
                            ));
                        }
                        eta
                    }
                };
                Ok(gd_solve(sub, y0, steps.for_client(sub.client), eta))
            }
            LocalSolver::Lsvrg { steps, batch } => {
                lsvrg_solve(sub, y0, steps.for_client(sub.client), *batch, rng)
            }
            LocalSolver::ExactProx { tol } => exact_prox(sub, *tol),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ClientLoss, QuadraticLoss};

    fn quad_problem(c_iso: f64, lambda: f64) -> Problem {
        Problem::new(
            vec![ClientLoss::Quadratic(QuadraticLoss::isotropic(2, c_iso))],
            lambda,
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_return_start() {
        let p = quad_problem(3.0, 0.5);
        let sub = LocalSubproblem::with_center(&p, 0, 1.0, vec![1.0, 2.0]);
        assert_eq!(gd_solve(&sub, &[0.3, 0.4], 0, 0.1), vec![0.3, 0.4]);
    }

    #[test]
    fn prox_of_flat_function_is_center() {
        let p = quad_problem(0.0, 0.5);
        let sub = LocalSubproblem::with_center(&p, 0, 2.0, vec![1.0, -3.0]);
        let y = exact_prox(&sub, None).unwrap();
        assert!(linalg::dist_sq(&y, &[1.0, -3.0]) < 1e-24);
    }

    #[test]
    fn prox_of_isotropic_quadratic() {
        // M = 1 so F(y) = (c/2)‖y‖² with c = 3 and y* = τ·center/(c + τ).
        let p = quad_problem(3.0, 0.5);
        let tau = 1.5;
        let center = vec![2.0, -1.0];
        let sub = LocalSubproblem::with_center(&p, 0, tau, center.clone());
        let y = exact_prox(&sub, None).unwrap();
        for i in 0..2 {
            assert!((y[i] - tau * center[i] / (3.0 + tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn required_k_examples() {
        // κ = 1: K = ⌈(¾√(C/M) + 2)·log 4⌉
        let c = ProblemConstants::new(1.0, 1.0, 10);
        assert_eq!(
            required_k_gd(&c, 4),
            ((0.75 * 0.4f64.sqrt() + 2.0) * 4f64.ln()).ceil() as usize
        );
        // κ = 10⁴ and C/M = 0.1: (¾√1000 + 2)·log(4·10⁴) = 272.47…
        let c = ProblemConstants::new(1e4, 1.0, 10);
        assert_eq!(required_k_gd(&c, 1), 273);
        // Client with L_m = μ only pays the 2·log(4κ) term.
        assert_eq!(
            required_k_gd_client(&c, 1.0, 1),
            (2.0 * (4e4f64).ln()).ceil() as usize
        );
        assert!(required_k_gd_client(&c, 1e4, 1) <= required_k_gd(&c, 1));
    }

    #[test]
    fn delta_limits() {
        assert!(delta_tolerance(1.0, 4, 2.0, 0.0).is_infinite());
        // μ=1, M=2, τ=2, L_F=1: a = 1/2, δ = (1/12)/(4/(3·2·4) + 0.5·9/2)
        let want = (1.0 / 12.0) / (4.0 / 24.0 + 2.25);
        assert!((delta_tolerance(1.0, 2, 2.0, 1.0) - want).abs() < 1e-15);
    }

    #[test]
    fn lsvrg_rejects_bad_batch() {
        let p = quad_problem(1.0, 0.5);
        let sub = LocalSubproblem::with_center(&p, 0, 1.0, vec![0.0, 0.0]);
        let mut rng = SeededRng::new(0);
        assert!(lsvrg_solve(&sub, &[0.0, 0.0], 3, 0, &mut rng).is_err());
        assert!(lsvrg_solve(&sub, &[0.0, 0.0], 3, 2, &mut rng).is_err());
    }

    #[test]
    fn fixed_gd_stepsize_is_validated() {
        let p = quad_problem(1.0, 0.5);
        let sub = LocalSubproblem::with_center(&p, 0, 1.0, vec![0.0, 0.0]);
        let solver = LocalSolver::Gd {
            steps: StepBudget::Uniform(1),
            stepsize: GdStepsize::Fixed(10.0),
        };
        assert!(solver.solve(&sub, &[0.0, 0.0], &mut SeededRng::new(0)).is_err());
    }
}
