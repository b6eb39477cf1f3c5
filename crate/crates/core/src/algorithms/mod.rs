//! Server state and one communication round of 5GCS and its special cases.

mod schedule;

pub use schedule::{
    alpha_max, min_tau, schedule_for_local_steps, schedule_thm1, schedule_thm2, schedule_thm3,
    schedule_thm5, schedule_thm6, LocalSteps, Schedule, Variant,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg;
use crate::local_solvers::{exact_prox, LocalSolver};
use crate::objective::{LocalSubproblem, Problem, ProblemConstants};
use crate::sampling::{all_cohorts, sample_cohort, Cohort, SeededRng};

/// Primal iterate, per-client duals and their running sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub x: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    /// Aggregate `Σ_m u_m`, maintained incrementally.
    pub v: Vec<f64>,
    pub round: u64,
    /// Client-to-server vector uploads so far.
    pub uploads: u64,
    /// Vectors sent either way: one broadcast and one upload per cohort member.
    pub communicated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualInit {
    /// `u_m = ∇F_m(x⁰)`
    #[default]
    Gradient,
    Zero,
}

/// How the server folds the cohort's new duals into `x` and `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// `Δv = Σ_{m∈S}(u_m' − u_m)` as uploaded by the clients.
    #[default]
    Delta,
    /// Re-sum every dual: `Δv = Σ_m u_m' − v`.
    Resum,
}

impl ServerState {
    pub fn new(x: Vec<f64>, u: Vec<Vec<f64>>) -> Result<Self> {
        if u.is_empty() || u.iter().any(|um| um.len() != x.len()) {
            return invalid("need one dual vector of the primal dimension per client");
        }
        let mut v = vec![0.0; x.len()];
        for um in &u {
            linalg::axpy(1.0, um, &mut v);
        }
        Ok(Self {
            x,
            u,
            v,
            round: 0,
            uploads: 0,
            communicated: 0,
        })
    }

    pub fn initial(problem: &Problem, x0: Vec<f64>, init: DualInit) -> Result<Self> {
        if x0.len() != problem.dim() {
            return invalid(format!("x0 has length {}, expected {}", x0.len(), problem.dim()));
        }
        let u = (0..problem.num_clients())
            .map(|m| match init {
                DualInit::Gradient => problem.grad_big_f_m(m, &x0),
                DualInit::Zero => vec![0.0; x0.len()],
            })
            .collect();
        Self::new(x0, u)
    }

    /// `‖v − Σ_m u_m‖ / max(1, ‖Σ_m u_m‖)`
    pub fn aggregate_error(&self) -> f64 {
        let mut sum = vec![0.0; self.x.len()];
        for um in &self.u {
            linalg::axpy(1.0, um, &mut sum);
        }
        linalg::dist_sq(&self.v, &sum).sqrt() / linalg::norm(&sum).max(1.0)
    }

    /// `x̂ = (x − γv)/(1 + γμ)`
    pub fn extrapolate(&self, gamma: f64, mu: f64) -> Vec<f64> {
        let d = 1.0 + gamma * mu;
        self.x.iter().zip(&self.v).map(|(x, v)| (x - gamma * v) / d).collect()
    }

    /// Applies the cohort's new duals: `x ← x̂ − γ(M/C)Δv`, `v ← v + Δv`.
    /// `updates` must list the cohort members in ascending order.
    pub fn commit(
        &mut self,
        x_hat: Vec<f64>,
        gamma: f64,
        cohort: &Cohort,
        updates: Vec<(usize, Vec<f64>)>,
        aggregation: Aggregation,
    ) {
        debug_assert!(updates.iter().map(|(m, _)| *m).eq(cohort.indices().iter().copied()));
        let mut delta = vec![0.0; self.x.len()];
        let mut new_v = None;
        match aggregation {
            Aggregation::Delta => {
                for (m, u_new) in &updates {
                    for ((d, a), b) in delta.iter_mut().zip(u_new).zip(&self.u[*m]) {
                        *d += a - b;
                    }
                }
            }
            Aggregation::Resum => {
                let mut sum = vec![0.0; self.x.len()];
                for (m, um) in self.u.iter().enumerate() {
                    let current = updates.iter().find(|(k, _)| *k == m).map_or(um, |(_, u)| u);
                    linalg::axpy(1.0, current, &mut sum);
                }
                delta = linalg::sub(&sum, &self.v);
                new_v = Some(sum);
            }
        }
        let scale = gamma * cohort.clients() as f64 / cohort.size() as f64;
        let mut x = x_hat;
        linalg::axpy(-scale, &delta, &mut x);
        self.x = x;
        match new_v {
            Some(v) => self.v = v,
            None => linalg::axpy(1.0, &delta, &mut self.v),
        }
        for (m, u_new) in updates {
            self.u[m] = u_new;
        }
        self.round += 1;
        self.uploads += cohort.size() as u64;
        self.communicated += 2 * cohort.size() as u64;
    }
}

/// How a sampled client produces its new dual vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DualRule {
    /// Approximately minimize `ψ_m` with a local solver, return `∇F_m(y_m)`.
    LocalTraining(LocalSolver),
    /// Closed form from an exact prox: `u_m + τx̂ − τ·prox_{F_m/τ}(x̂ + u_m/τ)`.
    PointSaga { tol: Option<f64> },
    /// `∇F_m(x̂)`, no local work.
    Gradient,
}

impl DualRule {
    pub fn is_deterministic(&self) -> bool {
        match self {
            DualRule::LocalTraining(s) => s.is_deterministic(),
            _ => true,
        }
    }

    /// Default rule for a schedule: exact prox, `K` GD steps, or none.
    pub fn for_schedule(schedule: &Schedule) -> Self {
        match schedule.local_steps {
            LocalSteps::Zero => DualRule::Gradient,
            LocalSteps::Finite(k) => DualRule::LocalTraining(LocalSolver::gd(k)),
            LocalSteps::Infinite => DualRule::LocalTraining(LocalSolver::exact()),
        }
    }
}

fn needs_tau(schedule: &Schedule) -> Result<f64> {
    match schedule.tau {
        Some(t) if t > 0.0 => Ok(t),
        _ => invalid("this dual rule needs a positive dual stepsize"),
    }
}

/// New dual vector of client `m` given `x̂`. Pure in `state`, so the same
/// candidate serves every cohort that contains `m`.
pub fn candidate_dual(
    problem: &Problem,
    state: &ServerState,
    x_hat: &[f64],
    schedule: &Schedule,
    rule: &DualRule,
    seed: u64,
    m: usize,
) -> Result<Vec<f64>> {
    match rule {
        DualRule::Gradient => Ok(problem.grad_big_f_m(m, x_hat)),
        DualRule::LocalTraining(solver) => {
            if let LocalSolver::Gd { steps, .. } = solver {
                if steps.for_client(m) == 0 {
                    return Ok(problem.grad_big_f_m(m, x_hat));
                }
            }
            let tau = needs_tau(schedule)?;
            let sub = LocalSubproblem::new(problem, m, tau, x_hat, &state.u[m]);
            let mut rng = SeededRng::for_client(seed, state.round, m);
            let y = solver.solve(&sub, x_hat, &mut rng)?;
            Ok(problem.grad_big_f_m(m, &y))
        }
        DualRule::PointSaga { tol } => {
            let tau = needs_tau(schedule)?;
            let sub = LocalSubproblem::new(problem, m, tau, x_hat, &state.u[m]);
            let prox = exact_prox(&sub, *tol)?;
            Ok(state.u[m]
                .iter()
                .zip(x_hat)
                .zip(&prox)
                .map(|((u, xh), p)| u + tau * xh - tau * p)
                .collect())
        }
    }
}

/// Runs one round on a given cohort.
pub fn round_with_cohort(
    problem: &Problem,
    state: &mut ServerState,
    schedule: &Schedule,
    rule: &DualRule,
    seed: u64,
    cohort: &Cohort,
    aggregation: Aggregation,
) -> Result<()> {
    if cohort.clients() != problem.num_clients() || cohort.size() != schedule.cohort {
        return invalid("cohort does not match the problem and schedule");
    }
    let x_hat = state.extrapolate(schedule.gamma, problem.mu());
    let updates = cohort
        .indices()
        .iter()
        .map(|&m| Ok((m, candidate_dual(problem, state, &x_hat, schedule, rule, seed, m)?)))
        .collect::<Result<Vec<_>>>()?;
    state.commit(x_hat, schedule.gamma, cohort, updates, aggregation);
    Ok(())
}

/// Samples the round's cohort from `(seed, round)`.
pub fn draw_cohort(problem: &Problem, state: &ServerState, schedule: &Schedule, seed: u64) -> Result<Cohort> {
    let mut rng = SeededRng::for_round(seed, state.round);
    sample_cohort(problem.num_clients(), schedule.cohort, &mut rng)
}

/// One round of 5GCS with any dual rule. Returns the sampled cohort.
pub fn round(
    problem: &Problem,
    state: &mut ServerState,
    schedule: &Schedule,
    rule: &DualRule,
    seed: u64,
) -> Result<Cohort> {
    let cohort = draw_cohort(problem, state, schedule, seed)?;
    round_with_cohort(problem, state, schedule, rule, seed, &cohort, Aggregation::Delta)?;
    Ok(cohort)
}

/// One round of 5GCS with local training by `solver`.
pub fn round_5gcs(
    problem: &Problem,
    state: &mut ServerState,
    schedule: &Schedule,
    solver: &LocalSolver,
    seed: u64,
) -> Result<Cohort> {
    round(problem, state, schedule, &DualRule::LocalTraining(solver.clone()), seed)
}

/// One round of minibatch Point-SAGA (exact prox, closed-form dual update).
pub fn round_point_saga(problem: &Problem, state: &mut ServerState, schedule: &Schedule, seed: u64) -> Result<Cohort> {
    round(problem, state, schedule, &DualRule::PointSaga { tol: None }, seed)
}

/// One round without local steps.
pub fn round_zero(problem: &Problem, state: &mut ServerState, schedule: &Schedule, seed: u64) -> Result<Cohort> {
    round(problem, state, schedule, &DualRule::Gradient, seed)
}

/// Every possible successor state, one per cohort, each with probability
/// `1/binom(M, C)`. The rule must be deterministic.
pub fn successor_states(
    problem: &Problem,
    state: &ServerState,
    schedule: &Schedule,
    rule: &DualRule,
) -> Result<Vec<ServerState>> {
    if !rule.is_deterministic() {
        return invalid("cohort enumeration needs a deterministic dual rule");
    }
    let clients = problem.num_clients();
    let x_hat = state.extrapolate(schedule.gamma, problem.mu());
    let candidates = (0..clients)
        .map(|m| candidate_dual(problem, state, &x_hat, schedule, rule, 0, m))
        .collect::<Result<Vec<_>>>()?;
    all_cohorts(clients, schedule.cohort)?
        .iter()
        .map(|cohort| {
            let mut next = state.clone();
            let updates = cohort.indices().iter().map(|&m| (m, candidates[m].clone())).collect();
            next.commit(x_hat.clone(), schedule.gamma, cohort, updates, Aggregation::Delta);
            Ok(next)
        })
        .collect()
}

/// The minimizer `x*`, the optimal duals `u*_m = ∇F_m(x*)` and `f(x*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub u_star: Vec<Vec<f64>>,
    pub f_star: f64,
}

impl ReferenceSolution {
    pub fn from_minimizer(problem: &Problem, x_star: Vec<f64>) -> Self {
        let u_star = (0..problem.num_clients())
            .map(|m| problem.grad_big_f_m(m, &x_star))
            .collect();
        let f_star = problem.value(&x_star);
        Self { x_star, u_star, f_star }
    }

    /// `‖μx* + Σ_m u*_m‖`, zero at the exact solution.
    pub fn optimality_residual(&self, mu: f64) -> f64 {
        let mut r: Vec<f64> = self.x_star.iter().map(|x| mu * x).collect();
        for um in &self.u_star {
            linalg::axpy(1.0, um, &mut r);
        }
        linalg::norm(&r)
    }

    pub fn dist_sq(&self, state: &ServerState) -> f64 {
        linalg::dist_sq(&state.x, &self.x_star)
    }

    pub fn dual_dist_sq(&self, state: &ServerState) -> f64 {
        linalg::block_dist_sq(&state.u, &self.u_star)
    }
}

/// `Ψ = a‖x − x*‖² + b‖u − u*‖²` with the schedule's weights.
pub fn lyapunov(
    state: &ServerState,
    reference: &ReferenceSolution,
    schedule: &Schedule,
    constants: &ProblemConstants,
) -> Result<f64> {
    let (a, b) = schedule.lyapunov_weights(constants)?;
    Ok(a * reference.dist_sq(state) + b * reference.dual_dist_sq(state))
}
