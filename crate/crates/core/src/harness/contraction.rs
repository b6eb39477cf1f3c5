//! Exact-expectation check of the per-round Lyapunov contraction.

use serde::{Deserialize, Serialize};

use crate::algorithms::{
    draw_cohort, lyapunov, round_with_cohort, successor_states, Aggregation, DualRule, ReferenceSolution, Schedule,
    ServerState,
};
use crate::error::Result;
use crate::objective::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub round: u64,
    pub psi: f64,
    /// `E[Ψ^{t+1} | state^t]`, averaged over every cohort.
    pub expected_next: f64,
    /// `(1 − ρ)Ψ^t`
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub rho: f64,
    pub rows: Vec<ContractionRow>,
    pub passed: bool,
}

/// Along one sampled trajectory of `rounds` rounds, compares the exact
/// conditional expectation of the next Lyapunov value against
/// `(1 − ρ)Ψ^t + rel_slack·Ψ^t`. The dual rule must be deterministic.
pub fn contraction_test(
    problem: &Problem,
    reference: &ReferenceSolution,
    schedule: &Schedule,
    rule: &DualRule,
    state: ServerState,
    rounds: usize,
    seed: u64,
    rel_slack: f64,
) -> Result<ContractionReport> {
    let c = problem.constants();
    schedule.validate(&c)?;
    let rho = schedule.contraction_rate(&c);
    let mut state = state;
    let mut rows = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let psi = lyapunov(&state, reference, schedule, &c)?;
        let next = successor_states(problem, &state, schedule, rule)?;
        let total: f64 = next
            .iter()
            .map(|s| lyapunov(s, reference, schedule, &c))
            .sum::<Result<f64>>()?;
        let expected_next = total / next.len() as f64;
        let bound = (1.0 - rho) * psi;
        rows.push(ContractionRow {
            round: state.round,
            psi,
            expected_next,
            bound,
            holds: expected_next <= bound + rel_slack * psi,
        });
        let cohort = draw_cohort(problem, &state, schedule, seed)?;
        round_with_cohort(problem, &mut state, schedule, rule, seed, &cohort, Aggregation::Delta)?;
    }
    let passed = rows.iter().all(|r| r.holds);
    Ok(ContractionReport { rho, rows, passed })
}
