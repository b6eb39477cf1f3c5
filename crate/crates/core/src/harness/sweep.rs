//! Rounds-to-accuracy as a function of the local-step budget or cohort size.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::{run_schedule, ExperimentConfig};
use crate::algorithms::{schedule_for_local_steps, DualRule, ReferenceSolution};
use crate::error::{invalid, Result};
use crate::local_solvers::{required_k_gd, GdStepsize, LocalSolver, StepBudget};
use crate::objective::{Problem, ProblemConstants};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The swept value: `K` or `C`.
    pub value: usize,
    /// Rounds to `Ψ^t ≤ εΨ⁰` per seed; `None` if the round limit was hit.
    pub rounds: Vec<Option<u64>>,
}

impl SweepRow {
    /// Median over seeds, counting unreached runs as `+∞`.
    pub fn median(&self) -> f64 {
        let mut ts: Vec<f64> = self
            .rounds
            .iter()
            .map(|t| t.map_or(f64::INFINITY, |t| t as f64))
            .collect();
        ts.sort_by(f64::total_cmp);
        let n = ts.len();
        if n == 0 {
            return f64::NAN;
        }
        if n % 2 == 1 {
            ts[n / 2]
        } else {
            0.5 * (ts[n / 2 - 1] + ts[n / 2])
        }
    }
}

pub fn sweep_to_csv(column: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{column},t_median,t_per_seed\n");
    for row in rows {
        let per_seed: Vec<String> = row
            .rounds
            .iter()
            .map(|t| t.map_or_else(|| "inf".to_string(), |t| t.to_string()))
            .collect();
        let _ = writeln!(out, "{},{},{}", row.value, row.median(), per_seed.join(";"));
    }
    out
}

/// `⌈2·log(4κ)⌉`, the smallest budget for which the α-schedule is defined.
pub fn min_local_steps(c: &ProblemConstants) -> usize {
    (2.0 * (4.0 * c.kappa()).ln()).ceil() as usize
}

/// Default budgets: geometric from `⌈2·log 4κ⌉` to the accelerated `K*`,
/// then `2K*`, `10K*` and 200.
pub fn default_k_list(c: &ProblemConstants, cohort: usize) -> Vec<usize> {
    let lo = min_local_steps(c) as f64;
    let k_star = required_k_gd(c, cohort).max(min_local_steps(c)) as f64;
    let mut ks: Vec<usize> = (0..6)
        .map(|i| (lo * (k_star / lo).powf(i as f64 / 5.0)).round() as usize)
        .collect();
    ks.extend([2 * k_star as usize, 10 * k_star as usize, 200]);
    ks.retain(|&k| k as f64 >= lo);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// For each `K`, runs 5GCS with `K` local GD steps and the schedule
/// [`schedule_for_local_steps`] over every seed.
pub fn sweep_t_vs_k(
    problem: &Problem,
    reference: &ReferenceSolution,
    config: &ExperimentConfig,
    ks: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let c = problem.constants();
    ks.iter()
        .map(|&k| {
            let schedule = schedule_for_local_steps(&c, config.cohort, k)?;
            let rule = DualRule::LocalTraining(LocalSolver::Gd {
                steps: StepBudget::Uniform(k),
                stepsize: if config.conservative { GdStepsize::Global } else { GdStepsize::PerClient },
            });
            let rounds = seeds
                .iter()
                .map(|&seed| {
                    let cfg = ExperimentConfig { seed, ..config.clone() };
                    Ok(run_schedule(problem, reference, &cfg, &schedule, &rule)?.summary.t_reached)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow { value: k, rounds })
        })
        .collect()
}

/// Default cohort sizes: powers of two below `M`, and `M`.
pub fn default_cohort_list(clients: usize) -> Vec<usize> {
    let mut cs: Vec<usize> = std::iter::successors(Some(1usize), |c| Some(c * 2))
        .take_while(|&c| c < clients)
        .collect();
    cs.push(clients);
    cs
}

/// For each cohort size, runs `config`'s method and schedule over every seed.
pub fn sweep_t_vs_c(
    problem: &Problem,
    reference: &ReferenceSolution,
    config: &ExperimentConfig,
    cohorts: &[usize],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if cohorts.iter().any(|&c| c == 0 || c > problem.num_clients()) {
        return invalid("cohort sizes must lie in 1..=M");
    }
    cohorts
        .iter()
        .map(|&cohort| {
            let rounds = seeds
                .iter()
                .map(|&seed| {
                    let cfg = ExperimentConfig {
                        seed,
                        cohort,
                        ..config.clone()
                    };
                    Ok(super::run_on_problem(problem, reference, &cfg)?.summary.t_reached)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow { value: cohort, rounds })
        })
        .collect()
}
