//! Experiment orchestration: configuration, reference solutions, traces,
//! sweeps and the exact-expectation contraction test.

mod contraction;
mod experiment;
mod reference;
mod sweep;
mod synthetic;

pub use contraction::{contraction_test, ContractionReport, ContractionRow};
pub use experiment::{
    run_experiment, run_on_problem, run_schedule, trace_to_csv, ExperimentConfig, Method, Outcome, ScheduleChoice,
    SolverKind, Summary, TraceRecord, TRACE_HEADER,
};
pub use reference::{compute_reference, compute_reference_cached, problem_key, DEFAULT_REFERENCE_TOL};
pub use sweep::{
    default_cohort_list, default_k_list, min_local_steps, sweep_t_vs_c, sweep_t_vs_k, sweep_to_csv, SweepRow,
};
pub use synthetic::{SyntheticKind, SyntheticSpec};
