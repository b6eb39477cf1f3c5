//! Experiment configuration, execution and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::synthetic::SyntheticSpec;
use crate::algorithms::{
    lyapunov, round, schedule_thm1, schedule_thm2, schedule_thm3, schedule_thm5, schedule_thm6, DualInit,
    DualRule, LocalSteps, ReferenceSolution, Schedule, ServerState,
};
use crate::baselines::{Baseline, BaselineConfig, BaselineMethod};
use crate::data_io::{partition, read_libsvm_file};
use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::local_solvers::{required_k_gd_personalized, GdStepsize, LocalSolver, StepBudget};
use crate::objective::{ClientLoss, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "5gcs")]
    FiveGcs,
    #[serde(rename = "5gcs0")]
    FiveGcsZero,
    #[serde(rename = "5gcsinf")]
    FiveGcsInf,
    #[serde(rename = "gd")]
    Gd,
    #[serde(rename = "localgd")]
    LocalGd,
    #[serde(rename = "scaffold")]
    Scaffold,
    #[serde(rename = "proxskip")]
    ProxSkip,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::FiveGcs => "5gcs",
            Method::FiveGcsZero => "5gcs0",
            Method::FiveGcsInf => "5gcsinf",
            Method::Gd => "gd",
            Method::LocalGd => "localgd",
            Method::Scaffold => "scaffold",
            Method::ProxSkip => "proxskip",
        }
    }

    fn baseline(self) -> Option<BaselineMethod> {
        match self {
            Method::Gd => Some(BaselineMethod::Gd),
            Method::LocalGd => Some(BaselineMethod::LocalGd),
            Method::Scaffold => Some(BaselineMethod::Scaffold),
            Method::ProxSkip => Some(BaselineMethod::ProxSkip),
            _ => None,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "alpha")]
pub enum ScheduleChoice {
    Thm1,
    Thm2,
    Thm3,
    Thm5,
    Thm6(f64),
}

impl FromStr for ScheduleChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "thm1" => ScheduleChoice::Thm1,
            "thm2" => ScheduleChoice::Thm2,
            "thm3" => ScheduleChoice::Thm3,
            "thm5" => ScheduleChoice::Thm5,
            _ => match s.strip_prefix("thm6:").map(str::parse) {
                Some(Ok(alpha)) => ScheduleChoice::Thm6(alpha),
                _ => return invalid(format!("unknown schedule {s:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Gd,
    Lsvrg,
    Prox,
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(SolverKind::Gd),
            "lsvrg" => Ok(SolverKind::Lsvrg),
            "prox" => Ok(SolverKind::Prox),
            _ => invalid(format!("unknown local solver {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// LibSVM file; takes precedence over `synthetic`.
    pub data: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub clients: usize,
    pub cohort: usize,
    pub method: Method,
    /// Defaults to thm2 for 5gcs, thm1 for 5gcsinf and thm3 for 5gcs0.
    pub schedule: Option<ScheduleChoice>,
    pub local_solver: Option<SolverKind>,
    /// Overrides the schedule's local-step count.
    pub local_steps: Option<usize>,
    /// Minibatch size of the L-SVRG solver.
    pub batch: usize,
    /// GD stepsize `1/(L_F + τ)` instead of the per-client `1/(L_F^{(m)} + τ)`.
    pub conservative: bool,
    /// Per-client local-step budgets from each client's own smoothness.
    pub personalized_k: bool,
    pub init_u: DualInit,
    /// `λ = lambda_ratio · L` for LibSVM data.
    pub lambda_ratio: f64,
    pub seed: u64,
    pub eps: f64,
    pub max_rounds: usize,
    pub out: Option<PathBuf>,
    /// Fill the `ms` trace column with wall-clock time (breaks byte-identical traces).
    pub timing: bool,
    /// Directory for cached reference solutions.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            synthetic: None,
            clients: 5,
            cohort: 5,
            method: Method::FiveGcs,
            schedule: None,
            local_solver: None,
            local_steps: None,
            batch: 1,
            conservative: false,
            personalized_k: false,
            init_u: DualInit::Gradient,
            lambda_ratio: 1e-3,
            seed: 0,
            eps: 1e-6,
            max_rounds: 10_000,
            out: None,
            timing: false,
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 || self.cohort == 0 || self.cohort > self.clients {
            return invalid(format!(
                "need 1 ≤ cohort ≤ clients, got cohort {} and clients {}",
                self.cohort, self.clients
            ));
        }
        // ε = 1 is accepted and stops at round 0.
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return invalid(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        if self.max_rounds == 0 {
            return invalid("max_rounds must be at least 1");
        }
        if self.data.is_none() && self.synthetic.is_none() {
            return invalid("need a data file or a synthetic problem spec");
        }
        Ok(())
    }

    pub fn build_problem(&self) -> Result<Problem> {
        self.validate()?;
        if let Some(path) = &self.data {
            let data = read_libsvm_file(path)?;
            let shards = partition(&data.points, data.dimension, self.clients)?;
            let losses = shards.into_iter().map(ClientLoss::Logistic).collect();
            return Problem::with_lambda_ratio(losses, self.lambda_ratio);
        }
        let spec: SyntheticSpec = self.synthetic.as_deref().unwrap_or_default().parse()?;
        spec.build(self.clients)
    }

    fn schedule_choice(&self) -> ScheduleChoice {
        self.schedule.unwrap_or(match self.method {
            Method::FiveGcsInf => ScheduleChoice::Thm1,
            Method::FiveGcsZero => ScheduleChoice::Thm3,
            _ => ScheduleChoice::Thm2,
        })
    }

    /// The schedule and dual rule of a 5GCS-family method.
    pub fn plan(&self, problem: &Problem) -> Result<(Schedule, DualRule)> {
        let c = problem.constants();
        let mut schedule = match self.schedule_choice() {
            ScheduleChoice::Thm1 => schedule_thm1(&c, self.cohort)?,
            ScheduleChoice::Thm2 => schedule_thm2(&c, self.cohort)?,
            ScheduleChoice::Thm3 => schedule_thm3(&c, self.cohort)?,
            ScheduleChoice::Thm5 => schedule_thm5(&c, self.cohort)?,
            ScheduleChoice::Thm6(alpha) => schedule_thm6(&c, self.cohort, alpha)?,
        };
        if let Some(k) = self.local_steps {
            schedule.local_steps = if k == 0 { LocalSteps::Zero } else { LocalSteps::Finite(k) };
        }
        schedule.validate(&c)?;
        let rule = match self.method {
            Method::FiveGcsZero => DualRule::Gradient,
            Method::FiveGcsInf => DualRule::PointSaga { tol: None },
            Method::FiveGcs => {
                let budget = |k: usize| {
                    if self.personalized_k {
                        StepBudget::PerClient(required_k_gd_personalized(problem, self.cohort))
                    } else {
                        StepBudget::Uniform(k)
                    }
                };
                match (self.local_solver, schedule.local_steps) {
                    (Some(SolverKind::Prox), _) | (None, LocalSteps::Infinite) => {
                        DualRule::LocalTraining(LocalSolver::exact())
                    }
                    (_, LocalSteps::Zero) => DualRule::Gradient,
                    (Some(SolverKind::Lsvrg), LocalSteps::Finite(k)) => DualRule::LocalTraining(LocalSolver::Lsvrg {
                        steps: budget(k),
                        batch: self.batch,
                    }),
                    (_, LocalSteps::Finite(k)) => DualRule::LocalTraining(LocalSolver::Gd {
                        steps: budget(k),
                        stepsize: if self.conservative { GdStepsize::Global } else { GdStepsize::PerClient },
                    }),
                    (Some(_), LocalSteps::Infinite) => {
                        return invalid("an infinite local-step schedule needs the exact prox solver")
                    }
                }
            }
            _ => return invalid("baselines have no 5GCS schedule"),
        };
        Ok((schedule, rule))
    }
}

/// One row of a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u64,
    /// Lyapunov value; `‖x − x*‖²` for baselines.
    pub psi: f64,
    pub dist_sq: f64,
    pub subopt: f64,
    pub uploads: u64,
    /// Wall-clock milliseconds since round 0, zero unless timing is enabled.
    pub ms: f64,
}

pub const TRACE_HEADER: &str = "round,psi,dist_sq,subopt,uploads,ms";

pub fn trace_to_csv(trace: &[TraceRecord]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{},{}",
            r.round, r.psi, r.dist_sq, r.subopt, r.uploads, r.ms
        );
    }
    out
}

/// Parameters and outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub clients: usize,
    pub cohort: usize,
    pub seed: u64,
    pub eps: f64,
    pub l: f64,
    pub mu: f64,
    pub kappa: f64,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    /// Local steps; `null` for the exact prox.
    pub k: Option<usize>,
    pub rho: Option<f64>,
    /// Closed-form bound on the rounds needed for `Ψ^T ≤ εΨ⁰`.
    pub t_bound: Option<f64>,
    /// `log(1/ε)/ρ`
    pub t_rate_bound: Option<f64>,
    /// First round with `Ψ^t ≤ εΨ⁰`, if reached.
    pub t_reached: Option<u64>,
    pub rounds_run: u64,
    pub final_psi: f64,
    pub uploads: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub trace: Vec<TraceRecord>,
    pub summary: Summary,
}

impl Outcome {
    /// Writes `trace.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.csv"), trace_to_csv(&self.trace))?;
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

/// Builds the problem and reference from `config`, runs, and writes output
/// files when `config.out` is set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Outcome> {
    let problem = config.build_problem()?;
    let reference = match &config.cache_dir {
        Some(dir) => super::compute_reference_cached(&problem, super::DEFAULT_REFERENCE_TOL, dir)?,
        None => super::compute_reference(&problem, super::DEFAULT_REFERENCE_TOL)?,
    };
    let outcome = run_on_problem(&problem, &reference, config)?;
    if let Some(dir) = &config.out {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

struct Recorder<'a> {
    problem: &'a Problem,
    reference: &'a ReferenceSolution,
    start: Option<Instant>,
    trace: Vec<TraceRecord>,
}

impl Recorder<'_> {
    fn push(&mut self, round: u64, psi: f64, x: &[f64], uploads: u64) {
        self.trace.push(TraceRecord {
            round,
            psi,
            dist_sq: linalg::dist_sq(x, &self.reference.x_star),
            subopt: self.problem.value(x) - self.reference.f_star,
            uploads,
            ms: self.start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3),
        });
    }
}

/// Runs `config`'s method on a prebuilt problem until `Ψ^t ≤ εΨ⁰` or the
/// round limit.
pub fn run_on_problem(problem: &Problem, reference: &ReferenceSolution, config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    if problem.num_clients() != config.clients {
        return invalid("problem and config disagree on the number of clients");
    }
    let c = problem.constants();
    let mut rec = Recorder {
        problem,
        reference,
        start: config.timing.then(Instant::now),
        trace: Vec::new(),
    };
    let mut summary = Summary {
        method: config.method,
        clients: config.clients,
        cohort: config.cohort,
        seed: config.seed,
        eps: config.eps,
        l: c.l,
        mu: c.mu,
        kappa: c.kappa(),
        gamma: None,
        tau: None,
        k: None,
        rho: None,
        t_bound: None,
        t_rate_bound: None,
        t_reached: None,
        rounds_run: 0,
        final_psi: 0.0,
        uploads: 0,
    };
    let reached = |psi: f64, psi0: f64| psi <= config.eps * psi0;

    if let Some(method) = config.method.baseline() {
        let mut bc = BaselineConfig::defaults(method, problem, config.cohort);
        if let Some(k) = config.local_steps {
            bc.local_steps = k;
            if matches!(method, BaselineMethod::LocalGd | BaselineMethod::Scaffold) && k > 0 {
                bc.stepsize = 1.0 / (6.0 * c.l * k as f64);
            }
        }
        summary.gamma = Some(bc.stepsize);
        summary.k = Some(bc.local_steps);
        let mut b = Baseline::new(problem, bc, config.seed)?;
        let psi0 = linalg::dist_sq(b.x(), &reference.x_star);
        rec.push(0, psi0, b.x(), 0);
        let mut psi = psi0;
        while !reached(psi, psi0) && (b.round() as usize) < config.max_rounds {
            b.step()?;
            psi = linalg::dist_sq(b.x(), &reference.x_star);
            if !psi.is_finite() {
                break;
            }
            rec.push(b.round(), psi, b.x(), b.uploads());
        }
        summary.t_reached = reached(psi, psi0).then(|| b.round());
        summary.rounds_run = b.round();
        summary.final_psi = psi;
        summary.uploads = b.uploads();
        return Ok(Outcome { trace: rec.trace, summary });
    }

    let (schedule, rule) = config.plan(problem)?;
    run_with_schedule(problem, reference, config, &schedule, &rule, rec, summary)
}

/// Runs a 5GCS-family method with an explicit schedule and dual rule,
/// using `config` for the seed, tolerance, round limit and initialization.
pub fn run_schedule(
    problem: &Problem,
    reference: &ReferenceSolution,
    config: &ExperimentConfig,
    schedule: &Schedule,
    rule: &DualRule,
) -> Result<Outcome> {
    config.validate()?;
    let c = problem.constants();
    schedule.validate(&c)?;
    let rec = Recorder {
        problem,
        reference,
        start: config.timing.then(Instant::now),
        trace: Vec::new(),
    };
    let summary = Summary {
        method: config.method,
        clients: problem.num_clients(),
        cohort: schedule.cohort,
        seed: config.seed,
        eps: config.eps,
        l: c.l,
        mu: c.mu,
        kappa: c.kappa(),
        gamma: None,
        tau: None,
        k: None,
        rho: None,
        t_bound: None,
        t_rate_bound: None,
        t_reached: None,
        rounds_run: 0,
        final_psi: 0.0,
        uploads: 0,
    };
    run_with_schedule(problem, reference, config, schedule, rule, rec, summary)
}

fn run_with_schedule(
    problem: &Problem,
    reference: &ReferenceSolution,
    config: &ExperimentConfig,
    schedule: &Schedule,
    rule: &DualRule,
    mut rec: Recorder<'_>,
    mut summary: Summary,
) -> Result<Outcome> {
    let c = problem.constants();
    let reached = |psi: f64, psi0: f64| psi <= config.eps * psi0;
    summary.gamma = Some(schedule.gamma);
    summary.tau = schedule.tau;
    summary.k = match schedule.local_steps {
        LocalSteps::Zero => Some(0),
        LocalSteps::Finite(k) => Some(k),
        LocalSteps::Infinite => None,
    };
    let rho = schedule.contraction_rate(&c);
    summary.rho = Some(rho);
    summary.t_bound = Some(schedule.rounds_bound(&c, config.eps));
    summary.t_rate_bound = Some(schedule.rounds_from_rate(&c, config.eps));

    let mut state = ServerState::initial(problem, vec![0.0; problem.dim()], config.init_u)?;
    let psi0 = lyapunov(&state, reference, schedule, &c)?;
    rec.push(0, psi0, &state.x, 0);
    let mut psi = psi0;
    while !reached(psi, psi0) && (state.round as usize) < config.max_rounds {
        round(problem, &mut state, schedule, rule, config.seed)?;
        psi = lyapunov(&state, reference, schedule, &c)?;
        if !psi.is_finite() {
            break;
        }
        rec.push(state.round, psi, &state.x, state.uploads);
    }
    summary.t_reached = reached(psi, psi0).then_some(state.round);
    summary.rounds_run = state.round;
    summary.final_psi = psi;
    summary.uploads = state.uploads;
    Ok(Outcome { trace: rec.trace, summary })
}
