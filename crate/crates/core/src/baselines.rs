//! Comparison methods: GD, LocalGD, Scaffold and ProxSkip.
//!
//! Each method is driven one communication round at a time through
//! [`Baseline::step`]; the `run_*` helpers record a trace of distances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::harness::TraceRecord;
use crate::linalg;
use crate::objective::Problem;
use crate::sampling::{sample_cohort, Cohort, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Gd,
    LocalGd,
    Scaffold,
    ProxSkip,
}

impl BaselineMethod {
    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::Gd => "gd",
            BaselineMethod::LocalGd => "localgd",
            BaselineMethod::Scaffold => "scaffold",
            BaselineMethod::ProxSkip => "proxskip",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub stepsize: f64,
    /// Local steps per round (LocalGD, Scaffold).
    pub local_steps: usize,
    pub cohort: usize,
    /// Communication probability (ProxSkip).
    pub probability: f64,
}

impl BaselineConfig {
    /// Defaults: `K = ⌈√κ⌉`, `p = 1/√κ`; stepsize `1/L` for GD and ProxSkip,
    /// `1/(6LK)` for LocalGD and Scaffold.
    pub fn defaults(method: BaselineMethod, problem: &Problem, cohort: usize) -> Self {
        let l = problem.smoothness();
        let sqrt_kappa = (l / problem.mu()).sqrt();
        let local_steps = (sqrt_kappa.ceil() as usize).max(1);
        let stepsize = match method {
            BaselineMethod::Gd | BaselineMethod::ProxSkip => 1.0 / l,
            BaselineMethod::LocalGd | BaselineMethod::Scaffold => 1.0 / (6.0 * l * local_steps as f64),
        };
        let cohort = match method {
            BaselineMethod::Gd => problem.num_clients(),
            _ => cohort,
        };
        Self {
            method,
            stepsize,
            local_steps,
            cohort,
            probability: (1.0 / sqrt_kappa).min(1.0),
        }
    }

    pub fn validate(&self, problem: &Problem) -> Result<()> {
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return invalid("stepsize must be positive");
        }
        if self.cohort == 0 || self.cohort > problem.num_clients() {
            return invalid(format!("cohort size {} must lie in 1..={}", self.cohort, problem.num_clients()));
        }
        match self.method {
            BaselineMethod::Gd if self.cohort != problem.num_clients() => {
                invalid("GD uses every client each round")
            }
            BaselineMethod::LocalGd | BaselineMethod::Scaffold if self.local_steps == 0 => {
                invalid("local methods need at least one local step")
            }
            BaselineMethod::ProxSkip if !(self.probability > 0.0 && self.probability <= 1.0) => {
                invalid(format!("probability {} must lie in (0, 1]", self.probability))
            }
            _ => Ok(()),
        }
    }
}

/// State of a running baseline.
#[derive(Debug, Clone)]
pub struct Baseline<'a> {
    problem: &'a Problem,
    config: BaselineConfig,
    seed: u64,
    x: Vec<f64>,
    /// Scaffold client controls `c_m`, or ProxSkip shifts `h_m`.
    client_vectors: Vec<Vec<f64>>,
    /// Scaffold server control `c = (1/M) Σ c_m`.
    server_control: Vec<f64>,
    round: u64,
    uploads: u64,
    local_iterations: u64,
}

impl<'a> Baseline<'a> {
    pub fn new(problem: &'a Problem, config: BaselineConfig, seed: u64) -> Result<Self> {
        config.validate(problem)?;
        let d = problem.dim();
        Ok(Self {
            problem,
            config,
            seed,
            x: vec![0.0; d],
            client_vectors: vec![vec![0.0; d]; problem.num_clients()],
            server_control: vec![0.0; d],
            round: 0,
            uploads: 0,
            local_iterations: 0,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn uploads(&self) -> u64 {
        self.uploads
    }

    /// Total local gradient iterations (ProxSkip's random loop lengths).
    pub fn local_iterations(&self) -> u64 {
        self.local_iterations
    }

    pub fn client_vectors(&self) -> &[Vec<f64>] {
        &self.client_vectors
    }

    /// Runs one communication round.
    pub fn step(&mut self) -> Result<()> {
        let mut rng = SeededRng::for_round(self.seed, self.round);
        let cohort = sample_cohort(self.problem.num_clients(), self.config.cohort, &mut rng)?;
        match self.config.method {
            BaselineMethod::Gd => {
                let g = self.problem.gradient(&self.x);
                linalg::axpy(-self.config.stepsize, &g, &mut self.x);
            }
            BaselineMethod::LocalGd => self.local_gd_round(&cohort),
            BaselineMethod::Scaffold => self.scaffold_round(&cohort),
            BaselineMethod::ProxSkip => self.proxskip_round(&cohort, &mut rng),
        }
        self.round += 1;
        self.uploads += cohort.size() as u64;
        Ok(())
    }

    fn local_gd_round(&mut self, cohort: &Cohort) {
        let (eta, k) = (self.config.stepsize, self.config.local_steps);
        let mut sum = vec![0.0; self.x.len()];
        for &m in cohort.indices() {
            let mut y = self.x.clone();
            for _ in 0..k {
                let g = self.problem.grad_f_m(m, &y);
                linalg::axpy(-eta, &g, &mut y);
            }
            linalg::axpy(1.0, &y, &mut sum);
        }
        self.local_iterations += (k * cohort.size()) as u64;
        linalg::scale(1.0 / cohort.size() as f64, &mut sum);
        self.x = sum;
    }

    /// Option II control variates, global stepsize 1.
    fn scaffold_round(&mut self, cohort: &Cohort) {
        let (eta, k) = (self.config.stepsize, self.config.local_steps);
        let d = self.x.len();
        let mut dx = vec![0.0; d];
        let mut dc = vec![0.0; d];
        for &m in cohort.indices() {
            let mut y = self.x.clone();
            for _ in 0..k {
                let mut g = self.problem.grad_f_m(m, &y);
                for ((gi, cm), c) in g.iter_mut().zip(&self.client_vectors[m]).zip(&self.server_control) {
                    *gi += c - cm;
                }
                linalg::axpy(-eta, &g, &mut y);
            }
            // c_m' = c_m − c + (x − y_K)/(Kη)
            let inv = 1.0 / (k as f64 * eta);
            let new_c: Vec<f64> = (0..d)
                .map(|i| self.client_vectors[m][i] - self.server_control[i] + inv * (self.x[i] - y[i]))
                .collect();
            for i in 0..d {
                dx[i] += y[i] - self.x[i];
                dc[i] += new_c[i] - self.client_vectors[m][i];
            }
            self.client_vectors[m] = new_c;
        }
        self.local_iterations += (k * cohort.size()) as u64;
        linalg::axpy(1.0 / cohort.size() as f64, &dx, &mut self.x);
        linalg::axpy(1.0 / self.problem.num_clients() as f64, &dc, &mut self.server_control);
    }

    /// Local steps `x̂_m = x_m − γ(∇f_m(x_m) − h_m)` until a coin with
    /// probability `p` triggers averaging. Only cohort members take part;
    /// the shifts of everyone else stay frozen.
    fn proxskip_round(&mut self, cohort: &Cohort, rng: &mut SeededRng) {
        let (gamma, p) = (self.config.stepsize, self.config.probability);
        let mut locals: Vec<Vec<f64>> = cohort.indices().iter().map(|_| self.x.clone()).collect();
        loop {
            self.local_iterations += 1;
            let mut hats = Vec::with_capacity(locals.len());
            for (&m, xm) in cohort.indices().iter().zip(&locals) {
                let mut g = self.problem.grad_f_m(m, xm);
                for (gi, h) in g.iter_mut().zip(&self.client_vectors[m]) {
                    *gi -= h;
                }
                let mut hat = xm.clone();
                linalg::axpy(-gamma, &g, &mut hat);
                hats.push(hat);
            }
            if rng.gen::<f64>() < p {
                let mut avg = vec![0.0; self.x.len()];
                for (&m, hat) in cohort.indices().iter().zip(&hats) {
                    linalg::axpy(1.0, hat, &mut avg);
                    linalg::axpy(-gamma / p, &self.client_vectors[m], &mut avg);
                }
                linalg::scale(1.0 / cohort.size() as f64, &mut avg);
                for (&m, hat) in cohort.indices().iter().zip(&hats) {
                    for ((h, a), xh) in self.client_vectors[m].iter_mut().zip(&avg).zip(hat) {
                        *h += p / gamma * (a - xh);
                    }
                }
                self.x = avg;
                return;
            }
            locals = hats;
        }
    }
}

/// Runs `rounds` rounds and records `‖x − x*‖²` (also used as `psi`).
pub fn run_baseline(
    problem: &Problem,
    config: BaselineConfig,
    rounds: usize,
    seed: u64,
    x_star: &[f64],
    f_star: f64,
) -> Result<Vec<TraceRecord>> {
    let mut method = Baseline::new(problem, config, seed)?;
    let mut trace = Vec::with_capacity(rounds + 1);
    let record = |b: &Baseline<'_>| {
        let dist_sq = linalg::dist_sq(b.x(), x_star);
        TraceRecord {
            round: b.round(),
            psi: dist_sq,
            dist_sq,
            subopt: problem.value(b.x()) - f_star,
            uploads: b.uploads(),
            ms: 0.0,
        }
    };
    trace.push(record(&method));
    for _ in 0..rounds {
        method.step()?;
        trace.push(record(&method));
    }
    Ok(trace)
}

pub fn run_gd(problem: &Problem, stepsize: f64, rounds: usize, x_star: &[f64], f_star: f64) -> Result<Vec<TraceRecord>> {
    let mut config = BaselineConfig::defaults(BaselineMethod::Gd, problem, problem.num_clients());
    config.stepsize = stepsize;
    run_baseline(problem, config, rounds, 0, x_star, f_star)
}
