use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};

use fivegcs::algorithms::{DualInit, ServerState};
use fivegcs::harness::{
    compute_reference, compute_reference_cached, contraction_test, default_cohort_list, default_k_list,
    run_experiment, sweep_t_vs_c, sweep_t_vs_k, sweep_to_csv, ExperimentConfig, DEFAULT_REFERENCE_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Run,
    SweepK,
    SweepC,
    ContractTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitU {
    Gradient,
    Zero,
}

/// Federated optimization simulator: 5GCS with local training and client
/// sampling, plus GD, LocalGD, Scaffold and ProxSkip baselines.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    /// JSON experiment config; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// LibSVM data file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic problem, e.g. "logistic,d=20,n=50,kappa=1000,seed=7".
    #[arg(long)]
    synthetic: Option<String>,
    /// Number of clients M.
    #[arg(long)]
    clients: Option<usize>,
    /// Cohort size C.
    #[arg(long)]
    cohort: Option<usize>,
    /// 5gcs, 5gcs0, 5gcsinf, gd, localgd, scaffold or proxskip.
    #[arg(long)]
    method: Option<String>,
    /// thm1, thm2, thm3, thm5 or thm6:<alpha>.
    #[arg(long)]
    schedule: Option<String>,
    /// gd, lsvrg or prox.
    #[arg(long)]
    local_solver: Option<String>,
    #[arg(long)]
    local_steps: Option<usize>,
    /// L-SVRG minibatch size.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Regularizer as a fraction of L for LibSVM data.
    #[arg(long)]
    lambda_ratio: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "run")]
    mode: Mode,
    /// Use the global local stepsize 1/(L_F + τ).
    #[arg(long)]
    conservative: bool,
    /// Per-client local-step budgets.
    #[arg(long)]
    personalized_k: bool,
    #[arg(long, value_enum)]
    init_u: Option<InitU>,
    /// Record wall-clock time in the trace.
    #[arg(long)]
    timing: bool,
    /// Cache directory for reference solutions.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Comma-separated local-step budgets for sweep-k.
    #[arg(long, value_delimiter = ',')]
    k_list: Option<Vec<usize>>,
    /// Comma-separated cohort sizes for sweep-c.
    #[arg(long, value_delimiter = ',')]
    cohorts: Option<Vec<usize>>,
    /// Number of seeds per sweep point (seed, seed+1, ...).
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Rounds of the contraction test.
    #[arg(long, default_value_t = 100)]
    rounds: usize,
}

impl Args {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(s) = &self.synthetic {
            cfg.synthetic = Some(s.clone());
        }
        if let Some(m) = self.clients {
            cfg.clients = m;
            if self.cohort.is_none() && self.config.is_none() {
                cfg.cohort = m;
            }
        }
        if let Some(c) = self.cohort {
            cfg.cohort = c;
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse()?;
        }
        if let Some(s) = &self.schedule {
            cfg.schedule = Some(s.parse()?);
        }
        if let Some(s) = &self.local_solver {
            cfg.local_solver = Some(s.parse()?);
        }
        cfg.local_steps = self.local_steps.or(cfg.local_steps);
        cfg.batch = self.batch.unwrap_or(cfg.batch);
        cfg.eps = self.eps.unwrap_or(cfg.eps);
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.max_rounds = self.max_rounds.unwrap_or(cfg.max_rounds);
        cfg.lambda_ratio = self.lambda_ratio.unwrap_or(cfg.lambda_ratio);
        cfg.out = self.out.clone().or(cfg.out);
        cfg.cache_dir = self.cache_dir.clone().or(cfg.cache_dir);
        cfg.conservative |= self.conservative;
        cfg.personalized_k |= self.personalized_k;
        cfg.timing |= self.timing;
        match self.init_u {
            Some(InitU::Zero) => cfg.init_u = DualInit::Zero,
            Some(InitU::Gradient) => cfg.init_u = DualInit::Gradient,
            None => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed_list(&self, base: u64) -> Vec<u64> {
        (0..self.seeds.max(1)).map(|i| base + i).collect()
    }
}

fn write_or_print(out: Option<&PathBuf>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> Result<ExitCode> {
    let args = Args::parse();
    let cfg = args.config()?;

    if args.mode == Mode::Run {
        let outcome = run_experiment(&cfg)?;
        println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
        return Ok(ExitCode::SUCCESS);
    }

    let problem = cfg.build_problem()?;
    let reference = match &cfg.cache_dir {
        Some(dir) => compute_reference_cached(&problem, DEFAULT_REFERENCE_TOL, dir)?,
        None => compute_reference(&problem, DEFAULT_REFERENCE_TOL)?,
    };
    let c = problem.constants();
    match args.mode {
        Mode::Run => unreachable!(),
        Mode::SweepK => {
            let ks = args.k_list.clone().unwrap_or_else(|| default_k_list(&c, cfg.cohort));
            let rows = sweep_t_vs_k(&problem, &reference, &cfg, &ks, &args.seed_list(cfg.seed))?;
            write_or_print(cfg.out.as_ref(), "sweep_k.csv", &sweep_to_csv("k", &rows))?;
        }
        Mode::SweepC => {
            let cohorts = args.cohorts.clone().unwrap_or_else(|| default_cohort_list(cfg.clients));
            let rows = sweep_t_vs_c(&problem, &reference, &cfg, &cohorts, &args.seed_list(cfg.seed))?;
            write_or_print(cfg.out.as_ref(), "sweep_c.csv", &sweep_to_csv("c", &rows))?;
        }
        Mode::ContractTest => {
            let (schedule, rule) = cfg.plan(&problem)?;
            if !rule.is_deterministic() {
                bail!("the contraction test needs a deterministic local solver (gd or prox)");
            }
            let state = ServerState::initial(&problem, vec![0.0; problem.dim()], cfg.init_u)?;
            let report = contraction_test(&problem, &reference, &schedule, &rule, state, args.rounds, cfg.seed, 1e-9)?;
            let mut text = String::from("round,psi,expected_next,bound,holds\n");
            for r in &report.rows {
                text.push_str(&format!("{},{:e},{:e},{:e},{}\n", r.round, r.psi, r.expected_next, r.bound, r.holds));
            }
            write_or_print(cfg.out.as_ref(), "contraction.csv", &text)?;
            eprintln!(
                "rho = {:e}; {} of {} rounds satisfy the contraction bound",
                report.rho,
                report.rows.iter().filter(|r| r.holds).count(),
                report.rows.len()
            );
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
