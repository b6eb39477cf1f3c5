//! Stepsize and local-step schedules, contraction rates and Lyapunov
//! weights for each convergence regime.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::local_solvers::required_k_gd;
use crate::objective::ProblemConstants;

/// Which convergence result a schedule instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "alpha", rename_all = "snake_case")]
pub enum Variant {
    /// Exact prox (`K = ∞`), minibatch Point-SAGA.
    Thm1Inf,
    /// Accelerated: GD with `K = O(√(Cκ/M)·log κ)` steps.
    Thm2K,
    /// No local steps (`K = 0`).
    Thm3Zero,
    /// Logarithmically many local steps.
    Thm5Log,
    /// Interpolates between the two via `K(α) = 2α·log(4κ)`.
    Thm6Alpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalSteps {
    Zero,
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Primal stepsize γ.
    pub gamma: f64,
    /// Dual stepsize τ; unused when there is no local training.
    pub tau: Option<f64>,
    /// Cohort size C.
    pub cohort: usize,
    pub local_steps: LocalSteps,
    pub variant: Variant,
}

/// Relative slack for float comparisons in schedule validation.
const REL_SLACK: f64 = 1e-12;

fn check_cohort(c: &ProblemConstants, cohort: usize) -> Result<()> {
    if cohort == 0 || cohort > c.clients {
        return invalid(format!("cohort size {cohort} must lie in 1..={}", c.clients));
    }
    Ok(())
}

/// `τ_min = (8/3)√(Lμ/(MC))`, the smallest dual stepsize admitted by the
/// local-accuracy condition.
pub fn min_tau(c: &ProblemConstants, cohort: usize) -> f64 {
    8.0 / 3.0 * (c.l * c.mu / (c.m() * cohort as f64)).sqrt()
}

/// `γ = √(2C/(L_F μ M²))`, `τ = √(L_F μ/(2C))`, exact prox.
pub fn schedule_thm1(c: &ProblemConstants, cohort: usize) -> Result<Schedule> {
    check_cohort(c, cohort)?;
    if !(c.lf > 0.0) {
        return invalid("L_F = 0: every F_m is affine; use the zero-local-step schedule (thm3)");
    }
    let cf = cohort as f64;
    Ok(Schedule {
        gamma: (2.0 * cf / (c.lf * c.mu * c.m() * c.m())).sqrt(),
        tau: Some((c.lf * c.mu / (2.0 * cf)).sqrt()),
        cohort,
        local_steps: LocalSteps::Infinite,
        variant: Variant::Thm1Inf,
    })
}

/// `γ = (3/16)√(C/(LμM))`, `τ = 1/(2γM)`, `K` from [`required_k_gd`].
pub fn schedule_thm2(c: &ProblemConstants, cohort: usize) -> Result<Schedule> {
    check_cohort(c, cohort)?;
    let gamma = 3.0 / 16.0 * (cohort as f64 / (c.l * c.mu * c.m())).sqrt();
    Ok(Schedule {
        gamma,
        tau: Some(1.0 / (2.0 * gamma * c.m())),
        cohort,
        local_steps: LocalSteps::Finite(required_k_gd(c, cohort)),
        variant: Variant::Thm2K,
    })
}

/// `γ = C/(4LM)`, no local training.
pub fn schedule_thm3(c: &ProblemConstants, cohort: usize) -> Result<Schedule> {
    check_cohort(c, cohort)?;
    Ok(Schedule {
        gamma: cohort as f64 / (4.0 * c.l * c.m()),
        tau: None,
        cohort,
        local_steps: LocalSteps::Zero,
        variant: Variant::Thm3Zero,
    })
}

/// `γ = 3/(16L)`, `τ = 8L/(3M)`, `K = ⌈(2 + 3ML_F/(4L))·log(4L/μ)⌉`.
pub fn schedule_thm5(c: &ProblemConstants, cohort: usize) -> Result<Schedule> {
    check_cohort(c, cohort)?;
    let k = ((2.0 + 3.0 * c.m() * c.lf / (4.0 * c.l)) * (4.0 * c.kappa()).ln()).ceil();
    Ok(Schedule {
        gamma: 3.0 / (16.0 * c.l),
        tau: Some(8.0 * c.l / (3.0 * c.m())),
        cohort,
        local_steps: LocalSteps::Finite(k as usize),
        variant: Variant::Thm5Log,
    })
}

/// Upper end of the admissible α interval, `1 + (3/8)√(Cκ/M)`.
pub fn alpha_max(c: &ProblemConstants, cohort: usize) -> f64 {
    1.0 + 3.0 / 8.0 * (cohort as f64 / c.m() * c.kappa()).sqrt()
}

/// `τ = max{L/(M(α−1)), τ_min}`, `γ = 1/(2Mτ)`, `K = ⌈2α·log(4L/μ)⌉`
/// for `1 < α < 1 + (3/8)√(Cκ/M)`.
pub fn schedule_thm6(c: &ProblemConstants, cohort: usize, alpha: f64) -> Result<Schedule> {
    check_cohort(c, cohort)?;
    let hi = alpha_max(c, cohort);
    if !(alpha > 1.0 && alpha < hi) {
        return invalid(format!("alpha = {alpha} must lie in (1, {hi})"));
    }
    let tau = (c.l / (c.m() * (alpha - 1.0))).max(min_tau(c, cohort));
    let k = (2.0 * alpha * (4.0 * c.kappa()).ln()).ceil() as usize;
    Ok(Schedule {
        gamma: 1.0 / (2.0 * c.m() * tau),
        tau: Some(tau),
        cohort,
        local_steps: LocalSteps::Finite(k),
        variant: Variant::Thm6Alpha(alpha),
    })
}

/// Schedule for a given local GD budget `K`, with `α = K/(2·log 4κ)`.
///
/// Past the top of the α interval the two arms of the τ formula have
/// crossed, so the schedule is the accelerated one (`τ = τ_min`) run with
/// `K` steps.
pub fn schedule_for_local_steps(c: &ProblemConstants, cohort: usize, steps: usize) -> Result<Schedule> {
    check_cohort(c, cohort)?;
    let alpha = steps as f64 / (2.0 * (4.0 * c.kappa()).ln());
    if alpha >= alpha_max(c, cohort) {
        let tau = min_tau(c, cohort);
        return Ok(Schedule {
            gamma: 1.0 / (2.0 * c.m() * tau),
            tau: Some(tau),
            cohort,
            local_steps: LocalSteps::Finite(steps),
            variant: Variant::Thm2K,
        });
    }
    let mut s = schedule_thm6(c, cohort, alpha)?;
    s.local_steps = LocalSteps::Finite(steps);
    Ok(s)
}

impl Schedule {
    fn tau_or_err(&self) -> Result<f64> {
        match self.tau {
            Some(t) if t > 0.0 => Ok(t),
            _ => invalid("schedule needs a positive dual stepsize"),
        }
    }

    /// Checks the stepsize conditions the variant's guarantee relies on.
    pub fn validate(&self, c: &ProblemConstants) -> Result<()> {
        check_cohort(c, self.cohort)?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return invalid("primal stepsize must be positive");
        }
        let (m, cf) = (c.m(), self.cohort as f64);
        let le = |a: f64, b: f64| a <= b * (1.0 + REL_SLACK);
        match self.variant {
            Variant::Thm1Inf => {
                let tau = self.tau_or_err()?;
                if !le(self.gamma * tau, 1.0 / m) {
                    return invalid(format!("need γτ ≤ 1/M, got γτ = {}", self.gamma * tau));
                }
            }
            Variant::Thm3Zero => {
                if !le(self.gamma, cf / (4.0 * c.l * m)) {
                    return invalid("need γ ≤ C/(4LM)");
                }
            }
            Variant::Thm2K | Variant::Thm5Log | Variant::Thm6Alpha(_) => {
                let tau = self.tau_or_err()?;
                if !le(min_tau(c, self.cohort), tau) {
                    return invalid(format!(
                        "need τ ≥ (8/3)√(Lμ/(MC)) = {}, got {tau}",
                        min_tau(c, self.cohort)
                    ));
                }
                if !le(self.gamma, (1.0 - 4.0 * c.mu / (3.0 * m * tau)) / (tau * m)) {
                    return invalid("need γ ≤ (1/(τM))(1 − 4μ/(3Mτ))");
                }
                if self.variant == Variant::Thm2K
                    && !le(self.gamma, 3.0 / 16.0 * (cf / (c.l * c.mu * m)).sqrt())
                {
                    return invalid("need γ ≤ (3/16)√(C/(LμM))");
                }
            }
        }
        Ok(())
    }

    /// Guaranteed per-round contraction `ρ` of the expected Lyapunov value.
    pub fn contraction_rate(&self, c: &ProblemConstants) -> f64 {
        let gm = self.gamma * c.mu;
        let primal = gm / (1.0 + gm);
        let ratio = self.cohort as f64 / c.m();
        let dual = match self.variant {
            Variant::Thm1Inf => {
                let tau = self.tau.unwrap_or(0.0);
                ratio * 2.0 * tau / (c.lf + 2.0 * tau)
            }
            Variant::Thm3Zero => self.cohort as f64 / (c.m() + 2.0 * self.gamma * c.lf * c.m() * c.m()),
            _ => {
                let tau = self.tau.unwrap_or(0.0);
                ratio * tau / (c.lf + tau)
            }
        };
        primal.min(dual)
    }

    /// Weights `(a, b)` of `Ψ = a‖x − x*‖² + b‖u − u*‖²`.
    pub fn lyapunov_weights(&self, c: &ProblemConstants) -> Result<(f64, f64)> {
        let (m, cf) = (c.m(), self.cohort as f64);
        match self.variant {
            Variant::Thm3Zero => {
                let shrink = 1.0 - (self.gamma * m * c.lf / 2.0).sqrt();
                Ok((cf / (m * m * self.gamma * self.gamma) * shrink, 1.0))
            }
            variant => {
                if !(c.lf > 0.0) {
                    return invalid("Lyapunov weight divides by L_F = 0");
                }
                let tau = self.tau_or_err()?;
                let lf_weight = if variant == Variant::Thm1Inf { 2.0 } else { 1.0 };
                Ok((1.0 / self.gamma, m / cf * (1.0 / tau + lf_weight / c.lf)))
            }
        }
    }

    /// Rounds sufficient for `E[Ψ^T] ≤ εΨ⁰` from the closed-form round count
    /// of the variant (each is an upper bound on `log(1/ε)/ρ`).
    pub fn rounds_bound(&self, c: &ProblemConstants, eps: f64) -> f64 {
        let log_eps = (1.0 / eps).ln();
        let (mc, kappa) = (c.m() / self.cohort as f64, c.kappa());
        let factor = match self.variant {
            Variant::Thm1Inf => mc + (mc * (c.l - c.mu) / (2.0 * c.mu)).sqrt(),
            Variant::Thm2K => (1.0 + 16.0 / 3.0 * (mc * kappa).sqrt()).max(mc + 3.0 / 8.0 * (mc * kappa).sqrt()),
            Variant::Thm3Zero => (1.0 + 4.0 * mc * kappa).max(mc + c.lf * c.m() / c.l),
            Variant::Thm5Log => (1.0 + 16.0 * kappa / 3.0).max(mc + 3.0 * mc / 8.0 * (c.m() * c.lf / c.l)),
            Variant::Thm6Alpha(alpha) => (1.0 + 2.0 * kappa / (alpha - 1.0)).max(mc * alpha),
        };
        factor * log_eps
    }

    /// `log(1/ε)/ρ`
    pub fn rounds_from_rate(&self, c: &ProblemConstants, eps: f64) -> f64 {
        (1.0 / eps).ln() / self.contraction_rate(c)
    }
}
