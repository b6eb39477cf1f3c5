//! High-accuracy minimizer of `f`, used as `x*` by every distance and `Ψ`.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::algorithms::ReferenceSolution;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, spd_solve};
use crate::local_solvers::NEWTON_MAX_DIM;
use crate::objective::Problem;

pub const DEFAULT_REFERENCE_TOL: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 200;
const MAX_GD_ITERS: usize = 10_000_000;

/// Minimizes `f` from zero until `‖∇f(x)‖ ≤ tol`: damped Newton up to
/// [`NEWTON_MAX_DIM`] dimensions, GD with stepsize `1/L` beyond.
pub fn compute_reference(problem: &Problem, tol: f64) -> Result<ReferenceSolution> {
    if !(tol > 0.0) {
        return invalid("reference tolerance must be positive");
    }
    let x = if problem.dim() <= NEWTON_MAX_DIM {
        newton(problem, tol)?
    } else {
        gradient_descent(problem, tol)?
    };
    Ok(ReferenceSolution::from_minimizer(problem, x))
}

fn newton(problem: &Problem, tol: f64) -> Result<Vec<f64>> {
    let mut x = vec![0.0; problem.dim()];
    let mut g = problem.gradient(&x);
    let mut gnorm = linalg::norm(&g);
    for _ in 0..MAX_NEWTON_ITERS {
        if gnorm <= tol {
            return Ok(x);
        }
        let Some(step) = spd_solve(problem.hessian(&x), &g) else {
            return gradient_descent(problem, tol);
        };
        let value = problem.value(&x);
        let slope = linalg::dot(&g, &step);
        let mut t = 1.0;
        loop {
            let mut trial = x.clone();
            linalg::axpy(-t, &step, &mut trial);
            let tg = problem.gradient(&trial);
            let tnorm = linalg::norm(&tg);
            // Near the optimum f is flat to rounding, so also accept a
            // decrease of the gradient norm.
            let tv = problem.value(&trial);
            let flat = (tv - value).abs() <= 1e-12 * (1.0 + value.abs());
            if tv <= value - 1e-4 * t * slope || (flat && tnorm < gnorm) {
                x = trial;
                g = tg;
                gnorm = tnorm;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(Error::NoConvergence {
                    solver: "reference newton",
                    iterations: MAX_NEWTON_ITERS,
                    residual: gnorm,
                });
            }
        }
    }
    if gnorm <= tol {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        solver: "reference newton",
        iterations: MAX_NEWTON_ITERS,
        residual: gnorm,
    })
}

fn gradient_descent(problem: &Problem, tol: f64) -> Result<Vec<f64>> {
    let eta = 1.0 / problem.smoothness();
    let mut x = vec![0.0; problem.dim()];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_GD_ITERS {
        let g = problem.gradient(&x);
        residual = linalg::norm(&g);
        if residual <= tol {
            return Ok(x);
        }
        linalg::axpy(-eta, &g, &mut x);
    }
    Err(Error::NoConvergence {
        solver: "reference gd",
        iterations: MAX_GD_ITERS,
        residual,
    })
}

/// Hex SHA-256 of the serialized problem (data, partition and `λ`) and `tol`.
pub fn problem_key(problem: &Problem, tol: f64) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(problem)?);
    hasher.update(tol.to_le_bytes());
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("reference-{key}.json"))
}

/// [`compute_reference`] with an on-disk cache in `dir`.
pub fn compute_reference_cached(problem: &Problem, tol: f64, dir: &Path) -> Result<ReferenceSolution> {
    let path = cache_path(dir, &problem_key(problem, tol)?);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(reference) = serde_json::from_str::<ReferenceSolution>(&text) {
            if reference.x_star.len() == problem.dim() {
                return Ok(reference);
            }
        }
    }
    let reference = compute_reference(problem, tol)?;
    fs::create_dir_all(dir)?;
    fs::write(&path, serde_json::to_string(&reference)?)?;
    Ok(reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ClientLoss, QuadraticLoss};

    #[test]
    fn one_dimensional_quadratic() {
        // Loss (x² − 6x)/2 with λ small: x* = 3/(1 + λ).
        let q = QuadraticLoss::new(1, vec![1.0], vec![3.0]).unwrap();
        let lambda = 1e-9;
        let p = Problem::new(vec![ClientLoss::Quadratic(q)], lambda).unwrap();
        let r = compute_reference(&p, 1e-12).unwrap();
        assert!((r.x_star[0] - 3.0 / (1.0 + lambda)).abs() < 1e-12);
        assert!(r.optimality_residual(p.mu()) <= 1e-12);
        assert!(r.f_star <= p.value(&[0.0]));
    }

    #[test]
    fn cache_round_trip() {
        let q = QuadraticLoss::new(2, vec![2.0, 0.5, 0.5, 1.0], vec![1.0, -1.0]).unwrap();
        let p = Problem::new(vec![ClientLoss::Quadratic(q)], 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = compute_reference_cached(&p, 1e-12, dir.path()).unwrap();
        let b = compute_reference_cached(&p, 1e-12, dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
