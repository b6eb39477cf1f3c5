//! Small dense-vector helpers. Vectors are plain `[f64]` slices of length d.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared block distances, `Σ_m ‖a_m − b_m‖²`.
pub fn block_dist_sq(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dist_sq(x, y)).sum()
}

/// Largest eigenvalue of a symmetric PSD operator given by `matvec`.
///
/// Iterates until successive Rayleigh quotients differ by less than `1e-10`
/// relative, or 10,000 iterations. Returns 0 for the zero operator.
pub fn power_iteration(dim: usize, mut matvec: impl FnMut(&[f64], &mut [f64])) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    // A fixed pseudo-random start avoids starting orthogonal to the top
    // eigenvector (e.g. the all-ones vector for rows like (1, -1)).
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0F_C0DE);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect();
    let n = norm(&v);
    scale(1.0 / n, &mut v);
    let mut w = vec![0.0; dim];
    let mut last = f64::NAN;
    for _ in 0..10_000 {
        w.iter_mut().for_each(|x| *x = 0.0);
        matvec(&v, &mut w);
        let rayleigh = dot(&v, &w);
        let wn = norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        if last.is_finite() && (rayleigh - last).abs() <= 1e-10 * rayleigh.abs() {
            return rayleigh;
        }
        last = rayleigh;
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
    }
    last
}

/// Solves `H s = g` for symmetric positive definite `H` by Cholesky.
pub(crate) fn spd_solve(h: DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let chol = h.cholesky()?;
    let s = chol.solve(&DVector::from_column_slice(g));
    Some(s.iter().copied().collect())
}
