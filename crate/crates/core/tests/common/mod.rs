#![allow(dead_code)]

use fivegcs::algorithms::ReferenceSolution;
use fivegcs::harness::{compute_reference, SyntheticSpec};
use fivegcs::objective::Problem;

pub fn synthetic(spec: &str, clients: usize) -> Problem {
    spec.parse::<SyntheticSpec>().unwrap().build(clients).unwrap()
}

pub fn reference(problem: &Problem) -> ReferenceSolution {
    compute_reference(problem, 1e-12).unwrap()
}

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// All `C`-subsets of `0..M` by brute-force bitmask enumeration.
pub fn subsets(m: usize, c: usize) -> Vec<Vec<usize>> {
    (0u32..1 << m)
        .filter(|mask| mask.count_ones() as usize == c)
        .map(|mask| (0..m).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}
