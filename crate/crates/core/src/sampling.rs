//! Uniform cohort sampling and the client-sampling operator.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`), whose output stream is
//! fixed by its specification, so a seed reproduces the same cohorts on
//! every platform. Round `t` draws from the generator seeded with
//! `seed ^ t`; client `m`'s local solver in round `t` uses stream `m + 1` of
//! that same key, so it never overlaps the cohort draws (stream 0).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::linalg;

/// Deterministic ChaCha8 generator tagged with its seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    draws: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            draws: 0,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Substream for cohort sampling in round `round`.
    pub fn for_round(seed: u64, round: u64) -> Self {
        Self::new(seed ^ round)
    }

    /// Substream for client `client`'s local solver in round `round`.
    pub fn for_client(seed: u64, round: u64, client: usize) -> Self {
        let mut rng = Self::new(seed ^ round);
        rng.inner.set_stream(client as u64 + 1);
        rng
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.draws += 1;
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.draws += 1;
        self.inner.try_fill_bytes(dest)
    }
}

/// A set of `C` distinct client indices (0-based), kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Cohort {
    indices: Vec<usize>,
    clients: usize,
}

impl Cohort {
    pub fn new(mut indices: Vec<usize>, clients: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() || indices.windows(2).any(|w| w[0] == w[1]) {
            return invalid("cohort must be a non-empty set of distinct clients");
        }
        if indices.last().is_some_and(|&m| m >= clients) {
            return invalid("cohort index out of range");
        }
        Ok(Self { indices, clients })
    }

    pub fn full(clients: usize) -> Self {
        Self {
            indices: (0..clients).collect(),
            clients,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn contains(&self, m: usize) -> bool {
        self.indices.binary_search(&m).is_ok()
    }
}

fn check_sizes(clients: usize, cohort: usize) -> Result<()> {
    if cohort < 1 || cohort > clients {
        return invalid(format!("cohort size {cohort} must lie in 1..={clients}"));
    }
    Ok(())
}

/// Uniform `C`-subset of `0..M` by a partial Fisher–Yates shuffle.
pub fn sample_cohort(clients: usize, cohort: usize, rng: &mut impl Rng) -> Result<Cohort> {
    check_sizes(clients, cohort)?;
    let mut pool: Vec<usize> = (0..clients).collect();
    for i in 0..cohort {
        let j = rng.gen_range(i..clients);
        pool.swap(i, j);
    }
    pool.truncate(cohort);
    Cohort::new(pool, clients)
}

/// All `binom(M, C)` cohorts in lexicographic order.
pub fn all_cohorts(clients: usize, cohort: usize) -> Result<Vec<Cohort>> {
    check_sizes(clients, cohort)?;
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..cohort).collect();
    loop {
        out.push(Cohort {
            indices: idx.clone(),
            clients,
        });
        let Some(pos) = (0..cohort).rev().find(|&i| idx[i] != i + clients - cohort) else {
            return Ok(out);
        };
        idx[pos] += 1;
        for i in pos + 1..cohort {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

/// `P_m(v_m) = (M/C) v_m` for `m` in the cohort, zero otherwise.
pub fn apply_sampling_operator(v: &[Vec<f64>], cohort: &Cohort) -> Vec<Vec<f64>> {
    let w = v.len() as f64 / cohort.size() as f64;
    v.iter()
        .enumerate()
        .map(|(m, vm)| {
            if cohort.contains(m) {
                vm.iter().map(|x| w * x).collect()
            } else {
                vec![0.0; vm.len()]
            }
        })
        .collect()
}

/// Closed form of `E‖Hᵀ(P(v) − v)‖²` over uniform cohorts of size `C`:
/// `(M/C)((M−C)/(M−1)) Σ‖v_m‖² − ((M−C)/(C(M−1))) ‖Σ v_m‖²`.
pub fn expected_sq_deviation(v: &[Vec<f64>], cohort: usize) -> Result<f64> {
    let clients = v.len();
    check_sizes(clients, cohort)?;
    if clients == 1 {
        return Ok(0.0);
    }
    let (m, c) = (clients as f64, cohort as f64);
    let sum_sq: f64 = v.iter().map(|x| linalg::norm_sq(x)).sum();
    let mut total = vec![0.0; v[0].len()];
    for vm in v {
        linalg::axpy(1.0, vm, &mut total);
    }
    Ok((m / c) * ((m - c) / (m - 1.0)) * sum_sq - ((m - c) / (c * (m - 1.0))) * linalg::norm_sq(&total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn full_cohort_is_everyone() {
        let mut rng = SeededRng::new(3);
        for _ in 0..20 {
            assert_eq!(sample_cohort(5, 5, &mut rng).unwrap(), Cohort::full(5));
        }
    }

    #[test]
    fn singleton_frequencies() {
        let mut rng = SeededRng::new(11);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_cohort(4, 1, &mut rng).unwrap().indices()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn pair_frequencies() {
        let mut rng = SeededRng::new(12);
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        let n = 120_000;
        for _ in 0..n {
            *counts
                .entry(sample_cohort(4, 2, &mut rng).unwrap().indices().to_vec())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn invalid_cohort_sizes() {
        let mut rng = SeededRng::new(1);
        assert!(sample_cohort(3, 0, &mut rng).is_err());
        assert!(sample_cohort(3, 4, &mut rng).is_err());
        assert!(Cohort::new(vec![1, 1], 3).is_err());
        assert!(Cohort::new(vec![3], 3).is_err());
    }

    #[test]
    fn enumerates_binomial_many() {
        assert_eq!(all_cohorts(6, 3).unwrap().len(), 20);
        assert_eq!(all_cohorts(4, 4).unwrap(), vec![Cohort::full(4)]);
        let pairs: Vec<Vec<usize>> = all_cohorts(3, 2)
            .unwrap()
            .iter()
            .map(|c| c.indices().to_vec())
            .collect();
        assert_eq!(pairs, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn operator_definition() {
        let v = vec![vec![1.0], vec![2.0], vec![3.0]];
        let cohort = Cohort::new(vec![0, 2], 3).unwrap();
        assert_eq!(
            apply_sampling_operator(&v, &cohort),
            vec![vec![1.5], vec![0.0], vec![4.5]]
        );
        assert_eq!(apply_sampling_operator(&v, &Cohort::full(3)), v);
    }

    #[test]
    fn deviation_scalar_example() {
        let v = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!((expected_sq_deviation(&v, 2).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(expected_sq_deviation(&v, 3).unwrap(), 0.0);
        assert_eq!(expected_sq_deviation(&[vec![4.0]], 1).unwrap(), 0.0);
    }

    #[test]
    fn client_streams_are_distinct_and_reproducible() {
        let a: Vec<u64> = (0..4).map(|_| SeededRng::for_client(9, 2, 0).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut r0 = SeededRng::for_round(9, 2);
        let mut r1 = SeededRng::for_client(9, 2, 0);
        assert_ne!(r0.next_u64(), r1.next_u64());
        assert_eq!(r0.draws(), 1);
    }
}
