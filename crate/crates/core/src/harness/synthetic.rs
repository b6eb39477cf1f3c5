//! Synthetic federated problems with a prescribed condition number.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{ClientShard, DataPoint};
use crate::error::{invalid, Error, Result};
use crate::objective::{ClientLoss, Problem, QuadraticLoss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Logistic,
    Quadratic,
}

/// Parsed from `kind,key=value,...`, e.g. `logistic,d=20,n=50,kappa=1000,seed=7`.
///
/// Keys: `d` dimension, `n` points per client (logistic), `kappa` condition
/// number, `het` client heterogeneity, `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub dim: usize,
    pub points_per_client: usize,
    pub kappa: f64,
    pub heterogeneity: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Logistic,
            dim: 10,
            points_per_client: 30,
            kappa: 1e3,
            heterogeneity: 1.0,
            seed: 0,
        }
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(',').map(str::trim);
        let mut spec = SyntheticSpec::default();
        spec.kind = match parts.next() {
            Some("logistic") => SyntheticKind::Logistic,
            Some("quadratic") => SyntheticKind::Quadratic,
            other => return invalid(format!("unknown synthetic kind {other:?}")),
        };
        for part in parts.filter(|p| !p.is_empty()) {
            let Some((key, value)) = part.split_once('=') else {
                return invalid(format!("expected key=value, got {part:?}"));
            };
            let bad = || Error::InvalidArgument(format!("bad value for {key}: {value:?}"));
            match key {
                "d" => spec.dim = value.parse().map_err(|_| bad())?,
                "n" => spec.points_per_client = value.parse().map_err(|_| bad())?,
                "kappa" => spec.kappa = value.parse().map_err(|_| bad())?,
                "het" => spec.heterogeneity = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                _ => return invalid(format!("unknown synthetic key {key:?}")),
            }
        }
        if spec.dim == 0 || spec.points_per_client == 0 {
            return invalid("synthetic dimension and size must be positive");
        }
        if !(spec.kappa > 1.0) {
            return invalid("synthetic kappa must exceed 1");
        }
        Ok(spec)
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

impl SyntheticSpec {
    /// Builds `clients` shards and sets the regularizer so that `L/μ = kappa`.
    pub fn build(&self, clients: usize) -> Result<Problem> {
        if clients == 0 {
            return invalid("need at least one client");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let d = self.dim;
        let losses = match self.kind {
            SyntheticKind::Logistic => {
                let planted = uniform_vec(&mut rng, d);
                (0..clients)
                    .map(|_| {
                        let shift: Vec<f64> = uniform_vec(&mut rng, d)
                            .into_iter()
                            .map(|s| self.heterogeneity * s)
                            .collect();
                        let points = (0..self.points_per_client)
                            .map(|_| {
                                let a: Vec<f64> = uniform_vec(&mut rng, d)
                                    .iter()
                                    .zip(&shift)
                                    .map(|(a, s)| a + s)
                                    .collect();
                                let margin: f64 = a.iter().zip(&planted).map(|(a, w)| a * w).sum();
                                let noisy = margin + 0.5 * rng.gen_range(-1.0..1.0);
                                DataPoint {
                                    features: a.into_iter().enumerate().map(|(j, v)| (j + 1, v)).collect(),
                                    label: if noisy >= 0.0 { 1.0 } else { -1.0 },
                                }
                            })
                            .collect();
                        ClientShard::new(points, d).map(ClientLoss::Logistic)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            SyntheticKind::Quadratic => (0..clients)
                .map(|_| {
                    // Q = BᵀB/d with client-specific scaling and a shifted minimizer.
                    let scale = 1.0 + self.heterogeneity * rng.gen_range(0.0..1.0);
                    let b: Vec<Vec<f64>> = (0..d).map(|_| uniform_vec(&mut rng, d)).collect();
                    let mut q = vec![0.0; d * d];
                    for i in 0..d {
                        for j in 0..d {
                            q[i * d + j] = scale * (0..d).map(|k| b[k][i] * b[k][j]).sum::<f64>() / d as f64;
                        }
                    }
                    let target: Vec<f64> = uniform_vec(&mut rng, d)
                        .into_iter()
                        .map(|t| self.heterogeneity * t)
                        .collect();
                    let linear = (0..d)
                        .map(|i| (0..d).map(|j| q[i * d + j] * target[j]).sum())
                        .collect();
                    QuadraticLoss::new(d, q, linear).map(ClientLoss::Quadratic)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Problem::with_condition_number(losses, self.kappa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_spec() {
        let s: SyntheticSpec = "logistic,d=20,n=50,kappa=1000,seed=7".parse().unwrap();
        assert_eq!(s.kind, SyntheticKind::Logistic);
        assert_eq!((s.dim, s.points_per_client, s.seed), (20, 50, 7));
        assert_eq!(s.kappa, 1000.0);
        assert!("cubic,d=2".parse::<SyntheticSpec>().is_err());
        assert!("logistic,d=x".parse::<SyntheticSpec>().is_err());
        assert!("logistic,kappa=1".parse::<SyntheticSpec>().is_err());
    }

    #[test]
    fn builds_with_requested_condition_number() {
        for spec in ["logistic,d=5,n=10,kappa=100,seed=1", "quadratic,d=4,kappa=1000,seed=2"] {
            let s: SyntheticSpec = spec.parse().unwrap();
            let p = s.build(3).unwrap();
            assert_eq!(p.num_clients(), 3);
            assert!((p.constants().kappa() / s.kappa - 1.0).abs() < 1e-9, "{spec}");
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let s: SyntheticSpec = "logistic,d=3,n=4,seed=5".parse().unwrap();
        assert_eq!(s.build(2).unwrap(), s.build(2).unwrap());
    }
}
