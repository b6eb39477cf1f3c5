//! Client objectives `f_m`, the shifted functions `F_m = (f_m − μ/2‖·‖²)/M`
//! and the local subproblems `ψ_m` solved during local training.
//!
//! Every client objective has the form `f_m(x) = loss_m(x) + λ/2‖x‖²` with a
//! convex data term, so `μ = λ` and `F_m = loss_m / M`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data_io::ClientShard;
use crate::error::{invalid, Result};
use crate::linalg::{self, power_iteration};

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Convex quadratic data term `½ xᵀQx − bᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    dim: usize,
    /// Row-major symmetric PSD matrix `Q`.
    hessian: Vec<f64>,
    linear: Vec<f64>,
}

impl QuadraticLoss {
    pub fn new(dim: usize, hessian: Vec<f64>, linear: Vec<f64>) -> Result<Self> {
        if hessian.len() != dim * dim || linear.len() != dim {
            return invalid("quadratic loss shape mismatch");
        }
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (hessian[i * dim + j], hessian[j * dim + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                    return invalid("quadratic loss matrix is not symmetric");
                }
            }
        }
        Ok(Self {
            dim,
            hessian,
            linear,
        })
    }

    /// `c/2 ‖x‖²`
    pub fn isotropic(dim: usize, c: f64) -> Self {
        let mut hessian = vec![0.0; dim * dim];
        for i in 0..dim {
            hessian[i * dim + i] = c;
        }
        Self {
            dim,
            hessian,
            linear: vec![0.0; dim],
        }
    }

    fn add_matvec(&self, scale: f64, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.hessian.chunks_exact(self.dim).enumerate() {
            out[i] += scale * linalg::dot(row, x);
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut qx = vec![0.0; self.dim];
        self.add_matvec(1.0, x, &mut qx);
        0.5 * linalg::dot(x, &qx) - linalg::dot(&self.linear, x)
    }
}

/// The data term of one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClientLoss {
    /// Average logistic loss `(1/N) Σ log(1 + exp(−b aᵀx))`.
    Logistic(ClientShard),
    Quadratic(QuadraticLoss),
}

impl ClientLoss {
    pub fn dimension(&self) -> usize {
        match self {
            ClientLoss::Logistic(s) => s.dimension,
            ClientLoss::Quadratic(q) => q.dim,
        }
    }

    /// Number of finite-sum components. A quadratic is a single component.
    pub fn components(&self) -> usize {
        match self {
            ClientLoss::Logistic(s) => s.len(),
            ClientLoss::Quadratic(_) => 1,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ClientLoss::Logistic(s) => {
                let total: f64 = s
                    .points
                    .iter()
                    .map(|p| softplus(-p.label * p.dot(x)))
                    .sum();
                total / s.len() as f64
            }
            ClientLoss::Quadratic(q) => q.value(x),
        }
    }

    /// `out += scale · ∇loss(x)`
    pub fn add_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            ClientLoss::Logistic(s) => {
                let w = scale / s.len() as f64;
                for p in &s.points {
                    let z = p.label * p.dot(x);
                    p.axpy_into(-w * p.label * sigmoid(-z), out);
                }
            }
            ClientLoss::Quadratic(q) => {
                q.add_matvec(scale, x, out);
                linalg::axpy(-scale, &q.linear, out);
            }
        }
    }

    /// `out += scale · ∇loss_i(x)` for the `i`-th summand (unnormalized).
    pub fn add_component_gradient(&self, i: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            ClientLoss::Logistic(s) => {
                let p = &s.points[i];
                let z = p.label * p.dot(x);
                p.axpy_into(-scale * p.label * sigmoid(-z), out);
            }
            ClientLoss::Quadratic(_) => {
                debug_assert_eq!(i, 0);
                self.add_gradient(x, scale, out);
            }
        }
    }

    /// Smoothness constant of the `i`-th summand: `‖a_i‖²/4` for logistic rows.
    pub fn component_smoothness(&self, i: usize) -> f64 {
        match self {
            ClientLoss::Logistic(s) => s.points[i].norm_sq() / 4.0,
            ClientLoss::Quadratic(_) => self.smoothness(),
        }
    }

    /// `h += scale · ∇²loss(x)`
    pub fn add_hessian(&self, x: &[f64], scale: f64, h: &mut DMatrix<f64>) {
        match self {
            ClientLoss::Logistic(s) => {
                let w = scale / s.len() as f64;
                for p in &s.points {
                    let sg = sigmoid(p.label * p.dot(x));
                    let c = w * sg * (1.0 - sg);
                    for &(i, vi) in &p.features {
                        for &(j, vj) in &p.features {
                            h[(i - 1, j - 1)] += c * vi * vj;
                        }
                    }
                }
            }
            ClientLoss::Quadratic(q) => {
                for i in 0..q.dim {
                    for j in 0..q.dim {
                        h[(i, j)] += scale * q.hessian[i * q.dim + j];
                    }
                }
            }
        }
    }

    /// Upper bound on the Hessian of the data term: `λ_max(AᵀA)/(4N)` for
    /// logistic shards and `λ_max(Q)` for quadratics, by power iteration.
    pub fn smoothness(&self) -> f64 {
        let d = self.dimension();
        match self {
            ClientLoss::Logistic(s) => {
                let scale = 1.0 / (4.0 * s.len() as f64);
                power_iteration(d, |v, out| {
                    for p in &s.points {
                        p.axpy_into(scale * p.dot(v), out);
                    }
                })
            }
            ClientLoss::Quadratic(q) => power_iteration(d, |v, out| q.add_matvec(1.0, v, out)),
        }
    }
}

/// `L_m = λ_max(A_mᵀA_m)/(4N) + λ`; equals `λ` for an all-zero feature matrix.
pub fn estimate_smoothness(shard: &ClientShard, lambda: f64) -> f64 {
    ClientLoss::Logistic(shard.clone()).smoothness() + lambda
}

/// Constants that drive every stepsize and local-step formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// `L = max_m L_m`
    pub l: f64,
    pub mu: f64,
    pub clients: usize,
    /// `L_F = (L − μ)/M`
    pub lf: f64,
}

impl ProblemConstants {
    pub fn new(l: f64, mu: f64, clients: usize) -> Self {
        Self {
            l,
            mu,
            clients,
            lf: (l - mu) / clients as f64,
        }
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub(crate) fn m(&self) -> f64 {
        self.clients as f64
    }
}

/// The federated problem `min_x (1/M) Σ_m f_m(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    clients: Vec<ClientLoss>,
    lambda: f64,
    dim: usize,
    /// `L_m`, including the regularizer.
    client_smoothness: Vec<f64>,
}

impl Problem {
    pub fn new(clients: Vec<ClientLoss>, lambda: f64) -> Result<Self> {
        let data: Vec<f64> = clients.iter().map(ClientLoss::smoothness).collect();
        Self::with_data_smoothness(clients, lambda, data)
    }

    fn with_data_smoothness(clients: Vec<ClientLoss>, lambda: f64, data: Vec<f64>) -> Result<Self> {
        if clients.is_empty() {
            return invalid("problem needs at least one client");
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return invalid(format!("regularizer must be positive, got {lambda}"));
        }
        let dim = clients[0].dimension();
        if clients.iter().any(|c| c.dimension() != dim) {
            return invalid("clients disagree on the feature dimension");
        }
        let client_smoothness = data.iter().map(|l| l + lambda).collect();
        Ok(Self {
            clients,
            lambda,
            dim,
            client_smoothness,
        })
    }

    /// Chooses `λ = ratio·L` where `L = max_m L_data,m + λ`, i.e.
    /// `λ = ratio·max L_data / (1 − ratio)`.
    pub fn with_lambda_ratio(clients: Vec<ClientLoss>, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return invalid(format!("lambda ratio must lie in (0,1), got {ratio}"));
        }
        let data: Vec<f64> = clients.iter().map(ClientLoss::smoothness).collect();
        let l_data = data.iter().copied().fold(0.0, f64::max);
        let lambda = ratio * l_data / (1.0 - ratio);
        Self::with_data_smoothness(clients, lambda, data)
    }

    /// Chooses `λ` so that `L/μ = kappa` exactly.
    pub fn with_condition_number(clients: Vec<ClientLoss>, kappa: f64) -> Result<Self> {
        if !(kappa > 1.0) {
            return invalid(format!("condition number must exceed 1, got {kappa}"));
        }
        Self::with_lambda_ratio(clients, 1.0 / kappa)
    }

    pub fn clients(&self) -> &[ClientLoss] {
        &self.clients
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.lambda
    }

    /// `L_m`
    pub fn client_smoothness(&self, m: usize) -> f64 {
        self.client_smoothness[m]
    }

    /// `L = max_m L_m`
    pub fn smoothness(&self) -> f64 {
        self.client_smoothness.iter().copied().fold(0.0, f64::max)
    }

    /// `L_F = (L − μ)/M`
    pub fn lf(&self) -> f64 {
        self.constants().lf
    }

    /// `L_F^{(m)} = (L_m − μ)/M`
    pub fn lf_client(&self, m: usize) -> f64 {
        (self.client_smoothness[m] - self.lambda) / self.num_clients() as f64
    }

    pub fn constants(&self) -> ProblemConstants {
        ProblemConstants::new(self.smoothness(), self.lambda, self.num_clients())
    }

    pub fn f_m_value(&self, m: usize, x: &[f64]) -> f64 {
        self.clients[m].value(x) + 0.5 * self.lambda * linalg::norm_sq(x)
    }

    pub fn grad_f_m(&self, m: usize, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x.iter().map(|v| self.lambda * v).collect();
        self.clients[m].add_gradient(x, 1.0, &mut g);
        g
    }

    /// `F_m(x) = (f_m(x) − μ/2‖x‖²)/M`
    pub fn big_f_m_value(&self, m: usize, x: &[f64]) -> f64 {
        (self.f_m_value(m, x) - 0.5 * self.mu() * linalg::norm_sq(x)) / self.num_clients() as f64
    }

    /// `∇F_m(x) = (∇f_m(x) − μx)/M`, evaluated from the data term directly.
    pub fn grad_big_f_m(&self, m: usize, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.clients[m].add_gradient(x, 1.0 / self.num_clients() as f64, &mut g);
        g
    }

    /// `f(x) = (1/M) Σ_m f_m(x)`
    pub fn value(&self, x: &[f64]) -> f64 {
        let total: f64 = (0..self.num_clients()).map(|m| self.f_m_value(m, x)).sum();
        total / self.num_clients() as f64
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x.iter().map(|v| self.lambda * v).collect();
        let w = 1.0 / self.num_clients() as f64;
        for c in &self.clients {
            c.add_gradient(x, w, &mut g);
        }
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::identity(self.dim, self.dim) * self.lambda;
        let w = 1.0 / self.num_clients() as f64;
        for c in &self.clients {
            c.add_hessian(x, w, &mut h);
        }
        h
    }
}

/// `ψ_m(y) = F_m(y) + τ/2 ‖y − (x̂ + u_m/τ)‖²`
#[derive(Debug, Clone)]
pub struct LocalSubproblem<'a> {
    pub problem: &'a Problem,
    pub client: usize,
    pub tau: f64,
    pub center: Vec<f64>,
}

impl<'a> LocalSubproblem<'a> {
    pub fn new(problem: &'a Problem, client: usize, tau: f64, x_hat: &[f64], u_m: &[f64]) -> Self {
        let center = x_hat.iter().zip(u_m).map(|(x, u)| x + u / tau).collect();
        Self::with_center(problem, client, tau, center)
    }

    pub fn with_center(problem: &'a Problem, client: usize, tau: f64, center: Vec<f64>) -> Self {
        debug_assert!(tau > 0.0);
        Self {
            problem,
            client,
            tau,
            center,
        }
    }

    fn inv_m(&self) -> f64 {
        1.0 / self.problem.num_clients() as f64
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        self.problem.clients[self.client].value(y) * self.inv_m()
            + 0.5 * self.tau * linalg::dist_sq(y, &self.center)
    }

    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = y
            .iter()
            .zip(&self.center)
            .map(|(a, c)| self.tau * (a - c))
            .collect();
        self.problem.clients[self.client].add_gradient(y, self.inv_m(), &mut g);
        g
    }

    /// `out += scale · ∇g_i(y)` where `ψ_m = (1/n) Σ_i g_i` and
    /// `g_i(y) = loss_i(y)/M + τ/2‖y − center‖²`.
    pub fn add_component_gradient(&self, i: usize, y: &[f64], scale: f64, out: &mut [f64]) {
        for ((o, a), c) in out.iter_mut().zip(y).zip(&self.center) {
            *o += scale * self.tau * (a - c);
        }
        self.problem.clients[self.client].add_component_gradient(i, y, scale * self.inv_m(), out);
    }

    pub fn components(&self) -> usize {
        self.problem.clients[self.client].components()
    }

    /// `L_{g_i} = (L_i − μ)/M + τ`
    pub fn component_smoothness(&self, i: usize) -> f64 {
        self.problem.clients[self.client].component_smoothness(i) * self.inv_m() + self.tau
    }

    /// `L_F^{(m)} + τ`
    pub fn smoothness(&self) -> f64 {
        self.problem.lf_client(self.client) + self.tau
    }

    pub fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let d = self.problem.dim();
        let mut h = DMatrix::identity(d, d) * self.tau;
        self.problem.clients[self.client].add_hessian(y, self.inv_m(), &mut h);
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::DataPoint;

    fn shard(points: Vec<(f64, Vec<(usize, f64)>)>, dim: usize) -> ClientShard {
        let points = points
            .into_iter()
            .map(|(label, features)| DataPoint { features, label })
            .collect();
        ClientShard::new(points, dim).unwrap()
    }

    fn single_point(lambda: f64) -> Problem {
        let s = shard(vec![(1.0, vec![(1, 1.0)])], 2);
        Problem::new(vec![ClientLoss::Logistic(s)], lambda).unwrap()
    }

    #[test]
    fn value_at_origin_is_log_two() {
        let s = shard(vec![(1.0, vec![(1, 0.3), (2, -2.0)]), (-1.0, vec![(2, 5.0)])], 2);
        let p = Problem::new(vec![ClientLoss::Logistic(s)], 0.7).unwrap();
        assert!((p.f_m_value(0, &[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn scalar_values() {
        // λ is irrelevant at x = (10, 0) only through the regularizer; use a tiny λ.
        let p = single_point(1e-300);
        let v = p.f_m_value(0, &[10.0, 0.0]);
        assert!((v - (-10f64).exp().ln_1p()).abs() < 1e-18);
        assert!((v - 4.5398899e-5).abs() < 1e-11);

        let p = single_point(1.0);
        let v = p.f_m_value(0, &[1.0, 0.0]);
        assert!((v - ((-1f64).exp().ln_1p() + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn gradient_at_origin() {
        let p = single_point(1e-300);
        let g = p.grad_f_m(0, &[0.0, 0.0]);
        assert!((g[0] + 0.5).abs() < 1e-15 && g[1] == 0.0);
    }

    #[test]
    fn gradient_is_linear_in_lambda() {
        let x = [0.4, -1.3];
        let g0 = single_point(1e-300).grad_f_m(0, &x);
        let g1 = single_point(0.25).grad_f_m(0, &x);
        for i in 0..2 {
            assert!((g1[i] - g0[i] - 0.25 * x[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn grad_big_f_single_client() {
        let s = shard(vec![(1.0, vec![(1, 0.3), (2, -2.0)]), (-1.0, vec![(2, 5.0)])], 2);
        let p = Problem::new(vec![ClientLoss::Logistic(s)], 0.3).unwrap();
        let x = [0.2, -0.1];
        let g = p.grad_f_m(0, &x);
        let big = p.grad_big_f_m(0, &x);
        for i in 0..2 {
            assert!((big[i] - (g[i] - 0.3 * x[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothness_estimates() {
        let s = shard(vec![(1.0, vec![(1, 2.0)])], 2);
        assert!((estimate_smoothness(&s, 0.0) - 1.0).abs() < 1e-9);

        let s = shard(vec![(1.0, vec![])], 3);
        assert_eq!(estimate_smoothness(&s, 0.3), 0.3);

        let s = shard(vec![(1.0, vec![(1, 1.0)]), (-1.0, vec![(2, 1.0)])], 2);
        assert!((estimate_smoothness(&s, 0.0) - 0.125).abs() < 1e-9);
    }

    #[test]
    fn lambda_ratio_fixed_point() {
        let s = shard(vec![(1.0, vec![(1, 2.0)])], 2);
        let p = Problem::with_lambda_ratio(vec![ClientLoss::Logistic(s)], 1e-3).unwrap();
        assert!((p.lambda() - 1e-3 * p.smoothness()).abs() < 1e-15);
        let s = shard(vec![(1.0, vec![(1, 2.0)])], 2);
        let p = Problem::with_condition_number(vec![ClientLoss::Logistic(s)], 250.0).unwrap();
        assert!((p.smoothness() / p.mu() - 250.0).abs() < 1e-9);
    }

    #[test]
    fn subproblem_stationary_at_center_when_f_is_flat() {
        let p = Problem::new(vec![ClientLoss::Quadratic(QuadraticLoss::isotropic(3, 0.0))], 0.5).unwrap();
        let sub = LocalSubproblem::with_center(&p, 0, 2.0, vec![1.0, -2.0, 0.5]);
        assert!(linalg::norm(&sub.gradient(&[1.0, -2.0, 0.5])) == 0.0);
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(Problem::new(vec![], 1.0).is_err());
        let q = ClientLoss::Quadratic(QuadraticLoss::isotropic(2, 1.0));
        assert!(Problem::new(vec![q.clone()], 0.0).is_err());
        let q3 = ClientLoss::Quadratic(QuadraticLoss::isotropic(3, 1.0));
        assert!(Problem::new(vec![q, q3], 1.0).is_err());
        assert!(QuadraticLoss::new(2, vec![1.0, 2.0, 0.0, 1.0], vec![0.0; 2]).is_err());
    }
}
