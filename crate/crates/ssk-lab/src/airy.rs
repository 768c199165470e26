//! Finite-n approximation of the Airy₁ point field by rescaled top
//! eigenvalues of a large GOE matrix, and the limiting edge variables built
//! from it.

use crate::error::{Error, Result};
use crate::linalg::{top_eigenvalues, Tridiagonal};
use crate::model::goe_tridiagonal;
use crate::rng::{stream, stream_rng};
use crate::saddle::increasing_root;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// How the divergent sum over particles is compensated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountertermKind {
    /// (1/π)∫₀^{(3πn/2)^{2/3}} x^{−1/2}dx
    Integral,
    /// Σ_{i≤n} (3πi/2)^{−2/3}, one term per classical particle location
    PerTerm,
}

/// The top n particles χ₁ > χ₂ > … of one draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiryFieldApprox {
    pub chis: Vec<f64>,
    pub n: usize,
    pub n_big: usize,
    pub seed: u64,
    /// tridiagonal rows kept (the rest cannot influence the top n)
    pub rows_used: usize,
}

impl AiryFieldApprox {
    pub fn counterterm(&self, kind: CountertermKind) -> f64 {
        match kind {
            CountertermKind::Integral => counterterm(self.n),
            CountertermKind::PerTerm => counterterm_per_term(self.n),
        }
    }
}

/// (2/π)(3πn/2)^{1/3}.
pub fn counterterm(n: usize) -> f64 {
    2.0 / PI * (1.5 * PI * n as f64).powf(1.0 / 3.0)
}

/// Σ_{i≤n} (3πi/2)^{−2/3}.
pub fn counterterm_per_term(n: usize) -> f64 {
    (1..=n).map(|i| (1.5 * PI * i as f64).powf(-2.0 / 3.0)).sum()
}

/// Largest admissible truncation for a given matrix size.
pub fn max_particles(n_big: usize) -> usize {
    (n_big as f64).powf(2.0 / 3.0).floor() as usize
}

/// Rows of the tridiagonal model needed for the top n eigenvalues: 1.5× the
/// classical turning row of the n-th particle plus a fixed buffer.
fn rows_needed(n: usize, n_big: usize) -> usize {
    let nb = n_big as f64;
    let x = (1.5 * PI * n as f64).powf(2.0 / 3.0);
    let mu = (2.0 - x * nb.powf(-2.0 / 3.0)).max(0.0);
    let turning = nb * (1.0 - mu * mu / 4.0);
    ((1.5 * turning).ceil() as usize + 200).min(n_big)
}

/// χ_i = N_big^{2/3}(μ_i − 2) for the top n eigenvalues of an N_big GOE.
pub fn approximate_airy_field(n: usize, n_big: usize, seed: u64) -> Result<AiryFieldApprox> {
    if n_big < 1000 {
        return Err(Error::InvalidParam(format!("n_big must be at least 1000, got {n_big}")));
    }
    if n == 0 || n > max_particles(n_big) {
        return Err(Error::InvalidParam(format!("n = {n} outside 1..={} for n_big = {n_big}", max_particles(n_big))));
    }
    let mut rng = stream_rng(seed, stream::TRIDIAG);
    let full = goe_tridiagonal(n_big, &mut rng);
    let rows = rows_needed(n, n_big);
    let t = Tridiagonal { diag: full.diag[..rows].to_vec(), off: full.off[..rows - 1].to_vec() };
    let scale = (n_big as f64).powf(2.0 / 3.0);
    let chis: Vec<f64> = top_eigenvalues(&t, n).into_iter().map(|m| scale * (m - 2.0)).collect();
    if chis.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::EigenNoConvergence { n: n_big, seed });
    }
    Ok(AiryFieldApprox { chis, n, n_big, seed, rows_used: rows })
}

/// The i.i.d. normal weights paired with a field draw.
pub fn field_normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream::AUX_NORMALS);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn check_domain(field: &AiryFieldApprox, gs: &[f64], beta: f64, theta: f64) -> Result<()> {
    if !(beta > 1.0) {
        return Err(Error::OutsideRegime(format!("edge limit needs beta > 1, got {beta}")));
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidParam(format!("edge limit needs theta > 0, got {theta}")));
    }
    if gs.len() < field.chis.len() {
        return Err(Error::InvalidParam("fewer normals than particles".into()));
    }
    if gs[0] == 0.0 {
        return Err(Error::InvalidParam("g_1 must be non-zero".into()));
    }
    Ok(())
}

/// θΣ_{i≤n} g_i²/(χ_i − χ₁ − a)^k.
pub fn edge_power_sum(field: &AiryFieldApprox, gs: &[f64], theta: f64, a: f64, k: i32) -> f64 {
    let c1 = field.chis[0];
    theta * field.chis.iter().zip(gs).map(|(c, g)| g * g / (c - c1 - a).powi(k)).sum::<f64>()
}

/// a > 0 solving β − 1 = θΣ_{i≤n} g_i²/(χ_i − χ₁ − a)².
pub fn solve_airy_a(field: &AiryFieldApprox, gs: &[f64], beta: f64, theta: f64) -> Result<f64> {
    check_domain(field, gs, beta, theta)?;
    let (a, _, _) = increasing_root(|a| (beta - 1.0) - edge_power_sum(field, gs, theta, a, 2), 0.0, "edge equation")
        .map_err(|e| Error::NoRoot(format!("{e}")))?;
    Ok(a)
}

/// Limiting edge variables of one draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeLimits {
    pub a: f64,
    /// (β−1)(χ₁+a) − θ(Σ g_i²/(χ_i−χ₁−a) + counterterm)
    pub xi: f64,
    /// Σ_{i≥2} 1/(χ_i−χ₁) + counterterm
    pub big_xi: f64,
    /// residual of the a equation
    pub residual: f64,
}

/// ξ_n and Ξ_n for one draw.
pub fn xi_limit(
    field: &AiryFieldApprox,
    gs: &[f64],
    beta: f64,
    theta: f64,
    kind: CountertermKind,
) -> Result<EdgeLimits> {
    let a = solve_airy_a(field, gs, beta, theta)?;
    let ct = field.counterterm(kind);
    let c1 = field.chis[0];
    let xi = (beta - 1.0) * (c1 + a) - (edge_power_sum(field, gs, theta, a, 1) + theta * ct);
    let big_xi = field.chis[1..].iter().map(|c| 1.0 / (c - c1)).sum::<f64>() + ct;
    let residual = (beta - 1.0) - edge_power_sum(field, gs, theta, a, 2);
    Ok(EdgeLimits { a, xi, big_xi, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::top_eigenvalues;

    #[test]
    fn counterterm_closed_form_and_antiderivative() {
        assert!((counterterm(10) - 2.0 / PI * (15.0 * PI).powf(1.0 / 3.0)).abs() < 1e-14);
        assert!((counterterm(10) - 2.299_466_923_532_163).abs() < 1e-12);
        // (1/π)·2√X with X = (3πn/2)^{2/3}
        for n in [1usize, 7, 100] {
            let x = (1.5 * PI * n as f64).powf(2.0 / 3.0);
            assert!((counterterm(n) - 2.0 * x.sqrt() / PI).abs() < 1e-14);
        }
    }

    #[test]
    fn truncated_model_reproduces_full_top_spectrum() {
        let n_big = 2000;
        for seed in 0..3 {
            let f = approximate_airy_field(100, n_big, seed).unwrap();
            let mut rng = stream_rng(seed, stream::TRIDIAG);
            let t = goe_tridiagonal(n_big, &mut rng);
            let scale = (n_big as f64).powf(2.0 / 3.0);
            let full: Vec<f64> = top_eigenvalues(&t, 100).into_iter().map(|m| scale * (m - 2.0)).collect();
            let d = f.chis.iter().zip(&full).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-9, "seed {seed}: {d}");
        }
    }

    #[test]
    fn single_particle_inversion() {
        let f = AiryFieldApprox { chis: vec![-1.0], n: 1, n_big: 1000, seed: 0, rows_used: 0 };
        let a = solve_airy_a(&f, &[0.7], 2.5, 0.8).unwrap();
        assert!((a - (0.8f64 * 0.49 / 1.5).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn domain_rules() {
        let f = approximate_airy_field(10, 1000, 1).unwrap();
        assert!(f.chis.windows(2).all(|w| w[0] > w[1]));
        let g = field_normals(10, 1);
        assert!(xi_limit(&f, &g, 2.0, 0.0, CountertermKind::Integral).is_err());
        assert!(approximate_airy_field(200, 1000, 1).is_err());
        let r = xi_limit(&f, &g, 2.0, 1.0, CountertermKind::Integral).unwrap();
        assert!(r.residual.abs() < 1e-10);
    }

    #[test]
    fn residual_function_is_decreasing() {
        let f = approximate_airy_field(50, 2000, 4).unwrap();
        let g = field_normals(50, 4);
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            let a = k as f64 * 0.05;
            let r = edge_power_sum(&f, &g, 1.0, a, 2);
            assert!(r < prev);
            prev = r;
        }
    }
}
