//! Asymptotic predictions and fluctuation statistics in the three scaling
//! regimes: Gaussian (fixed or slowly vanishing field), intermediate
//! (h²β ~ N^{−1/3}, β > 1) and microscopic (h²β ~ N^{−1}, β > 1).
//!
//! Every pack is built from one spectral sample plus the model parameters and
//! refuses parameters outside its gate.  The free-energy constants are
//! written in closed form here and cross-checked against the exact contour
//! evaluator by [`reconcile_constant`].

use crate::contour::{log_partition_exact, log_sphere_area, QuadratureSpec};
use crate::error::{Error, Result};
use crate::model::{Ensemble, ModelParams, SpectralSample};
use crate::rng::{stream, stream_rng};
use crate::saddle::{
    solve_c_beta, solve_intermediate_saddle, solve_intermediate_saddle_normalized, solve_saddle, GFunction, GKind,
};
use crate::semicircle;
use crate::special::linear_stat_constants;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

/// ∫log(2 − x)ρ_sc(x)dx.
pub const LOGPOT_AT_EDGE: f64 = 0.5;

/// Margin constants of the regime gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// exponent margin of the Gaussian inequality
    pub tau: f64,
    /// bound constant: c ≤ β ≤ 1/c, h ≤ 1/c, β ≥ 1 + c at low temperature
    pub c: f64,
    /// admissible window for the scaled field constant
    pub theta_min: f64,
    pub theta_max: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { tau: 0.05, c: 0.05, theta_min: 0.05, theta_max: 20.0 }
    }
}

/// Which asymptotic regime a parameter triple falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeTag {
    Gaussian,
    Intermediate,
    Microscopic,
    Outside,
}

impl RegimeTag {
    pub fn name(self) -> &'static str {
        match self {
            RegimeTag::Gaussian => "gaussian",
            RegimeTag::Intermediate => "intermediate",
            RegimeTag::Microscopic => "microscopic",
            RegimeTag::Outside => "outside",
        }
    }
}

/// Gate arithmetic with signed margins (positive = inside).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub tag: RegimeTag,
    /// every regime whose gate passes (more than one means overlap)
    pub passing: Vec<RegimeTag>,
    /// θ/(|1−β|+√θ) + (1−β)_+ − N^{−1/3+τ}
    pub gaussian_margin: f64,
    /// min of the box constraints c ≤ β ≤ 1/c, h ≤ 1/c
    pub gaussian_box_margin: f64,
    /// β − (1 + c)
    pub low_temperature_margin: f64,
    /// h²β·N^{1/3} and its distance to the admissible window
    pub theta_intermediate: f64,
    pub intermediate_margin: f64,
    /// h²β·N and its distance to the admissible window
    pub theta_micro: f64,
    pub micro_margin: f64,
}

fn window_margin(x: f64, cfg: &GateConfig) -> f64 {
    (x - cfg.theta_min).min(cfg.theta_max - x)
}

/// Evaluate all three gates.
pub fn classify(params: &ModelParams, cfg: &GateConfig) -> GateReport {
    let n = params.n_dim as f64;
    let b = params.beta;
    let th = params.theta;
    let lhs = th / ((1.0 - b).abs() + th.sqrt()) + (1.0 - b).max(0.0);
    let gaussian_margin = lhs - n.powf(-1.0 / 3.0 + cfg.tau);
    let gaussian_box_margin = (b - cfg.c).min(1.0 / cfg.c - b).min(1.0 / cfg.c - params.h);
    let low_temperature_margin = (b - 1.0 - cfg.c).min(1.0 / cfg.c - b);
    let theta_intermediate = params.theta_intermediate();
    let theta_micro = params.theta_micro();
    let intermediate_margin = low_temperature_margin.min(window_margin(theta_intermediate, cfg));
    let micro_margin = low_temperature_margin.min(window_margin(theta_micro, cfg));
    let mut passing = Vec::new();
    if gaussian_margin >= 0.0 && gaussian_box_margin >= 0.0 {
        passing.push(RegimeTag::Gaussian);
    }
    if intermediate_margin >= 0.0 {
        passing.push(RegimeTag::Intermediate);
    }
    if micro_margin >= 0.0 {
        passing.push(RegimeTag::Microscopic);
    }
    let tag = passing.first().copied().unwrap_or(RegimeTag::Outside);
    GateReport {
        tag,
        passing,
        gaussian_margin,
        gaussian_box_margin,
        low_temperature_margin,
        theta_intermediate,
        intermediate_margin,
        theta_micro,
        micro_margin,
    }
}

/// Fail unless `want` is among the passing gates.
pub fn require(params: &ModelParams, cfg: &GateConfig, want: RegimeTag) -> Result<GateReport> {
    let r = classify(params, cfg);
    if r.passing.contains(&want) {
        Ok(r)
    } else {
        Err(Error::OutsideRegime(format!(
            "{} gate fails for N = {}, beta = {}, h = {} (active: {})",
            want.name(),
            params.n_dim,
            params.beta,
            params.h,
            r.tag.name()
        )))
    }
}

// ---------------------------------------------------------------- Gaussian

/// Variance of the centred quadratic form N^{1/2}κ^{1/4}(vᵀ(M−γ̂)⁻¹v/N − m_sc(γ̂));
/// `v4_ratio` is ‖v‖₄⁴/N².
pub fn isotropic_variance(gamma_hat: f64, v4_ratio: f64) -> Result<f64> {
    let m = semicircle::m(gamma_hat)?;
    if !(gamma_hat > 2.0) {
        return Err(Error::OnCut(gamma_hat));
    }
    let r = (gamma_hat * gamma_hat - 4.0).sqrt();
    let m2 = m * m;
    Ok((gamma_hat + r) / (gamma_hat + 2.0).sqrt() * m2 * m2 * (m2 + (1.0 - v4_ratio) * (1.0 - m2)))
}

/// Deterministic saddle data, constants and coefficients of the Gaussian
/// regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianRegimePack {
    pub n_dim: usize,
    pub beta: f64,
    pub h: f64,
    pub theta: f64,
    /// root of g′ = β + m_sc − θm_sc′ right of 2
    pub gamma_hat: f64,
    /// γ̂ − 2
    pub kappa: f64,
    /// g(γ̂)
    pub g_value: f64,
    /// g″(γ̂)
    pub g_d2: f64,
    /// root of G′ right of λ₁ (the random saddle)
    pub gamma_random: f64,
    /// Stirling and Gaussian-width part of (1/N)log Z
    pub c_n: f64,
    /// variance constant of the quadratic-form fluctuation
    pub v_n: f64,
    /// ½log(1−β²) − β² (quoted form; defined for β < 1)
    pub a_n: f64,
    /// mean of N(G(γ̂) − g(γ̂)) at vanishing field: −(½log(1−β²) + β²)
    pub a_n_linear_mean: f64,
    /// √(−2log(1−β²) − 2β²)
    pub b_n: f64,
    /// mean of G(γ̂) − g(γ̂) in the modified models (order 1/N)
    pub e_n: f64,
    /// variance of N(G(γ̂) − g(γ̂)) in the modified models
    pub v_tilde_n: f64,
    /// quadratic and linear Laplace coefficients of N^{−1/2}v·σ
    pub ext_quadratic: f64,
    pub ext_linear: f64,
    /// quadratic and linear Laplace coefficients of N^{−1/2}κ^{1/4}σ¹·σ²
    pub overlap_quadratic: f64,
    pub overlap_linear: f64,
}

impl GaussianRegimePack {
    /// 2N^{1/2}κ^{1/4}/(θV_N^{1/2})·(F − C_N − g(γ̂)/2).
    pub fn free_energy_statistic(&self, f: f64) -> f64 {
        let n = self.n_dim as f64;
        2.0 * n.sqrt() * self.kappa.powf(0.25) / (self.theta * self.v_n.sqrt()) * (f - self.c_n - 0.5 * self.g_value)
    }

    /// N^{1/2}κ^{1/4}/(θV_N^{1/2})·(G(γ̂) − g(γ̂)).
    pub fn exponent_statistic(&self, g_random_at_hat: f64) -> f64 {
        let n = self.n_dim as f64;
        n.sqrt() * self.kappa.powf(0.25) / (self.theta * self.v_n.sqrt()) * (g_random_at_hat - self.g_value)
    }

    /// N(G(γ̂) − g(γ̂) − E_N)/Ṽ_N^{1/2} for the modified models.
    pub fn modified_statistic(&self, g_random_at_hat: f64) -> f64 {
        let n = self.n_dim as f64;
        n * (g_random_at_hat - self.g_value - self.e_n) / self.v_tilde_n.sqrt()
    }

    /// N(G(γ̂) − g(γ̂))/B_N − centred by the vanishing-field mean.
    pub fn vanishing_field_statistic(&self, g_random_at_hat: f64) -> f64 {
        let n = self.n_dim as f64;
        (n * (g_random_at_hat - self.g_value) - self.a_n_linear_mean) / self.b_n
    }
}

/// Deterministic saddle γ̂ and g, g′, g″, g‴ there.
pub fn deterministic_saddle(beta: f64, theta: f64) -> Result<(f64, [f64; 4])> {
    let g = GFunction::new(GKind::Deterministic, beta, theta, None)?;
    let s = solve_saddle(&g)?;
    Ok((s.location, g.derivs(s.location)?))
}

/// Random saddle γ > λ₁ of G.
pub fn random_saddle(sample: &SpectralSample, params: &ModelParams) -> Result<f64> {
    let g = GFunction::new(GKind::Random, params.beta, params.theta, Some(sample))?;
    Ok(solve_saddle(&g)?.location)
}

/// G(x) for the sample (θ = h²β).
pub fn random_exponent_at(sample: &SpectralSample, params: &ModelParams, x: f64) -> Result<f64> {
    let g = GFunction::new(GKind::Random, params.beta, params.theta, Some(sample))?;
    Ok(g.derivs(x)?[0])
}

/// (1/N)Σ v_i²/(λ_i − x)^k.
fn field_power_sum(sample: &SpectralSample, x: f64, k: i32) -> f64 {
    let n = sample.n() as f64;
    sample.lambdas.iter().zip(&sample.v_projs).map(|(l, v)| v * v / (l - x).powi(k)).sum::<f64>() / n
}

/// Stirling/width constant: (1/N)logΓ(N/2) + (1/N)(N/2−1)log(2/(Nβ)) − (1/2N)log(πN·g″).
pub fn gaussian_constant(n_dim: usize, beta: f64, g_d2: f64) -> f64 {
    let n = n_dim as f64;
    ln_gamma(0.5 * n) / n + (0.5 * n - 1.0) * (2.0 / (n * beta)).ln() / n - (PI * n * g_d2).ln() / (2.0 * n)
}

/// Build the Gaussian pack.
pub fn gaussian_pack(sample: &SpectralSample, params: &ModelParams, cfg: &GateConfig) -> Result<GaussianRegimePack> {
    require(params, cfg, RegimeTag::Gaussian)?;
    let n = params.n_dim as f64;
    let (beta, h, theta) = (params.beta, params.h, params.theta);
    let (gamma_hat, d) = deterministic_saddle(beta, theta)?;
    let kappa = gamma_hat - 2.0;
    let m = semicircle::m(gamma_hat)?;
    let mp = semicircle::m_prime(gamma_hat)?;
    let mpp = semicircle::m_dprime(gamma_hat)?;
    let g_d2 = d[2];
    let v4: f64 = sample.v_projs.iter().map(|v| v.powi(4)).sum::<f64>() / (n * n);
    let v_n = isotropic_variance(gamma_hat, v4)?;
    let gamma_random = random_saddle(sample, params)?;

    let (a_n, a_n_linear_mean, b_n) = if beta < 1.0 {
        let l = (1.0 - beta * beta).ln();
        (0.5 * l - beta * beta, -(0.5 * l + beta * beta), (-2.0 * l - 2.0 * beta * beta).sqrt())
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };

    // modified models: linear statistic of log(γ̂ − x) plus the decoupled
    // quadratic form of an independent direction
    let w2 = if params.ensemble == Ensemble::FullGoeH { 2.0 } else { 0.0 };
    let lsc = linear_stat_constants(gamma_hat, w2, 3.0)?;
    let theta_s = theta * n.sqrt();
    let e_n = -lsc.e_n / n;
    let v_tilde_n = lsc.v_n + 2.0 * theta_s * theta_s * (mp - m * m);

    let ext_quadratic = mp / (2.0 * beta * g_d2) * (-m + 2.0 * h * h * beta * mp * mp);
    let ext_linear = -h * n.sqrt() * field_power_sum(sample, gamma_random, 1);
    let overlap_quadratic = mp * kappa.sqrt() / (2.0 * beta * beta) * (mp - 2.0 * theta * mpp) / (mp - theta * mpp);
    let overlap_linear = n.sqrt() * kappa.powf(0.25) * h * h * field_power_sum(sample, gamma_random, 2);

    Ok(GaussianRegimePack {
        n_dim: params.n_dim,
        beta,
        h,
        theta,
        gamma_hat,
        kappa,
        g_value: d[0],
        g_d2,
        gamma_random,
        c_n: gaussian_constant(params.n_dim, beta, g_d2),
        v_n,
        a_n,
        a_n_linear_mean,
        b_n,
        e_n,
        v_tilde_n,
        ext_quadratic,
        ext_linear,
        overlap_quadratic,
        overlap_linear,
    })
}

/// Laplace coefficients of N^{−1/2}v·σ: (quadratic, linear).
pub fn gaussian_ext_coeffs(sample: &SpectralSample, params: &ModelParams, cfg: &GateConfig) -> Result<(f64, f64)> {
    let p = gaussian_pack(sample, params, cfg)?;
    Ok((p.ext_quadratic, p.ext_linear))
}

// ------------------------------------------------------------ intermediate

/// Saddle data and statistics of the intermediate regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediatePack {
    pub n_dim: usize,
    pub beta: f64,
    /// h²β·N^{1/3}
    pub theta: f64,
    /// whether (μ, g) came from the paired H with synthetic normals
    pub paired: bool,
    /// root of (β−1) = θN^{−4/3}Σg²/(μ−x)² right of μ₁
    pub x_b: f64,
    /// the same with g² normalized by its empirical mean
    pub x_a: f64,
    /// residual of the x_b equation
    pub residual: f64,
    /// N^{2/3}(β−1)(x_b−2) − θN^{−2/3}Σg²/(μ−x_b)
    pub y_n: f64,
    /// Y_N with the semicircle counterterm: Y_N − θN^{1/3}
    pub xi_n: f64,
    /// random saddle γ of G and N^{−1}vᵀ(M−γ)⁻¹v there
    pub gamma: f64,
    pub ext_linear_resolvent: f64,
    /// constant block of F: (1/N)logΓ(N/2) + (1/N)(N/2−1)log(2/(Nβ)) + β − L(2)/2
    /// − (1/2N)log(πN·G″(γ))
    pub k_n: f64,
}

impl IntermediatePack {
    /// 2N^{2/3}(F − K_N), which tracks Y_N.
    pub fn free_energy_statistic(&self, f: f64) -> f64 {
        2.0 * (self.n_dim as f64).powf(2.0 / 3.0) * (f - self.k_n)
    }
}

/// Synthetic standard normals paired with the H spectrum.
pub fn paired_normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream::AUX_NORMALS);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Intermediate constant block; `g_d2` is G″ at the random saddle.
pub fn intermediate_constant(n_dim: usize, beta: f64, g_d2: f64) -> f64 {
    let n = n_dim as f64;
    ln_gamma(0.5 * n) / n + (0.5 * n - 1.0) * (2.0 / (n * beta)).ln() / n + beta
        - 0.5 * LOGPOT_AT_EDGE
        - (PI * n * g_d2).ln() / (2.0 * n)
}

/// Build the intermediate pack from the sample's own (λ, v) or from the
/// paired H spectrum with synthetic normals.
pub fn intermediate_pack(
    sample: &SpectralSample,
    params: &ModelParams,
    use_paired_h: bool,
    cfg: &GateConfig,
) -> Result<IntermediatePack> {
    require(params, cfg, RegimeTag::Intermediate)?;
    let n = params.n_dim as f64;
    let beta = params.beta;
    let theta = params.theta_intermediate();
    let (mus, gs) = if use_paired_h {
        let mu = sample
            .paired_lambdas_h
            .clone()
            .ok_or_else(|| Error::InvalidParam("paired H spectrum requested but the sample has none".into()))?;
        let g = paired_normals(mu.len(), sample.seed);
        (mu, g)
    } else {
        (sample.lambdas.clone(), sample.v_projs.clone())
    };
    let x_b = solve_intermediate_saddle(&mus, &gs, beta, theta, params.n_dim)?;
    let x_a = solve_intermediate_saddle_normalized(&mus, &gs, beta, theta, params.n_dim)?;
    let n43 = n.powf(-4.0 / 3.0);
    let n23 = n.powf(2.0 / 3.0);
    let s2: f64 = mus.iter().zip(&gs).map(|(m, g)| g * g / ((m - x_b) * (m - x_b))).sum();
    let s1: f64 = mus.iter().zip(&gs).map(|(m, g)| g * g / (m - x_b)).sum();
    let residual = (beta - 1.0) - theta * n43 * s2;
    let y_n = n23 * (beta - 1.0) * (x_b - 2.0) - theta / n23 * s1;
    let xi_n = y_n - theta * n.powf(1.0 / 3.0);
    let g = GFunction::new(GKind::Random, beta, params.theta, Some(sample))?;
    let gamma = solve_saddle(&g)?.location;
    let g_d2 = g.derivs(gamma)?[2];
    Ok(IntermediatePack {
        n_dim: params.n_dim,
        beta,
        theta,
        paired: use_paired_h,
        x_b,
        x_a,
        residual,
        y_n,
        xi_n,
        gamma,
        ext_linear_resolvent: field_power_sum(sample, gamma, 1),
        k_n: intermediate_constant(params.n_dim, beta, g_d2),
    })
}

/// Truncated power series in one variable.
#[derive(Debug, Clone, PartialEq)]
struct Jet(Vec<f64>);

impl Jet {
    fn constant(c: f64, k: usize) -> Jet {
        let mut v = vec![0.0; k + 1];
        v[0] = c;
        Jet(v)
    }
    fn variable(k: usize) -> Jet {
        let mut v = vec![0.0; k + 1];
        if k >= 1 {
            v[1] = 1.0;
        }
        Jet(v)
    }
    fn add(&self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
    fn sub(&self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }
    fn scale(&self, s: f64) -> Jet {
        Jet(self.0.iter().map(|a| a * s).collect())
    }
    fn shift(&self, c: f64) -> Jet {
        let mut v = self.0.clone();
        v[0] += c;
        Jet(v)
    }
    fn mul(&self, o: &Jet) -> Jet {
        let k = self.0.len();
        let mut v = vec![0.0; k];
        for i in 0..k {
            for j in 0..k - i {
                v[i + j] += self.0[i] * o.0[j];
            }
        }
        Jet(v)
    }
    fn recip(&self) -> Jet {
        let k = self.0.len();
        let mut b = vec![0.0; k];
        b[0] = 1.0 / self.0[0];
        for n in 1..k {
            let s: f64 = (1..=n).map(|j| self.0[j] * b[n - j]).sum();
            b[n] = -s * b[0];
        }
        Jet(b)
    }
    fn ln(&self) -> Jet {
        let k = self.0.len();
        let a = &self.0;
        let mut l = vec![0.0; k];
        l[0] = a[0].ln();
        for n in 1..k {
            let s: f64 = (1..n).map(|j| j as f64 * l[j] * a[n - j]).sum();
            l[n] = (n as f64 * a[n] - s) / (n as f64 * a[0]);
        }
        Jet(l)
    }
}

/// Taylor coefficients of the two-replica saddle approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTaylor {
    /// random saddle γ of G
    pub gamma: f64,
    /// Z_j, j = 1..=k: coefficients of t^j in log⟨exp(tβN^{−2/3}σ¹·σ²)⟩
    pub z: Vec<f64>,
    /// main (log-determinant-free) parts X_j
    pub x: Vec<f64>,
    /// Y_j = Z_j − X_j
    pub y: Vec<f64>,
}

/// Z_j for j ≤ k from the Laplace approximation of the two-replica integral
/// along its diagonal saddle, expanded in the coupling by power-series
/// arithmetic.
pub fn intermediate_overlap_taylor(
    sample: &SpectralSample,
    params: &ModelParams,
    k: usize,
    cfg: &GateConfig,
) -> Result<OverlapTaylor> {
    require(params, cfg, RegimeTag::Intermediate)?;
    overlap_taylor_unchecked(sample, params, k)
}

/// As [`intermediate_overlap_taylor`] without the gate (for cross-checks at
/// small N).
pub fn overlap_taylor_unchecked(sample: &SpectralSample, params: &ModelParams, k: usize) -> Result<OverlapTaylor> {
    if k == 0 || k > 6 {
        return Err(Error::InvalidParam(format!("Taylor order must be in 1..=6, got {k}")));
    }
    let n = sample.n();
    let nf = n as f64;
    let beta = params.beta;
    let th = params.theta;
    let gamma = random_saddle(sample, params)?;
    let v2: Vec<f64> = sample.v_projs.iter().map(|v| v * v).collect();
    let tau = Jet::variable(k);
    let zero = Jet::constant(0.0, k);

    // G″(γ)
    let mut g2 = 0.0;
    for i in 0..n {
        let a = gamma - sample.lambdas[i];
        g2 += 1.0 / (a * a) / nf + 2.0 * th * v2[i] / (a * a * a) / nf;
    }
    if !(g2 > 1e-8) {
        return Err(Error::NoRoot(format!("degenerate curvature {g2} at the saddle")));
    }

    // x(τ): root of ∂ₓ of the diagonal exponent, by Newton on jets
    let mut x = Jet::constant(gamma, k);
    for _ in 0..k + 3 {
        let mut f = Jet::constant(2.0 * beta, k);
        let mut fx = zero.clone();
        for i in 0..n {
            let d = x.shift(-sample.lambdas[i]);
            let rm = d.sub(&tau).recip();
            let rp = d.add(&tau).recip();
            let rm2 = rm.mul(&rm);
            f = f.sub(&rm.add(&rp).scale(1.0 / nf)).sub(&rm2.scale(2.0 * th * v2[i] / nf));
            fx = fx.add(&rm2.add(&rp.mul(&rp)).scale(1.0 / nf)).add(&rm2.mul(&rm).scale(4.0 * th * v2[i] / nf));
        }
        x = x.sub(&f.mul(&fx.recip()));
    }

    // exponent difference and the two curvature factors along x(τ)
    let mut dg = x.shift(-gamma).scale(2.0 * beta);
    let mut d1 = zero.clone();
    let mut d2 = zero.clone();
    let tau2 = tau.mul(&tau);
    for i in 0..n {
        let a0 = gamma - sample.lambdas[i];
        let d = x.shift(-sample.lambdas[i]);
        let dm = d.sub(&tau);
        let dp = d.add(&tau);
        let rm = dm.recip();
        let rp = dp.recip();
        let logs = dm.scale(1.0 / a0).ln().add(&dp.scale(1.0 / a0).ln());
        dg = dg.sub(&logs.scale(1.0 / nf)).add(&rm.shift(-1.0 / a0).scale(2.0 * th * v2[i] / nf));
        let rmp = rm.mul(&rp);
        d1 = d1.add(&rmp.scale(1.0 / nf)).add(&rm.mul(&rmp).scale(2.0 * th * v2[i] / nf));
        d2 = d2
            .add(&d.mul(&d).add(&tau2).mul(&rmp).mul(&rmp).scale(1.0 / nf))
            .add(&rm.mul(&rm).mul(&rm).scale(2.0 * th * v2[i] / nf));
    }
    let phi = dg.scale(0.5 * nf).sub(&d1.scale(1.0 / g2).ln().scale(0.5)).sub(&d2.scale(1.0 / g2).ln().scale(0.5));

    let mut z = Vec::with_capacity(k);
    let mut xs = Vec::with_capacity(k);
    let mut fact = 1.0;
    for j in 1..=k {
        fact *= j as f64;
        let scale = nf.powf(-2.0 * j as f64 / 3.0);
        z.push(phi.0[j] * scale);
        // (j−1)-th derivative of m at γ: (j−1)!(1/N)Σ1/(λ−γ)^j
        let mj = (fact / j as f64) * sample.lambdas.iter().map(|l| (l - gamma).powi(-(j as i32))).sum::<f64>() / nf;
        let mut xj = 2f64.powi(j as i32 - 1) / fact * nf.powf(1.0 - 2.0 * j as f64 / 3.0) * mj;
        if j == 1 {
            xj += beta * nf.powf(1.0 / 3.0);
        }
        xs.push(xj);
    }
    let y = z.iter().zip(&xs).map(|(a, b)| a - b).collect();
    Ok(OverlapTaylor { gamma, z, x: xs, y })
}

// ------------------------------------------------------------- microscopic

/// Saddle data and predictions of the microscopic regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroPack {
    pub n_dim: usize,
    pub beta: f64,
    /// h²β·N
    pub theta: f64,
    pub v1_sq: f64,
    pub lambda1: f64,
    pub c_beta: f64,
    pub b_const: f64,
    /// λ₁ + c_β/N
    pub gamma: f64,
    /// (1/N)Σ_{j≥2}1/(λ_j − γ)
    pub m_tilde: f64,
    /// Bessel-reduction constants
    pub a: f64,
    pub b: f64,
    pub a_hat: f64,
    pub lam: f64,
    /// reconciled constant of (1/N)log Z
    pub c_n: f64,
    /// (β−1)/2·(λ₁−2) + C_N
    pub free_energy_prediction: f64,
    /// G(γ)/2 + Stirling block + (1/N)log of the keyhole (Bessel) integral;
    /// accurate to o(1/N)
    pub free_energy_refined: f64,
    pub overlap_mean: f64,
    pub overlap_variance: f64,
    pub overlap_fourth: f64,
    /// (p₊, p₋)
    pub parisi_weights: (f64, f64),
    /// N^{1/3}(m̃(λ₁) + 1)
    pub xi_n: f64,
}

impl MicroPack {
    /// N^{2/3}·2/(β−1)·(F − C_N), which tracks N^{2/3}(λ₁ − 2).
    pub fn free_energy_statistic(&self, f: f64) -> f64 {
        (self.n_dim as f64).powf(2.0 / 3.0) * 2.0 / (self.beta - 1.0) * (f - self.c_n)
    }

    /// First moment by the Bessel ratio λI_{1/2}²/(c_ββ(b/a)^{1/2}I_{−1/2}²).
    pub fn overlap_mean_bessel(&self) -> f64 {
        let r = bessel_ratio(self.lam);
        self.lam * r * r / (self.c_beta * self.beta * (self.b / self.a).sqrt())
    }

    /// Second moment by the Bessel chain λ²I_{−1/2}²·a/(c_β²β²·b·I_{−1/2}²).
    pub fn overlap_second_bessel(&self) -> f64 {
        self.lam * self.lam * self.a / (self.c_beta * self.c_beta * self.beta * self.beta * self.b)
    }
}

/// I_{1/2}(x)/I_{−1/2}(x) = tanh x, with the x → 0 limit.
fn bessel_ratio(x: f64) -> f64 {
    x.tanh()
}

/// Reconciled microscopic constant:
/// β − L(2)/2 + (1/N)[(1 − N/2)log β + (N/2)log 2π − log|𝕊^{N−1}|].
pub fn micro_constant(n_dim: usize, beta: f64) -> f64 {
    let n = n_dim as f64;
    beta - 0.5 * LOGPOT_AT_EDGE + ((1.0 - 0.5 * n) * beta.ln() + 0.5 * n * (2.0 * PI).ln() - log_sphere_area(n_dim)) / n
}

/// The constant exactly as quoted with the original normalization:
/// 2β − L(2) + (1/N)((1 − N/2)log β + (N/2)log 2π + ½log N).
pub fn micro_constant_quoted(n_dim: usize, beta: f64) -> f64 {
    let n = n_dim as f64;
    2.0 * beta - LOGPOT_AT_EDGE + ((1.0 - 0.5 * n) * beta.ln() + 0.5 * n * (2.0 * PI).ln() + 0.5 * n.ln()) / n
}

/// Parisi weights ½ ± ½tanh²(√(v₁²θ(β−1))).
pub fn parisi_weights(v1_sq: f64, theta: f64, beta: f64) -> (f64, f64) {
    let t = (v1_sq * theta * (beta - 1.0)).max(0.0).sqrt().tanh();
    (0.5 + 0.5 * t * t, 0.5 - 0.5 * t * t)
}

/// Limit law sample (1 − β⁻¹)tanh²(√(z²θ(β−1))) for a standard normal z.
pub fn micro_overlap_limit(z: f64, theta: f64, beta: f64) -> f64 {
    let t = (z * z * theta * (beta - 1.0)).sqrt().tanh();
    (1.0 - 1.0 / beta) * t * t
}

/// Conditional-fluctuation constants (a, b, Z) given the normal variable z:
/// Z = √(z²θ(β−1)), a = ((β−1)/β)tanh²Z, b = tanhZ(sinhZ coshZ + Z)/(β cosh²Z).
pub fn micro_conditional_constants(z: f64, theta: f64, beta: f64) -> (f64, f64, f64) {
    let zz = (z * z * theta * (beta - 1.0)).sqrt();
    let a = (beta - 1.0) / beta * zz.tanh().powi(2);
    let ch = zz.cosh();
    let b = zz.tanh() * (zz.sinh() * ch + zz) / (beta * ch * ch);
    (a, b, zz)
}

/// Build the microscopic pack.
pub fn micro_pack(sample: &SpectralSample, params: &ModelParams, cfg: &GateConfig) -> Result<MicroPack> {
    require(params, cfg, RegimeTag::Microscopic)?;
    micro_pack_unchecked(sample, params)
}

/// As [`micro_pack`] without the gate.
pub fn micro_pack_unchecked(sample: &SpectralSample, params: &ModelParams) -> Result<MicroPack> {
    let beta = params.beta;
    if !(beta > 1.0) {
        return Err(Error::OutsideRegime(format!("microscopic regime needs beta > 1, got {beta}")));
    }
    let n = sample.n();
    let nf = n as f64;
    let theta = params.theta_micro();
    let v1_sq = sample.v_projs[0] * sample.v_projs[0];
    let lambda1 = sample.lambda1();
    let (c_beta, b_const) = solve_c_beta(beta, theta * v1_sq)?;
    let gamma = lambda1 + c_beta / nf;
    let m_tilde = sample.lambdas[1..].iter().map(|l| 1.0 / (l - gamma)).sum::<f64>() / nf;
    let m_tilde_edge = sample.lambdas[1..].iter().map(|l| 1.0 / (l - lambda1)).sum::<f64>() / nf;
    let a = c_beta * (beta + m_tilde) / 2.0;
    let b = v1_sq * theta / (2.0 * c_beta);
    let a_hat = c_beta * (beta - 1.0) / 2.0;
    let lam = 2.0 * (a * b).max(0.0).sqrt();
    let ratio = (beta + m_tilde) / beta;
    let t = lam.tanh();
    let t2 = t * t;
    let c_n = micro_constant(n, beta);
    // (1/2πi)∫e^{N(G(z)−G(γ))/2}dz ≈ (c_β/N)e^{−a−b}(b/a)^{1/4}I_{−1/2}(2√(ab)),
    // and (b/a)^{1/4}I_{−1/2}(2√(ab)) = cosh(λ)/√(πa) stays finite as b → 0
    let g_gamma = random_exponent_at(sample, params, gamma)?;
    let log_cosh = lam + (0.5 * (1.0 + (-2.0 * lam).exp())).ln();
    let log_j = (c_beta / nf).ln() - a - b - 0.5 * (PI * a).ln() + log_cosh;
    let free_energy_refined = 0.5 * g_gamma
        + ((1.0 - 0.5 * nf) * beta.ln() + 0.5 * nf.ln() + 0.5 * nf * (2.0 * PI).ln() - log_sphere_area(n) + log_j) / nf;
    Ok(MicroPack {
        n_dim: n,
        beta,
        theta,
        v1_sq,
        lambda1,
        c_beta,
        b_const,
        gamma,
        m_tilde,
        a,
        b,
        a_hat,
        lam,
        c_n,
        free_energy_prediction: 0.5 * (beta - 1.0) * (lambda1 - 2.0) + c_n,
        free_energy_refined,
        overlap_mean: ratio * t2,
        overlap_variance: ratio * ratio * (1.0 - t2 * t2),
        overlap_fourth: ratio.powi(4),
        parisi_weights: parisi_weights(v1_sq, theta, beta),
        xi_n: nf.powf(1.0 / 3.0) * (m_tilde_edge + 1.0),
    })
}

/// Height η(E) of the steepest-descent curve of
/// f(u) = (B+1)u − log(1+u) + B/(1+u) through u = E + iη, i.e. the positive
/// root of η(B+1 − B/((1+E)²+η²)) = arg((1+E) + iη).
pub fn micro_contour_eta(e: f64, b: f64) -> Result<f64> {
    if !(e < 0.0) || !e.is_finite() {
        return Err(Error::InvalidParam(format!("E must be negative, got {e}")));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::InvalidParam(format!("B must be non-negative, got {b}")));
    }
    let eta_m1 = (0.5 * PI + (0.25 * PI * PI + 4.0 * b * (b + 1.0)).sqrt()) / (2.0 * (b + 1.0));
    if e == -1.0 {
        return Ok(eta_m1);
    }
    let x = 1.0 + e;
    let f = |eta: f64| eta * (b + 1.0 - b / (x * x + eta * eta)) - eta.atan2(x);
    let mut lo = if e > -1.0 { 0.0 } else { (b / (1.0 + b) - x * x).max(0.0).sqrt() };
    let mut hi = eta_m1.max(lo + 1.0);
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoRoot(format!("steepest-descent height for E = {e}, B = {b}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ----------------------------------------------------------- reconciliation

/// Closed-form constant versus the seed-averaged exact value of
/// (1/N)log Z minus its fluctuating term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationReport {
    pub regime: RegimeTag,
    pub symbolic: f64,
    pub numeric_mean: f64,
    pub numeric_stderr: f64,
    pub n_seeds: usize,
    /// |numeric − symbolic| in units of N^{-1}, the resolution of the
    /// fluctuating term's leading correction
    pub scaled_gap: f64,
    pub consistent: bool,
    pub note: String,
}

/// Average F − (fluctuating term) over `samples` and compare with the
/// closed-form constant of `regime`.  Consistency means the gap is within
/// four standard errors plus `slack`.
pub fn reconcile_constant(
    samples: &[SpectralSample],
    params: &ModelParams,
    regime: RegimeTag,
    spec: &QuadratureSpec,
    slack: f64,
) -> Result<ReconciliationReport> {
    if samples.len() < 2 {
        return Err(Error::InvalidParam("reconciliation needs at least two samples".into()));
    }
    let n = params.n_dim as f64;
    let mut diffs = Vec::with_capacity(samples.len());
    let mut symbolic = f64::NAN;
    for s in samples {
        let f = log_partition_exact(s, params, spec)?.log_magnitude / n;
        let (c, fluct) = match regime {
            RegimeTag::Gaussian => {
                let (gh, d) = deterministic_saddle(params.beta, params.theta)?;
                (gaussian_constant(params.n_dim, params.beta, d[2]), 0.5 * random_exponent_at(s, params, gh)?)
            }
            RegimeTag::Intermediate => {
                let p = intermediate_pack(
                    s,
                    params,
                    false,
                    &GateConfig { theta_min: 0.0, theta_max: f64::INFINITY, ..GateConfig::default() },
                )?;
                (p.k_n, 0.5 * p.y_n / n.powf(2.0 / 3.0))
            }
            RegimeTag::Microscopic => {
                let p = micro_pack_unchecked(s, params)?;
                (p.c_n, 0.5 * (params.beta - 1.0) * (p.lambda1 - 2.0))
            }
            RegimeTag::Outside => return Err(Error::InvalidParam("no constant for the outside tag".into())),
        };
        symbolic = c;
        diffs.push(f - fluct);
    }
    let note = match regime {
        RegimeTag::Gaussian => "F − G(γ̂)/2 against the Stirling/width constant".to_string(),
        RegimeTag::Intermediate => "F − N^{-2/3}Y_N/2 against the Stirling block plus β − L(2)/2".to_string(),
        RegimeTag::Microscopic => "F − (β−1)(λ₁−2)/2 against the reconciled constant".to_string(),
        RegimeTag::Outside => unreachable!(),
    };
    let k = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / k;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0);
    let stderr = (var / k).sqrt();
    let gap = (mean - symbolic).abs();
    Ok(ReconciliationReport {
        regime,
        symbolic,
        numeric_mean: mean,
        numeric_stderr: stderr,
        n_seeds: samples.len(),
        scaled_gap: gap * n,
        consistent: gap <= 4.0 * stderr + slack,
        note,
    })
}
