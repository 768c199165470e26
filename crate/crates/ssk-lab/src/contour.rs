//! Exact contour-integral evaluators for the partition function, overlap
//! moments and Laplace transforms of a fixed disorder sample.
//!
//! The spherical constraint is written as an inverse Laplace transform, so
//! every Gibbs quantity becomes
//!   J[φ] = (1/2πi)∫_{x0−i∞}^{x0+i∞} exp[(N/2)(G(z) − G(x0))]·φ(z) dz
//! along a vertical line right of the spectrum.  By conjugate symmetry only
//! the upper half is needed.  The upper half is deformed into a finite
//! vertical segment [x0, x0 + iT] followed by a horizontal ray to −∞ + iT,
//! where e^{Nβz/2} (or the |z|^{−N/2} decay) makes the tail explicit.  The
//! accepted adaptive panels of the weight e^{NG/2} are then frozen as a fixed
//! complex rule reused for every moment and for tensor-product 2-D sums.

use crate::error::{Error, Result};
use crate::model::{ModelParams, SpectralSample};
use crate::quad::{gk15_nodes, integrate_adaptive_bounded, KahanSum};
use crate::saddle::{ln_1p, solve_saddle, GFunction, GKind};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Which contour a quadrature spec is meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContourKind {
    VerticalLine,
    Keyhole,
    Product2d,
}

/// Quadrature controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Height of the vertical segment; `None` picks it from the saddle width.
    pub truncation: Option<f64>,
    /// Longest initial panel.
    pub max_step: f64,
    /// Panels narrower than twice this are never bisected.
    pub min_step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub contour_kind: ContourKind,
    /// Panel budget per segment.
    pub max_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            truncation: None,
            max_step: f64::INFINITY,
            min_step: 1e-13,
            abs_tol: 1e-14,
            rel_tol: 1e-11,
            contour_kind: ContourKind::VerticalLine,
            max_panels: 4000,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.truncation {
            if !(t > 0.0) {
                return Err(Error::InvalidParam(format!("truncation must be positive, got {t}")));
            }
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidParam("tolerances must be positive".into()));
        }
        if !(self.min_step >= 0.0 && self.min_step < self.max_step) {
            return Err(Error::InvalidParam("need 0 <= min_step < max_step".into()));
        }
        if self.max_panels < 2 {
            return Err(Error::InvalidParam("max_panels must be at least 2".into()));
        }
        Ok(())
    }

    /// Same spec with the initial panel length halved (refinement check).
    pub fn refined(&self, current_step: f64) -> Self {
        QuadratureSpec { max_step: 0.5 * current_step, ..*self }
    }
}

/// A real quantity carried as sign·exp(log_magnitude).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScaledValue {
    pub log_magnitude: f64,
    pub sign: f64,
    /// Absolute error estimate on `log_magnitude`.
    pub error_estimate: f64,
}

impl LogScaledValue {
    pub fn new(log_magnitude: f64, sign: f64, error_estimate: f64) -> Result<Self> {
        if !log_magnitude.is_finite() {
            return Err(Error::Quadrature(format!("non-finite log magnitude {log_magnitude}")));
        }
        Ok(LogScaledValue { log_magnitude, sign, error_estimate: error_estimate.abs() })
    }

    /// sign·log_magnitude for positive values; used where the value is a log.
    pub fn value(&self) -> f64 {
        self.sign * self.log_magnitude.exp()
    }
}

/// log|S^{N−1}(√N)| = log 2 + (N/2)log π + ((N−1)/2)log N − log Γ(N/2).
pub fn log_sphere_area(n: usize) -> f64 {
    let nf = n as f64;
    std::f64::consts::LN_2 + 0.5 * nf * PI.ln() + 0.5 * (nf - 1.0) * nf.ln() - ln_gamma(0.5 * nf)
}

/// The frozen upper-half contour rule for one weight e^{(N/2)(G − G(x0))}.
#[derive(Debug, Clone)]
pub struct ContourRule {
    /// Real part of the vertical segment.
    pub abscissa: f64,
    /// Height of the vertical segment (and of the closing ray).
    pub height: f64,
    /// Nodes in the upper half plane.
    pub nodes: Vec<Complex64>,
    /// Complex quadrature weights including dz.
    pub weights: Vec<Complex64>,
    /// weights·e^{(N/2)(G(z) − G(x0))} at each node.
    pub base: Vec<Complex64>,
    /// J[1] relative to e^{(N/2)G(x0)}.
    pub j_rel: f64,
    /// Absolute error estimate of `j_rel`.
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl ContourRule {
    /// J[φ]/J[1] for φ analytic and real on the real axis.
    pub fn average(&self, phi: impl Fn(Complex64) -> Complex64) -> f64 {
        let mut acc = KahanSum::<f64>::default();
        for (b, z) in self.base.iter().zip(&self.nodes) {
            acc.add((b * phi(*z)).im);
        }
        acc.value() / PI / self.j_rel
    }

    /// Nodes whose weight is not negligible against the largest one.
    fn significant(&self, cut: f64) -> Vec<usize> {
        let top = self.base.iter().map(|b| b.norm()).fold(0.0, f64::max);
        (0..self.base.len()).filter(|&a| self.base[a].norm() > cut * top).collect()
    }
}

fn quad_err<T>(what: &str, e: T) -> Error
where
    T: std::fmt::Display,
{
    Error::Quadrature(format!("{what}: {e}"))
}

/// Probe f(x0 − it) = conj f(x0 + it) at ten points.
fn check_conjugate_symmetry(g: &GFunction, n: f64, x0: f64, height: f64) -> Result<()> {
    for k in 1..=10 {
        let t = height * k as f64 / 10.0;
        let up = g.eval_rel(Complex64::new(x0, t), x0)? * (0.5 * n);
        let down = g.eval_rel(Complex64::new(x0, -t), x0)? * (0.5 * n);
        let gap = (up.re - down.re).abs() + (up.im + down.im).abs();
        if gap > 1e-9 * (1.0 + up.norm()) {
            return Err(Error::Quadrature(format!("conjugate symmetry violated at t = {t}: {gap}")));
        }
    }
    Ok(())
}

/// Build the contour rule for `g` (a random kind) at abscissa `x0`.
pub fn build_rule(g: &GFunction, sample: &SpectralSample, x0: f64, spec: &QuadratureSpec) -> Result<ContourRule> {
    spec.validate()?;
    let n = sample.n() as f64;
    if !(x0 > g.singularity()) {
        return Err(Error::PoleCollision { z: x0 });
    }
    let d = g.derivs(x0)?;
    if !(d[2] > 0.0) {
        return Err(Error::Quadrature(format!("non-positive curvature {} at the abscissa", d[2])));
    }
    let width = (0.5 * n * d[2]).sqrt().recip();
    let lam_min = *sample.lambdas.last().unwrap();
    let height = match spec.truncation {
        Some(t) => t,
        None => (2.0 * (x0 - lam_min) + 4.0).max(40.0 * width),
    };
    check_conjugate_symmetry(g, n, x0, height)?;
    let f = |z: Complex64| -> Complex64 {
        match g.eval_rel(z, x0) {
            Ok(v) => (v * (0.5 * n)).exp(),
            Err(_) => Complex64::new(0.0, 0.0),
        }
    };

    // vertical segment: geometric breakpoints from the saddle width
    let s0 = width.min(x0 - g.singularity()).max(1e-300);
    let mut vb = vec![0.0];
    let mut s = s0;
    while s < height {
        vb.push(s);
        s *= 2.0;
    }
    vb.push(height);
    let vb = cap_steps(&vb, spec.max_step);
    let vert = integrate_adaptive_bounded(
        |t: f64| I * f(Complex64::new(x0, t)),
        &vb,
        spec.abs_tol,
        spec.rel_tol,
        spec.max_panels,
        spec.min_step,
    );
    let scale = vert.value.im.abs().max(vert.value.norm() * 1e-3);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Quadrature(format!("vertical segment integral is {}", vert.value)));
    }

    // closing ray: walk left until the explicit tail bound is negligible
    let beta = g.beta;
    let half_n = 0.5 * n;
    let tail = |x: f64| -> f64 {
        let fx = f(Complex64::new(x, height)).norm();
        let exp_bound = if beta > 0.0 { 2.0 / (n * beta) } else { f64::INFINITY };
        let pow_bound = if half_n > 1.0 && x < lam_min { (lam_min - x) / (half_n - 1.0) } else { f64::INFINITY };
        fx * exp_bound.min(pow_bound)
    };
    let target = 0.01 * spec.rel_tol * scale;
    let step0 = s0.max(1e-3 * height);
    let mut rb = vec![x0];
    let mut dx = step0;
    let mut tail_bound;
    loop {
        let x = x0 - dx;
        rb.push(x);
        tail_bound = tail(x);
        if x < lam_min && tail_bound < target {
            break;
        }
        if dx > 1e300 {
            return Err(Error::Quadrature("closing ray tail bound not attained".into()));
        }
        dx *= 2.0;
    }
    rb.reverse();
    let rb = cap_steps(&rb, spec.max_step);
    let ray = integrate_adaptive_bounded(
        |x: f64| -f(Complex64::new(x, height)),
        &rb,
        0.5 * spec.rel_tol * scale,
        spec.rel_tol,
        spec.max_panels,
        spec.min_step,
    );

    // freeze the accepted panels as a complex rule
    let mut nodes = Vec::with_capacity(15 * (vert.panels.len() + ray.panels.len()));
    let mut weights = Vec::with_capacity(nodes.capacity());
    for &(a, b) in &vert.panels {
        for (t, w) in gk15_nodes(a, b) {
            nodes.push(Complex64::new(x0, t));
            weights.push(I * w);
        }
    }
    for &(a, b) in &ray.panels {
        for (x, w) in gk15_nodes(a, b) {
            nodes.push(Complex64::new(x, height));
            weights.push(Complex64::new(-w, 0.0));
        }
    }
    let base: Vec<Complex64> = nodes.iter().zip(&weights).map(|(z, w)| w * f(*z)).collect();
    let mut acc = KahanSum::<f64>::default();
    for b in &base {
        acc.add(b.im);
    }
    let j_rel = acc.value() / PI;
    if !(j_rel > 0.0) {
        return Err(Error::Quadrature(format!("normalizing integral is not positive ({j_rel})")));
    }
    let error = (vert.error + ray.error + tail_bound) / PI;
    Ok(ContourRule {
        abscissa: x0,
        height,
        nodes,
        weights,
        base,
        j_rel,
        error,
        evaluations: vert.evaluations + ray.evaluations + 30,
        converged: vert.converged && ray.converged,
    })
}

/// Split any break interval longer than `max_step`.
fn cap_steps(breaks: &[f64], max_step: f64) -> Vec<f64> {
    if !max_step.is_finite() {
        return breaks.to_vec();
    }
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let k = ((w[1] - w[0]) / max_step).ceil().max(1.0) as usize;
        for j in 1..=k {
            out.push(w[0] + (w[1] - w[0]) * j as f64 / k as f64);
        }
    }
    out
}

fn random_g(sample: &SpectralSample, params: &ModelParams) -> Result<GFunction> {
    if sample.n() != params.n_dim {
        return Err(Error::InvalidParam(format!("sample has N = {}, params say {}", sample.n(), params.n_dim)));
    }
    if !(params.beta > 0.0) {
        return Err(Error::InvalidParam("the contour representation needs beta > 0".into()));
    }
    if params.n_dim < 3 {
        return Err(Error::InvalidParam("the contour representation needs N >= 3".into()));
    }
    GFunction::new(GKind::Random, params.beta, params.theta, Some(sample))
}

/// Rule at the saddle of the one-replica exponent, with that exponent.
pub fn saddle_rule(
    sample: &SpectralSample,
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> Result<(GFunction, ContourRule)> {
    let g = random_g(sample, params)?;
    let sad = solve_saddle(&g)?;
    let rule = build_rule(&g, sample, sad.location, spec)?;
    Ok((g, rule))
}

/// Normalized log partition function log E_{uniform}[e^{−βH}] of one sample,
/// with the vertical line placed at `abscissa`.
pub fn log_partition_at(
    sample: &SpectralSample,
    params: &ModelParams,
    spec: &QuadratureSpec,
    abscissa: f64,
) -> Result<LogScaledValue> {
    let g = random_g(sample, params)?;
    let rule = build_rule(&g, sample, abscissa, spec)?;
    log_partition_from_rule(&g, &rule, params)
}

fn log_partition_from_rule(g: &GFunction, rule: &ContourRule, params: &ModelParams) -> Result<LogScaledValue> {
    let n = params.n_dim as f64;
    let beta = params.beta;
    let g0 = g.derivs(rule.abscissa)?[0];
    let log_z = (beta * n.sqrt()).ln() + 0.5 * n * (2.0 * PI / beta).ln() + 0.5 * n * g0 + rule.j_rel.ln()
        - log_sphere_area(params.n_dim);
    LogScaledValue::new(log_z, 1.0, rule.error / rule.j_rel)
}

/// Normalized log partition function with the line through the saddle.
pub fn log_partition_exact(
    sample: &SpectralSample,
    params: &ModelParams,
    spec: &QuadratureSpec,
) -> Result<LogScaledValue> {
    let (g, rule) = saddle_rule(sample, params, spec)?;
    log_partition_from_rule(&g, &rule, params)
}

/// Per-mode Gaussian mean and variance at a contour point:
/// a_i = h v_i/(z−λ_i), c_i = 1/(β(z−λ_i)).
fn mode_moments(sample: &SpectralSample, params: &ModelParams, z: Complex64, a: &mut [Complex64], c: &mut [Complex64]) {
    for i in 0..sample.n() {
        let r = (z - sample.lambdas[i]).inv();
        a[i] = r * (params.h * sample.v_projs[i]);
        c[i] = r / params.beta;
    }
}

/// ⟨(σ¹·σ²)^k⟩/N^k for k ∈ {1, 2, 4}.
pub fn overlap_moment_exact(
    sample: &SpectralSample,
    params: &ModelParams,
    k: u32,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let (_, rule) = saddle_rule(sample, params, spec)?;
    overlap_moment_with_rule(sample, params, k, &rule)
}

/// As [`overlap_moment_exact`] on a prepared rule.
pub fn overlap_moment_with_rule(
    sample: &SpectralSample,
    params: &ModelParams,
    k: u32,
    rule: &ContourRule,
) -> Result<f64> {
    let n = sample.n();
    let nf = n as f64;
    match k {
        1 => {
            let means = gibbs_means(sample, params, rule);
            Ok(kahan(means.iter().map(|m| m * m)) / nf)
        }
        2 => overlap_second_moment(sample, params, rule).map(|s| s / (nf * nf)),
        4 => overlap_fourth_moment(sample, params, rule).map(|s| s / nf.powi(4)),
        _ => Err(Error::InvalidParam(format!("overlap moment order must be 1, 2 or 4, got {k}"))),
    }
}

fn kahan(xs: impl IntoIterator<Item = f64>) -> f64 {
    crate::quad::kahan_sum(xs)
}

/// Gibbs means ⟨s_i⟩ of the spin components in the eigenbasis.
pub fn gibbs_means(sample: &SpectralSample, params: &ModelParams, rule: &ContourRule) -> Vec<f64> {
    let n = sample.n();
    let mut acc = vec![KahanSum::<f64>::default(); n];
    for (b, z) in rule.base.iter().zip(&rule.nodes) {
        for i in 0..n {
            let a = (z - sample.lambdas[i]).inv() * (params.h * sample.v_projs[i]);
            acc[i].add((b * a).im);
        }
    }
    acc.iter().map(|s| s.value() / PI / rule.j_rel).collect()
}

/// N²·⟨R²⟩ via the separable two-replica identity.
fn overlap_second_moment(sample: &SpectralSample, params: &ModelParams, rule: &ContourRule) -> Result<f64> {
    let n = sample.n();
    let keep = rule.significant(1e-18);
    let mut a = vec![Complex64::new(0.0, 0.0); n];
    let mut c = vec![Complex64::new(0.0, 0.0); n];
    let mut cc = vec![0.0; n];
    let mut aa = vec![0.0; n * n];
    for &idx in &keep {
        let b = rule.base[idx];
        mode_moments(sample, params, rule.nodes[idx], &mut a, &mut c);
        for i in 0..n {
            cc[i] += (b * c[i]).im;
            let ba = b * a[i];
            for j in i..n {
                aa[i * n + j] += (ba * a[j]).im;
            }
        }
    }
    let norm = PI * rule.j_rel;
    let mut total = KahanSum::<f64>::default();
    for i in 0..n {
        let ci = cc[i] / norm;
        let a2 = aa[i * n + i] / norm;
        total.add(2.0 * a2 * ci + ci * ci);
        for j in i..n {
            let x = aa[i * n + j] / norm;
            total.add(if i == j { x * x } else { 2.0 * x * x });
        }
    }
    Ok(total.value())
}

/// E[S⁴] for S = Σ_i X_i Y_i with independent Gaussian X_i ~ (a_i, c_i),
/// Y_i ~ (b_i, d_i), via cumulants of the independent products.
fn product_fourth_moment(a: &[Complex64], c: &[Complex64], b: &[Complex64], d: &[Complex64]) -> Complex64 {
    let mut k = [Complex64::new(0.0, 0.0); 4];
    for i in 0..a.len() {
        let raw = |m: Complex64, v: Complex64| {
            let m2 = m * m;
            [m, m2 + v, m2 * m + m * v * 3.0, m2 * m2 + m2 * v * 6.0 + v * v * 3.0]
        };
        let x = raw(a[i], c[i]);
        let y = raw(b[i], d[i]);
        let mu = [x[0] * y[0], x[1] * y[1], x[2] * y[2], x[3] * y[3]];
        let m1 = mu[0];
        let m1s = m1 * m1;
        k[0] += m1;
        k[1] += mu[1] - m1s;
        k[2] += mu[2] - mu[1] * m1 * 3.0 + m1s * m1 * 2.0;
        k[3] += mu[3] - mu[2] * m1 * 4.0 - mu[1] * mu[1] * 3.0 + mu[1] * m1s * 12.0 - m1s * m1s * 6.0;
    }
    let [k1, k2, k3, k4] = k;
    k4 + k3 * k1 * 4.0 + k2 * k2 * 3.0 + k2 * k1 * k1 * 6.0 + k1 * k1 * k1 * k1
}

/// N⁴·⟨R⁴⟩ by the tensor-product rule.
fn overlap_fourth_moment(sample: &SpectralSample, params: &ModelParams, rule: &ContourRule) -> Result<f64> {
    let n = sample.n();
    let keep = rule.significant(1e-17);
    let mut ma = Vec::with_capacity(keep.len());
    for &idx in &keep {
        let mut a = vec![Complex64::new(0.0, 0.0); n];
        let mut c = vec![Complex64::new(0.0, 0.0); n];
        mode_moments(sample, params, rule.nodes[idx], &mut a, &mut c);
        ma.push((a, c));
    }
    let conj = |v: &[Complex64]| v.iter().map(|x| x.conj()).collect::<Vec<_>>();
    let mut acc = KahanSum::<Complex64>::default();
    for (p, &ia) in keep.iter().enumerate() {
        let (az, cz) = &ma[p];
        for (q, &ib) in keep.iter().enumerate() {
            let (bw, dw) = &ma[q];
            let direct = product_fourth_moment(az, cz, bw, dw);
            let mirrored = product_fourth_moment(az, cz, &conj(bw), &conj(dw));
            acc.add(rule.base[ia] * rule.base[ib] * direct - rule.base[ia] * rule.base[ib].conj() * mirrored);
        }
    }
    let j2 = -2.0 * acc.value().re / (4.0 * PI * PI);
    Ok(j2 / (rule.j_rel * rule.j_rel))
}

/// ⟨vᵀσ⟩/N, the overlap with the field direction.
pub fn field_overlap_exact(sample: &SpectralSample, params: &ModelParams, spec: &QuadratureSpec) -> Result<f64> {
    let (_, rule) = saddle_rule(sample, params, spec)?;
    let means = gibbs_means(sample, params, &rule);
    Ok(kahan(means.iter().zip(&sample.v_projs).map(|(m, v)| m * v)) / sample.n() as f64)
}

/// log⟨exp(λ·vᵀσ)⟩ for a list of λ, all on the rule of the untilted weight
/// (the tilt only adds ((2hλ + λ²/β)/2)·Σ v_i²/(z−λ_i) to the exponent).
pub fn field_laplace_exact(
    sample: &SpectralSample,
    params: &ModelParams,
    lambdas: &[f64],
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let (_, rule) = saddle_rule(sample, params, spec)?;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        let u = 2.0 * params.h * lam + lam * lam / params.beta;
        let ratio = rule.average(|z| {
            let mut s = Complex64::new(0.0, 0.0);
            for (l, v) in sample.lambdas.iter().zip(&sample.v_projs) {
                s += (z - l).inv() * (v * v);
            }
            (s * (0.5 * u)).exp()
        });
        if !(ratio > 0.0) {
            return Err(Error::Quadrature(format!("tilted normalization not positive at λ = {lam}")));
        }
        out.push(ratio.ln());
    }
    Ok(out)
}

/// log⟨exp(tβ σ¹·σ²)⟩ by the tensor-product rule at the diagonal saddle of
/// the two-replica exponent.
pub fn replica_laplace_exact(
    sample: &SpectralSample,
    params: &ModelParams,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<LogScaledValue> {
    if t == 0.0 {
        return LogScaledValue::new(0.0, 1.0, 0.0);
    }
    let g = random_g(sample, params)?;
    let diag = GFunction::new(GKind::ReplicaDiag { t }, params.beta, params.theta, Some(sample))?;
    let x1 = solve_saddle(&diag)?.location;
    let mut spec = *spec;
    let rule = build_rule(&g, sample, x1, &spec)?;
    if rule.height <= t.abs() {
        spec.truncation = Some(2.0 * t.abs() + 1.0);
        return replica_laplace_on(sample, params, t, &build_rule(&g, sample, x1, &spec)?);
    }
    replica_laplace_on(sample, params, t, &rule)
}

fn replica_laplace_on(
    sample: &SpectralSample,
    params: &ModelParams,
    t: f64,
    rule: &ContourRule,
) -> Result<LogScaledValue> {
    let n = sample.n();
    let keep = rule.significant(1e-17);
    let inv: Vec<Vec<Complex64>> =
        keep.iter().map(|&a| sample.lambdas.iter().map(|l| (rule.nodes[a] - l).inv()).collect()).collect();
    let v2: Vec<f64> = sample.v_projs.iter().map(|v| v * v).collect();
    let t2 = t * t;
    // (N/2)·[G₂(z, w) − G(z) − G(w)] with 1/(z−λ) = p, 1/(w−λ) = q
    let coupling = |p: &[Complex64], q: &[Complex64]| -> Complex64 {
        let mut logs = Complex64::new(0.0, 0.0);
        let mut fld = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let pq = p[i] * q[i];
            let u = -pq * t2;
            logs += ln_1p(u);
            // t(2AB + t(A+B))/(AB(AB − t²)) with A = 1/p, B = 1/q
            fld += (pq * (2.0 * t) + (p[i] + q[i]) * pq * t2) / (Complex64::new(1.0, 0.0) + u) * v2[i];
        }
        (-logs + fld * params.theta) * 0.5
    };
    let mut acc = KahanSum::<Complex64>::default();
    for (p, &ia) in keep.iter().enumerate() {
        for (q, &ib) in keep.iter().enumerate() {
            let wq: Vec<Complex64> = inv[q].iter().map(|x| x.conj()).collect();
            let direct = coupling(&inv[p], &inv[q]).exp();
            let mirrored = coupling(&inv[p], &wq).exp();
            acc.add(rule.base[ia] * rule.base[ib] * direct - rule.base[ia] * rule.base[ib].conj() * mirrored);
        }
    }
    let j2 = -2.0 * acc.value().re / (4.0 * PI * PI);
    if !(j2 > 0.0) {
        return Err(Error::Quadrature(format!("two-replica integral is not positive ({j2})")));
    }
    let val = j2.ln() - 2.0 * rule.j_rel.ln();
    LogScaledValue::new(val, 1.0, 3.0 * rule.error / rule.j_rel)
}

/// (1/2πi)∮ exp[az + b/z − α·log z] dz over a keyhole around the negative
/// axis: unit-scaled circle plus the two rays along the cut.
pub fn keyhole_integral(a: f64, b: f64, alpha: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(a > 0.0) || !(b >= 0.0) {
        return Err(Error::InvalidParam(format!("keyhole needs a > 0 and b >= 0, got a = {a}, b = {b}")));
    }
    let r = if b > 0.0 { (b / a).sqrt() } else { 1.0 / a };
    // circle z = r·e^{iφ}: (1/π)∫_0^π Re[e^{az + b/z}·z^{1−α}] dφ
    let circle = integrate_adaptive_bounded(
        |phi: f64| {
            let z = Complex64::from_polar(r, phi);
            (z * a + z.inv() * b - z.ln() * (alpha - 1.0)).exp().re
        },
        &[0.0, 0.5 * PI, PI],
        spec.abs_tol,
        spec.rel_tol,
        spec.max_panels,
        spec.min_step,
    );
    // the two rays combine to (sin πα/π)∫_r^∞ e^{−as − b/s} s^{−α} ds
    let sin = (PI * alpha).sin();
    let mut ray_val = 0.0;
    let mut ray_err = 0.0;
    if sin.abs() > 1e-15 {
        let g = |s: f64| (-a * s - b / s - alpha * s.ln()).exp();
        let mut upper = r + 1.0 / a;
        // e^{−as}s^{−α} beyond `upper` is bounded by g(upper)·2/a once a·s > 2|α|
        while !(a * upper > 2.0 * alpha.abs() && g(upper) * 2.0 / a < 0.01 * spec.abs_tol) {
            upper = r + 2.0 * (upper - r);
            if upper > 1e12 {
                return Err(Error::Quadrature("keyhole ray tail bound not attained".into()));
            }
        }
        let mut breaks = vec![r];
        let mut x = r + 0.5 / a;
        while x < upper {
            breaks.push(x);
            x = r + 2.0 * (x - r);
        }
        breaks.push(upper);
        let ray = integrate_adaptive_bounded(g, &breaks, spec.abs_tol, spec.rel_tol, spec.max_panels, spec.min_step);
        ray_val = sin / PI * ray.value;
        ray_err = ray.error + g(upper) * 2.0 / a;
        if !ray.converged {
            return Err(quad_err("keyhole ray", ray.error));
        }
    }
    if !circle.converged {
        return Err(quad_err("keyhole circle", circle.error));
    }
    let _ = ray_err;
    Ok(circle.value / PI + ray_val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::bessel_i_series;

    fn toy_sample() -> SpectralSample {
        let lambdas = vec![1.7, 0.9, 0.2, -0.4, -1.1, -1.8];
        let v = vec![1.1, -0.8, 1.3, 0.5, -0.9, 1.2];
        let norm: f64 = v.iter().map(|x: &f64| x * x).sum::<f64>();
        let s = (6.0 / norm).sqrt();
        SpectralSample::from_parts(lambdas, v.into_iter().map(|x| x * s).collect(), 1).unwrap()
    }

    #[test]
    fn sphere_area_small_cases() {
        // N = 3: 4π·3
        assert!((log_sphere_area(3) - (4.0 * PI * 3.0).ln()).abs() < 1e-13);
        // N = 2: circumference 2π√2
        assert!((log_sphere_area(2) - (2.0 * PI * 2f64.sqrt()).ln()).abs() < 1e-13);
    }

    #[test]
    fn keyhole_matches_bessel_series() {
        let spec = QuadratureSpec { contour_kind: ContourKind::Keyhole, ..Default::default() };
        let want0 = bessel_i_series(0.0, 2.0);
        assert!((keyhole_integral(1.0, 1.0, 1.0, &spec).unwrap() - want0).abs() < 1e-10);
        assert!((keyhole_integral(1.0, 0.25, 1.0, &spec).unwrap() - bessel_i_series(0.0, 1.0)).abs() < 1e-10);
        assert!((keyhole_integral(1.0, 1.0, 0.0, &spec).unwrap() - bessel_i_series(1.0, 2.0)).abs() < 1e-10);
        // half-integer order: a/b scaling of the general identity
        let (a, b, al): (f64, f64, f64) = (2.0, 0.5, 0.5);
        let lam = 2.0 * (a * b).sqrt();
        let want = bessel_i_series(al - 1.0, lam) * (b / a).powf((1.0 - al) / 2.0);
        assert!((keyhole_integral(a, b, al, &spec).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn zero_field_first_moment_vanishes() {
        let s = toy_sample();
        let p = ModelParams::new(6, 0.7, 0.0).unwrap();
        let q = overlap_moment_exact(&s, &p, 1, &QuadratureSpec::default()).unwrap();
        assert!(q.abs() < 1e-14);
    }

    #[test]
    fn contour_shift_invariance() {
        let s = toy_sample();
        let p = ModelParams::new(6, 0.8, 0.4).unwrap();
        let spec = QuadratureSpec::default();
        let a = log_partition_exact(&s, &p, &spec).unwrap();
        let (_, rule) = saddle_rule(&s, &p, &spec).unwrap();
        let b = log_partition_at(&s, &p, &spec, rule.abscissa + 0.1).unwrap();
        assert!((a.log_magnitude - b.log_magnitude).abs() < 1e-9, "{a:?} {b:?}");
    }

    #[test]
    fn second_moment_dominates_square_of_first() {
        let s = toy_sample();
        let p = ModelParams::new(6, 1.5, 0.5).unwrap();
        let spec = QuadratureSpec::default();
        let q1 = overlap_moment_exact(&s, &p, 1, &spec).unwrap();
        let q2 = overlap_moment_exact(&s, &p, 2, &spec).unwrap();
        let q4 = overlap_moment_exact(&s, &p, 4, &spec).unwrap();
        assert!(q2 >= q1 * q1 && q4 >= q2 * q2, "{q1} {q2} {q4}");
        assert!(q4 <= 1.0 + 1e-12);
    }

    #[test]
    fn replica_laplace_generates_first_moment() {
        let s = toy_sample();
        let p = ModelParams::new(6, 0.9, 0.6).unwrap();
        let spec = QuadratureSpec::default();
        let dt = 1e-3;
        let up = replica_laplace_exact(&s, &p, dt, &spec).unwrap().log_magnitude;
        let down = replica_laplace_exact(&s, &p, -dt, &spec).unwrap().log_magnitude;
        let q1 = overlap_moment_exact(&s, &p, 1, &spec).unwrap();
        let want = q1 * 6.0 * 0.9;
        assert!(
            ((up - down) / (2.0 * dt) - want).abs() < 1e-4 * (1.0 + want.abs()),
            "{} vs {want}",
            (up - down) / (2.0 * dt)
        );
    }

    #[test]
    fn replica_laplace_second_derivative_is_variance() {
        let s = toy_sample();
        let p = ModelParams::new(6, 0.9, 0.6).unwrap();
        let spec = QuadratureSpec::default();
        let dt = 2e-3;
        let up = replica_laplace_exact(&s, &p, dt, &spec).unwrap().log_magnitude;
        let down = replica_laplace_exact(&s, &p, -dt, &spec).unwrap().log_magnitude;
        let q1 = overlap_moment_exact(&s, &p, 1, &spec).unwrap();
        let q2 = overlap_moment_exact(&s, &p, 2, &spec).unwrap();
        let nb = 6.0 * 0.9;
        let want = nb * nb * (q2 - q1 * q1);
        assert!(((up + down) / (dt * dt) - want).abs() < 1e-3 * (1.0 + want), "{} vs {want}", (up + down) / (dt * dt));
    }

    #[test]
    fn field_laplace_derivative_is_field_overlap() {
        let s = toy_sample();
        let p = ModelParams::new(6, 1.2, 0.3).unwrap();
        let spec = QuadratureSpec::default();
        let d = 1e-4;
        let v = field_laplace_exact(&s, &p, &[d, -d, 0.0], &spec).unwrap();
        assert!(v[2].abs() < 1e-13);
        let m = field_overlap_exact(&s, &p, &spec).unwrap();
        assert!(((v[0] - v[1]) / (2.0 * d) - 6.0 * m).abs() < 1e-6);
    }
}
