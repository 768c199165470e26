//! Half-integer modified Bessel functions, reference distributions,
//! Kolmogorov–Smirnov distances, the empirical Tracy–Widom (β = 1) reference
//! and the constants of the linear-spectral-statistics CLT for
//! f(x) = log(γ̂ − x).

use crate::error::{Error, Result};
use crate::linalg::top_eigenvalues;
use crate::model::goe_tridiagonal;
use crate::quad::integrate;
use crate::rng::{replicate_seed, stream, stream_rng};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, ln_gamma};
use std::f64::consts::PI;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Orders available in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfOrder {
    MinusHalf,
    Half,
    ThreeHalves,
    FiveHalves,
    SevenHalves,
}

impl HalfOrder {
    pub fn nu(self) -> f64 {
        match self {
            HalfOrder::MinusHalf => -0.5,
            HalfOrder::Half => 0.5,
            HalfOrder::ThreeHalves => 1.5,
            HalfOrder::FiveHalves => 2.5,
            HalfOrder::SevenHalves => 3.5,
        }
    }
}

/// Power series of I_ν(x) scaled by e^{−x}; valid for any real ν with
/// ν+k+1 avoiding non-positive integers for the leading terms.
fn bessel_series_scaled(nu: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let mut sum = 0.0;
    let lnh = half.ln();
    for k in 0..400 {
        let kf = k as f64;
        let arg = kf + nu + 1.0;
        if arg <= 0.0 && arg == arg.floor() {
            continue; // 1/Γ vanishes at the poles
        }
        let g = gamma(arg);
        let term = ((2.0 * kf + nu) * lnh - ln_gamma(kf + 1.0) - x).exp() / g;
        sum += term;
        if kf > half && term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// e^{−x} I_ν(x) for the half-integer ladder.
pub fn bessel_half_scaled(order: HalfOrder, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        if x == 0.0 {
            return match order {
                HalfOrder::MinusHalf => Err(Error::InvalidParam("I_{-1/2} is singular at 0".into())),
                _ => Ok(0.0),
            };
        }
        return Err(Error::InvalidParam(format!("Bessel argument {x} must be positive")));
    }
    if x < 8.0 {
        return Ok(bessel_series_scaled(order.nu(), x));
    }
    let pre = 1.0 / (2.0 * PI * x).sqrt();
    let e2 = (-2.0 * x).exp();
    let im = pre * (1.0 + e2); // e^{-x} √(2/(πx)) cosh(x)
    let ip = pre * (1.0 - e2); // e^{-x} √(2/(πx)) sinh(x)
                               // I_{ν+1} = I_{ν−1} − (2ν/x) I_ν, stable upward for x ≥ 8 at these orders
    let i32 = im - ip / x;
    let i52 = ip - 3.0 * i32 / x;
    let i72 = i32 - 5.0 * i52 / x;
    Ok(match order {
        HalfOrder::MinusHalf => im,
        HalfOrder::Half => ip,
        HalfOrder::ThreeHalves => i32,
        HalfOrder::FiveHalves => i52,
        HalfOrder::SevenHalves => i72,
    })
}

/// I_ν(x) for the half-integer ladder; errors where the value overflows
/// (use [`bessel_half_ln`] there).
pub fn bessel_half(order: HalfOrder, x: f64) -> Result<f64> {
    if x > 700.0 {
        return Err(Error::InvalidParam(format!("I_{}({x}) overflows; use the log-scaled variant", order.nu())));
    }
    Ok(bessel_half_scaled(order, x)? * x.exp())
}

/// log I_ν(x), valid for all x > 0.
pub fn bessel_half_ln(order: HalfOrder, x: f64) -> Result<f64> {
    Ok(bessel_half_scaled(order, x)?.ln() + x)
}

/// I_ν(x) for general real order by the power series (moderate x), with
/// I_{−n} = I_n for integer orders.  Used as an independent oracle.
pub fn bessel_i_series(nu: f64, x: f64) -> f64 {
    let nu = if nu < 0.0 && nu == nu.floor() { -nu } else { nu };
    bessel_series_scaled(nu, x) * x.exp()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Reference distribution for KS comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferenceDistribution {
    StdNormal,
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Law of (1 − 1/β)·tanh²(√(Z²θ(β−1))) with Z standard normal.
    TanhLaw {
        beta: f64,
        theta: f64,
    },
    /// Empirical distribution of sorted samples.
    Empirical {
        samples: Vec<f64>,
        provenance: String,
    },
}

impl ReferenceDistribution {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            ReferenceDistribution::StdNormal => normal_cdf(x),
            ReferenceDistribution::Normal { mean, sd } => normal_cdf((x - mean) / sd),
            ReferenceDistribution::TanhLaw { beta, theta } => {
                let top = 1.0 - 1.0 / beta;
                if x < 0.0 {
                    0.0
                } else if x >= top {
                    1.0
                } else {
                    // monotone in |Z|: P(|Z| ≤ atanh(√(x/top))/√(θ(β−1)))
                    let z = (x / top).sqrt().atanh() / (theta * (beta - 1.0)).sqrt();
                    2.0 * normal_cdf(z) - 1.0
                }
            }
            ReferenceDistribution::Empirical { samples, .. } => {
                samples.partition_point(|&s| s <= x) as f64 / samples.len() as f64
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ReferenceDistribution::StdNormal => "std_normal".into(),
            ReferenceDistribution::Normal { mean, sd } => format!("normal(mean={mean}, sd={sd})"),
            ReferenceDistribution::TanhLaw { beta, theta } => format!("tanh_law(beta={beta}, theta={theta})"),
            ReferenceDistribution::Empirical { samples, provenance } => {
                format!("empirical(n={}, {provenance})", samples.len())
            }
        }
    }
}

/// Sup-distance between the empirical CDF of `sorted` and `reference`,
/// checked on both sides of every jump.  Empirical references are compared
/// with the two-sample statistic.
pub fn ks_distance(sorted: &[f64], reference: &ReferenceDistribution) -> f64 {
    if let ReferenceDistribution::Empirical { samples, .. } = reference {
        return ks_two_sample(sorted, samples);
    }
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = reference.cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Two-sample KS statistic for sorted inputs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail P(K > λ).
pub fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..100 {
        let kf = k as f64;
        let t = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-16 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// Sort a vector of finite values ascending.
pub fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs
}

const TW1_HEADER: &str = "ssk-lab tw1 v1";

fn tw1_cache_path(dir: &Path, n_matrices: usize, n_dim: usize, seed: u64) -> PathBuf {
    dir.join(format!("tw1_n{n_dim}_m{n_matrices}_s{seed}.txt"))
}

/// Draw N^{2/3}(λ₁ − 2) for `n_matrices` GOE matrices of size `n_dim`.
pub fn tw1_samples(n_matrices: usize, n_dim: usize, seed: u64) -> Vec<f64> {
    let scale = (n_dim as f64).powf(2.0 / 3.0);
    let out: Vec<f64> = (0..n_matrices as u64)
        .map(|i| {
            let mut rng = stream_rng(replicate_seed(seed, i), stream::REFERENCE);
            let t = goe_tridiagonal(n_dim, &mut rng);
            scale * (top_eigenvalues(&t, 1)[0] - 2.0)
        })
        .collect();
    sorted(out)
}

/// Empirical TW₁ reference.  When `cache_dir` is given (the CLI passes
/// `$SSK_LAB_CACHE`) the sorted samples are read from / written to a text
/// file whose first line records (n_dim, n_matrices, seed).
pub fn tw1_reference(
    n_matrices: usize,
    n_dim: usize,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<ReferenceDistribution> {
    if n_matrices < 100 {
        return Err(Error::InvalidParam(format!("TW1 reference needs at least 100 matrices, got {n_matrices}")));
    }
    if n_dim < 2 {
        return Err(Error::InvalidParam("TW1 reference needs n_dim >= 2".into()));
    }
    let provenance = format!("GOE largest eigenvalue, n_dim={n_dim}, n_matrices={n_matrices}, seed={seed}");
    if let Some(dir) = cache_dir {
        let path = tw1_cache_path(dir, n_matrices, n_dim, seed);
        if let Ok(samples) = read_tw1_cache(&path, n_matrices, n_dim, seed) {
            return Ok(ReferenceDistribution::Empirical { samples, provenance });
        }
        let samples = tw1_samples(n_matrices, n_dim, seed);
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(std::fs::File::create(&path)?);
        writeln!(w, "{TW1_HEADER} n_dim={n_dim} n_matrices={n_matrices} seed={seed}")?;
        for s in &samples {
            writeln!(w, "{s:?}")?;
        }
        w.flush()?;
        return Ok(ReferenceDistribution::Empirical { samples, provenance });
    }
    Ok(ReferenceDistribution::Empirical { samples: tw1_samples(n_matrices, n_dim, seed), provenance })
}

fn read_tw1_cache(path: &Path, n_matrices: usize, n_dim: usize, seed: u64) -> Result<Vec<f64>> {
    let f = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(f).lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty TW1 cache".into()))??;
    let want = format!("{TW1_HEADER} n_dim={n_dim} n_matrices={n_matrices} seed={seed}");
    if header.trim() != want {
        return Err(Error::Format(format!("TW1 cache header mismatch: {header}")));
    }
    let mut out = Vec::with_capacity(n_matrices);
    for line in lines {
        let line = line?;
        out.push(line.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string()))?);
    }
    if out.len() != n_matrices {
        return Err(Error::Format("TW1 cache truncated".into()));
    }
    Ok(out)
}

/// Constants of the linear-statistic CLT for f(x) = log(γ̂ − x) under a
/// Wigner matrix with diagonal variance w2/N and fourth moment s4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearStatConstants {
    /// Mean correction by quadrature (includes the fourth-cumulant term).
    pub m_f: f64,
    /// Variance by quadrature.
    pub v_f: f64,
    /// Mean correction in closed form (Gaussian entries).
    pub e_n: f64,
    /// Variance in closed form (Gaussian entries).
    pub v_n: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub tau2: f64,
}

/// Closed-form τ coefficients: the Chebyshev moments (1/2π)∫f·T/√(4−x²)
/// for T ∈ {1, x, x²−2}, up to the sign conventions below.
pub fn tau_coefficients(gamma_hat: f64) -> (f64, f64, f64) {
    let r = (gamma_hat * gamma_hat - 4.0).max(0.0).sqrt();
    let tau0 = (gamma_hat + r).ln() - 2f64.ln();
    let tau1 = 0.5 * r - 0.5 * gamma_hat;
    let tau2 = 0.25 * gamma_hat * r - 0.25 * gamma_hat * gamma_hat + 0.5;
    (tau0, tau1, tau2)
}

/// Evaluate the CLT constants for f(x) = log(γ̂ − x).
pub fn linear_stat_constants(gamma_hat: f64, w2: f64, s4: f64) -> Result<LinearStatConstants> {
    if !(gamma_hat > 2.0) {
        return Err(Error::OnCut(gamma_hat));
    }
    let g = gamma_hat;
    let f = |x: f64| (g - x).ln();
    let (tau0, tau1, tau2) = tau_coefficients(g);

    // angle substitution x = 2cosφ turns dx/√(4−x²) into dφ
    let cheb = |poly: &dyn Fn(f64) -> f64| -> Result<f64> {
        let r = integrate(|p: f64| f(2.0 * p.cos()) * poly(2.0 * p.cos()), 0.0, PI, 1e-14, 1e-13);
        if !r.converged {
            return Err(Error::Quadrature(format!("Chebyshev moment error {}", r.error)));
        }
        Ok(r.value / (2.0 * PI))
    };
    let c0 = cheb(&|_| 1.0)?;
    let c1 = cheb(&|x| x)?;
    let c2 = cheb(&|x| x * x - 2.0)?;
    let c4 = cheb(&|x| x.powi(4) - 4.0 * x * x + 1.0)?;
    let m_f = 0.25 * (f(2.0) + f(-2.0)) - c0 + (w2 - 2.0) * c2 + (s4 - 3.0) * c4;

    // divided difference of f, stable as y → x
    let dd = |x: f64, y: f64| {
        let u = (y - x) / (g - y);
        let r = if u.abs() < 1e-8 { 1.0 - 0.5 * u + u * u / 3.0 } else { u.ln_1p() / u };
        -r / (g - y)
    };
    let mut inner_fail = false;
    let outer = integrate(
        |p: f64| {
            let x = 2.0 * p.cos();
            let r = integrate(
                |q: f64| {
                    let y = 2.0 * q.cos();
                    let d = dd(x, y);
                    d * d * (4.0 - x * y)
                },
                0.0,
                PI,
                1e-14,
                1e-12,
            );
            if !r.converged {
                inner_fail = true;
            }
            r.value
        },
        0.0,
        PI,
        1e-13,
        1e-12,
    );
    if inner_fail || !outer.converged {
        return Err(Error::Quadrature("variance double integral did not converge".into()));
    }
    let v_f = outer.value / (2.0 * PI * PI) + (w2 - 2.0) * c1 * c1 + 2.0 * (s4 - 3.0) * c2 * c2;

    let r = (g * g - 4.0).sqrt();
    let e_n = 0.25 * ((g - 2.0).ln() + (g + 2.0).ln()) - 0.5 * tau0 + tau2 * (w2 - 2.0);
    let v_n = ((g + r).powi(2) / (4.0 * (g * g - 4.0))).ln() + tau1 * tau1 * (w2 - 2.0);
    Ok(LinearStatConstants { m_f, v_f, e_n, v_n, tau0, tau1, tau2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_order_closed_forms() {
        // standard normalization √(2/(πx))·sinh, cosh
        let sp = (2.0 / PI).sqrt();
        assert!((bessel_half(HalfOrder::Half, 1.0).unwrap() - sp * 1f64.sinh()).abs() < 1e-14);
        assert!((bessel_half(HalfOrder::MinusHalf, 1.0).unwrap() - sp * 1f64.cosh()).abs() < 1e-14);
        for x in [8.5, 30.0] {
            let s = bessel_half(HalfOrder::Half, x).unwrap();
            assert!((s / (x.sinh() * (2.0 / (PI * x)).sqrt()) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn series_and_recursion_agree_at_switch() {
        for o in [HalfOrder::ThreeHalves, HalfOrder::FiveHalves, HalfOrder::SevenHalves] {
            let a = bessel_series_scaled(o.nu(), 8.0);
            let b = bessel_half_scaled(o, 8.0 + 1e-12).unwrap();
            assert!((a / b - 1.0).abs() < 1e-12, "{o:?}: {a} {b}");
        }
    }

    #[test]
    fn integer_order_series() {
        assert!((bessel_i_series(0.0, 2.0) - 2.279_585_302_336_067).abs() < 1e-13);
        assert!((bessel_i_series(1.0, 2.0) - 1.590_636_854_637_329).abs() < 1e-13);
        assert!((bessel_i_series(-1.0, 2.0) - 1.590_636_854_637_329).abs() < 1e-13);
    }

    #[test]
    fn ks_single_point() {
        let d = ks_distance(&[0.5], &ReferenceDistribution::StdNormal);
        assert!((d - 0.691_462_461_274_013).abs() < 1e-12);
    }

    #[test]
    fn two_sample_identical_is_zero() {
        let a = vec![0.1, 0.2, 0.3];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert!((ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tau_and_variance_closed_forms() {
        let (t0, t1, _) = tau_coefficients(2.0);
        assert!(t0.abs() < 1e-15);
        let (_, t1b, _) = tau_coefficients(2.5);
        assert!((t1b + 0.5).abs() < 1e-15);
        let _ = t1;
        let c = linear_stat_constants(2.5, 2.0, 3.0).unwrap();
        assert!((c.v_n - (16.0f64 / 9.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        for g in [2.05, 2.5, 4.0] {
            for w2 in [0.0, 2.0] {
                let c = linear_stat_constants(g, w2, 3.0).unwrap();
                assert!((c.m_f - c.e_n).abs() < 1e-9, "mean g={g} w2={w2}: {} {}", c.m_f, c.e_n);
                assert!((c.v_f - c.v_n).abs() < 1e-9, "var g={g} w2={w2}: {} {}", c.v_f, c.v_n);
            }
        }
    }
}
