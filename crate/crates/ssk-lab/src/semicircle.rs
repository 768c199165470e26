//! Semicircle law: density, Stieltjes transform and its derivatives,
//! log-potential and classical eigenvalue locations.

use crate::error::{Error, Result};
use crate::quad::integrate;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Density (1/2π)√(4−x²) on [−2, 2].
pub fn rho(x: f64) -> f64 {
    if x.abs() >= 2.0 {
        0.0
    } else {
        (4.0 - x * x).sqrt() / (2.0 * PI)
    }
}

/// Distribution function ∫_{−2}^{x} ρ.
pub fn cdf(x: f64) -> f64 {
    if x <= -2.0 {
        return 0.0;
    }
    if x >= 2.0 {
        return 1.0;
    }
    0.5 + x * (4.0 - x * x).sqrt() / (4.0 * PI) + (x / 2.0).asin() / PI
}

/// Stieltjes transform ∫ρ(x)/(x−z) dx off the cut, principal branches
/// arranged so that m(z) ~ −1/z at infinity.
pub fn m_complex(z: Complex64) -> Complex64 {
    let two = Complex64::new(2.0, 0.0);
    let s = (z - two).sqrt() * (z + two).sqrt();
    // −2/(z+s) is the same root as (−z+s)/2 without the cancellation
    if (z + s).norm() >= 1.0 {
        -two / (z + s)
    } else {
        (s - z) * 0.5
    }
}

fn check_real(z: f64) -> Result<()> {
    if z.abs() < 2.0 || !z.is_finite() {
        return Err(Error::OnCut(z));
    }
    Ok(())
}

/// m_sc on the real axis outside (−2, 2).
pub fn m(z: f64) -> Result<f64> {
    check_real(z)?;
    let r = ((z - 2.0) * (z + 2.0)).sqrt();
    // stable form for large |z|: the product of the two roots is 1
    Ok(if z > 0.0 { -2.0 / (z + r) } else { 2.0 / (r - z) })
}

/// m_sc′ = m²/(1−m²).
pub fn m_prime(z: f64) -> Result<f64> {
    let u = m(z)?;
    Ok(u * u / (1.0 - u * u))
}

/// m_sc″ = 2m³/(1−m²)³.
pub fn m_dprime(z: f64) -> Result<f64> {
    let u = m(z)?;
    Ok(2.0 * u.powi(3) / (1.0 - u * u).powi(3))
}

/// m_sc‴ = 6m⁴(1+m²)/(1−m²)⁵.
pub fn m_tprime(z: f64) -> Result<f64> {
    let u = m(z)?;
    Ok(6.0 * u.powi(4) * (1.0 + u * u) / (1.0 - u * u).powi(5))
}

/// Log-potential L(z) = ∫log(z−x)ρ(x)dx for real z ≥ 2, by adaptive
/// quadrature in the angle x = 2cosφ (absolute tolerance 1e-10).
pub fn logpot(z: f64) -> Result<f64> {
    if z < 2.0 || !z.is_finite() {
        return Err(Error::OnCut(z));
    }
    let f = |phi: f64| {
        let s = phi.sin();
        (z - 2.0 * phi.cos()).ln() * 2.0 / PI * s * s
    };
    // the only (integrable) singularity sits at φ = 0 when z = 2
    let r = integrate(f, 0.0, PI, 1e-13, 1e-14);
    if !r.converged && r.error > 1e-10 {
        return Err(Error::Quadrature(format!("log-potential at {z}: error {}", r.error)));
    }
    Ok(r.value)
}

/// Log-potential for complex z off the cut (principal log per point).
pub fn logpot_complex(z: Complex64) -> Complex64 {
    let f = |phi: f64| {
        let s = phi.sin();
        (z - 2.0 * phi.cos()).ln() * (2.0 / PI * s * s)
    };
    integrate(f, 0.0, PI, 1e-13, 1e-14).value
}

/// Classical location γ_i: ∫_{γ_i}^{2} ρ = i/n, for 1 ≤ i ≤ n.
pub fn quantile(i: usize, n: usize) -> Result<f64> {
    if i == 0 || i > n {
        return Err(Error::InvalidParam(format!("quantile index {i} outside 1..={n}")));
    }
    let target = 1.0 - i as f64 / n as f64;
    let (mut lo, mut hi) = (-2.0f64, 2.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which semicircle quantity to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantity {
    Rho,
    M,
    MPrime,
    MDPrime,
    LogPot,
    Quantile { i: usize, n: usize },
}

/// Uniform real-argument entry point.
pub fn semicircle(z: f64, what: Quantity) -> Result<f64> {
    match what {
        Quantity::Rho => Ok(rho(z)),
        Quantity::M => m(z),
        Quantity::MPrime => m_prime(z),
        Quantity::MDPrime => m_dprime(z),
        Quantity::LogPot => logpot(z),
        Quantity::Quantile { i, n } => quantile(i, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_values() {
        assert!((rho(0.0) - 1.0 / PI).abs() < 1e-15);
        assert!((m(2.5).unwrap() + 0.5).abs() < 1e-15);
        assert!((m_prime(2.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(m(1.0).is_err());
    }

    #[test]
    fn logpot_at_edge_and_closed_form() {
        assert!((logpot(2.0).unwrap() - 0.5).abs() < 1e-10);
        // z = q + 1/q gives L = log q + 1/(2q²)
        for q in [1.2f64, 2.0, 5.0] {
            let z = q + 1.0 / q;
            let want = q.ln() + 0.5 / (q * q);
            assert!((logpot(z).unwrap() - want).abs() < 1e-11);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for z in [2.1, 2.5, 4.0, -3.0] {
            let h = 1e-4;
            let fd1 = (m(z + h).unwrap() - m(z - h).unwrap()) / (2.0 * h);
            let fd2 = (m_prime(z + h).unwrap() - m_prime(z - h).unwrap()) / (2.0 * h);
            let fd3 = (m_dprime(z + h).unwrap() - m_dprime(z - h).unwrap()) / (2.0 * h);
            assert!((fd1 - m_prime(z).unwrap()).abs() < 1e-6 * (1.0 + fd1.abs()));
            assert!((fd2 - m_dprime(z).unwrap()).abs() < 1e-5 * (1.0 + fd2.abs()));
            assert!((fd3 - m_tprime(z).unwrap()).abs() < 1e-4 * (1.0 + fd3.abs()));
        }
    }

    #[test]
    fn complex_branch_agrees_on_real_axis() {
        for z in [2.5, -2.5, 7.0] {
            let c = m_complex(Complex64::new(z, 0.0));
            assert!((c.re - m(z).unwrap()).abs() < 1e-14 && c.im.abs() < 1e-14);
        }
        let big = m_complex(Complex64::new(0.0, 1e6));
        assert!((big * Complex64::new(0.0, 1e6) + 1.0).norm() < 1e-6);
    }

    #[test]
    fn quantiles_are_ordered() {
        let n = 50;
        let q: Vec<f64> = (1..=n).map(|i| quantile(i, n).unwrap()).collect();
        assert!(q.windows(2).all(|w| w[0] > w[1]));
        assert!((q[n - 1] + 2.0).abs() < 1e-12);
        assert!((cdf(q[24]) - 0.5).abs() < 1e-12);
    }
}
