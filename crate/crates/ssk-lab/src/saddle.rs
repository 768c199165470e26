//! The family of steepest-descent exponents and their saddle solvers.
//!
//! Every random kind is a finite pole sum
//!   G(z) = c·βz − Σ_j w_j log(z − p_j) + Σ_k f_k/(z − q_k)
//! evaluated with principal logs, so one evaluator and one derivative
//! routine serve all of them.  The deterministic kinds use the semicircle
//! closed forms.

use crate::error::{Error, Result};
use crate::model::SpectralSample;
use crate::semicircle;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Which exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKind {
    /// βz − (1/N)Σlog(z−λ_i) + (θ/N)Σv_i²/(z−λ_i)
    Random,
    /// βz − L(z) − θ·m_sc(z)
    Deterministic,
    /// Random kind with θ replaced by θ + u (external-field tilt).
    Tilted { u: f64 },
    /// Deterministic kind with θ replaced by θ + u.
    DeterministicTilted { u: f64 },
    /// Field poles shifted to λ_i + t.
    Shifted { t: f64 },
    /// Two-replica exponent restricted to z = w:
    /// 2βx − (1/N)Σlog((x−λ_i)² − t²) + (2θ/N)Σv_i²/(x − λ_i − t).
    ReplicaDiag { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct PoleForm {
    lin: f64,
    log_w: Vec<f64>,
    log_p: Vec<f64>,
    fld_w: Vec<f64>,
    fld_p: Vec<f64>,
}

/// A member of the exponent family, ready to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct GFunction {
    pub kind: GKind,
    pub beta: f64,
    /// h²β, the field constant entering the exponent.
    pub theta: f64,
    form: Option<PoleForm>,
    singularity: f64,
}

impl GFunction {
    /// Build the exponent; random kinds need a sample.
    pub fn new(kind: GKind, beta: f64, theta: f64, sample: Option<&SpectralSample>) -> Result<Self> {
        match kind {
            GKind::Deterministic | GKind::DeterministicTilted { .. } => {
                return Ok(GFunction { kind, beta, theta, form: None, singularity: 2.0 });
            }
            _ => {}
        }
        let s = sample.ok_or_else(|| Error::InvalidParam("random exponent needs a spectral sample".into()))?;
        let n = s.n() as f64;
        let v2: Vec<f64> = s.v_projs.iter().map(|v| v * v).collect();
        let form = match kind {
            GKind::Random | GKind::Tilted { .. } | GKind::Shifted { .. } => {
                let (th, shift) = match kind {
                    GKind::Tilted { u } => (theta + u, 0.0),
                    GKind::Shifted { t } => (theta, t),
                    _ => (theta, 0.0),
                };
                PoleForm {
                    lin: beta,
                    log_w: vec![1.0 / n; s.n()],
                    log_p: s.lambdas.clone(),
                    fld_w: v2.iter().map(|x| th * x / n).collect(),
                    fld_p: s.lambdas.iter().map(|l| l + shift).collect(),
                }
            }
            GKind::ReplicaDiag { t } => {
                let mut log_p = Vec::with_capacity(2 * s.n());
                for l in &s.lambdas {
                    log_p.push(l + t);
                    log_p.push(l - t);
                }
                PoleForm {
                    lin: 2.0 * beta,
                    log_w: vec![1.0 / n; 2 * s.n()],
                    log_p,
                    fld_w: v2.iter().map(|x| 2.0 * theta * x / n).collect(),
                    fld_p: s.lambdas.iter().map(|l| l + t).collect(),
                }
            }
            GKind::Deterministic | GKind::DeterministicTilted { .. } => unreachable!(),
        };
        let singularity = form.log_p.iter().chain(&form.fld_p).cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(GFunction { kind, beta, theta, form: Some(form), singularity })
    }

    /// Right-most singularity on the real axis.
    pub fn singularity(&self) -> f64 {
        self.singularity
    }

    fn det_theta(&self) -> f64 {
        match self.kind {
            GKind::DeterministicTilted { u } => self.theta + u,
            _ => self.theta,
        }
    }

    /// G(z) with principal-branch logs.
    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        match &self.form {
            None => {
                if z.im == 0.0 && z.re <= 2.0 {
                    return Err(Error::OnCut(z.re));
                }
                Ok(z * self.beta - semicircle::logpot_complex(z) - semicircle::m_complex(z) * self.det_theta())
            }
            Some(f) => {
                let mut acc = z * f.lin;
                for (w, p) in f.log_w.iter().zip(&f.log_p) {
                    let d = z - p;
                    if d.norm() == 0.0 {
                        return Err(Error::PoleCollision { z: z.re });
                    }
                    acc -= d.ln() * *w;
                }
                for (w, q) in f.fld_w.iter().zip(&f.fld_p) {
                    let d = z - q;
                    if d.norm() == 0.0 {
                        return Err(Error::PoleCollision { z: z.re });
                    }
                    acc += d.inv() * *w;
                }
                Ok(acc)
            }
        }
    }

    /// G(z) − G(x0) for real x0 right of the singularity, term-paired so
    /// that no large cancelling sums appear.
    pub fn eval_rel(&self, z: Complex64, x0: f64) -> Result<Complex64> {
        match &self.form {
            None => Ok(self.eval(z)? - self.eval(Complex64::new(x0, 0.0))?),
            Some(f) => {
                let dz = z - x0;
                let mut acc = dz * f.lin;
                for (w, p) in f.log_w.iter().zip(&f.log_p) {
                    let base = x0 - p;
                    acc -= ln_1p(dz / base) * *w;
                }
                for (w, q) in f.fld_w.iter().zip(&f.fld_p) {
                    let d = z - q;
                    if d.norm() == 0.0 {
                        return Err(Error::PoleCollision { z: z.re });
                    }
                    acc -= dz / (d * (x0 - q)) * *w;
                }
                Ok(acc)
            }
        }
    }

    /// (G, G′, G″, G‴) at a real point right of the singularity.
    pub fn derivs(&self, x: f64) -> Result<[f64; 4]> {
        if !(x > self.singularity) {
            return Err(Error::PoleCollision { z: x });
        }
        match &self.form {
            None => {
                let th = self.det_theta();
                let m = semicircle::m(x)?;
                let m1 = semicircle::m_prime(x)?;
                let m2 = semicircle::m_dprime(x)?;
                let m3 = semicircle::m_tprime(x)?;
                let g = self.beta * x - semicircle::logpot(x)? - th * m;
                Ok([g, self.beta + m - th * m1, m1 - th * m2, m2 - th * m3])
            }
            Some(f) => {
                let mut out = [f.lin * x, f.lin, 0.0, 0.0];
                for (w, p) in f.log_w.iter().zip(&f.log_p) {
                    let r = 1.0 / (x - p);
                    out[0] -= w * (x - p).ln();
                    out[1] -= w * r;
                    out[2] += w * r * r;
                    out[3] -= 2.0 * w * r * r * r;
                }
                for (w, q) in f.fld_w.iter().zip(&f.fld_p) {
                    let r = 1.0 / (x - q);
                    out[0] += w * r;
                    out[1] -= w * r * r;
                    out[2] += 2.0 * w * r * r * r;
                    out[3] -= 6.0 * w * r * r * r * r;
                }
                Ok(out)
            }
        }
    }

    /// Only the first derivative (cheaper for bisection).
    pub fn d1(&self, x: f64) -> f64 {
        match &self.form {
            None => self.derivs(x).map(|d| d[1]).unwrap_or(f64::NEG_INFINITY),
            Some(f) => {
                let mut s = f.lin;
                for (w, p) in f.log_w.iter().zip(&f.log_p) {
                    s -= w / (x - p);
                }
                for (w, q) in f.fld_w.iter().zip(&f.fld_p) {
                    let r = 1.0 / (x - q);
                    s -= w * r * r;
                }
                s
            }
        }
    }
}

/// log(1 + u), accurate for small |u|.
pub fn ln_1p(u: Complex64) -> Complex64 {
    let re = 0.5 * (2.0 * u.re + u.re * u.re + u.im * u.im).ln_1p();
    Complex64::new(re, u.im.atan2(1.0 + u.re))
}

/// A real root of G′ right of the singularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleSolution {
    pub location: f64,
    /// location − singularity (equals γ̂ − 2 for the deterministic kinds)
    pub kappa: f64,
    /// G(location)
    pub value: f64,
    pub d2: f64,
    pub d3: f64,
    pub residual: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
}

impl SaddleSolution {
    /// N^{2/3}(γ − λ₁), the edge-scaled distance.
    pub fn edge_scaled(&self, n: usize) -> f64 {
        (n as f64).powf(2.0 / 3.0) * self.kappa
    }
}

/// Bisection + Newton polish for the unique root of an increasing function
/// on (left, ∞).  `f` may return −∞ near the left end.
pub fn increasing_root(f: impl Fn(f64) -> f64, left: f64, what: &str) -> Result<(f64, (f64, f64), usize)> {
    let scale = left.abs().max(1.0);
    let mut lo = left + 1e-10 * scale;
    if !(f(lo) < 0.0) {
        // the root may sit even closer to the pole
        let mut probe = left + 1e-14 * scale;
        if !(f(probe) < 0.0) {
            return Err(Error::OutsideRegime(format!("{what}: derivative non-negative at the singularity")));
        }
        while !(f(lo) < 0.0) {
            let mid = 0.5 * (probe + lo);
            if f(mid) < 0.0 {
                probe = mid;
            } else {
                lo = mid;
            }
            if lo - probe < 1e-300 {
                break;
            }
        }
        lo = probe;
    }
    let mut r = 1.0;
    let mut hi = left + r;
    let mut doublings = 0;
    while !(f(hi) > 0.0) {
        if f(hi) == 0.0 {
            return Ok((hi, (lo, hi), doublings));
        }
        r *= 2.0;
        hi = left + r;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::OutsideRegime(format!("{what}: no sign change after 60 doublings")));
        }
    }
    let mut it = 0;
    while hi - lo > 1e-14 * scale.max(hi.abs()) && it < 400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        it += 1;
    }
    Ok((0.5 * (lo + hi), (lo, hi), it))
}

/// Root of G′ for the given exponent.
pub fn solve_saddle(gfun: &GFunction) -> Result<SaddleSolution> {
    let s = gfun.singularity();
    let (mut x, bracket, iterations) = increasing_root(|x| gfun.d1(x), s, "saddle")?;
    // Newton polish, kept inside the final bracket
    for _ in 0..8 {
        let d = gfun.derivs(x)?;
        if d[2] <= 0.0 || !d[2].is_finite() {
            break;
        }
        let nx = x - d[1] / d[2];
        if !(nx > bracket.0 - 1e-15 && nx < bracket.1 + 1e-15) || nx <= s {
            break;
        }
        let done = (nx - x).abs() <= 1e-16 * x.abs().max(1.0);
        x = nx;
        if done {
            break;
        }
    }
    let d = gfun.derivs(x)?;
    Ok(SaddleSolution {
        location: x,
        kappa: x - s,
        value: d[0],
        d2: d[2],
        d3: d[3],
        residual: d[1].abs(),
        bracket,
        iterations,
    })
}

/// c_β = (1 + √(1 + 4(β−1)θv₁²)) / (2(β−1)) and B = c_β(β−1) − 1.
pub fn solve_c_beta(beta: f64, theta_v1sq: f64) -> Result<(f64, f64)> {
    if !(beta > 1.0) {
        return Err(Error::OutsideRegime(format!("c_beta requires beta > 1, got {beta}")));
    }
    if !(theta_v1sq >= 0.0) {
        return Err(Error::InvalidParam(format!("theta*v1^2 must be non-negative, got {theta_v1sq}")));
    }
    let bm = beta - 1.0;
    let c = (1.0 + (1.0 + 4.0 * bm * theta_v1sq).sqrt()) / (2.0 * bm);
    let b = c * bm - 1.0;
    Ok((c, b))
}

/// Root x > max(poles) of target = coupling·Σ w_i/(p_i − x)².
pub fn solve_pole_equation(poles: &[f64], weights: &[f64], coupling: f64, target: f64) -> Result<f64> {
    let top = poles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rhs = |x: f64| coupling * poles.iter().zip(weights).map(|(p, w)| w / ((p - x) * (p - x))).sum::<f64>();
    // rhs − target is decreasing; flip sign for the increasing solver
    let (x, _, _) =
        increasing_root(|x| target - rhs(x), top, "pole equation").map_err(|e| Error::NoRoot(format!("{e}")))?;
    Ok(x)
}

/// x_b > μ₁ solving (β−1) = (θ/N^{4/3})Σ g_i²/(μ_i − x_b)².
pub fn solve_intermediate_saddle(mus: &[f64], gs: &[f64], beta: f64, theta: f64, n_dim: usize) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(Error::OutsideRegime(format!("intermediate saddle requires beta > 1, got {beta}")));
    }
    let w: Vec<f64> = gs.iter().map(|g| g * g).collect();
    solve_pole_equation(mus, &w, theta * (n_dim as f64).powf(-4.0 / 3.0), beta - 1.0)
}

/// x_a: as x_b with the weights normalized by their empirical mean.
pub fn solve_intermediate_saddle_normalized(
    mus: &[f64],
    gs: &[f64],
    beta: f64,
    theta: f64,
    n_dim: usize,
) -> Result<f64> {
    let mean = gs.iter().map(|g| g * g).sum::<f64>() / gs.len() as f64;
    solve_intermediate_saddle(mus, gs, beta, theta / mean, n_dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample1() -> SpectralSample {
        SpectralSample::from_parts(vec![0.0], vec![1.0], 0).unwrap()
    }

    #[test]
    fn deterministic_saddle_at_zero_field() {
        let g = GFunction::new(GKind::Deterministic, 0.5, 0.0, None).unwrap();
        let s = solve_saddle(&g).unwrap();
        assert!((s.location - 2.5).abs() < 1e-12);
        assert!((s.kappa - 0.5).abs() < 1e-12);
        let d = g.derivs(2.5).unwrap();
        assert!((d[0] - (1.25 - semicircle::logpot(2.5).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn single_term_value() {
        let s = sample1();
        let beta = 0.7;
        let g = GFunction::new(GKind::Random, beta, beta, Some(&s)).unwrap();
        let v = g.eval(Complex64::new(2.0, 0.0)).unwrap();
        assert!((v.re - (beta * 2.0 - 2f64.ln() + beta / 2.0)).abs() < 1e-15);
        let rel = g.eval_rel(Complex64::new(2.0, 0.3), 1.5).unwrap();
        let direct = g.eval(Complex64::new(2.0, 0.3)).unwrap() - g.eval(Complex64::new(1.5, 0.0)).unwrap();
        assert!((rel - direct).norm() < 1e-14);
    }

    #[test]
    fn c_beta_examples() {
        let (c, b) = solve_c_beta(2.0, 0.0).unwrap();
        assert!((c - 1.0).abs() < 1e-15 && b.abs() < 1e-15);
        let (c, b) = solve_c_beta(2.0, 2.0).unwrap();
        assert!((c - 2.0).abs() < 1e-15 && (b - 1.0).abs() < 1e-15);
        let (c, _) = solve_c_beta(1.5, 1.0).unwrap();
        assert!((c - (1.0 + 3f64.sqrt())).abs() < 1e-14);
        assert!(solve_c_beta(1.0, 1.0).is_err());
    }

    #[test]
    fn unit_pole_equation() {
        let x = solve_pole_equation(&[0.0], &[1.0], 1.0, 1.0).unwrap();
        assert!((x - 1.0).abs() < 1e-13);
    }

    #[test]
    fn deterministic_without_root_is_outside() {
        let g = GFunction::new(GKind::Deterministic, 1.5, 0.0, None).unwrap();
        assert!(matches!(solve_saddle(&g), Err(Error::OutsideRegime(_))));
    }
}
