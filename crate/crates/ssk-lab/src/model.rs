//! Model parameters, disorder ensembles, spectral samples, resolvent
//! statistics and empirical random-matrix diagnostics.

use crate::error::{Error, Result};
use crate::linalg::{eigen_with_projections, tridiagonal_ql, SymMatrix, Tridiagonal};
use crate::rng::{stream, stream_rng};
use crate::semicircle;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// How the field direction v is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// The all-ones vector (‖v‖² = N).
    FixedUnitDirection,
    /// Uniform on the radius-√N sphere, independent of the matrix.
    UniformOnSphere,
}

/// Which disorder matrix is decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    /// Zero-diagonal matrix M (the model's coupling matrix).
    ZeroDiagM,
    /// Full GOE H = M + diagonal with variance 2/N.
    FullGoeH,
    /// M as primary data and the coupled H as paired data.
    CoupledPair,
}

/// How the field strength scales with N; θ_scaled = h²β·N^α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HScaling {
    /// h given directly (α = 0).
    Fixed,
    /// α = 1.
    Micro,
    /// α = 1/3.
    Intermediate,
    /// arbitrary α.
    CustomAlpha(f64),
}

impl HScaling {
    pub fn alpha(self) -> f64 {
        match self {
            HScaling::Fixed => 0.0,
            HScaling::Micro => 1.0,
            HScaling::Intermediate => 1.0 / 3.0,
            HScaling::CustomAlpha(a) => a,
        }
    }
}

/// Physical knobs of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n_dim: usize,
    pub beta: f64,
    pub h: f64,
    /// Always h²β.
    pub theta: f64,
    pub field_mode: FieldMode,
    pub ensemble: Ensemble,
    pub scaling: HScaling,
}

impl ModelParams {
    /// Parameters with field strength h given directly.
    pub fn new(n_dim: usize, beta: f64, h: f64) -> Result<Self> {
        if n_dim < 2 {
            return Err(Error::InvalidParam(format!("N must be at least 2, got {n_dim}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParam(format!("beta must be finite and non-negative, got {beta}")));
        }
        if !(h >= 0.0) || !h.is_finite() {
            return Err(Error::InvalidParam(format!("h must be finite and non-negative, got {h}")));
        }
        Ok(ModelParams {
            n_dim,
            beta,
            h,
            theta: h * h * beta,
            field_mode: FieldMode::FixedUnitDirection,
            ensemble: Ensemble::ZeroDiagM,
            scaling: HScaling::Fixed,
        })
    }

    /// Parameters from a scaled field constant θ_s = h²β·N^α; h is
    /// back-derived.
    pub fn with_scaled_theta(n_dim: usize, beta: f64, theta_scaled: f64, scaling: HScaling) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParam("a scaled theta needs beta > 0".into()));
        }
        if !(theta_scaled >= 0.0) {
            return Err(Error::InvalidParam(format!("theta must be non-negative, got {theta_scaled}")));
        }
        let h = (theta_scaled * (n_dim as f64).powf(-scaling.alpha()) / beta).sqrt();
        let mut p = Self::new(n_dim, beta, h)?;
        p.scaling = scaling;
        Ok(p)
    }

    pub fn with_field_mode(mut self, m: FieldMode) -> Self {
        self.field_mode = m;
        self
    }

    pub fn with_ensemble(mut self, e: Ensemble) -> Self {
        self.ensemble = e;
        self
    }

    /// h²β·N^α for the configured scaling.
    pub fn scaled_theta(&self) -> f64 {
        self.theta * (self.n_dim as f64).powf(self.scaling.alpha())
    }

    /// h²β·N (microscopic constant).
    pub fn theta_micro(&self) -> f64 {
        self.theta * self.n_dim as f64
    }

    /// h²β·N^{1/3} (intermediate constant).
    pub fn theta_intermediate(&self) -> f64 {
        self.theta * (self.n_dim as f64).powf(1.0 / 3.0)
    }
}

/// One disorder realization in spectral coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    /// Eigenvalues, descending.
    pub lambdas: Vec<f64>,
    /// v_i = vᵀu_i, aligned with `lambdas`.
    pub v_projs: Vec<f64>,
    pub seed: u64,
    pub paired_lambdas_h: Option<Vec<f64>>,
    pub paired_vprojs_h: Option<Vec<f64>>,
    pub v1_sq: f64,
    /// Some adjacent eigenvalues are exactly equal.
    pub ties: bool,
}

impl SpectralSample {
    /// Build from arbitrary spectral data (sorted here).
    pub fn from_parts(lambdas: Vec<f64>, v_projs: Vec<f64>, seed: u64) -> Result<Self> {
        if lambdas.len() != v_projs.len() || lambdas.is_empty() {
            return Err(Error::InvalidParam(
                "eigenvalue and projection lists must be non-empty and equal length".into(),
            ));
        }
        let mut idx: Vec<usize> = (0..lambdas.len()).collect();
        idx.sort_by(|&i, &j| lambdas[j].total_cmp(&lambdas[i]).then(i.cmp(&j)));
        let l: Vec<f64> = idx.iter().map(|&i| lambdas[i]).collect();
        let v: Vec<f64> = idx.iter().map(|&i| v_projs[i]).collect();
        let ties = l.windows(2).any(|w| w[0] == w[1]);
        Ok(SpectralSample {
            v1_sq: v[0] * v[0],
            lambdas: l,
            v_projs: v,
            seed,
            paired_lambdas_h: None,
            paired_vprojs_h: None,
            ties,
        })
    }

    pub fn n(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambda1(&self) -> f64 {
        self.lambdas[0]
    }

    /// Spectral data of the paired H, if present.
    pub fn paired(&self) -> Option<SpectralSample> {
        let l = self.paired_lambdas_h.clone()?;
        let v = self.paired_vprojs_h.clone()?;
        SpectralSample::from_parts(l, v, self.seed).ok()
    }
}

/// Field vector with ‖v‖² = N.
pub fn field_vector(n: usize, mode: FieldMode, seed: u64) -> Vec<f64> {
    match mode {
        FieldMode::FixedUnitDirection => vec![1.0; n],
        FieldMode::UniformOnSphere => {
            let mut rng = stream_rng(seed, stream::FIELD);
            haar_direction(n, &mut rng)
        }
    }
}

/// √N·g/‖g‖ for iid normal g: uniform on the radius-√N sphere.
pub fn haar_direction(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = (n as f64).sqrt() / norm;
    g.into_iter().map(|x| x * s).collect()
}

/// The coupled pair (M, H) built from one N×N array of iid normals:
/// M_ij = −(g_ij + g_ji)/√(2N) off the diagonal, M_ii = 0, and
/// H = M + diag(√(2/N)·g_ii).
pub fn coupled_matrices(n: usize, seed: u64) -> (SymMatrix, Vec<f64>) {
    let mut rng = stream_rng(seed, stream::MATRIX);
    let g: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let s = 1.0 / (2.0 * n as f64).sqrt();
    let mut m = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..i {
            m.set_sym(i, j, -(g[i * n + j] + g[j * n + i]) * s);
        }
    }
    let d = (2.0 / n as f64).sqrt();
    let diag: Vec<f64> = (0..n).map(|i| d * g[i * n + i]).collect();
    (m, diag)
}

/// Draw the disorder and decompose it.
pub fn sample_spectral(params: &ModelParams, seed: u64) -> Result<SpectralSample> {
    let n = params.n_dim;
    if n < 2 {
        return Err(Error::InvalidParam(format!("N must be at least 2, got {n}")));
    }
    let v = field_vector(n, params.field_mode, seed);
    let (m, diag) = coupled_matrices(n, seed);
    let decompose = |a: &SymMatrix| eigen_with_projections(a, &v).map_err(|_| Error::EigenNoConvergence { n, seed });
    let h_matrix = || {
        let mut h = m.clone();
        for (i, d) in diag.iter().enumerate() {
            h.data[i * n + i] = *d;
        }
        h
    };
    match params.ensemble {
        Ensemble::ZeroDiagM => {
            let (l, p) = decompose(&m)?;
            SpectralSample::from_parts(l, p, seed)
        }
        Ensemble::FullGoeH => {
            let (l, p) = decompose(&h_matrix())?;
            SpectralSample::from_parts(l, p, seed)
        }
        Ensemble::CoupledPair => {
            let (l, p) = decompose(&m)?;
            let (lh, ph) = decompose(&h_matrix())?;
            let mut s = SpectralSample::from_parts(l, p, seed)?;
            s.paired_lambdas_h = Some(lh);
            s.paired_vprojs_h = Some(ph);
            Ok(s)
        }
    }
}

/// Tridiagonal model of the full GOE (diagonal variance 2/N, off-diagonal
/// variance 1/N): same eigenvalue law as H at O(N) sampling cost.
pub fn goe_tridiagonal(n: usize, rng: &mut impl Rng) -> Tridiagonal {
    let s = 1.0 / (n as f64).sqrt();
    let diag: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * std::f64::consts::SQRT_2 * s).collect();
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let dof = (n - k) as f64;
            ChiSquared::new(dof).expect("positive degrees of freedom").sample(rng).sqrt() * s
        })
        .collect();
    Tridiagonal { diag, off }
}

/// Full-GOE spectral sample from the tridiagonal model.  The projections of
/// a fixed direction onto the (Haar-distributed) eigenvectors are drawn as an
/// independent uniform direction, which has the same joint law.
pub fn sample_goe_fast(n: usize, seed: u64) -> Result<SpectralSample> {
    if n < 2 {
        return Err(Error::InvalidParam(format!("N must be at least 2, got {n}")));
    }
    let mut rng = stream_rng(seed, stream::TRIDIAG);
    let t = goe_tridiagonal(n, &mut rng);
    let l = tridiagonal_ql(&t, None).map_err(|_| Error::EigenNoConvergence { n, seed })?;
    let mut frng = stream_rng(seed, stream::FIELD);
    let v = haar_direction(n, &mut frng);
    SpectralSample::from_parts(l, v, seed)
}

/// Resolvent quantities at a spectral parameter z.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventStats {
    /// (1/N)Σ 1/(λ_i − z)
    pub m: Complex64,
    /// (1/N)Σ v_i²/(λ_i − z)
    pub m_v: Complex64,
    /// m without the top eigenvalue
    pub m_tilde: Complex64,
    /// m_v without the top eigenvalue
    pub m_v_tilde: Complex64,
    /// vᵀ(M − z)^{−k}v for k = 1..=k_max (index k−1)
    pub v_powers: Vec<Complex64>,
    /// tr(M − z)^{−k} for k = 1..=k_max (index k−1)
    pub tr_powers: Vec<Complex64>,
}

pub fn resolvent_stats(sample: &SpectralSample, z: Complex64, k_max: usize) -> Result<ResolventStats> {
    let n = sample.n();
    let scale = sample.lambdas[0].abs().max(sample.lambdas[n - 1].abs()).max(1.0);
    let mut v_powers = vec![Complex64::new(0.0, 0.0); k_max];
    let mut tr_powers = vec![Complex64::new(0.0, 0.0); k_max];
    let mut m = Complex64::new(0.0, 0.0);
    let mut m_v = Complex64::new(0.0, 0.0);
    let mut first = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (i, (&l, &v)) in sample.lambdas.iter().zip(&sample.v_projs).enumerate() {
        let d = Complex64::new(l, 0.0) - z;
        if d.norm() < 1e-12 * scale {
            return Err(Error::PoleCollision { z: z.re });
        }
        let r = d.inv();
        if i == 0 {
            first = (r, r * v * v);
        }
        m += r;
        m_v += r * v * v;
        let mut p = r;
        for k in 0..k_max {
            tr_powers[k] += p;
            v_powers[k] += p * v * v;
            p *= r;
        }
    }
    let nf = n as f64;
    Ok(ResolventStats {
        m: m / nf,
        m_v: m_v / nf,
        m_tilde: (m - first.0) / nf,
        m_v_tilde: (m_v - first.1) / nf,
        v_powers,
        tr_powers,
    })
}

/// Empirical analogue of the good-event checks, for reporting only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub eps: f64,
    /// Rigidity and level repulsion are not assessed below N = 10.
    pub applicable: bool,
    pub rigidity_pass: bool,
    /// max_j |λ_j − γ_j| / (N^{−2/3} min(j, N+1−j)^{−1/3})
    pub rigidity_ratio: f64,
    pub delocalization_pass: bool,
    pub max_v_sq: f64,
    /// λ₁ − λ₂ in units of N^{−2/3}
    pub scaled_gap: f64,
    /// scaled gap below 0.1
    pub small_gap: bool,
    pub isotropic_pass: bool,
    /// max over the probe grid of |m_v(z) − m_sc(z)| / envelope
    pub isotropic_ratio: f64,
    /// max_{j ≤ N^{0.1}} |λ_j(M) − λ_j(H)|·N, when the pair is present
    pub pair_top_diff_scaled: Option<f64>,
    pub pair_pass: Option<bool>,
    pub ties: bool,
}

/// Rigidity, delocalization, gap, isotropic-law and M↔H checks at
/// tolerance exponent `eps`.
pub fn rmt_diagnostics(sample: &SpectralSample, eps: f64) -> DiagnosticsReport {
    let n = sample.n();
    let nf = n as f64;
    let applicable = n >= 10;
    let allowance = nf.powf(eps);

    let mut rigidity_ratio = 0.0f64;
    if applicable {
        for (j0, &l) in sample.lambdas.iter().enumerate() {
            let j = j0 + 1;
            let q = semicircle::quantile(j, n).unwrap_or(l);
            let env = nf.powf(-2.0 / 3.0) * (j.min(n + 1 - j) as f64).powf(-1.0 / 3.0);
            rigidity_ratio = rigidity_ratio.max((l - q).abs() / env);
        }
    }
    let max_v_sq = sample.v_projs.iter().map(|v| v * v).fold(0.0, f64::max);
    let scaled_gap = (sample.lambdas[0] - sample.lambdas[1]) * nf.powf(2.0 / 3.0);

    // isotropic law on a probe grid inside and right of the spectrum
    let mut isotropic_ratio = 0.0f64;
    let eta = nf.powf(-0.5);
    for &e in &[-1.5, -0.5, 0.0, 0.5, 1.5, 2.5, 3.0] {
        let z = Complex64::new(e, eta);
        if let Ok(r) = resolvent_stats(sample, z, 0) {
            let msc = semicircle::m_complex(z);
            let env = (msc.im / (nf * eta)).sqrt() + 1.0 / (nf * eta);
            isotropic_ratio = isotropic_ratio.max((r.m_v - msc).norm() / env);
        }
    }

    let (pair_top_diff_scaled, pair_pass) = match &sample.paired_lambdas_h {
        Some(lh) => {
            let k = (nf.powf(0.1).floor() as usize).max(1).min(n);
            let d = (0..k).map(|j| (sample.lambdas[j] - lh[j]).abs()).fold(0.0, f64::max) * nf;
            (Some(d), Some(d <= nf.powf(0.05)))
        }
        None => (None, None),
    };

    DiagnosticsReport {
        n,
        eps,
        applicable,
        rigidity_pass: !applicable || rigidity_ratio <= allowance,
        rigidity_ratio,
        delocalization_pass: max_v_sq <= allowance,
        max_v_sq,
        scaled_gap,
        small_gap: applicable && scaled_gap <= 0.1,
        isotropic_pass: isotropic_ratio <= allowance,
        isotropic_ratio,
        pair_top_diff_scaled,
        pair_pass,
        ties: sample.ties,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_zero_diagonal() {
        let p = ModelParams::new(2, 1.0, 0.0).unwrap();
        let s = sample_spectral(&p, 3).unwrap();
        assert!((s.lambdas[0] + s.lambdas[1]).abs() < 1e-15);
        let (m, _) = coupled_matrices(2, 3);
        assert!((s.lambdas[0] - m.get(0, 1).abs()).abs() < 1e-15);
    }

    #[test]
    fn theta_invariant_and_back_derivation() {
        let p = ModelParams::with_scaled_theta(1000, 2.0, 1.0, HScaling::Micro).unwrap();
        assert!((p.theta - p.h * p.h * p.beta).abs() < 1e-18);
        assert!((p.theta_micro() - 1.0).abs() < 1e-12);
        assert!(ModelParams::new(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn coupled_pair_shares_off_diagonal() {
        let p = ModelParams::new(30, 1.0, 0.1).unwrap().with_ensemble(Ensemble::CoupledPair);
        let s = sample_spectral(&p, 9).unwrap();
        let lh = s.paired_lambdas_h.as_ref().unwrap();
        let (_, diag) = coupled_matrices(30, 9);
        // trace of H is the sum of its diagonal; trace of M vanishes
        assert!((lh.iter().sum::<f64>() - diag.iter().sum::<f64>()).abs() < 1e-12);
        assert!(s.lambdas.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn tridiagonal_goe_has_semicircle_edge() {
        let s = sample_goe_fast(2000, 5).unwrap();
        assert!((s.lambdas[0] - 2.0).abs() < 0.1);
        assert!((s.v_projs.iter().map(|v| v * v).sum::<f64>() - 2000.0).abs() < 1e-8);
    }

    #[test]
    fn resolvent_split() {
        let p = ModelParams::new(40, 1.0, 0.0).unwrap().with_field_mode(FieldMode::UniformOnSphere);
        let s = sample_spectral(&p, 1).unwrap();
        let z = Complex64::new(s.lambda1() + 0.3, 0.0);
        let r = resolvent_stats(&s, z, 3).unwrap();
        let direct = 1.0 / (40.0 * (s.lambda1() - z.re));
        assert!((r.m - r.m_tilde - direct).norm() < 1e-15);
        assert!(r.m.re < 0.0 && r.m.im == 0.0);
        let far = resolvent_stats(&s, Complex64::new(1e6, 0.0), 1).unwrap();
        assert!((far.m.re * 1e6 + 1.0).abs() < 1e-5);
        let hit = Complex64::new(s.lambdas[3], 0.0);
        assert!(resolvent_stats(&s, hit, 1).is_err());
    }

    #[test]
    fn small_n_diagnostics_not_applicable() {
        let p = ModelParams::new(2, 1.0, 0.0).unwrap();
        let s = sample_spectral(&p, 0).unwrap();
        let d = rmt_diagnostics(&s, 0.1);
        assert!(!d.applicable && d.rigidity_pass);
    }
}
