//! Dense symmetric eigen-decomposition specialised to what the lab needs:
//! all eigenvalues plus the projections of a single vector onto the
//! eigenvectors.  Householder reduction to tridiagonal form, then implicit
//! QL; the rotations are applied to one vector instead of accumulating the
//! eigenvector matrix, which keeps the QL stage O(n^2).

use crate::error::{Error, Result};

/// Row-major dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, data: vec![0.0; n * n] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set_sym(&mut self, i: usize, j: usize, x: f64) {
        self.data[i * self.n + j] = x;
        self.data[j * self.n + i] = x;
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = dot(&self.data[i * n..(i + 1) * n], x);
        }
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let n = self.n;
        (0..n).map(|i| x[i] * dot(&self.data[i * n..(i + 1) * n], x)).sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius norm, used as the matrix scale in tolerances.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorises
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Symmetric tridiagonal matrix: `diag[i]`, and `off[i]` couples i and i+1
/// (`off.len() == diag.len() - 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

/// Householder reduction `T = Q^T A Q`.  `w` is overwritten with `Q^T w`.
/// `a` is destroyed.
pub fn tridiagonalize(a: &mut SymMatrix, w: &mut [f64]) -> Tridiagonal {
    let n = a.n;
    assert_eq!(w.len(), n);
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut u = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let m = n - k - 1; // size of trailing block
        let base = k + 1;
        for i in 0..m {
            u[i] = a.data[(base + i) * n + k];
        }
        let tail: f64 = u[1..m].iter().map(|x| x * x).sum();
        diag[k] = a.data[k * n + k];
        if tail == 0.0 {
            off[k] = u[0];
            continue;
        }
        let x0 = u[0];
        let norm = (x0 * x0 + tail).sqrt();
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        u[0] = x0 - alpha;
        let unorm2 = u[0] * u[0] + tail;
        let tau = 2.0 / unorm2;
        off[k] = alpha;

        // p = tau * A22 u
        for i in 0..m {
            let row = &a.data[(base + i) * n + base..(base + i) * n + base + m];
            p[i] = tau * dot(row, &u[..m]);
        }
        let kk = 0.5 * tau * dot(&p[..m], &u[..m]);
        for i in 0..m {
            p[i] -= kk * u[i];
        }
        // A22 -= u p^T + p u^T
        for i in 0..m {
            let ui = u[i];
            let pi = p[i];
            let row = &mut a.data[(base + i) * n + base..(base + i) * n + base + m];
            for j in 0..m {
                row[j] -= ui * p[j] + pi * u[j];
            }
        }
        // w <- P w on the trailing block
        let s = tau * dot(&u[..m], &w[base..base + m]);
        for i in 0..m {
            w[base + i] -= s * u[i];
        }
    }
    if n >= 2 {
        diag[n - 2] = a.data[(n - 2) * n + n - 2];
        off[n - 2] = a.data[(n - 1) * n + n - 2];
    }
    if n >= 1 {
        diag[n - 1] = a.data[(n - 1) * n + n - 1];
    }
    Tridiagonal { diag, off }
}

const MAX_QL_SWEEPS: usize = 60;

/// Implicit-shift QL on a tridiagonal matrix.  Returns eigenvalues (unsorted,
/// aligned with `y`).  If `y` is given it must hold `w` in the tridiagonal
/// basis and is transformed into the eigenvector projections `Z^T w`.
pub fn tridiagonal_ql(t: &Tridiagonal, mut y: Option<&mut [f64]>) -> Result<Vec<f64>> {
    let n = t.diag.len();
    let mut d = t.diag.clone();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&t.off);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_QL_SWEEPS {
                return Err(Error::EigenNoConvergence { n, seed: 0 });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut early = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(y) = y.as_deref_mut() {
                    let f = y[i + 1];
                    y[i + 1] = s * y[i] + c * f;
                    y[i] = c * y[i] - s * f;
                }
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}

/// Number of eigenvalues of `t` strictly greater than `x` (Sturm sequence).
pub fn count_above(t: &Tridiagonal, x: f64) -> usize {
    let n = t.diag.len();
    let mut below = 0usize;
    let mut q = t.diag[0] - x;
    if q < 0.0 {
        below += 1;
    }
    for i in 1..n {
        let b2 = t.off[i - 1] * t.off[i - 1];
        let denom = if q == 0.0 { f64::EPSILON * (b2.sqrt() + 1e-300) } else { q };
        q = t.diag[i] - x - b2 / denom;
        if q < 0.0 {
            below += 1;
        }
    }
    n - below
}

/// Gershgorin interval containing the spectrum.
pub fn gershgorin(t: &Tridiagonal) -> (f64, f64) {
    let n = t.diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { t.off[i - 1].abs() } else { 0.0 } + if i + 1 < n { t.off[i].abs() } else { 0.0 };
        lo = lo.min(t.diag[i] - r);
        hi = hi.max(t.diag[i] + r);
    }
    (lo, hi)
}

/// The `k` largest eigenvalues, descending, by bisection on Sturm counts.
pub fn top_eigenvalues(t: &Tridiagonal, k: usize) -> Vec<f64> {
    let n = t.diag.len();
    let k = k.min(n);
    let (lo0, hi0) = gershgorin(t);
    let scale = lo0.abs().max(hi0.abs()).max(1e-300);
    let mut out = Vec::with_capacity(k);
    let mut upper = hi0;
    for j in 1..=k {
        // find x with count_above(x) < j <= count_above(x - 0)
        let mut lo = lo0;
        let mut hi = upper;
        while hi - lo > 4.0 * f64::EPSILON * scale {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if count_above(t, mid) >= j {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        out.push(x);
        upper = hi;
    }
    out
}

/// Solve (z I - A) x = b with conjugate gradients; requires z above the
/// spectrum.  Returns x and the number of iterations.
pub fn solve_shifted_cg(a: &SymMatrix, z: f64, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        a.matvec(&p, &mut ap);
        for i in 0..n {
            ap[i] = z * p[i] - ap[i];
        }
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::InvalidParam(format!("shift {z} is not above the spectrum")));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= rel_tol * bnorm {
            return Ok((x, it + 1));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Quadrature(format!("conjugate gradients stalled after {max_iter} iterations")))
}

/// Full pipeline: eigenvalues (descending) and projections of `w`.
pub fn eigen_with_projections(a: &SymMatrix, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut work = a.clone();
    let mut y = w.to_vec();
    let t = tridiagonalize(&mut work, &mut y);
    let vals = tridiagonal_ql(&t, Some(&mut y))?;
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]).then(i.cmp(&j)));
    Ok((idx.iter().map(|&i| vals[i]).collect(), idx.iter().map(|&i| y[i]).collect()))
}
