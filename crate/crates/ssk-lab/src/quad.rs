//! Adaptive Gauss–Kronrod (7/15) quadrature for real- and complex-valued
//! integrands, plus the bookkeeping needed to reuse accepted panels as a fixed
//! rule for further integrands on the same contour.

use num_complex::Complex64;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Values that can be integrated: reals and complex numbers.
pub trait QuadValue:
    Copy + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + std::ops::Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn abs(self) -> f64;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn abs(self) -> f64 {
        self.norm()
    }
}

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug)]
pub struct KahanSum<T: QuadValue> {
    sum: T,
    comp: T,
}

impl<T: QuadValue> Default for KahanSum<T> {
    fn default() -> Self {
        KahanSum { sum: T::zero(), comp: T::zero() }
    }
}

impl KahanSum<f64> {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl KahanSum<Complex64> {
    pub fn add(&mut self, x: Complex64) {
        let mut re = KahanSum { sum: self.sum.re, comp: self.comp.re };
        let mut im = KahanSum { sum: self.sum.im, comp: self.comp.im };
        re.add(x.re);
        im.add(x.im);
        self.sum = Complex64::new(re.sum, im.sum);
        self.comp = Complex64::new(re.comp, im.comp);
    }
    pub fn value(&self) -> Complex64 {
        self.sum + self.comp
    }
}

pub fn kahan_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = KahanSum::<f64>::default();
    for x in xs {
        k.add(x);
    }
    k.value()
}

/// One G7K15 panel: (kronrod estimate, |kronrod - gauss|).
pub fn gk15<T: QuadValue>(f: &mut impl FnMut(f64) -> T, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        let s = f1 + f2;
        k = k + s * WGK[j];
        if j % 2 == 1 {
            g = g + s * WG[j / 2];
        }
    }
    let k = k * h;
    let g = g * h;
    (k, (k - g).abs())
}

/// Nodes and weights of the 15-point Kronrod rule mapped to [a, b].
pub fn gk15_nodes(a: f64, b: f64) -> [(f64, f64); 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 15];
    for j in 0..7 {
        out[2 * j] = (c - h * XGK[j], h * WGK[j]);
        out[2 * j + 1] = (c + h * XGK[j], h * WGK[j]);
    }
    out[14] = (c, h * WGK[7]);
    out
}

#[derive(Debug, Clone)]
struct Panel<T> {
    a: f64,
    b: f64,
    val: T,
    err: f64,
}

impl<T> PartialEq for Panel<T> {
    fn eq(&self, o: &Self) -> bool {
        self.err == o.err
    }
}
impl<T> Eq for Panel<T> {}
impl<T> PartialOrd for Panel<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<T> Ord for Panel<T> {
    fn cmp(&self, o: &Self) -> Ordering {
        self.err.total_cmp(&o.err)
    }
}

#[derive(Debug, Clone)]
pub struct QuadOutcome<T> {
    pub value: T,
    pub error: f64,
    pub panels: Vec<(f64, f64)>,
    pub evaluations: usize,
    pub converged: bool,
}

/// Globally adaptive integration starting from the given breakpoints.
/// Stops when the summed error estimate is below `max(abs_tol, rel_tol*|I|)`
/// or when `max_panels` is reached.
pub fn integrate_adaptive<T: QuadValue>(
    f: impl FnMut(f64) -> T,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> QuadOutcome<T> {
    integrate_adaptive_bounded(f, breaks, abs_tol, rel_tol, max_panels, 0.0)
}

/// As [`integrate_adaptive`], but never bisects a panel narrower than
/// `2·min_width` (the outcome is then reported as not converged).
pub fn integrate_adaptive_bounded<T: QuadValue>(
    mut f: impl FnMut(f64) -> T,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
    min_width: f64,
) -> QuadOutcome<T> {
    let mut heap = BinaryHeap::new();
    let mut evals = 0usize;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (val, err) = gk15(&mut f, w[0], w[1]);
            evals += 15;
            heap.push(Panel { a: w[0], b: w[1], val, err });
        }
    }
    let mut converged = false;
    loop {
        let mut total = T::zero();
        let mut err = 0.0;
        for p in heap.iter() {
            total = total + p.val;
            err += p.err;
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            converged = true;
            break;
        }
        if heap.len() >= max_panels {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) || worst.b - worst.a < 2.0 * min_width {
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evals += 30;
        heap.push(Panel { a: worst.a, b: mid, val: v1, err: e1 });
        heap.push(Panel { a: mid, b: worst.b, val: v2, err: e2 });
    }
    let mut panels: Vec<Panel<T>> = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut value = T::zero();
    let mut err = 0.0;
    // compensated sum in panel order so the result does not depend on heap order
    let mut re = Vec::with_capacity(panels.len());
    for p in &panels {
        re.push(p.val);
        err += p.err;
    }
    value = sum_ordered(&re, value);
    QuadOutcome {
        value,
        error: err,
        panels: panels.iter().map(|p| (p.a, p.b)).collect(),
        evaluations: evals,
        converged,
    }
}

fn sum_ordered<T: QuadValue>(xs: &[T], init: T) -> T {
    // pairwise summation: deterministic and accurate enough for a few
    // thousand panels
    fn rec<T: QuadValue>(xs: &[T]) -> T {
        match xs.len() {
            0 => T::zero(),
            1 => xs[0],
            n => rec(&xs[..n / 2]) + rec(&xs[n / 2..]),
        }
    }
    init + rec(xs)
}

/// Convenience for a finite interval.
pub fn integrate<T: QuadValue>(f: impl FnMut(f64) -> T, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> QuadOutcome<T> {
    integrate_adaptive(f, &[a, b], abs_tol, rel_tol, 2000)
}
