//! Adaptive Gauss–Kronrod quadrature and a few scalar search helpers.
//!
//! The integrator takes optional interior breakpoints so callers can split an
//! integrand at known kinks (roots of `φ` for `|φ|`, for instance) and keep
//! every panel smooth.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

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
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// 7-point Gauss weights for nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_subdivisions: 2000,
        }
    }
}

/// One 15-point Kronrod panel. Returns (kronrod, |kronrod - gauss|).
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (i, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(centre - dx) + f(centre + dx);
        kronrod += w * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]`, starting from panels split at `breakpoints`
/// (points outside `(a, b)` are ignored) and bisecting the worst panel until
/// the summed error estimate meets the tolerance.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: QuadOptions,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            abs_error: 0.0,
            evaluations: 0,
        });
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };

    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&x| x > lo && x < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(lo);
    edges.extend(cuts);
    edges.push(hi);

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in edges.windows(2) {
        let (value, error) = gk15(&f, w[0], w[1]);
        evaluations += 15;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }

    let mut subdivisions = heap.len();
    loop {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature {
                a,
                b,
                value: total,
                error,
                subdivisions,
            });
        }
        if error <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok(QuadResult {
                value: sign * total,
                abs_error: error,
                evaluations,
            });
        }
        let worst = heap.pop().expect("at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if subdivisions >= opts.max_subdivisions || mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            return Err(Error::Quadrature {
                a,
                b,
                value: sign * total,
                error,
                subdivisions,
            });
        }
        for (l, r) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gk15(&f, l, r);
            evaluations += 15;
            heap.push(Panel {
                a: l,
                b: r,
                value,
                error,
            });
        }
        subdivisions += 1;
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a minimum of `f` on `[a, b]`. Returns the best
/// point seen (including the bracket ends).
pub fn golden_min<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, x_tol: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut best = (lo, f(lo));
    let fh = f(hi);
    if fh < best.1 {
        best = (hi, fh);
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if hi - lo <= x_tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
        if f1 < best.1 {
            best = (x1, f1);
        }
        if f2 < best.1 {
            best = (x2, f2);
        }
    }
    best
}

/// Bisection for a sign change of `f` on `[a, b]`; `f(a)` and `f(b)` must
/// differ in sign (or one must be zero).
pub fn bisect_root<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, x_tol: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    let mut flo = f(lo);
    if flo == 0.0 {
        return lo;
    }
    if f(hi) == 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= x_tol || mid == lo || mid == hi {
            return mid;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, &[], QuadOptions::default()).unwrap();
        assert!((r.value - (64.0 / 6.0 - 8.0)).abs() < 1e-13);
    }

    #[test]
    fn kink_with_breakpoint() {
        let f = |x: f64| (x.sin() - 0.3).abs();
        let roots = [0.3f64.asin(), PI - 0.3f64.asin()];
        let r = integrate(f, 0.0, 2.0 * PI, &roots, QuadOptions::default()).unwrap();
        let b = 0.3f64;
        let exact = 4.0 * (b * b.asin() + (1.0 - b * b).sqrt());
        assert!((r.value - exact).abs() < 1e-12, "{}", r.value - exact);
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let r = integrate(|x| x, 1.0, 0.0, &[], QuadOptions::default()).unwrap();
        assert!((r.value + 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let opts = QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 0.0,
            max_subdivisions: 3,
        };
        let err = integrate(|x: f64| 1.0 / x.abs().sqrt().max(1e-300), -1.0, 1.0, &[], opts);
        assert!(matches!(err, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn golden_finds_parabola_vertex() {
        let (x, fx) = golden_min(|x| (x - 0.7).powi(2) + 1.0, -2.0, 3.0, 1e-10);
        assert!((x - 0.7).abs() < 1e-8);
        assert!((fx - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bisect_cosine() {
        let x = bisect_root(f64::cos, 0.0, 3.0, 1e-14);
        assert!((x - PI / 2.0).abs() < 1e-13);
    }
}
