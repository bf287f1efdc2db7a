use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{domain, Result};
use crate::quadrature::{bisect_root, golden_min, integrate, QuadOptions};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const SLOPE_GRID: usize = 4096;

#[derive(Clone)]
enum Shape {
    Sine { beta: f64 },
    Custom { label: String, f: ScalarFn, df: ScalarFn },
}

/// A `Δ`-periodic C¹ nonlinearity together with the constants every bound
/// needs: slope bounds `α₁ < 0 < α₂`, `m = sup|φ|`, and `∫₀^Δ φ`.
#[derive(Clone)]
pub struct PeriodicNonlinearity {
    shape: Shape,
    period: f64,
    alpha1: f64,
    alpha2: f64,
    alpha1_at: f64,
    alpha2_at: f64,
    sup_abs: f64,
    mean_integral: f64,
    roots: Vec<f64>,
}

impl fmt::Debug for PeriodicNonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicNonlinearity")
            .field("kind", &self.label())
            .field("period", &self.period)
            .field("alpha1", &self.alpha1)
            .field("alpha2", &self.alpha2)
            .field("sup_abs", &self.sup_abs)
            .field("mean_integral", &self.mean_integral)
            .field("roots", &self.roots)
            .finish()
    }
}

/// `φ(σ) = sin σ − β`.
///
/// `β = 0` is accepted: it is the boundary case `∫φ = 0` of the sign
/// assumption on the mean.
pub fn sine_nonlinearity(beta: f64) -> Result<PeriodicNonlinearity> {
    if !(0.0..=1.0).contains(&beta) || beta.is_nan() {
        return Err(domain(format!("detuning beta = {beta} outside [0, 1]")));
    }
    let a = beta.asin();
    let roots = if beta < 1.0 { vec![a, PI - a] } else { vec![PI / 2.0] };
    Ok(PeriodicNonlinearity {
        shape: Shape::Sine { beta },
        period: 2.0 * PI,
        alpha1: -1.0,
        alpha2: 1.0,
        alpha1_at: PI,
        alpha2_at: 0.0,
        sup_abs: 1.0 + beta,
        mean_integral: -2.0 * PI * beta,
        roots,
    })
}

impl PeriodicNonlinearity {
    /// Builds a nonlinearity from user-supplied `φ` and `φ'`. Slope bounds and
    /// `sup|φ|` come from a 4096-point grid over one period refined by
    /// golden-section search; roots from sign changes refined by bisection.
    pub fn custom(label: impl Into<String>, period: f64, f: ScalarFn, df: ScalarFn) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(domain(format!("period {period} must be positive and finite")));
        }
        let h = period / SLOPE_GRID as f64;
        let grid: Vec<f64> = (0..=SLOPE_GRID).map(|i| i as f64 * h).collect();

        for &x in grid.iter().step_by(64) {
            let (a, b) = (f(x), f(x + period));
            if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(domain(format!(
                    "phi is not {period}-periodic: phi({x}) = {a}, phi({x} + period) = {b}"
                )));
            }
        }

        let (alpha1_at, alpha1) = refine_extremum(&grid, h, |x| df(x));
        let (alpha2_at, neg_alpha2) = refine_extremum(&grid, h, |x| -df(x));
        let alpha2 = -neg_alpha2;
        if !(alpha1 < 0.0 && alpha2 > 0.0) {
            return Err(domain(format!(
                "slope bounds must satisfy alpha1 < 0 < alpha2, got {alpha1}, {alpha2}"
            )));
        }
        let (_, neg_sup) = refine_extremum(&grid, h, |x| -f(x).abs());
        let sup_abs = -neg_sup;

        let mut roots = Vec::new();
        for w in grid.windows(2) {
            let (fa, fb) = (f(w[0]), f(w[1]));
            if fa == 0.0 {
                roots.push(w[0]);
            } else if fa * fb < 0.0 {
                roots.push(bisect_root(|x| f(x), w[0], w[1], 1e-13));
            }
        }
        roots.retain(|&r| r < period);
        roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        let mean_integral = integrate(|x| f(x), 0.0, period, &roots, QuadOptions::default())?.value;
        if mean_integral > 1e-10 * sup_abs.max(1.0) * period {
            return Err(domain(format!(
                "mean integral of phi over one period must be <= 0, got {mean_integral}"
            )));
        }

        Ok(Self {
            shape: Shape::Custom {
                label: label.into(),
                f,
                df,
            },
            period,
            alpha1,
            alpha2,
            alpha1_at: alpha1_at.rem_euclid(period),
            alpha2_at: alpha2_at.rem_euclid(period),
            sup_abs,
            mean_integral,
            roots,
        })
    }

    pub fn eval(&self, sigma: f64) -> f64 {
        match &self.shape {
            Shape::Sine { beta } => sigma.sin() - beta,
            Shape::Custom { f, .. } => f(sigma),
        }
    }

    pub fn deriv(&self, sigma: f64) -> f64 {
        match &self.shape {
            Shape::Sine { .. } => sigma.cos(),
            Shape::Custom { df, .. } => df(sigma),
        }
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    /// `m = sup |φ|`.
    pub fn sup_abs(&self) -> f64 {
        self.sup_abs
    }

    pub fn mean_integral(&self) -> f64 {
        self.mean_integral
    }

    /// Roots of `φ` in `[0, Δ)`, ascending.
    pub fn roots(&self) -> &[f64] {
        &self.roots
    }

    pub fn beta(&self) -> Option<f64> {
        match self.shape {
            Shape::Sine { beta } => Some(beta),
            Shape::Custom { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match &self.shape {
            Shape::Sine { beta } => format!("sin(sigma) - {beta}"),
            Shape::Custom { label, .. } => label.clone(),
        }
    }

    /// Points in `[0, Δ)` where `|φ|` or `Φ` may have a kink: the roots of `φ`
    /// and the points where `φ'` reaches `α₁` or `α₂`.
    pub fn kinks(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.roots.clone();
        k.push(self.alpha1_at);
        k.push(self.alpha2_at);
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// `|α₁| = α₂` up to relative 1e-9 (exact for the sine).
    pub fn has_symmetric_slopes(&self) -> bool {
        (self.alpha1.abs() - self.alpha2).abs() <= 1e-9 * self.alpha2
    }

    /// `æ` for the symmetric case; the larger magnitude when the two differ
    /// by rounding only.
    pub fn symmetric_slope(&self) -> f64 {
        self.alpha1.abs().max(self.alpha2)
    }
}

fn refine_extremum<F: Fn(f64) -> f64>(grid: &[f64], h: f64, f: F) -> (f64, f64) {
    let (i, _) = grid
        .iter()
        .enumerate()
        .map(|(i, &x)| (i, f(x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    let c = grid[i];
    golden_min(&f, c - h, c + h, 1e-13 * h.max(1.0))
}
