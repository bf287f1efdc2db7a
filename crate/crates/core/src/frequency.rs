//! Transfer functions and the Popov-type frequency-domain inequality.
//!
//! The inequality is checked numerically on `[0, Ω₀]` (adaptive grid plus
//! golden-section polish of the lowest local minima) and analytically beyond
//! `Ω₀`, where the `ω²` term is shown to dominate a bound on `|K(iω)|`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::Multipliers;
use crate::error::{domain, Error, Result};
use crate::model::{ExpSum, ExpTerm, PllSpec, SystemSpec};
use crate::quadrature::golden_min;

const MAX_DOUBLINGS: u32 = 60;

/// Closed form of the PLL filter, kept for cross-checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PllForm {
    pub t_filter: f64,
    pub s: f64,
    pub delay: f64,
}

/// `K(p) = −ρe^{−hp} + ∫₀^∞ γ(t)e^{−pt}dt` for an exponential-sum kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFunction {
    pub rho: f64,
    pub delay: f64,
    pub kernel: ExpSum,
    pub closed_form: Option<PllForm>,
}

impl TransferFunction {
    pub fn new(rho: f64, delay: f64, kernel: ExpSum) -> Self {
        Self {
            rho,
            delay,
            kernel,
            closed_form: None,
        }
    }

    pub fn from_spec(spec: &SystemSpec) -> Self {
        Self::new(spec.rho, spec.delay, spec.kernel.clone())
    }

    pub fn from_pll(pll: &PllSpec) -> Result<Self> {
        let kernel = ExpSum::new(vec![ExpTerm::new(1.0 - pll.s, 1.0 / pll.t_filter, pll.delay)?]);
        Ok(Self {
            rho: -pll.s * pll.t_filter,
            delay: pll.delay,
            kernel,
            closed_form: Some(PllForm {
                t_filter: pll.t_filter,
                s: pll.s,
                delay: pll.delay,
            }),
        })
    }

    pub fn eval(&self, p: Complex64) -> Complex64 {
        -self.rho * (-p * self.delay).exp() + self.kernel.laplace(p)
    }

    /// `T(Tsp + 1)/(Tp + 1) e^{−ph}` when built from a PLL.
    pub fn eval_closed(&self, p: Complex64) -> Option<Complex64> {
        self.closed_form.map(|f| {
            let t = f.t_filter;
            t * (t * f.s * p + 1.0) / (t * p + 1.0) * (-p * f.delay).exp()
        })
    }

    /// `|ρ| + Σ|c|/√(rate² + ω²)`, an upper bound on `|K(iω)|` that is
    /// non-increasing in `ω ≥ 0`.
    pub fn magnitude_bound(&self, omega: f64) -> f64 {
        self.rho.abs()
            + self
                .kernel
                .terms
                .iter()
                .map(|e| e.coefficient.abs() / e.rate.hypot(omega))
                .sum::<f64>()
    }
}

pub fn eval_k(tf: &TransferFunction, omega: f64) -> Complex64 {
    tf.eval(Complex64::new(0.0, omega))
}

/// `K_μ(iω) = K(iω)/(1 + iμω)`.
pub fn eval_k_mu(tf: &TransferFunction, omega: f64, mu: f64) -> Complex64 {
    eval_k(tf, omega) / Complex64::new(1.0, mu * omega)
}

/// `Re{ϑK − τ(K + iω/α₁)*(K + iω/α₂)} − ε|K|² − δ` for a given `K = K(iω)`.
pub fn popov_from_k(k: Complex64, m: &Multipliers, alpha1: f64, alpha2: f64, omega: f64) -> f64 {
    let iw = Complex64::new(0.0, omega);
    let left = (k + iw / alpha1).conj();
    let right = k + iw / alpha2;
    (m.theta * k - m.tau * left * right).re - m.eps * k.norm_sqr() - m.delta
}

pub fn popov_value(tf: &TransferFunction, m: &Multipliers, alpha1: f64, alpha2: f64, omega: f64) -> f64 {
    popov_from_k(eval_k(tf, omega), m, alpha1, alpha2, omega)
}

/// `Π(ω) = τω²/æ² + ϑRe K − (ε+τ)|K|² − δ`, the form the inequality takes when
/// `|α₁| = α₂ = æ`.
pub fn popov_symmetric(k: Complex64, m: &Multipliers, ae: f64, omega: f64) -> f64 {
    m.tau * omega * omega / (ae * ae) + m.theta * k.re - (m.eps + m.tau) * k.norm_sqr() - m.delta
}

/// `Π_μ(ω)`: the symmetric form for `K_μ` with `δ` replaced by `δ̄`.
pub fn popov_mu(tf: &TransferFunction, m: &Multipliers, ae: f64, delta_bar: f64, omega: f64, mu: f64) -> f64 {
    let k = eval_k_mu(tf, omega, mu);
    popov_symmetric(k, &m.with_delta(delta_bar), ae, omega)
}

/// Sampling parameters for the check on `[0, Ω₀]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Initial points, half linearly and half log-spaced.
    pub base_points: usize,
    /// Decades covered by the log-spaced half, ending at `Ω₀`.
    pub log_decades: f64,
    pub max_depth: usize,
    /// Number of lowest local minima polished by golden-section search.
    pub polish: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            base_points: 2048,
            log_decades: 6.0,
            max_depth: 6,
            polish: 16,
        }
    }
}

/// Record of the analytic argument for `ω > Ω₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRecord {
    /// `Ω`, the starting frequency; `Ω₀ = 2ⁿΩ`.
    pub base: f64,
    pub doublings: u32,
    pub cutoff: f64,
    /// Bound on `|K(iω)|` valid for all `ω ≥ Ω₀`.
    pub magnitude_bound: f64,
    /// Value at `Ω₀` of the quadratic minorant used beyond `Ω₀`.
    pub margin: f64,
    /// Vertex of that quadratic; `Ω₀` must lie to its right.
    pub vertex: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyCheckResult {
    pub certified: bool,
    pub min_value: f64,
    pub argmin: f64,
    pub grid: GridSpec,
    pub evaluations: usize,
    pub tail: TailRecord,
}

/// Minimum of a sampled function on `[0, upper]`.
#[derive(Debug, Clone, Copy)]
struct Scan {
    min_value: f64,
    argmin: f64,
    evaluations: usize,
}

fn base_grid(upper: f64, grid: &GridSpec) -> Vec<f64> {
    let half = (grid.base_points / 2).max(2);
    let mut xs: Vec<f64> = (0..=half).map(|i| upper * i as f64 / half as f64).collect();
    xs.extend((0..half).map(|j| upper * 10f64.powf(grid.log_decades * (j as f64 / half as f64 - 1.0))));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Minimises `f` on `[0, upper]`; `f` returns `(value, scale)` where `scale`
/// is the magnitude of the terms that make up the value.
fn minimize_on<F>(f: &F, upper: f64, grid: &GridSpec) -> Scan
where
    F: Fn(f64) -> (f64, f64) + Sync,
{
    let mut pts: Vec<(f64, f64, f64)> = base_grid(upper, grid)
        .into_par_iter()
        .map(|x| {
            let (v, s) = f(x);
            (x, v, s)
        })
        .collect();
    let mut evaluations = pts.len();

    for _ in 0..grid.max_depth {
        let n = pts.len();
        let mut flagged = vec![false; n.saturating_sub(1)];
        for i in 0..n - 1 {
            let (a, b) = (pts[i].1, pts[i + 1].1);
            if (a < 0.0) != (b < 0.0) {
                flagged[i] = true;
            }
        }
        for i in 0..n {
            let left = i == 0 || pts[i].1 <= pts[i - 1].1;
            let right = i == n - 1 || pts[i].1 <= pts[i + 1].1;
            if left && right && pts[i].1 < 1e-3 * pts[i].2 {
                if i > 0 {
                    flagged[i - 1] = true;
                }
                if i < n - 1 {
                    flagged[i] = true;
                }
            }
        }
        let new_x: Vec<f64> = flagged
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .flat_map(|(i, _)| {
                let (a, b) = (pts[i].0, pts[i + 1].0);
                (1..4).map(move |j| a + (b - a) * j as f64 / 4.0)
            })
            .collect();
        if new_x.is_empty() {
            break;
        }
        evaluations += new_x.len();
        let fresh: Vec<(f64, f64, f64)> = new_x
            .into_par_iter()
            .map(|x| {
                let (v, s) = f(x);
                (x, v, s)
            })
            .collect();
        pts.extend(fresh);
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
    }

    let n = pts.len();
    let mut minima: Vec<usize> = (0..n)
        .filter(|&i| (i == 0 || pts[i].1 <= pts[i - 1].1) && (i == n - 1 || pts[i].1 <= pts[i + 1].1))
        .collect();
    minima.sort_by(|&a, &b| pts[a].1.total_cmp(&pts[b].1).then(a.cmp(&b)));
    minima.truncate(grid.polish);

    let polished: Vec<(f64, f64)> = minima
        .par_iter()
        .map(|&i| {
            let a = pts[i.saturating_sub(1)].0;
            let b = pts[(i + 1).min(n - 1)].0;
            if b > a {
                golden_min(|x| f(x).0, a, b, 1e-12 * b.max(1.0))
            } else {
                (pts[i].0, pts[i].1)
            }
        })
        .collect();
    evaluations += polished.len() * 80;

    let mut best = (pts[0].0, pts[0].1);
    for p in pts.iter().map(|p| (p.0, p.1)).chain(polished) {
        if p.1 < best.1 || (p.1 == best.1 && p.0 < best.0) {
            best = p;
        }
    }
    Scan {
        min_value: best.1,
        argmin: best.0,
        evaluations,
    }
}

fn check_multipliers(m: &Multipliers) -> Result<()> {
    let ok = [m.theta, m.eps, m.delta, m.tau].iter().all(|v| *v > 0.0 && v.is_finite());
    if !ok {
        return Err(domain(format!(
            "multipliers must be positive: theta={}, eps={}, delta={}, tau={}",
            m.theta, m.eps, m.delta, m.tau
        )));
    }
    Ok(())
}

fn check_slopes(alpha1: f64, alpha2: f64) -> Result<()> {
    if !(alpha1 < 0.0 && alpha2 > 0.0) {
        return Err(domain(format!("slope bounds must satisfy alpha1 < 0 < alpha2, got {alpha1}, {alpha2}")));
    }
    Ok(())
}

/// Finds `Ω₀ = 2ⁿ·base` (`n ≥ 1`) beyond which the quadratic
/// `a ω² − b(Ω₀) ω − c(Ω₀)` is non-negative and increasing, where the
/// coefficients come from the magnitude bound evaluated at `Ω₀`.
fn tail_search<G>(base: f64, coefficients: G) -> TailRecord
where
    G: Fn(f64) -> (f64, f64, f64, f64),
{
    let mut last = None;
    for n in 1..=MAX_DOUBLINGS {
        let w0 = base * 2f64.powi(n as i32);
        let (a, b, c, bound) = coefficients(w0);
        let margin = a * w0 * w0 - b * w0 - c;
        let vertex = if a > 0.0 { b / (2.0 * a) } else { f64::INFINITY };
        let rec = TailRecord {
            base,
            doublings: n,
            cutoff: w0,
            magnitude_bound: bound,
            margin,
            vertex,
            holds: margin >= 0.0 && w0 >= vertex,
        };
        if rec.holds {
            return rec;
        }
        last = Some(rec);
    }
    last.expect("at least one doubling")
}

/// Tail bound for the general inequality: for `ω ≥ Ω₀` the left side is at
/// least `τω²/(|α₁|α₂) − τ|α₁⁻¹+α₂⁻¹|ωB − ϑB − (ε+τ)B² − δ` with `B = B(Ω₀)`.
fn fdi_tail(tf: &TransferFunction, m: &Multipliers, alpha1: f64, alpha2: f64) -> TailRecord {
    let quad = 1.0 / (alpha1.abs() * alpha2);
    let cross = (1.0 / alpha1 + 1.0 / alpha2).abs();
    let base = (m.delta * alpha1.abs() * alpha2 / m.tau).sqrt();
    tail_search(base, |w0| {
        let b = tf.magnitude_bound(w0);
        (
            m.tau * quad,
            m.tau * cross * b,
            m.theta * b + (m.eps + m.tau) * b * b + m.delta,
            b,
        )
    })
}

pub(crate) fn popov_with_scale(k: Complex64, m: &Multipliers, alpha1: f64, alpha2: f64, omega: f64) -> (f64, f64) {
    let value = popov_from_k(k, m, alpha1, alpha2, omega);
    let quad = 1.0 / (alpha1.abs() * alpha2);
    let cross = (1.0 / alpha1 + 1.0 / alpha2).abs();
    let kn = k.norm();
    let scale = m.tau * quad * omega * omega
        + m.tau * cross * omega * kn
        + m.theta * kn
        + (m.eps + m.tau) * kn * kn
        + m.delta;
    (value, scale)
}

/// Checks the frequency-domain inequality for all `ω ≥ 0`.
///
/// Never fails on a violated inequality; `certified` is false and the
/// minimiser is reported instead. `certified` requires the sampled minimum
/// to be `≥ 0` exactly and the tail argument to hold.
pub fn verify_fdi(tf: &TransferFunction, m: &Multipliers, alpha1: f64, alpha2: f64) -> Result<FrequencyCheckResult> {
    verify_fdi_with(tf, m, alpha1, alpha2, &GridSpec::default())
}

pub fn verify_fdi_with(
    tf: &TransferFunction,
    m: &Multipliers,
    alpha1: f64,
    alpha2: f64,
    grid: &GridSpec,
) -> Result<FrequencyCheckResult> {
    check_multipliers(m)?;
    check_slopes(alpha1, alpha2)?;
    let tail = fdi_tail(tf, m, alpha1, alpha2);
    let f = |w: f64| popov_with_scale(eval_k(tf, w), m, alpha1, alpha2, w);
    let scan = minimize_on(&f, tail.cutoff, grid);
    Ok(FrequencyCheckResult {
        certified: tail.holds && scan.min_value >= 0.0,
        min_value: scan.min_value,
        argmin: scan.argmin,
        grid: *grid,
        evaluations: scan.evaluations,
        tail,
    })
}

/// Samples `(ω, value)` on `n` evenly spaced points of `[0, omega_max]`.
pub fn frequency_scan(
    tf: &TransferFunction,
    m: &Multipliers,
    alpha1: f64,
    alpha2: f64,
    omega_max: f64,
    n: usize,
) -> Vec<(f64, f64)> {
    let n = n.max(2);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let w = omega_max * i as f64 / (n - 1) as f64;
            (w, popov_value(tf, m, alpha1, alpha2, w))
        })
        .collect()
}

/// The PLL inequality cleared of its `|1 + iTω|²` denominator:
/// `Ω(ω) = Π(ω)(1 + T²ω²)` with `ϑ = 1`, `α₂ = −α₁ = 1`.
pub fn pll_omega(omega: f64, t: f64, s: f64, h: f64, eps: f64, delta: f64, tau: f64) -> f64 {
    let w2 = omega * omega;
    let (sn, cs) = (omega * h).sin_cos();
    tau * t * t * w2 * w2 + w2 * (t.powi(3) * s * cs - t.powi(4) * s * s * (eps + tau) + tau - delta * t * t)
        - t * t * (1.0 - s) * omega * sn
        + t * cs
        - (eps + tau) * t * t
        - delta
}

/// Coefficients `(c₄, c₂, c₀)` of the even polynomial minorant
/// `Ω₀(ω) = c₄ω⁴ + c₂ω² + c₀ ≤ Ω(ω)`.
pub fn pll_minorant_coefficients(t: f64, s: f64, h: f64, eps: f64, delta: f64, tau: f64) -> [f64; 3] {
    [
        tau * t * t - 0.5 * t.powi(3) * s * h * h,
        t.powi(3) * s - t.powi(4) * s * s * (eps + tau) + tau - delta * t * t - 0.5 * t * h * h - (1.0 - s) * t * t * h,
        t - (eps + tau) * t * t - delta,
    ]
}

pub fn pll_omega_minorant(omega: f64, t: f64, s: f64, h: f64, eps: f64, delta: f64, tau: f64) -> f64 {
    let [c4, c2, c0] = pll_minorant_coefficients(t, s, h, eps, delta, tau);
    let w2 = omega * omega;
    (c4 * w2 + c2) * w2 + c0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorantCheck {
    pub coefficients: [f64; 3],
    /// Exact test on the quadratic in `ω²`: `c₄ ≥ 0`, `c₀ ≥ 0`, and either
    /// `c₂ ≥ 0` or `c₂² ≤ 4c₄c₀`.
    pub analytic_nonnegative: bool,
    pub sampled: FrequencyCheckResult,
}

impl MinorantCheck {
    pub fn certified(&self) -> bool {
        self.analytic_nonnegative && self.sampled.certified
    }
}

/// Checks `Ω₀(ω) ≥ 0` for all `ω` both on the grid (with an exact tail past
/// the vertex of the quadratic in `ω²`) and by the discriminant test.
pub fn verify_pll_minorant(t: f64, s: f64, h: f64, eps: f64, delta: f64, tau: f64) -> MinorantCheck {
    let c = pll_minorant_coefficients(t, s, h, eps, delta, tau);
    let [c4, c2, c0] = c;
    let analytic = c4 >= 0.0 && c0 >= 0.0 && (c2 >= 0.0 || c2 * c2 <= 4.0 * c4 * c0);

    // In x = ω² the polynomial is increasing past x = −c₂/(2c₄), so it stays
    // non-negative beyond any cutoff at or past that point where it is
    // non-negative.
    let base = if c4 > 0.0 { (c2.abs() / c4).sqrt().max(1.0) } else { 1.0 };
    let vertex = if c4 > 0.0 { (-c2 / (2.0 * c4)).max(0.0).sqrt() } else { f64::INFINITY };
    let mut tail = None;
    for n in 1..=MAX_DOUBLINGS {
        let w0 = base * 2f64.powi(n as i32);
        let x0 = w0 * w0;
        let rec = TailRecord {
            base,
            doublings: n,
            cutoff: w0,
            magnitude_bound: 0.0,
            margin: (c4 * x0 + c2) * x0 + c0,
            vertex,
            holds: false,
        };
        let rec = TailRecord {
            holds: rec.margin >= 0.0 && w0 >= vertex,
            ..rec
        };
        tail = Some(rec);
        if rec.holds {
            break;
        }
    }
    let tail = tail.expect("at least one doubling");
    let grid = GridSpec::default();
    let f = |w: f64| {
        let w2 = w * w;
        let v = (c4 * w2 + c2) * w2 + c0;
        (v, c4.abs() * w2 * w2 + c2.abs() * w2 + c0.abs())
    };
    let scan = minimize_on(&f, tail.cutoff, &grid);
    MinorantCheck {
        coefficients: c,
        analytic_nonnegative: analytic,
        sampled: FrequencyCheckResult {
            certified: tail.holds && scan.min_value >= 0.0,
            min_value: scan.min_value,
            argmin: scan.argmin,
            grid,
            evaluations: scan.evaluations,
            tail,
        },
    }
}

/// Output of [`mu_threshold`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuThreshold {
    /// `μ̄`; the inequality for `K_μ` holds for every `μ < μ̄`.
    pub mu_bar: f64,
    /// `δ₁ = inf Π̄` over `[0, Ω₀]`.
    pub delta1: f64,
    pub delta1_at: f64,
    /// `L₁ = 2 sup |ϑω Im K(iω)|` over `[0, Ω₀]`.
    pub l1: f64,
    /// `Ω = æ√(δ̄/τ)`.
    pub omega: f64,
    pub tail: TailRecord,
    pub delta_bar: f64,
    pub mu_tilde: f64,
    /// `[δ₁/L₁, √(2δ₁τ/(æ²δ̄)), √(2δ₁τ/(æ²δ̄²)), μ̃]`; `μ̄` is their minimum.
    pub candidates: [f64; 4],
}

/// Computes `μ̄ = min{δ₁/L₁, √(2δ₁τ/(æ²δ̄)), √(2δ₁τ/(æ²δ̄²)), μ̃}`.
///
/// The third entry is what bounds `min_ω μ²ω²(τω²/æ² − δ̄) = −μ²δ̄²æ²/(4τ)`
/// by `δ₁/2`; the second is kept so the result never exceeds either form.
/// Fails with [`Error::NotCertified`] unless `Π̄ > 0` on the grid and the
/// tail bound holds.
pub fn mu_threshold(
    tf: &TransferFunction,
    m: &Multipliers,
    ae: f64,
    delta_bar: f64,
    mu_tilde: f64,
) -> Result<MuThreshold> {
    check_multipliers(m)?;
    if !(ae > 0.0 && ae.is_finite()) {
        return Err(domain(format!("slope bound ae = {ae} must be positive")));
    }
    if !(delta_bar > 0.0 && delta_bar.is_finite()) {
        return Err(domain(format!("delta_bar = {delta_bar} must be positive")));
    }
    if !(mu_tilde > 0.0 && mu_tilde.is_finite()) {
        return Err(domain(format!("mu_tilde = {mu_tilde} must be positive")));
    }
    let strict = m.with_delta(delta_bar);
    let inv_ae2 = 1.0 / (ae * ae);
    let omega = ae * (delta_bar / m.tau).sqrt();

    // For ω > Ω the μ²ω²(τω²/æ² − δ̄) term is non-negative; the rest is at
    // least τω²/æ² − ϑμ̃ωB − ϑB − (ε+τ)B² − δ̄.
    let tail = tail_search(omega, |w0| {
        let b = tf.magnitude_bound(w0);
        (
            m.tau * inv_ae2,
            m.theta * mu_tilde * b,
            m.theta * b + (m.eps + m.tau) * b * b + delta_bar,
            b,
        )
    });
    if !tail.holds {
        return Err(Error::NotCertified(format!(
            "no tail cutoff found up to {} for delta_bar = {delta_bar}",
            tail.cutoff
        )));
    }
    let grid = GridSpec::default();
    let pi_bar = |w: f64| {
        let k = eval_k(tf, w);
        popov_with_scale(k, &strict, -ae, ae, w)
    };
    let scan = minimize_on(&pi_bar, tail.cutoff, &grid);
    if !(scan.min_value > 0.0) {
        return Err(Error::NotCertified(format!(
            "strict inequality fails: min {} at omega = {}",
            scan.min_value, scan.argmin
        )));
    }
    let neg_im = |w: f64| {
        let k = eval_k(tf, w);
        let v = (m.theta * w * k.im).abs();
        (-v, v.max(f64::MIN_POSITIVE))
    };
    let sup = minimize_on(&neg_im, tail.cutoff, &grid);
    let delta1 = scan.min_value;
    let l1 = -2.0 * sup.min_value;

    let c = [
        if l1 > 0.0 { delta1 / l1 } else { f64::INFINITY },
        (2.0 * delta1 * m.tau * inv_ae2 / delta_bar).sqrt(),
        (2.0 * delta1 * m.tau * inv_ae2 / (delta_bar * delta_bar)).sqrt(),
        mu_tilde,
    ];
    let mu_bar = c.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MuThreshold {
        mu_bar,
        delta1,
        delta1_at: scan.argmin,
        l1,
        omega,
        tail,
        delta_bar,
        mu_tilde,
        candidates: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::History;

    fn pll_tf(t: f64, s: f64, h: f64) -> TransferFunction {
        let pll = PllSpec::new(t, s, 0.5, h, 0.0, History::constant(0.0)).unwrap();
        TransferFunction::from_pll(&pll).unwrap()
    }

    fn mult(theta: f64, eps: f64, delta: f64, tau: f64) -> Multipliers {
        Multipliers {
            theta,
            eps,
            delta,
            tau,
            a: 1.0,
        }
    }

    #[test]
    fn pll_k_at_zero_is_t() {
        let tf = pll_tf(1.0, 0.4, 0.0);
        assert!((eval_k(&tf, 0.0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sum_form_matches_closed_form() {
        let tf = pll_tf(0.1, 0.4, 0.1);
        for w in [0.0, 0.3, 1.0, 7.5, 40.0, 1e3] {
            let p = Complex64::new(0.0, w);
            let closed = tf.eval_closed(p).unwrap();
            assert!((tf.eval(p) - closed).norm() < 1e-12, "omega = {w}");
        }
    }

    #[test]
    fn empty_system_is_zero() {
        let tf = TransferFunction::new(0.0, 0.0, ExpSum::empty());
        assert_eq!(eval_k(&tf, 3.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn k_mu_examples() {
        let tf = TransferFunction::new(-1.0, 0.0, ExpSum::empty());
        let k = eval_k_mu(&tf, 1.0, 1.0);
        assert!((k - Complex64::new(0.5, -0.5)).norm() < 1e-15);
        let tf = pll_tf(0.1, 0.4, 0.1);
        assert_eq!(eval_k_mu(&tf, 0.0, 0.3), eval_k(&tf, 0.0));
    }

    #[test]
    fn popov_with_zero_k() {
        let tf = TransferFunction::new(0.0, 0.0, ExpSum::empty());
        let m = mult(1.0, 0.3, 0.2, 0.7);
        for w in [0.0, 0.5, 2.0] {
            let v = popov_value(&tf, &m, -1.0, 1.0, w);
            assert!((v - (0.7 * w * w - 0.2)).abs() < 1e-15);
        }
    }

    #[test]
    fn popov_at_zero_for_pll() {
        let (t, eps, delta, tau) = (0.1, 4.99, 0.0499, 0.00128);
        let tf = pll_tf(t, 0.4, 0.1);
        let m = mult(1.0, eps, delta, tau);
        let v = popov_value(&tf, &m, -1.0, 1.0, 0.0);
        assert!((v - (t - (eps + tau) * t * t - delta)).abs() < 1e-15);
    }

    #[test]
    fn large_delta_fails_at_zero() {
        let tf = pll_tf(0.1, 0.4, 0.1);
        let m = mult(1.0, 1.0, 1.0, 0.01);
        let r = verify_fdi(&tf, &m, -1.0, 1.0).unwrap();
        assert!(!r.certified);
        assert_eq!(r.argmin, 0.0);
        assert!(r.min_value < 0.0);
    }

    #[test]
    fn omega_is_pi_times_denominator() {
        let (t, s, h, eps, delta, tau) = (0.1, 0.4, 0.1, 4.0, 0.04, 0.001);
        let tf = pll_tf(t, s, h);
        let m = mult(1.0, eps, delta, tau);
        for i in 0..200 {
            let w = i as f64 * 0.37;
            let pi = popov_value(&tf, &m, -1.0, 1.0, w);
            let om = pll_omega(w, t, s, h, eps, delta, tau);
            let scale = 1.0 + tau * t * t * w.powi(4);
            assert!((om - pi * (1.0 + t * t * w * w)).abs() < 1e-13 * scale, "omega = {w}");
        }
    }

    #[test]
    fn minorant_without_delay_shares_quartic_coefficient() {
        let c = pll_minorant_coefficients(0.3, 0.4, 0.0, 1.0, 0.1, 0.02);
        assert_eq!(c[0], 0.02 * 0.09);
    }

    #[test]
    fn tail_cutoff_dominates() {
        let tf = pll_tf(0.1, 0.4, 0.1);
        let m = mult(1.0, 4.99, 0.0499, 0.00128);
        let r = verify_fdi(&tf, &m, -1.0, 1.0).unwrap();
        assert!(r.tail.holds);
        for i in 0..2000 {
            let w = r.tail.cutoff * (1.0 + i as f64 * 0.05);
            assert!(popov_value(&tf, &m, -1.0, 1.0, w) > 0.0);
        }
    }

    #[test]
    fn mu_threshold_is_capped_by_mu_tilde() {
        let tf = pll_tf(0.1, 0.4, 0.1);
        let m = mult(1.0, 4.99, 0.0499, 0.00128);
        let r = mu_threshold(&tf, &m, 1.0, 0.025, 1e-9).unwrap();
        assert_eq!(r.mu_bar, 1e-9);
        assert!(r.delta1 > 0.0 && r.l1 > 0.0);
    }

    #[test]
    fn mu_threshold_rejects_non_strict() {
        let tf = pll_tf(0.1, 0.4, 0.1);
        let m = mult(1.0, 1.0, 1.0, 0.01);
        assert!(matches!(mu_threshold(&tf, &m, 1.0, 0.9, 1.0), Err(Error::NotCertified(_))));
    }
}
