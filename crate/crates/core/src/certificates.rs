//! Auxiliary functions, the matrices `T_j`, and the checks that turn a set of
//! multipliers into a bound on slipped cycles.

use std::fmt::Write as _;

use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundInputs;
use crate::error::{domain, Error, Result};
use crate::format::g12;
use crate::frequency::{mu_threshold, verify_fdi, FrequencyCheckResult, MuThreshold, TransferFunction};
use crate::model::{PeriodicNonlinearity, SystemSpec};
use crate::quadrature::{integrate, QuadOptions};

pub type Matrix3 = [[f64; 3]; 3];

/// The free multipliers `ϑ, ε, δ, τ` and the convex weight `a` (`a₀ = 1 − a`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub theta: f64,
    pub eps: f64,
    pub delta: f64,
    pub tau: f64,
    pub a: f64,
}

impl Multipliers {
    pub fn new(theta: f64, eps: f64, delta: f64, tau: f64, a: f64) -> Result<Self> {
        let m = Self {
            theta,
            eps,
            delta,
            tau,
            a,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta", self.theta),
            ("eps", self.eps),
            ("delta", self.delta),
            ("tau", self.tau),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(domain(format!("{name} = {v} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(domain(format!("weight a = {} outside [0, 1]", self.a)));
        }
        Ok(())
    }

    pub fn a0(&self) -> f64 {
        1.0 - self.a
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..*self }
    }
}

/// Multipliers plus the candidate cycle count `k ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateParams {
    pub multipliers: Multipliers,
    pub k: u32,
}

impl CertificateParams {
    pub fn new(multipliers: Multipliers, k: u32) -> Result<Self> {
        multipliers.validate()?;
        if k == 0 {
            return Err(domain("cycle count k must be at least 1"));
        }
        Ok(Self { multipliers, k })
    }
}

fn radicand(nl: &PeriodicNonlinearity, sigma: f64) -> f64 {
    let d = nl.deriv(sigma);
    (1.0 - d / nl.alpha1()) * (1.0 - d / nl.alpha2())
}

/// `Φ(σ) = √((1 − φ'(σ)/α₁)(1 − φ'(σ)/α₂))`; radicands down to `−1e-12` are
/// treated as rounding and clamped to zero.
pub fn phi_factor(nl: &PeriodicNonlinearity, sigma: f64) -> Result<f64> {
    let r = radicand(nl, sigma);
    if r < -1e-12 {
        return Err(Error::InconsistentSlopes { sigma, radicand: r });
    }
    Ok(r.max(0.0).sqrt())
}

/// `P(ε, τ, σ) = √(ε + τΦ²(σ))`, taking `Φ(σ)` as input.
pub fn p_factor(eps: f64, tau: f64, phi: f64) -> f64 {
    (eps + tau * phi * phi).sqrt()
}

/// Integrals over one period that appear in the denominators of `r_j`,
/// `r₀_j` and `r₁_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicIntegrals {
    pub int_phi: f64,
    pub int_abs: f64,
    /// `∫ Φ|φ|`.
    pub int_abs_phi: f64,
    /// `∫ |φ| P(ε, τ, ·)`.
    pub int_abs_p: f64,
    pub eps: f64,
    pub tau: f64,
}

/// Adaptive quadrature over `[0, Δ]` split at the roots of `φ` and at the
/// points where `φ'` attains `α₁` or `α₂`.
pub fn periodic_integrals(nl: &PeriodicNonlinearity, eps: f64, tau: f64) -> Result<PeriodicIntegrals> {
    if !(eps >= 0.0 && tau >= 0.0) {
        return Err(domain(format!("eps = {eps} and tau = {tau} must be non-negative")));
    }
    for s in (0..256).map(|i| nl.period() * i as f64 / 256.0) {
        phi_factor(nl, s)?;
    }
    let opts = QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-13,
        max_subdivisions: 4000,
    };
    let kinks = nl.kinks();
    let period = nl.period();
    let phi_at = |s: f64| radicand(nl, s).max(0.0).sqrt();
    let int_phi = integrate(|s| nl.eval(s), 0.0, period, &kinks, opts)?.value;
    let int_abs = integrate(|s| nl.eval(s).abs(), 0.0, period, &kinks, opts)?.value;
    let int_abs_phi = integrate(|s| nl.eval(s).abs() * phi_at(s), 0.0, period, &kinks, opts)?.value;
    let int_abs_p = integrate(
        |s| nl.eval(s).abs() * p_factor(eps, tau, phi_at(s)),
        0.0,
        period,
        &kinks,
        opts,
    )?
    .value;
    Ok(PeriodicIntegrals {
        int_phi,
        int_abs,
        int_abs_phi,
        int_abs_p,
        eps,
        tau,
    })
}

/// `r_j`, `r₀_j`, `r₁_j` for `j = 1, 2` (index 0 holds `j = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RCoefficients {
    pub r: [f64; 2],
    pub r0: [f64; 2],
    pub r1: [f64; 2],
}

/// `(∫φ + (−1)^j x/(ϑk))` over `∫|φ|`, `∫Φ|φ|` and `∫|φ|P` respectively.
pub fn r_coefficients(ints: &PeriodicIntegrals, theta: f64, k: u32, x: f64) -> Result<RCoefficients> {
    if k == 0 {
        return Err(domain("cycle count k must be at least 1"));
    }
    if !(theta > 0.0) {
        return Err(domain(format!("theta = {theta} must be positive")));
    }
    for (name, d) in [
        ("int |phi|", ints.int_abs),
        ("int Phi |phi|", ints.int_abs_phi),
        ("int |phi| P", ints.int_abs_p),
    ] {
        if d == 0.0 {
            return Err(Error::ZeroDenominator(match name {
                "int |phi|" => "r_j",
                "int Phi |phi|" => "r0_j",
                _ => "r1_j",
            }));
        }
    }
    let shift = x / (theta * k as f64);
    let num = [ints.int_phi - shift, ints.int_phi + shift];
    Ok(RCoefficients {
        r: num.map(|n| n / ints.int_abs),
        r0: num.map(|n| n / ints.int_abs_phi),
        r1: num.map(|n| n / ints.int_abs_p),
    })
}

/// `Y_j(σ) = φ(σ) − r₁_j|φ(σ)|P(ε, τ, σ)`.
pub fn y_function(nl: &PeriodicNonlinearity, r1j: f64, eps: f64, tau: f64, sigma: f64) -> Result<f64> {
    let phi = nl.eval(sigma);
    Ok(phi - r1j * phi.abs() * p_factor(eps, tau, phi_factor(nl, sigma)?))
}

/// `F_j(σ) = φ(σ) − r_j|φ(σ)|`.
pub fn f_function(nl: &PeriodicNonlinearity, rj: f64, sigma: f64) -> f64 {
    let phi = nl.eval(sigma);
    phi - rj * phi.abs()
}

/// `Ψ_j(σ) = φ(σ) − r₀_j|φ(σ)|Φ(σ)`.
pub fn psi_function(nl: &PeriodicNonlinearity, r0j: f64, sigma: f64) -> Result<f64> {
    let phi = nl.eval(sigma);
    Ok(phi - r0j * phi.abs() * phi_factor(nl, sigma)?)
}

/// `T_j = [[ε, aϑr_j/2, 0], [aϑr_j/2, δ, a₀ϑr₀_j/2], [0, a₀ϑr₀_j/2, τ]]`.
pub fn t_matrix(m: &Multipliers, rj: f64, r0j: f64) -> Matrix3 {
    let b = m.a * m.theta * rj / 2.0;
    let c = m.a0() * m.theta * r0j / 2.0;
    [[m.eps, b, 0.0], [b, m.delta, c], [0.0, c, m.tau]]
}

fn exact(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| domain(format!("matrix entry {x} is not finite")))
}

/// Sylvester's criterion on the three leading principal minors, evaluated in
/// exact rational arithmetic on the given entries. Ties count as not
/// positive definite.
pub fn is_positive_definite(m: &Matrix3) -> Result<bool> {
    for i in 0..3 {
        for j in (i + 1)..3 {
            if m[i][j] != m[j][i] {
                return Err(Error::Asymmetric {
                    row: i,
                    col: j,
                    upper: m[i][j],
                    lower: m[j][i],
                });
            }
        }
    }
    let mut e: Vec<Vec<BigRational>> = Vec::with_capacity(3);
    for row in m {
        e.push(row.iter().map(|&x| exact(x)).collect::<Result<_>>()?);
    }
    let zero = BigRational::zero();
    if e[0][0] <= zero {
        return Ok(false);
    }
    let m2 = &e[0][0] * &e[1][1] - &e[0][1] * &e[1][0];
    if m2 <= zero {
        return Ok(false);
    }
    let det = &e[0][0] * (&e[1][1] * &e[2][2] - &e[1][2] * &e[2][1])
        - &e[0][1] * (&e[1][0] * &e[2][2] - &e[1][2] * &e[2][0])
        + &e[0][2] * (&e[1][0] * &e[2][1] - &e[1][1] * &e[2][0]);
    Ok(det > zero)
}

/// Leading principal minors in floating point, for reports.
pub fn leading_minors(m: &Matrix3) -> [f64; 3] {
    let m2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    [m[0][0], m2, det]
}

/// `2√(εδ) > (2πβ + q/k) / (4(β arcsin β + √(1−β²)))`: the matrix condition
/// for the sine with `a = 1`, `ϑ = 1`.
pub fn pll_scalar_criterion(eps: f64, delta: f64, beta: f64, q: f64, k: u32) -> bool {
    let lhs = 2.0 * (eps * delta).sqrt();
    let rhs = (2.0 * std::f64::consts::PI * beta + q / k as f64) / (4.0 * (beta * beta.asin() + (1.0 - beta * beta).sqrt()));
    lhs > rhs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Theorem {
    T1,
    T2,
    T3,
    T4,
}

impl std::fmt::Display for Theorem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Theorem::T1 => "T1",
            Theorem::T2 => "T2",
            Theorem::T3 => "T3",
            Theorem::T4 => "T4",
        };
        f.write_str(s)
    }
}

/// Where the bound constant came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QSource {
    CallerSupplied,
    Lemma2,
    PllFormula,
    /// `q₀`, the `μ → 0` limit of `q_μ`.
    MuLimit,
}

impl QSource {
    fn describe(&self) -> &'static str {
        match self {
            QSource::CallerSupplied => "caller supplied",
            QSource::Lemma2 => "envelope bound",
            QSource::PllFormula => "PLL closed form T^2(A + B h0 + C h0^2)",
            QSource::MuLimit => "q0, limit of q_mu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QUsed {
    pub value: f64,
    pub source: QSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Conditions {
    /// `4δ > ϑ²r₁_j²` for `j = 1, 2`.
    Scalar { lhs: f64, rhs: [f64; 2], holds: bool },
    Matrices { matrices: [Matrix3; 2], positive_definite: [bool; 2] },
}

impl Conditions {
    pub fn holds(&self) -> bool {
        match self {
            Conditions::Scalar { holds, .. } => *holds,
            Conditions::Matrices { positive_definite, .. } => positive_definite.iter().all(|&b| b),
        }
    }
}

fn scalar_conditions(m: &Multipliers, r: &RCoefficients) -> Result<Conditions> {
    let lhs = 4.0 * m.delta;
    let rhs = r.r1.map(|v| (m.theta * v).powi(2));
    let l = exact(lhs)?;
    let mut holds = true;
    for v in r.r1 {
        let t = exact(m.theta)? * exact(v)?;
        holds &= l > &t * &t;
    }
    Ok(Conditions::Scalar { lhs, rhs, holds })
}

fn matrix_conditions(m: &Multipliers, r: &RCoefficients) -> Result<Conditions> {
    let matrices = [t_matrix(m, r.r[0], r.r0[0]), t_matrix(m, r.r[1], r.r0[1])];
    let positive_definite = [is_positive_definite(&matrices[0])?, is_positive_definite(&matrices[1])?];
    Ok(Conditions::Matrices {
        matrices,
        positive_definite,
    })
}

/// Pass/fail of the `T_j` conditions at bound constant `x`.
pub fn matrices_positive_definite(ints: &PeriodicIntegrals, m: &Multipliers, k: u32, x: f64) -> Result<bool> {
    let r = r_coefficients(ints, m.theta, k, x)?;
    Ok(matrix_conditions(m, &r)?.holds())
}

/// Validity range in `μ` for a certificate from the singularly perturbed
/// theorem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuRange {
    /// `min(μ̄, μ̂)`; use `μ` strictly below it.
    pub mu_max: f64,
    /// Largest `μ` found such that `q_μ` stays inside `x_interval`.
    pub mu_hat: f64,
    pub threshold: MuThreshold,
    pub delta_bar: f64,
    /// Smallest `δ` at which the `T_j(q₀)` stay positive definite.
    pub delta_crit: f64,
    /// Bound constants `x` at whose endpoints the `T̄_j(x)` (built with `δ̄`)
    /// were checked positive definite; the set of such `x` is an interval.
    pub x_interval: [f64; 2],
    pub bound_inputs: BoundInputs,
    pub mu_cap: f64,
}

/// A verified bound: every solution slips fewer than `k` cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipCertificate {
    pub k: u32,
    pub theorem: Theorem,
    pub params: CertificateParams,
    pub q_used: QUsed,
    pub mu_range: Option<MuRange>,
    pub fdi: FrequencyCheckResult,
    pub conditions: Conditions,
    pub integrals: PeriodicIntegrals,
    pub r: RCoefficients,
    pub alpha1: f64,
    pub alpha2: f64,
}

/// Why a check did not produce a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub theorem: Theorem,
    pub params: CertificateParams,
    pub reason: String,
    pub fdi: FrequencyCheckResult,
    pub conditions: Option<Conditions>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Certified(Box<SlipCertificate>),
    Rejected(Box<Rejection>),
}

impl Verdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, Verdict::Certified(_))
    }

    pub fn certificate(self) -> Option<SlipCertificate> {
        match self {
            Verdict::Certified(c) => Some(*c),
            Verdict::Rejected(_) => None,
        }
    }

    pub fn as_certificate(&self) -> Option<&SlipCertificate> {
        match self {
            Verdict::Certified(c) => Some(c),
            Verdict::Rejected(_) => None,
        }
    }
}

/// How the initial condition `φ(σ(0)) = 0` required by the third and fourth
/// theorems is established.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCondition {
    /// The caller vouches for `φ(σ(0)) = 0`.
    Attested,
    /// Checked at runtime: `|φ(σ(0))| ≤ 1e-12`.
    Phase(f64),
}

fn check_initial(nl: &PeriodicNonlinearity, ic: InitialCondition) -> Result<()> {
    if let InitialCondition::Phase(s) = ic {
        let v = nl.eval(s);
        if v.abs() > 1e-12 {
            return Err(domain(format!("phi(sigma(0)) = {v} at sigma(0) = {s}; a root of phi is required")));
        }
    }
    Ok(())
}

fn check_symmetric(nl: &PeriodicNonlinearity, theorem: Theorem) -> Result<()> {
    if !nl.has_symmetric_slopes() {
        return Err(domain(format!(
            "{theorem} requires |alpha1| = alpha2, got {}, {}",
            nl.alpha1(),
            nl.alpha2()
        )));
    }
    Ok(())
}

/// The `k`-independent part of every check: the frequency test and the
/// periodic integrals for one multiplier set.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub multipliers: Multipliers,
    pub fdi: FrequencyCheckResult,
    pub integrals: PeriodicIntegrals,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Prepared {
    pub fn new(tf: &TransferFunction, nl: &PeriodicNonlinearity, m: &Multipliers) -> Result<Self> {
        m.validate()?;
        let fdi = verify_fdi(tf, m, nl.alpha1(), nl.alpha2())?;
        let integrals = periodic_integrals(nl, m.eps, m.tau)?;
        Ok(Self {
            multipliers: *m,
            fdi,
            integrals,
            alpha1: nl.alpha1(),
            alpha2: nl.alpha2(),
        })
    }

    fn params(&self, k: u32) -> Result<CertificateParams> {
        CertificateParams::new(self.multipliers, k)
    }

    fn finish(&self, theorem: Theorem, k: u32, q: QUsed, scalar: bool) -> Result<Verdict> {
        let params = self.params(k)?;
        if !self.fdi.certified {
            return Ok(Verdict::Rejected(Box::new(Rejection {
                theorem,
                params,
                reason: format!(
                    "frequency inequality not certified: min {} at omega = {} (tail {})",
                    g12(self.fdi.min_value),
                    g12(self.fdi.argmin),
                    if self.fdi.tail.holds { "holds" } else { "fails" }
                ),
                fdi: self.fdi.clone(),
                conditions: None,
            })));
        }
        let r = r_coefficients(&self.integrals, self.multipliers.theta, k, q.value)?;
        let conditions = if scalar {
            scalar_conditions(&self.multipliers, &r)?
        } else {
            matrix_conditions(&self.multipliers, &r)?
        };
        if !conditions.holds() {
            return Ok(Verdict::Rejected(Box::new(Rejection {
                theorem,
                params,
                reason: format!("algebraic conditions fail at k = {k}"),
                fdi: self.fdi.clone(),
                conditions: Some(conditions),
            })));
        }
        Ok(Verdict::Certified(Box::new(SlipCertificate {
            k,
            theorem,
            params,
            q_used: q,
            mu_range: None,
            fdi: self.fdi.clone(),
            conditions,
            integrals: self.integrals,
            r,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        })))
    }

    pub fn theorem1(&self, k: u32, q: f64) -> Result<Verdict> {
        self.finish(Theorem::T1, k, caller_q(q)?, true)
    }

    pub fn theorem2(&self, k: u32, q: f64) -> Result<Verdict> {
        self.finish(Theorem::T2, k, caller_q(q)?, false)
    }

    pub fn theorem3(&self, nl: &PeriodicNonlinearity, k: u32, q: QUsed, ic: InitialCondition) -> Result<Verdict> {
        check_symmetric(nl, Theorem::T3)?;
        check_initial(nl, ic)?;
        self.finish(Theorem::T3, k, q, false)
    }

    pub fn theorem4(
        &self,
        spec: &SystemSpec,
        tf: &TransferFunction,
        k: u32,
        mu_tilde: f64,
        opts: &Theorem4Options,
    ) -> Result<Verdict> {
        let nl = &spec.nonlinearity;
        check_symmetric(nl, Theorem::T4)?;
        check_initial(nl, opts.initial)?;
        let m = self.multipliers;
        let inputs = BoundInputs::from_spec(spec, &m);
        let q0 = inputs.q0()?;
        let q = QUsed {
            value: q0,
            source: QSource::MuLimit,
        };
        let base = self.finish(Theorem::T4, k, q, false)?;
        let mut cert = match base {
            Verdict::Certified(c) => c,
            rejected => return Ok(rejected),
        };
        let reject = |reason: String| {
            Ok(Verdict::Rejected(Box::new(Rejection {
                theorem: Theorem::T4,
                params: cert.params,
                reason,
                fdi: cert.fdi.clone(),
                conditions: Some(cert.conditions),
            })))
        };

        let delta_crit = (0..2)
            .map(|j| {
                let b = m.a * m.theta * cert.r.r[j] / 2.0;
                let c = m.a0() * m.theta * cert.r.r0[j] / 2.0;
                b * b / m.eps + c * c / m.tau
            })
            .fold(0.0, f64::max);
        let candidates: Vec<f64> = match opts.delta_bar {
            Some(d) => vec![d],
            None => DELTA_BAR_FRACTIONS
                .iter()
                .map(|f| delta_crit + f * (m.delta - delta_crit))
                .collect(),
        };
        let mut best: Option<MuRange> = None;
        let mut last_reason = String::new();
        for delta_bar in candidates {
            match self.mu_range(spec, tf, k, mu_tilde, opts, q0, delta_crit, delta_bar)? {
                Ok(range) => {
                    if best.as_ref().is_none_or(|b| range.mu_max > b.mu_max) {
                        best = Some(range);
                    }
                }
                Err(reason) => last_reason = reason,
            }
        }
        let range = match best {
            Some(range) => range,
            None => return reject(last_reason),
        };
        cert.mu_range = Some(range);
        Ok(Verdict::Certified(cert))
    }

    /// The validity range for one `δ̄`, or why there is none.
    #[allow(clippy::too_many_arguments)]
    fn mu_range(
        &self,
        spec: &SystemSpec,
        tf: &TransferFunction,
        k: u32,
        mu_tilde: f64,
        opts: &Theorem4Options,
        q0: f64,
        delta_crit: f64,
        delta_bar: f64,
    ) -> Result<std::result::Result<MuRange, String>> {
        let m = self.multipliers;
        if !(delta_bar > 0.0 && delta_bar < m.delta) {
            return Ok(Err(format!(
                "delta_bar = {} must lie in (0, delta = {})",
                g12(delta_bar),
                g12(m.delta)
            )));
        }
        let bar = m.with_delta(delta_bar);
        if !matrices_positive_definite(&self.integrals, &bar, k, q0)? {
            return Ok(Err(format!(
                "matrices with delta_bar = {} are not positive definite",
                g12(delta_bar)
            )));
        }
        let ae = spec.nonlinearity.symmetric_slope();
        let threshold = match mu_threshold(tf, &m, ae, delta_bar, mu_tilde) {
            Ok(t) => t,
            Err(Error::NotCertified(msg)) => return Ok(Err(msg)),
            Err(e) => return Err(e),
        };
        let inputs = BoundInputs::from_spec(spec, &m);
        let pd = |x: f64| matrices_positive_definite(&self.integrals, &bar, k, x);
        let x_hi = edge_of_interval(q0, 1.0, &pd)?;
        let x_lo = edge_of_interval(q0, -1.0, &pd)?;
        let mu_cap = mu_tilde.min((1.0 - 1e-9) / inputs.r);
        let inside = |mu: f64| -> Result<bool> {
            let q = inputs.q_mu(mu)?;
            Ok(q >= x_lo && q <= x_hi)
        };
        let mu_hat = first_exit(mu_cap, opts.mu_scan_points.max(16), &inside)?;
        if !(mu_hat > 0.0) {
            return Ok(Err("q_mu leaves the positive-definite range immediately".into()));
        }
        Ok(Ok(MuRange {
            mu_max: threshold.mu_bar.min(mu_hat),
            mu_hat,
            threshold,
            delta_bar,
            delta_crit,
            x_interval: [x_lo, x_hi],
            bound_inputs: inputs,
            mu_cap,
        }))
    }
}

fn caller_q(q: f64) -> Result<QUsed> {
    if !(q >= 0.0 && q.is_finite()) {
        return Err(domain(format!("bound constant Q = {q} must be finite and non-negative")));
    }
    Ok(QUsed {
        value: q,
        source: QSource::CallerSupplied,
    })
}

/// Walks from `x0` (where `pd` holds) in direction `dir` until `pd` fails,
/// then bisects. Returns the last point where `pd` was seen to hold, or
/// `±∞` when it never fails.
fn edge_of_interval<F>(x0: f64, dir: f64, pd: &F) -> Result<f64>
where
    F: Fn(f64) -> Result<bool>,
{
    let mut step = x0.abs().max(1e-12);
    let mut good = x0;
    let mut bad = None;
    for _ in 0..200 {
        let x = x0 + dir * step;
        if pd(x)? {
            good = x;
            step *= 2.0;
        } else {
            bad = Some(x);
            break;
        }
    }
    let Some(mut bad) = bad else {
        return Ok(dir * f64::INFINITY);
    };
    for _ in 0..200 {
        let mid = 0.5 * (good + bad);
        if mid == good || mid == bad {
            break;
        }
        if pd(mid)? {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

/// Largest `μ ≤ cap` such that `inside` holds on a log grid of `(0, μ]`,
/// refined by bisection at the first failure.
fn first_exit<F>(cap: f64, points: usize, inside: &F) -> Result<f64>
where
    F: Fn(f64) -> Result<bool>,
{
    let lo_exp = -12.0;
    let mut prev = 0.0;
    for i in 0..=points {
        let mu = cap * 10f64.powf(lo_exp * (1.0 - i as f64 / points as f64));
        if !inside(mu)? {
            if prev == 0.0 {
                return Ok(0.0);
            }
            let (mut good, mut bad) = (prev, mu);
            for _ in 0..100 {
                let mid = 0.5 * (good + bad);
                if mid == good || mid == bad {
                    break;
                }
                if inside(mid)? {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            return Ok(good);
        }
        prev = mu;
    }
    Ok(cap)
}

/// Trial positions of `δ̄` between `δ_crit` and `δ` when none is given.
const DELTA_BAR_FRACTIONS: [f64; 6] = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01];

/// Options for the singularly perturbed check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theorem4Options {
    /// `δ̄ < δ`. When absent, several points between `δ` and the smallest
    /// value keeping the matrices positive definite are tried and the one
    /// with the largest `μ` range is kept.
    pub delta_bar: Option<f64>,
    pub initial: InitialCondition,
    pub mu_scan_points: usize,
}

impl Default for Theorem4Options {
    fn default() -> Self {
        Self {
            delta_bar: None,
            initial: InitialCondition::Attested,
            mu_scan_points: 4096,
        }
    }
}

/// Frequency inequality plus `4δ > ϑ²r₁_j(k, ϑ, ε, τ, Q)²` with a
/// caller-supplied `Q`.
pub fn theorem1_check(tf: &TransferFunction, nl: &PeriodicNonlinearity, params: &CertificateParams, q: f64) -> Result<Verdict> {
    Prepared::new(tf, nl, &params.multipliers)?.theorem1(params.k, q)
}

/// Frequency inequality plus positive definite `T_j(k, ϑ, Q)`.
pub fn theorem2_check(tf: &TransferFunction, nl: &PeriodicNonlinearity, params: &CertificateParams, q: f64) -> Result<Verdict> {
    Prepared::new(tf, nl, &params.multipliers)?.theorem2(params.k, q)
}

/// As [`theorem2_check`] with an explicit `q`; requires `|α₁| = α₂` and a
/// start at a root of `φ`.
pub fn theorem3_check(
    tf: &TransferFunction,
    nl: &PeriodicNonlinearity,
    params: &CertificateParams,
    q: QUsed,
    ic: InitialCondition,
) -> Result<Verdict> {
    check_symmetric(nl, Theorem::T3)?;
    Prepared::new(tf, nl, &params.multipliers)?.theorem3(nl, params.k, q, ic)
}

/// Frequency inequality for the unperturbed `K` plus positive definite
/// `T_j(k, ϑ, q₀)`, with a constructive range `μ < mu_max`.
pub fn theorem4_check(
    spec: &SystemSpec,
    tf: &TransferFunction,
    params: &CertificateParams,
    mu_tilde: f64,
    opts: &Theorem4Options,
) -> Result<Verdict> {
    check_symmetric(&spec.nonlinearity, Theorem::T4)?;
    Prepared::new(tf, &spec.nonlinearity, &params.multipliers)?.theorem4(spec, tf, params.k, mu_tilde, opts)
}

impl SlipCertificate {
    /// Number of slipped cycles the bound allows, `k − 1`.
    pub fn r0(&self) -> u32 {
        self.k - 1
    }

    /// Re-evaluates every stored condition from the stored numbers.
    pub fn revalidate(&self) -> Result<bool> {
        let m = &self.params.multipliers;
        if self.params.k != self.k || self.k == 0 {
            return Ok(false);
        }
        let fdi = &self.fdi;
        if !(fdi.certified && fdi.min_value >= 0.0 && fdi.tail.holds) {
            return Ok(false);
        }
        let r = r_coefficients(&self.integrals, m.theta, self.k, self.q_used.value)?;
        if r != self.r {
            return Ok(false);
        }
        let fresh = match self.conditions {
            Conditions::Scalar { .. } => scalar_conditions(m, &r)?,
            Conditions::Matrices { .. } => matrix_conditions(m, &r)?,
        };
        if fresh != self.conditions || !fresh.holds() {
            return Ok(false);
        }
        if let Some(range) = &self.mu_range {
            let inputs = &range.bound_inputs;
            if (inputs.q0()? - self.q_used.value).abs() > 0.0 {
                return Ok(false);
            }
            let bar = m.with_delta(range.delta_bar);
            if !(range.delta_bar > 0.0 && range.delta_bar < m.delta) {
                return Ok(false);
            }
            for x in range.x_interval.iter().copied().filter(|x| x.is_finite()) {
                if !matrices_positive_definite(&self.integrals, &bar, self.k, x)? {
                    return Ok(false);
                }
            }
            let [lo, hi] = range.x_interval;
            if !(lo <= self.q_used.value && self.q_used.value <= hi) {
                return Ok(false);
            }
            for i in 1..=64 {
                let mu = range.mu_hat * i as f64 / 64.0;
                let q = inputs.q_mu(mu)?;
                if !(q >= lo && q <= hi) {
                    return Ok(false);
                }
            }
            let t = &range.threshold;
            if !(t.delta1 > 0.0 && t.tail.holds && range.mu_max <= t.mu_bar && range.mu_max <= range.mu_hat) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn report(&self) -> String {
        let m = &self.params.multipliers;
        let mut s = String::new();
        let _ = writeln!(s, "certificate: fewer than k = {} slipped cycles", self.k);
        let _ = writeln!(s, "r0 = {}", self.r0());
        let _ = writeln!(s, "theorem: {}", self.theorem);
        let _ = writeln!(
            s,
            "multipliers: theta = {}, eps = {}, delta = {}, tau = {}, a = {}",
            g12(m.theta),
            g12(m.eps),
            g12(m.delta),
            g12(m.tau),
            g12(m.a)
        );
        let _ = writeln!(s, "slope bounds: alpha1 = {}, alpha2 = {}", g12(self.alpha1), g12(self.alpha2));
        let _ = writeln!(s, "q = {} ({})", g12(self.q_used.value), self.q_used.source.describe());
        let _ = writeln!(
            s,
            "frequency check: {}, min = {} at omega = {}, cutoff = {} (2^{} x {}), tail margin = {}, evaluations = {}",
            if self.fdi.certified { "certified" } else { "not certified" },
            g12(self.fdi.min_value),
            g12(self.fdi.argmin),
            g12(self.fdi.tail.cutoff),
            self.fdi.tail.doublings,
            g12(self.fdi.tail.base),
            g12(self.fdi.tail.margin),
            self.fdi.evaluations
        );
        let ints = &self.integrals;
        let _ = writeln!(
            s,
            "integrals: int phi = {}, int |phi| = {}, int Phi|phi| = {}, int |phi|P = {}",
            g12(ints.int_phi),
            g12(ints.int_abs),
            g12(ints.int_abs_phi),
            g12(ints.int_abs_p)
        );
        for j in 0..2 {
            let _ = writeln!(
                s,
                "j = {}: r = {}, r0 = {}, r1 = {}",
                j + 1,
                g12(self.r.r[j]),
                g12(self.r.r0[j]),
                g12(self.r.r1[j])
            );
        }
        match &self.conditions {
            Conditions::Scalar { lhs, rhs, holds } => {
                let _ = writeln!(
                    s,
                    "4 delta = {} vs theta^2 r1_j^2 = [{}, {}]: {}",
                    g12(*lhs),
                    g12(rhs[0]),
                    g12(rhs[1]),
                    if *holds { "holds" } else { "fails" }
                );
            }
            Conditions::Matrices {
                matrices,
                positive_definite,
            } => {
                for j in 0..2 {
                    let mm = &matrices[j];
                    let minors = leading_minors(mm);
                    let _ = writeln!(
                        s,
                        "T_{} = [[{}, {}, {}], [{}, {}, {}], [{}, {}, {}]]; minors = [{}, {}, {}]; {}",
                        j + 1,
                        g12(mm[0][0]),
                        g12(mm[0][1]),
                        g12(mm[0][2]),
                        g12(mm[1][0]),
                        g12(mm[1][1]),
                        g12(mm[1][2]),
                        g12(mm[2][0]),
                        g12(mm[2][1]),
                        g12(mm[2][2]),
                        g12(minors[0]),
                        g12(minors[1]),
                        g12(minors[2]),
                        if positive_definite[j] { "positive definite" } else { "not positive definite" }
                    );
                }
            }
        }
        match &self.mu_range {
            Some(r) => {
                let t = &r.threshold;
                let _ = writeln!(
                    s,
                    "mu range: mu < {} (mu_bar = {}, mu_hat = {}); delta_bar = {}, delta1 = {}, L1 = {}, Omega0 = {}",
                    g12(r.mu_max),
                    g12(t.mu_bar),
                    g12(r.mu_hat),
                    g12(r.delta_bar),
                    g12(t.delta1),
                    g12(t.l1),
                    g12(t.tail.cutoff)
                );
            }
            None => {
                let _ = writeln!(s, "mu range: not applicable");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sine_nonlinearity;
    use std::f64::consts::PI;

    fn mult(eps: f64, delta: f64, tau: f64, a: f64) -> Multipliers {
        Multipliers::new(1.0, eps, delta, tau, a).unwrap()
    }

    #[test]
    fn phi_factor_for_sine_is_abs_sin() {
        let nl = sine_nonlinearity(0.7).unwrap();
        for i in 1..100 {
            let s = 0.0631 * i as f64;
            assert!((phi_factor(&nl, s).unwrap() - s.sin().abs()).abs() < 1e-12, "{s}");
        }
        assert!((phi_factor(&nl, PI / 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(phi_factor(&nl, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn p_factor_examples() {
        assert_eq!(p_factor(4.0, 0.0, 0.3), 2.0);
        assert_eq!(p_factor(0.0, 9.0, 1.0), 3.0);
        assert_eq!(p_factor(1.0, 1.0, 1.0), 2f64.sqrt());
    }

    #[test]
    fn integrals_for_sine() {
        let beta: f64 = 0.9;
        let nl = sine_nonlinearity(beta).unwrap();
        let ints = periodic_integrals(&nl, 1.0, 0.0).unwrap();
        assert!((ints.int_phi + 2.0 * PI * beta).abs() < 1e-10);
        let closed = 4.0 * (beta * beta.asin() + (1.0 - beta * beta).sqrt());
        assert!((ints.int_abs - closed).abs() < 1e-10);
        assert!((ints.int_abs_p - ints.int_abs).abs() < 1e-10);
        // high-precision reference value for ∫|sin σ − 0.9||sin σ|
        assert!((ints.int_abs_phi - 3.717_451_813_755_203_6).abs() < 1e-10);
    }

    #[test]
    fn r_coefficients_examples() {
        let nl = sine_nonlinearity(0.9).unwrap();
        let ints = periodic_integrals(&nl, 1.0, 0.0).unwrap();
        let r = r_coefficients(&ints, 1.0, 1, 0.0).unwrap();
        assert_eq!(r.r[0], r.r[1]);
        let r = r_coefficients(&ints, 1.0, 1, 0.204384).unwrap();
        assert!((r.r1[0] + 1.014_636_346_204_549).abs() < 1e-9);
        assert!(r.r[0] < r.r[1]);
    }

    #[test]
    fn zero_phi_is_a_zero_denominator() {
        let ints = PeriodicIntegrals {
            int_phi: 0.0,
            int_abs: 0.0,
            int_abs_phi: 0.0,
            int_abs_p: 0.0,
            eps: 1.0,
            tau: 1.0,
        };
        assert!(matches!(r_coefficients(&ints, 1.0, 1, 0.1), Err(Error::ZeroDenominator(_))));
    }

    #[test]
    fn t_matrix_structure() {
        let m = mult(2.0, 3.0, 5.0, 1.0);
        let t = t_matrix(&m, 0.4, 7.0);
        assert_eq!(t[1][2], 0.0);
        assert_eq!(t[0][1], 0.2);
        assert_eq!(t[0][1].to_bits(), t[1][0].to_bits());
        let m = mult(2.0, 3.0, 5.0, 0.0);
        let t = t_matrix(&m, 7.0, 0.4);
        assert_eq!(t[0][1], 0.0);
        assert_eq!(t[1][2], 0.2);
        let t = t_matrix(&mult(2.0, 3.0, 5.0, 0.5), 0.0, 0.0);
        assert!(is_positive_definite(&t).unwrap());
    }

    #[test]
    fn sylvester_basics() {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(is_positive_definite(&id).unwrap());
        let semi = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(!is_positive_definite(&semi).unwrap());
        let asym = [[1.0, 0.5, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(matches!(is_positive_definite(&asym), Err(Error::Asymmetric { .. })));
        // an exact tie: εδ = b² with representable entries
        let tie = [[1.0, 0.5, 0.0], [0.5, 0.25, 0.0], [0.0, 0.0, 1.0]];
        assert!(!is_positive_definite(&tie).unwrap());
    }

    #[test]
    fn a_equal_one_reduces_to_scalar_test() {
        let m = mult(2.0, 0.5, 0.1, 1.0);
        // εδ = 1 so PD iff |r| < 2
        assert!(is_positive_definite(&t_matrix(&m, 1.99, 100.0)).unwrap());
        assert!(!is_positive_definite(&t_matrix(&m, 2.01, 0.0)).unwrap());
    }

    #[test]
    fn theorem3_rejects_asymmetric_slopes() {
        use std::sync::Arc;
        let nl = PeriodicNonlinearity::custom(
            "two-harmonic",
            2.0 * PI,
            Arc::new(|x: f64| x.sin() + 0.25 * (2.0 * x).sin() - 0.1),
            Arc::new(|x: f64| x.cos() + 0.5 * (2.0 * x).cos()),
        )
        .unwrap();
        let tf = TransferFunction::new(0.0, 0.0, crate::model::ExpSum::empty());
        let p = CertificateParams::new(mult(1.0, 0.1, 1.0, 1.0), 3).unwrap();
        let q = QUsed {
            value: 0.1,
            source: QSource::CallerSupplied,
        };
        assert!(theorem3_check(&tf, &nl, &p, q, InitialCondition::Attested).is_err());
    }

    #[test]
    fn initial_phase_must_be_a_root() {
        let nl = sine_nonlinearity(0.5).unwrap();
        assert!(check_initial(&nl, InitialCondition::Phase(0.3)).is_err());
        assert!(check_initial(&nl, InitialCondition::Phase(0.5f64.asin())).is_ok());
    }
}
