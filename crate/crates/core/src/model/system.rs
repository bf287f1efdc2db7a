use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::nonlinearity::{PeriodicNonlinearity, ScalarFn};
use crate::error::{domain, Result};

/// `c · e^{−rate (t − onset)}` for `t ≥ onset`, zero before.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub coefficient: f64,
    pub rate: f64,
    pub onset: f64,
}

impl ExpTerm {
    pub fn new(coefficient: f64, rate: f64, onset: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(domain(format!("exponential rate {rate} must be positive")));
        }
        if !(onset >= 0.0 && onset.is_finite()) {
            return Err(domain(format!("onset {onset} must be non-negative")));
        }
        if !coefficient.is_finite() {
            return Err(domain("coefficient must be finite"));
        }
        Ok(Self {
            coefficient,
            rate,
            onset,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < self.onset {
            0.0
        } else {
            self.coefficient * (-self.rate * (t - self.onset)).exp()
        }
    }

    /// Laplace transform `c e^{−p·onset} / (p + rate)`.
    pub fn laplace(&self, p: Complex64) -> Complex64 {
        self.coefficient * (-p * self.onset).exp() / (p + self.rate)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpSum {
    pub terms: Vec<ExpTerm>,
}

impl ExpSum {
    pub fn new(terms: Vec<ExpTerm>) -> Self {
        Self { terms }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.iter().map(|e| e.eval(t)).sum()
    }

    pub fn laplace(&self, p: Complex64) -> Complex64 {
        self.terms.iter().map(|e| e.laplace(p)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn onsets(&self) -> impl Iterator<Item = f64> + '_ {
        self.terms.iter().map(|e| e.onset)
    }
}

/// Initial function `σ⁰` on `[−h, 0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum History {
    Constant { value: f64 },
    Linear { value_at_zero: f64, slope: f64 },
    /// Continuous piecewise-linear interpolation of `(t, σ)` points sorted by
    /// `t`, constant extension outside the table.
    Table { points: Vec<(f64, f64)> },
}

impl History {
    pub fn constant(value: f64) -> Self {
        Self::Constant { value }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Linear {
                value_at_zero,
                slope,
            } => value_at_zero + slope * t,
            Self::Table { points } => {
                let first = points[0];
                let last = points[points.len() - 1];
                if t <= first.0 {
                    return first.1;
                }
                if t >= last.0 {
                    return last.1;
                }
                let i = points.partition_point(|p| p.0 <= t) - 1;
                let (t0, s0) = points[i];
                let (t1, s1) = points[i + 1];
                s0 + (s1 - s0) * (t - t0) / (t1 - t0)
            }
        }
    }

    pub fn value_at_zero(&self) -> f64 {
        self.eval(0.0)
    }

    /// Interior points where the history has a slope discontinuity.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Table { points } => points.iter().map(|p| p.0).collect(),
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Table { points } = self {
            if points.is_empty() {
                return Err(domain("history table is empty"));
            }
            if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(domain("history table times must be strictly increasing"));
            }
            if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
                return Err(domain("history table contains non-finite values"));
            }
        }
        Ok(())
    }
}

/// A forcing term `α(t)`: an exponential sum plus an optional explicit
/// function for parts that have no closed form (history integrals).
#[derive(Clone, Default)]
pub struct Forcing {
    pub terms: ExpSum,
    pub explicit: Option<ExplicitFn>,
}

#[derive(Clone)]
pub struct ExplicitFn {
    pub label: String,
    pub f: ScalarFn,
    /// Time after which the function is identically zero.
    pub support_end: f64,
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Forcing")
            .field("terms", &self.terms)
            .field("explicit", &self.explicit.as_ref().map(|e| e.label.as_str()))
            .finish()
    }
}

impl Forcing {
    pub fn from_terms(terms: ExpSum) -> Self {
        Self {
            terms,
            explicit: None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.terms.eval(t) + self.explicit.as_ref().map_or(0.0, |e| (e.f)(t))
    }
}

/// `|α(t)| + |γ(t)| ≤ M e^{−rt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEnvelope {
    pub amplitude: f64,
    pub rate: f64,
}

impl DecayEnvelope {
    pub fn new(amplitude: f64, rate: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(domain(format!("envelope amplitude M = {amplitude} must be positive")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(domain(format!("envelope rate r = {rate} must be positive")));
        }
        Ok(Self { amplitude, rate })
    }

    pub fn bound(&self, t: f64) -> f64 {
        self.amplitude * (-self.rate * t).exp()
    }

    /// Smallest `M` (times a 1.05 safety factor) such that the sampled
    /// `|α| + |γ|` stays under `M e^{−rt}` on `[0, 20/r]`, with onset points
    /// included in the sample.
    pub fn fit(kernel: &ExpSum, forcing: &Forcing, rate: f64) -> Result<Self> {
        let mut worst: f64 = 0.0;
        for t in envelope_grid(kernel, forcing, rate) {
            let v = (forcing.eval(t).abs() + kernel.eval(t).abs()) * (rate * t).exp();
            worst = worst.max(v);
        }
        if worst == 0.0 {
            worst = f64::MIN_POSITIVE;
        }
        Self::new(1.05 * worst, rate)
    }
}

fn envelope_grid(kernel: &ExpSum, forcing: &Forcing, rate: f64) -> Vec<f64> {
    const N: usize = 4000;
    let end = 20.0 / rate;
    let mut grid: Vec<f64> = (0..=N).map(|i| end * i as f64 / N as f64).collect();
    grid.extend(kernel.onsets());
    grid.extend(forcing.terms.onsets());
    if let Some(e) = &forcing.explicit {
        let s = e.support_end.min(end);
        grid.extend((0..=N).map(|i| s * i as f64 / N as f64));
    }
    grid
}

/// Integro-differential Volterra system
/// `μσ̈ + σ̇ = α(t) + ρφ(σ(t−h)) − ∫₀ᵗ γ(t−s)φ(σ(s))ds` (the `μ` term only
/// when `mu` is set), with initial data on `[−h, 0]`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub rho: f64,
    pub delay: f64,
    pub kernel: ExpSum,
    pub forcing: Forcing,
    pub nonlinearity: PeriodicNonlinearity,
    pub envelope: DecayEnvelope,
    pub mu: Option<f64>,
    pub history: History,
    /// `σ̇(0)`; only an independent datum for the second-order (`μ > 0`) form.
    pub initial_rate: f64,
}

impl SystemSpec {
    /// Validates the invariants: rates positive, `h ≥ 0`, `μ > 0` if given,
    /// and the envelope dominating `|α| + |γ|` on a grid over `[0, 20/r]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rho: f64,
        delay: f64,
        kernel: ExpSum,
        forcing: Forcing,
        nonlinearity: PeriodicNonlinearity,
        envelope: DecayEnvelope,
        mu: Option<f64>,
        history: History,
        initial_rate: f64,
    ) -> Result<Self> {
        if !rho.is_finite() {
            return Err(domain("rho must be finite"));
        }
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(domain(format!("delay h = {delay} must be non-negative")));
        }
        for term in kernel.terms.iter().chain(forcing.terms.terms.iter()) {
            ExpTerm::new(term.coefficient, term.rate, term.onset)?;
        }
        if let Some(mu) = mu {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(domain(format!("mu = {mu} must be positive")));
            }
        }
        history.validate()?;
        if !initial_rate.is_finite() {
            return Err(domain("initial rate must be finite"));
        }
        let spec = Self {
            rho,
            delay,
            kernel,
            forcing,
            nonlinearity,
            envelope,
            mu,
            history,
            initial_rate,
        };
        spec.check_envelope()?;
        Ok(spec)
    }

    fn check_envelope(&self) -> Result<()> {
        for t in envelope_grid(&self.kernel, &self.forcing, self.envelope.rate) {
            let lhs = self.forcing.eval(t).abs() + self.kernel.eval(t).abs();
            let rhs = self.envelope.bound(t);
            if lhs > rhs * (1.0 + 1e-12) {
                return Err(domain(format!(
                    "|alpha| + |gamma| = {lhs} exceeds M e^(-rt) = {rhs} at t = {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn initial_phase(&self) -> f64 {
        self.history.value_at_zero()
    }

    /// Shortest time scale of the linear part (smallest `1/rate`).
    pub fn time_scale(&self) -> f64 {
        self.kernel
            .terms
            .iter()
            .chain(self.forcing.terms.terms.iter())
            .map(|e| 1.0 / e.rate)
            .fold(1.0 / self.envelope.rate, f64::min)
    }

    pub fn with_mu(mut self, mu: Option<f64>) -> Result<Self> {
        if let Some(m) = mu {
            if !(m > 0.0 && m.is_finite()) {
                return Err(domain(format!("mu = {m} must be positive")));
            }
        }
        self.mu = mu;
        Ok(self)
    }

    pub fn with_envelope(mut self, envelope: DecayEnvelope) -> Result<Self> {
        self.envelope = envelope;
        self.check_envelope()?;
        Ok(self)
    }

    /// Stable text description used to fingerprint trajectories.
    pub fn describe(&self) -> String {
        format!(
            "rho={:e};h={:e};kernel={:?};forcing={:?};phi={};M={:e};r={:e};mu={:?};history={:?};rate0={:e}",
            self.rho,
            self.delay,
            self.kernel.terms,
            self.forcing,
            self.nonlinearity.label(),
            self.envelope.amplitude,
            self.envelope.rate,
            self.mu,
            self.history,
            self.initial_rate
        )
    }
}

pub(crate) fn arc_fn<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> ScalarFn {
    Arc::new(f)
}
