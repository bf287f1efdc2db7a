use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::nonlinearity::{sine_nonlinearity, PeriodicNonlinearity};
use super::system::{arc_fn, DecayEnvelope, ExpSum, ExpTerm, ExplicitFn, Forcing, History, SystemSpec};
use crate::error::{domain, Result};
use crate::quadrature::{gk15, integrate, QuadOptions};

/// Delayed PLL with a proportional-integral lowpass filter and a sine phase
/// detector:
/// `σ̈ + σ̇/T + φ(σ(t−h)) + sT·d/dt φ(σ(t−h)) = 0`, `φ(σ) = sin σ − β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PllSpec {
    pub t_filter: f64,
    pub s: f64,
    pub beta: f64,
    pub delay: f64,
    pub initial_rate: f64,
    pub history: History,
}

/// Which zero of `sin σ − β` in `[0, 2π)` to start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumRoot {
    /// `arcsin β`, where `φ' > 0`.
    Stable,
    /// `π − arcsin β`, where `φ' < 0`.
    Unstable,
}

impl PllSpec {
    pub fn new(t_filter: f64, s: f64, beta: f64, delay: f64, initial_rate: f64, history: History) -> Result<Self> {
        if !(t_filter > 0.0 && t_filter.is_finite()) {
            return Err(domain(format!("filter time constant T = {t_filter} must be positive")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(domain(format!("proportional coefficient s = {s} outside (0, 1)")));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(domain(format!("detuning beta = {beta} outside (0, 1]")));
        }
        if !(delay >= 0.0 && delay.is_finite()) {
            return Err(domain(format!("delay h = {delay} must be non-negative")));
        }
        if !initial_rate.is_finite() {
            return Err(domain("initial rate must be finite"));
        }
        history.validate()?;
        Ok(Self {
            t_filter,
            s,
            beta,
            delay,
            initial_rate,
            history,
        })
    }

    /// Starts at a zero of `φ` with a linear history of the given slope and
    /// `σ̇(0)` chosen so that `b = σ̇(0) + sTφ(σ(−h))` equals `K(0)β = Tβ`.
    pub fn locked_start(
        t_filter: f64,
        s: f64,
        beta: f64,
        delay: f64,
        root: EquilibriumRoot,
        history_slope: f64,
    ) -> Result<Self> {
        let a = beta.asin();
        let sigma0 = match root {
            EquilibriumRoot::Stable => a,
            EquilibriumRoot::Unstable => std::f64::consts::PI - a,
        };
        let history = if history_slope == 0.0 {
            History::constant(sigma0)
        } else {
            History::Linear {
                value_at_zero: sigma0,
                slope: history_slope,
            }
        };
        let phi_past = history.eval(-delay).sin() - beta;
        let initial_rate = t_filter * beta - s * t_filter * phi_past;
        Self::new(t_filter, s, beta, delay, initial_rate, history)
    }

    pub fn nonlinearity(&self) -> PeriodicNonlinearity {
        sine_nonlinearity(self.beta).expect("beta validated on construction")
    }

    pub fn initial_phase(&self) -> f64 {
        self.history.value_at_zero()
    }

    /// Normalised delay `h₀ = h / T`.
    pub fn h0(&self) -> f64 {
        self.delay / self.t_filter
    }

    /// `b = σ̇(0) + sT φ(σ(−h))`.
    pub fn b(&self) -> f64 {
        let phi_past = self.history.eval(-self.delay).sin() - self.beta;
        self.initial_rate + self.s * self.t_filter * phi_past
    }

    /// `K(p) = T (Tsp + 1)/(Tp + 1) e^{−ph}`.
    pub fn transfer(&self, p: Complex64) -> Complex64 {
        let t = self.t_filter;
        t * (t * self.s * p + 1.0) / (t * p + 1.0) * (-p * self.delay).exp()
    }

    /// The history integral
    /// `J(t) = ∫_{−h}^{min(t,h)−h} e^{(λ+h)/T} φ(σ⁰(λ)) dλ`.
    pub fn history_integral(&self) -> Result<HistoryIntegral> {
        HistoryIntegral::new(self)
    }
}

const J_CELLS: usize = 256;

/// Cumulative table for `J`, evaluated exactly up to quadrature error at any
/// point by adding a partial panel to the tabulated prefix.
#[derive(Debug, Clone)]
pub struct HistoryIntegral {
    delay: f64,
    t_filter: f64,
    beta: f64,
    history: History,
    cell: f64,
    cumulative: Vec<f64>,
}

impl HistoryIntegral {
    fn new(pll: &PllSpec) -> Result<Self> {
        let mut me = Self {
            delay: pll.delay,
            t_filter: pll.t_filter,
            beta: pll.beta,
            history: pll.history.clone(),
            cell: pll.delay / J_CELLS as f64,
            cumulative: vec![0.0; J_CELLS + 1],
        };
        if pll.delay > 0.0 {
            for i in 0..J_CELLS {
                let a = -me.delay + i as f64 * me.cell;
                me.cumulative[i + 1] = me.cumulative[i] + me.partial(a, a + me.cell)?;
            }
        }
        Ok(me)
    }

    fn integrand(&self, lambda: f64) -> f64 {
        ((lambda + self.delay) / self.t_filter).exp() * (self.history.eval(lambda).sin() - self.beta)
    }

    fn partial(&self, a: f64, b: f64) -> Result<f64> {
        let opts = QuadOptions {
            abs_tol: 1e-15,
            rel_tol: 1e-13,
            max_subdivisions: 200,
        };
        Ok(integrate(|x| self.integrand(x), a, b, &self.history.breakpoints(), opts)?.value)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.delay == 0.0 || t <= 0.0 {
            return 0.0;
        }
        let upper = t.min(self.delay) - self.delay;
        let offset = upper + self.delay;
        let i = ((offset / self.cell).floor() as usize).min(J_CELLS);
        let left = -self.delay + i as f64 * self.cell;
        let extra = if upper > left {
            let smooth = !self.history.breakpoints().iter().any(|&b| b > left && b < upper);
            let (v, err) = gk15(&|x| self.integrand(x), left, upper);
            if smooth && err <= 1e-15 * (1.0 + v.abs()) {
                v
            } else {
                self.partial(left, upper).unwrap_or(f64::NAN)
            }
        } else {
            0.0
        };
        self.cumulative[i] + extra
    }

    pub fn total(&self) -> f64 {
        self.cumulative[J_CELLS]
    }
}

/// Rewrites the PLL as the unperturbed Volterra equation.
///
/// The filter splits as `sT e^{−ph} + (1−s)T e^{−ph}/(Tp+1)`, so `ρ = −sT`
/// and `γ(t) = (1−s) e^{−(t−h)/T}` for `t ≥ h`. The forcing is
/// `α(t) = e^{−t/T}(b − (1−s)J(t))`; its constant-after-`h` part is kept as an
/// exponential term and the `[0, h]` transient as an explicit function. The
/// envelope uses `r = 1/T` and a fitted `M`.
pub fn pll_to_volterra(pll: &PllSpec) -> Result<SystemSpec> {
    let t = pll.t_filter;
    let rate = 1.0 / t;
    let kernel = ExpSum::new(vec![ExpTerm::new(1.0 - pll.s, rate, pll.delay)?]);

    let j = pll.history_integral()?;
    let j_end = j.total();
    let b = pll.b();
    let forcing_terms = ExpSum::new(vec![ExpTerm::new(b - (1.0 - pll.s) * j_end, rate, 0.0)?]);
    let explicit = if j.cumulative.iter().any(|&c| c != 0.0) {
        let one_minus_s = 1.0 - pll.s;
        let delay = pll.delay;
        let j = Arc::new(j);
        Some(ExplicitFn {
            label: "-(1-s) e^(-t/T) (J(t) - J(h))".into(),
            f: arc_fn(move |tt: f64| {
                if tt < 0.0 || tt >= delay {
                    0.0
                } else {
                    -one_minus_s * (-tt * rate).exp() * (j.eval(tt) - j_end)
                }
            }),
            support_end: delay,
        })
    } else {
        None
    };
    let forcing = Forcing {
        terms: forcing_terms,
        explicit,
    };
    let envelope = DecayEnvelope::fit(&kernel, &forcing, rate)?;
    SystemSpec::new(
        -pll.s * t,
        pll.delay,
        kernel,
        forcing,
        pll.nonlinearity(),
        envelope,
        None,
        pll.history.clone(),
        pll.initial_rate,
    )
}
