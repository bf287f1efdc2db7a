//! Explicit bounds on the quadratic functional `I_T`: `q`, its `μ`-dependent
//! version `q_μ`, the limit `q₀`, the PLL closed form, and the tail
//! constants `λ`, `q₃`.

use serde::{Deserialize, Serialize};

use crate::certificates::Multipliers;
use crate::error::{domain, Result};
use crate::model::SystemSpec;

fn non_negative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(domain(format!("{name} = {v} must be finite and non-negative")));
    }
    Ok(())
}

/// `q = (1/r)(ϑMm + 2(ε+τ)Mm(M/r + ρ) + (ε+τ)M²/2)`.
pub fn lemma2_q(theta: f64, eps: f64, tau: f64, big_m: f64, r: f64, m: f64, rho: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(domain(format!("decay rate r = {r} must be positive")));
    }
    for (name, v) in [("theta", theta), ("eps", eps), ("tau", tau), ("M", big_m), ("m", m), ("rho", rho)] {
        non_negative(name, v)?;
    }
    let et = eps + tau;
    Ok((theta * big_m * m + 2.0 * et * big_m * m * (big_m / r + rho) + et * big_m * big_m / 2.0) / r)
}

/// `q = T²(A + Bh₀ + Ch₀²)` for the PLL started with `b = K(0)β`.
pub fn pll_q(t: f64, s: f64, beta: f64, h0: f64) -> f64 {
    let (a, b, c) = pll_q_coefficients(s, beta);
    t * t * (a + b * h0 + c * h0 * h0)
}

/// `(A, B, C) = (7β²/2 + 3, 3(1−s)(1+β)(3β+1), (3/2)(1−s)²(1+β)²)`.
pub fn pll_q_coefficients(s: f64, beta: f64) -> (f64, f64, f64) {
    (
        3.5 * beta * beta + 3.0,
        3.0 * (1.0 - s) * (1.0 + beta) * (3.0 * beta + 1.0),
        1.5 * (1.0 - s).powi(2) * (1.0 + beta).powi(2),
    )
}

/// `λ = √(δ|α₁|α₂/τ)` and
/// `q₃ = √τ W² m² / (8(ε+τ)√(δ|α₁|α₂))` with
/// `W = ϑ + √(τδ|α₁|α₂)(α₁⁻¹ + α₂⁻¹)`.
pub fn lemma1_tail_constants(
    theta: f64,
    eps: f64,
    delta: f64,
    tau: f64,
    alpha1: f64,
    alpha2: f64,
    m: f64,
) -> Result<(f64, f64)> {
    if !(tau > 0.0 && delta > 0.0) {
        return Err(domain(format!("tau = {tau} and delta = {delta} must be positive")));
    }
    if !(alpha1 < 0.0 && alpha2 > 0.0) {
        return Err(domain(format!("slope bounds must satisfy alpha1 < 0 < alpha2, got {alpha1}, {alpha2}")));
    }
    let prod = alpha1.abs() * alpha2;
    let lambda = (delta * prod / tau).sqrt();
    let w = theta + (tau * delta * prod).sqrt() * (1.0 / alpha1 + 1.0 / alpha2);
    let q3 = tau.sqrt() * w * w * m * m / (8.0 * (eps + tau) * (delta * prod).sqrt());
    Ok((lambda, q3))
}

/// Inputs shared by `q`, `q₀` and `q_μ`.
///
/// `rho` enters the formulas as a magnitude; callers pass `|ρ|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub theta: f64,
    pub eps: f64,
    pub tau: f64,
    pub big_m: f64,
    pub r: f64,
    pub m: f64,
    pub rho: f64,
    pub h: f64,
    pub sigma_dot0: f64,
}

impl BoundInputs {
    pub fn from_spec(spec: &SystemSpec, mult: &Multipliers) -> Self {
        Self {
            theta: mult.theta,
            eps: mult.eps,
            tau: mult.tau,
            big_m: spec.envelope.amplitude,
            r: spec.envelope.rate,
            m: spec.nonlinearity.sup_abs(),
            rho: spec.rho.abs(),
            h: spec.delay,
            sigma_dot0: spec.initial_rate,
        }
    }

    pub fn lemma2_q(&self) -> Result<f64> {
        lemma2_q(self.theta, self.eps, self.tau, self.big_m, self.r, self.m, self.rho)
    }

    /// `q₀ = q + (ϑm + 2(ε+τ)m(M/r + ρ))ρmh + (ε+τ)ρ²m²h`.
    pub fn q0(&self) -> Result<f64> {
        let q = self.lemma2_q()?;
        non_negative("h", self.h)?;
        let et = self.eps + self.tau;
        let (m, rho, h) = (self.m, self.rho, self.h);
        let lead = self.theta * m + 2.0 * et * m * (self.big_m / self.r + rho);
        Ok(q + lead * rho * m * h + et * rho * rho * m * m * h)
    }

    /// `q_μ`, defined for `0 < μ < 1/r`:
    ///
    /// `(ϑm + 2(ε+τ)m(ρ + M/r))(μ|σ̇₀| + M/r + ρmh)
    ///  + (ε+τ)[(μ/2)σ̇₀² + M²/(2(1−rμ)²)(μ − 4μ/(1−rμ) + 1/r)
    ///  + ρ²m²(h + μe^{−h/μ} − μ)]`.
    pub fn q_mu(&self, mu: f64) -> Result<f64> {
        // Validates the shared inputs.
        self.lemma2_q()?;
        non_negative("h", self.h)?;
        if !(mu > 0.0 && mu * self.r < 1.0) {
            return Err(domain(format!(
                "mu = {mu} outside (0, 1/r) with r = {}",
                self.r
            )));
        }
        if !self.sigma_dot0.is_finite() {
            return Err(domain("initial rate must be finite"));
        }
        let et = self.eps + self.tau;
        let (m, rho, h, r, big_m) = (self.m, self.rho, self.h, self.r, self.big_m);
        let one_minus = 1.0 - r * mu;
        let lead = self.theta * m + 2.0 * et * m * (rho + big_m / r);
        let first = lead * (mu * self.sigma_dot0.abs() + big_m / r + rho * m * h);
        let delay_term = if h > 0.0 {
            h + mu * (-h / mu).exp() - mu
        } else {
            0.0
        };
        let bracket = mu / 2.0 * self.sigma_dot0 * self.sigma_dot0
            + big_m * big_m / (2.0 * one_minus * one_minus) * (mu - 4.0 * mu / one_minus + 1.0 / r)
            + rho * rho * m * m * delay_term;
        Ok(first + et * bracket)
    }
}

/// All explicit constants for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub q: f64,
    pub q_mu: Option<f64>,
    pub q0: f64,
    pub lambda_opt: f64,
    pub q3: f64,
    pub inputs: BoundInputs,
    pub delta: f64,
    pub mu: Option<f64>,
}

impl BoundConstants {
    pub fn compute(inputs: BoundInputs, delta: f64, alpha1: f64, alpha2: f64, mu: Option<f64>) -> Result<Self> {
        let q = inputs.lemma2_q()?;
        let q0 = inputs.q0()?;
        let q_mu = mu.map(|mu| inputs.q_mu(mu)).transpose()?;
        let (lambda_opt, q3) =
            lemma1_tail_constants(inputs.theta, inputs.eps, delta, inputs.tau, alpha1, alpha2, inputs.m)?;
        Ok(Self {
            q,
            q_mu,
            q0,
            lambda_opt,
            q3,
            inputs,
            delta,
            mu,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> BoundInputs {
        BoundInputs {
            theta: 1.0,
            eps: 4.99,
            tau: 0.00128,
            big_m: 1.8,
            r: 10.0,
            m: 1.9,
            rho: 0.04,
            h: 0.1,
            sigma_dot0: 0.09,
        }
    }

    #[test]
    fn lemma2_hand_value() {
        assert!((lemma2_q(1.0, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0).unwrap() - 3.5).abs() < 1e-15);
        assert_eq!(lemma2_q(1.0, 0.5, 0.5, 0.0, 1.0, 1.0, 0.3).unwrap(), 0.0);
        assert!(lemma2_q(1.0, 0.5, 0.5, 1.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn doubling_m_more_than_doubles_q() {
        let q1 = lemma2_q(1.0, 0.5, 0.5, 1.0, 2.0, 1.0, 0.1).unwrap();
        let q2 = lemma2_q(1.0, 0.5, 0.5, 2.0, 2.0, 1.0, 0.1).unwrap();
        assert!(q2 > 2.0 * q1);
    }

    #[test]
    fn pll_q_row() {
        let (a, b, c) = pll_q_coefficients(0.4, 0.9);
        assert!((a - 5.835).abs() < 1e-12);
        assert!((b - 12.654).abs() < 1e-12);
        assert!((c - 1.9494).abs() < 1e-12);
        assert!((pll_q(0.1, 0.4, 0.9, 1.0) - 0.204384).abs() < 1e-12);
        assert_eq!(pll_q(0.1, 0.4, 0.9, 0.0), 0.1 * 0.1 * a);
    }

    #[test]
    fn tail_constants() {
        let (l, _) = lemma1_tail_constants(1.0, 0.0, 1.0, 1.0, -1.0, 1.0, 1.0).unwrap();
        assert_eq!(l, 1.0);
        let (_, q3) = lemma1_tail_constants(1.0, 0.0, 1.0, 1.0, -1.0, 1.0, 1.0).unwrap();
        assert!((q3 - 0.125).abs() < 1e-15);
        assert!(lemma1_tail_constants(1.0, 0.0, 0.0, 1.0, -1.0, 1.0, 1.0).is_err());
        assert!(lemma1_tail_constants(1.0, 0.0, 1.0, 0.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn q0_without_delay_is_q() {
        let mut i = inputs();
        i.h = 0.0;
        assert_eq!(i.q0().unwrap(), i.lemma2_q().unwrap());
        let mut i = inputs();
        i.rho = 0.0;
        assert_eq!(i.q0().unwrap(), i.lemma2_q().unwrap());
    }

    #[test]
    fn q_mu_hand_expansion_without_delay() {
        let mut i = inputs();
        i.h = 0.0;
        i.rho = 0.0;
        i.sigma_dot0 = 0.0;
        let mu = 0.01;
        let et = i.eps + i.tau;
        let om = 1.0 - i.r * mu;
        let expected = (i.theta * i.m + 2.0 * et * i.m * i.big_m / i.r) * (i.big_m / i.r)
            + et * i.big_m * i.big_m / (2.0 * om * om) * (mu - 4.0 * mu / om + 1.0 / i.r);
        assert!((i.q_mu(mu).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn q_mu_without_nonlinearity() {
        let mut i = inputs();
        i.m = 0.0;
        let mu = 0.02;
        let et = i.eps + i.tau;
        let om = 1.0 - i.r * mu;
        let expected = et
            * (mu / 2.0 * i.sigma_dot0 * i.sigma_dot0
                + i.big_m * i.big_m / (2.0 * om * om) * (mu - 4.0 * mu / om + 1.0 / i.r));
        assert!((i.q_mu(mu).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn q_mu_tends_to_q0() {
        let i = inputs();
        let q0 = i.q0().unwrap();
        assert!((i.q_mu(1e-8).unwrap() - q0).abs() < 1e-6 * q0);
    }

    #[test]
    fn q_mu_domain() {
        let i = inputs();
        assert!(i.q_mu(0.0).is_err());
        assert!(i.q_mu(0.1).is_err());
        assert!(i.q_mu(0.2).is_err());
    }
}
