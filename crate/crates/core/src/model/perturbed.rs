//! Kernel and forcing of the first-order Volterra form of the singularly
//! perturbed equation `μσ̈ + σ̇ = …`.
//!
//! Solving for `σ̇` gives `σ̇ = α_μ(t) − ∫₀ᵗ γ_μ(t−s) φ(σ(s)) ds` with
//!
//! * `α_μ(t) = σ̇(0)e^{−t/μ} + (1/μ)∫₀ᵗ e^{(λ−t)/μ} α(λ)dλ + (ρ/μ) J₀(t)`
//! * `γ_μ(t) = (1/μ)∫₀ᵗ e^{(λ−t)/μ} γ(λ)dλ − (ρ/μ) e^{(h−t)/μ}·1[t ≥ h]`
//!
//! where `J₀` integrates the history. Exponential terms are smoothed in
//! closed form.

use super::system::{ExpTerm, SystemSpec};
use crate::error::{domain, Result};
use crate::quadrature::{integrate, QuadOptions};

// Contributions older than this many multiples of μ are below e^{-60}.
const WINDOW: f64 = 60.0;

fn check(mu: f64, t: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(domain(format!("mu = {mu} must be positive")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(domain(format!("t = {t} must be non-negative")));
    }
    Ok(())
}

/// `(1/μ)∫₀ᵗ e^{(λ−t)/μ} c e^{−a(λ−o)}1[λ ≥ o] dλ`, including the confluent
/// case `aμ = 1`.
pub fn smoothed_term(term: &ExpTerm, mu: f64, t: f64) -> f64 {
    let s = t - term.onset;
    if s <= 0.0 {
        return 0.0;
    }
    let a = term.rate;
    let d = 1.0 / mu - a;
    let x = s * d;
    let value = if x.abs() < 1e-8 {
        (-a * s).exp() * s * (1.0 - 0.5 * x) / mu
    } else if d > 0.0 {
        (-a * s).exp() * (-(-x).exp_m1()) / (mu * d)
    } else {
        (-s / mu).exp() * x.exp_m1() / (mu * d)
    };
    term.coefficient * value
}

pub fn perturbed_kernel(spec: &SystemSpec, mu: f64, t: f64) -> Result<f64> {
    check(mu, t)?;
    let smooth: f64 = spec.kernel.terms.iter().map(|e| smoothed_term(e, mu, t)).sum();
    let delayed = if t >= spec.delay && spec.rho != 0.0 {
        spec.rho / mu * ((spec.delay - t) / mu).exp()
    } else {
        0.0
    };
    Ok(smooth - delayed)
}

pub fn perturbed_forcing(spec: &SystemSpec, mu: f64, t: f64) -> Result<f64> {
    check(mu, t)?;
    let opts = QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_subdivisions: 500,
    };
    let mut value = spec.initial_rate * (-t / mu).exp();
    value += spec
        .forcing
        .terms
        .terms
        .iter()
        .map(|e| smoothed_term(e, mu, t))
        .sum::<f64>();

    if let Some(explicit) = &spec.forcing.explicit {
        let lo = (t - WINDOW * mu).max(0.0);
        let hi = t.min(explicit.support_end);
        if hi > lo {
            let f = &explicit.f;
            value += integrate(|l| ((l - t) / mu).exp() * f(l), lo, hi, &[], opts)?.value / mu;
        }
    }

    if spec.delay > 0.0 && spec.rho != 0.0 {
        let h = spec.delay;
        let upper = t.min(h) - h;
        let lo = (-h).max(upper - WINDOW * mu);
        if upper > lo {
            let nl = &spec.nonlinearity;
            let hist = &spec.history;
            let j0 = integrate(
                |l| ((l + h - t) / mu).exp() * nl.eval(hist.eval(l)),
                lo,
                upper,
                &hist.breakpoints(),
                opts,
            )?
            .value;
            value += spec.rho / mu * j0;
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sine_nonlinearity, DecayEnvelope, ExpSum, Forcing, History};

    fn spec(rho: f64, delay: f64, kernel: Vec<ExpTerm>, forcing: Vec<ExpTerm>, rate0: f64) -> SystemSpec {
        let kernel = ExpSum::new(kernel);
        let forcing = Forcing::from_terms(ExpSum::new(forcing));
        let env = DecayEnvelope::fit(&kernel, &forcing, 1.0).unwrap();
        SystemSpec::new(
            rho,
            delay,
            kernel,
            forcing,
            sine_nonlinearity(0.5).unwrap(),
            env,
            None,
            History::constant(0.3),
            rate0,
        )
        .unwrap()
    }

    #[test]
    fn empty_kernel_gives_zero() {
        let s = spec(0.0, 0.0, vec![], vec![], 0.0);
        for t in [0.0, 0.5, 3.0] {
            assert_eq!(perturbed_kernel(&s, 0.1, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn confluent_case_is_t_exp_minus_t() {
        let s = spec(0.0, 0.0, vec![ExpTerm::new(1.0, 1.0, 0.0).unwrap()], vec![], 0.0);
        for t in [0.0f64, 0.1, 1.0, 2.5, 7.0] {
            let expected = t * (-t).exp();
            assert!((perturbed_kernel(&s, 1.0, t).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn forcing_starts_at_initial_rate() {
        let s = spec(0.2, 0.5, vec![], vec![ExpTerm::new(1.0, 1.0, 0.0).unwrap()], 0.7);
        assert!((perturbed_forcing(&s, 0.05, 0.0).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive_mu() {
        let s = spec(0.0, 0.0, vec![], vec![], 0.0);
        assert!(perturbed_kernel(&s, 0.0, 1.0).is_err());
        assert!(perturbed_forcing(&s, -1.0, 1.0).is_err());
    }

    #[test]
    fn near_confluent_matches_quadrature() {
        let term = ExpTerm::new(1.3, 2.0, 0.1).unwrap();
        let t = 1.7;
        for eps in [0.0, 1e-12, 1e-9, 3e-9, 1e-8, 1e-6, 1e-3] {
            let mu = 0.5 * (1.0 + eps);
            let direct = integrate(
                |l| ((l - t) / mu).exp() * term.eval(l),
                term.onset,
                t,
                &[],
                QuadOptions::default(),
            )
            .unwrap()
            .value
                / mu;
            let v = smoothed_term(&term, mu, t);
            assert!((v - direct).abs() < 1e-13, "{eps}: {v} vs {direct}");
        }
    }
}
