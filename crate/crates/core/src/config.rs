//! TOML configuration: a `[pll]` or `[system]` section plus optional
//! `[certificate]` and `[simulation]` sections.
//!
//! ```toml
//! [pll]
//! t_filter = 0.1
//! s = 0.4
//! beta = 0.9
//! h0 = 1.0
//! root = "stable"
//! history_slope = 0.0
//!
//! [certificate]
//! theorem = "t3"
//! strategy = "recipe"
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::certificates::Multipliers;
use crate::error::{Error, Result};
use crate::model::{
    sine_nonlinearity, DecayEnvelope, EquilibriumRoot, ExpSum, ExpTerm, Forcing, History, PllSpec, SystemSpec,
};
use crate::search::{Problem, SearchOptions, Strategy, TheoremChoice};
use crate::simulator::SimOptions;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    pll: Option<RawPll>,
    system: Option<RawSystem>,
    #[serde(default)]
    certificate: CertificateConfig,
    #[serde(default)]
    simulation: SimulationConfig,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Root {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPll {
    t_filter: f64,
    s: f64,
    beta: f64,
    /// Normalised delay `h/T`; give this or `delay`.
    h0: Option<f64>,
    delay: Option<f64>,
    root: Option<Root>,
    history_slope: Option<f64>,
    history: Option<History>,
    /// Defaults to the value that makes `b = Tβ`.
    initial_rate: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    #[serde(default)]
    rho: f64,
    #[serde(default)]
    delay: f64,
    #[serde(default)]
    kernel: Vec<ExpTerm>,
    #[serde(default)]
    forcing: Vec<ExpTerm>,
    /// `φ(σ) = sin σ − β`.
    beta: f64,
    /// Fitted from the kernel and forcing at their slowest rate when absent.
    envelope: Option<DecayEnvelope>,
    mu: Option<f64>,
    history: History,
    #[serde(default)]
    initial_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TheoremName {
    T1,
    T2,
    T3,
    T4,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    #[serde(default = "default_theorem")]
    pub theorem: TheoremName,
    /// Bound constant for the first two theorems.
    pub q: Option<f64>,
    #[serde(default = "default_mu_tilde")]
    pub mu_tilde: f64,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_k_cap")]
    pub k_cap: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Fixed multipliers; when given no search is run.
    pub multipliers: Option<Multipliers>,
}

fn default_theorem() -> TheoremName {
    TheoremName::T3
}
fn default_mu_tilde() -> f64 {
    1.0
}
fn default_strategy() -> Strategy {
    Strategy::Both
}
fn default_k_cap() -> u32 {
    64
}
fn default_budget() -> usize {
    2000
}
fn default_restarts() -> usize {
    8
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            theorem: default_theorem(),
            q: None,
            mu_tilde: default_mu_tilde(),
            strategy: default_strategy(),
            k_cap: default_k_cap(),
            seed: 0,
            budget: default_budget(),
            restarts: default_restarts(),
            multipliers: None,
        }
    }
}

impl CertificateConfig {
    pub fn choice(&self) -> Result<TheoremChoice> {
        let need_q = |name: &str| {
            self.q.ok_or_else(|| Error::Config {
                line: None,
                message: format!("theorem {name} needs the bound constant q in [certificate]"),
            })
        };
        Ok(match self.theorem {
            TheoremName::T1 => TheoremChoice::T1 { q: need_q("t1")? },
            TheoremName::T2 => TheoremChoice::T2 { q: need_q("t2")? },
            TheoremName::T3 => TheoremChoice::T3,
            TheoremName::T4 => TheoremChoice::T4 {
                mu_tilde: self.mu_tilde,
            },
        })
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            strategy: self.strategy,
            k_cap: self.k_cap,
            budget: self.budget,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub mu: Option<f64>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol_rate: f64,
    #[serde(default = "default_tol")]
    pub tol_residual: f64,
    #[serde(default = "default_true")]
    pub early_exit: bool,
    #[serde(default = "default_one")]
    pub record_every: usize,
}

fn default_tol() -> f64 {
    1e-6
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            mu: None,
            dt: None,
            horizon: None,
            tol_rate: default_tol(),
            tol_residual: default_tol(),
            early_exit: true,
            record_every: 1,
        }
    }
}

impl SimulationConfig {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            mu: self.mu,
            dt: self.dt,
            horizon: self.horizon,
            tol_rate: self.tol_rate,
            tol_residual: self.tol_residual,
            early_exit: self.early_exit,
            record_every: self.record_every,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub problem: Problem,
    pub certificate: CertificateConfig,
    pub simulation: SimulationConfig,
}

/// 1-based line of `key = …` inside `[section]`, or of the section header
/// when the key is absent.
fn line_of(src: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            in_section = t == header;
            if in_section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if let (true, Some(k)) = (in_section, key) {
            if t.split('=').next().map(str::trim) == Some(k) {
                return Some(i + 1);
            }
        }
    }
    header_line
}

fn line_at_offset(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

fn anchored(src: &str, section: &str, key: Option<&str>, err: Error) -> Error {
    let message = match err {
        Error::Config { message, .. } => message,
        other => other.to_string(),
    };
    Error::Config {
        line: line_of(src, section, key),
        message,
    }
}

fn pll_problem(src: &str, raw: &RawPll) -> Result<Problem> {
    let at = |key: &'static str| move |e: Error| anchored(src, "pll", Some(key), e);
    sine_nonlinearity(raw.beta).map_err(at("beta"))?;
    let delay = match (raw.h0, raw.delay) {
        (Some(h0), None) => h0 * raw.t_filter,
        (None, Some(d)) => d,
        (None, None) => 0.0,
        (Some(_), Some(_)) => {
            return Err(anchored(
                src,
                "pll",
                Some("delay"),
                Error::Config {
                    line: None,
                    message: "give either h0 or delay, not both".into(),
                },
            ))
        }
    };
    let history = match (&raw.history, raw.root) {
        (Some(h), _) => h.clone(),
        (None, root) => {
            let root = match root.unwrap_or(Root::Stable) {
                Root::Stable => EquilibriumRoot::Stable,
                Root::Unstable => EquilibriumRoot::Unstable,
            };
            let slope = raw.history_slope.unwrap_or(0.0);
            PllSpec::locked_start(raw.t_filter, raw.s, raw.beta, delay, root, slope)
                .map_err(at("t_filter"))?
                .history
        }
    };
    let initial_rate = raw.initial_rate.unwrap_or_else(|| {
        let phi_past = history.eval(-delay).sin() - raw.beta;
        raw.t_filter * raw.beta - raw.s * raw.t_filter * phi_past
    });
    let pll = PllSpec::new(raw.t_filter, raw.s, raw.beta, delay, initial_rate, history).map_err(at("t_filter"))?;
    Problem::from_pll(pll).map_err(at("t_filter"))
}

fn system_problem(src: &str, raw: &RawSystem) -> Result<Problem> {
    let at = |key: &'static str| move |e: Error| anchored(src, "system", Some(key), e);
    let nl = sine_nonlinearity(raw.beta).map_err(at("beta"))?;
    for term in raw.kernel.iter() {
        ExpTerm::new(term.coefficient, term.rate, term.onset).map_err(at("kernel"))?;
    }
    for term in raw.forcing.iter() {
        ExpTerm::new(term.coefficient, term.rate, term.onset).map_err(at("forcing"))?;
    }
    let kernel = ExpSum::new(raw.kernel.clone());
    let forcing = Forcing::from_terms(ExpSum::new(raw.forcing.clone()));
    let envelope = match raw.envelope {
        Some(e) => DecayEnvelope::new(e.amplitude, e.rate).map_err(at("envelope"))?,
        None => {
            let rate = raw
                .kernel
                .iter()
                .chain(raw.forcing.iter())
                .map(|e| e.rate)
                .fold(f64::INFINITY, f64::min);
            let rate = if rate.is_finite() { rate } else { 1.0 };
            DecayEnvelope::fit(&kernel, &forcing, rate).map_err(at("kernel"))?
        }
    };
    let spec = SystemSpec::new(
        raw.rho,
        raw.delay,
        kernel,
        forcing,
        nl,
        envelope,
        raw.mu,
        raw.history.clone(),
        raw.initial_rate,
    )
    .map_err(|e| anchored(src, "system", None, e))?;
    Ok(Problem::from_system(spec))
}

/// Parses a configuration. Every error is a [`Error::Config`] carrying the
/// line of the offending key when it can be located.
pub fn parse(src: &str) -> Result<Config> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| Error::Config {
        line: e.span().map(|s| line_at_offset(src, s.start)),
        message: e.message().to_string(),
    })?;
    let problem = match (&raw.pll, &raw.system) {
        (Some(p), None) => pll_problem(src, p)?,
        (None, Some(s)) => system_problem(src, s)?,
        _ => {
            return Err(Error::Config {
                line: None,
                message: "exactly one of [pll] or [system] is required".into(),
            })
        }
    };
    if let Some(m) = &raw.certificate.multipliers {
        m.validate()
            .map_err(|e| anchored(src, "certificate", Some("multipliers"), e))?;
    }
    if raw.certificate.theorem == TheoremName::T4 && !(raw.certificate.mu_tilde > 0.0) {
        return Err(anchored(
            src,
            "certificate",
            Some("mu_tilde"),
            Error::Config {
                line: None,
                message: format!("mu_tilde = {} must be positive", raw.certificate.mu_tilde),
            },
        ));
    }
    Ok(Config {
        problem,
        certificate: raw.certificate,
        simulation: raw.simulation,
    })
}

pub fn load(path: &Path) -> Result<Config> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Config {
        line: None,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse(&src)
}

/// Configurations for the three published PLL rows (`β = 0.9, 0.92, 0.95`).
pub const FIXTURES: [(&str, &str); 3] = [
    ("pll_beta_0_90", include_str!("../fixtures/pll_beta_0_90.toml")),
    ("pll_beta_0_92", include_str!("../fixtures/pll_beta_0_92.toml")),
    ("pll_beta_0_95", include_str!("../fixtures/pll_beta_0_95.toml")),
];
