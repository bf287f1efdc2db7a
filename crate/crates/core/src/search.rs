//! Searching for multipliers that certify the smallest cycle bound.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{pll_q, BoundInputs};
use crate::certificates::{
    matrices_positive_definite, phi_factor, p_factor, InitialCondition, Multipliers, Prepared, QSource, QUsed,
    SlipCertificate, Theorem, Theorem4Options, Verdict,
};
use crate::error::{domain, Result};
use crate::format::g12;
use crate::frequency::{eval_k, popov_with_scale, TransferFunction};
use crate::model::{pll_to_volterra, PllSpec, SystemSpec};
use crate::simulator::{count_slipped_cycles, integrate, SimOptions};

/// Relative backoff applied to `α₀ = β₀` so the frequency inequality holds
/// strictly at `ω = 0`, where the recipe makes it vanish.
pub const RECIPE_BACKOFF: f64 = 1e-12;

/// `γ₀ = max{sh₀²/2, (h₀+1−s)²/2}`.
pub fn recipe_gamma0(s: f64, h0: f64) -> f64 {
    (0.5 * s * h0 * h0).max(0.5 * (h0 + 1.0 - s).powi(2))
}

/// The closed-form PLL multipliers: `ϑ = 1`, `a = 1`,
/// `γ₀ = max{sh₀²/2, (h₀+1−s)²/2}`, `α₀ = β₀ = (1 − γ₀T⁴)/2`,
/// `ε = β₀/T`, `δ = α₀T`, `τ = γ₀T³`.
pub fn pll_recipe(t: f64, s: f64, h0: f64) -> Result<Multipliers> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(domain(format!("T = {t} must be positive")));
    }
    if !(h0 >= 0.0 && h0.is_finite()) {
        return Err(domain(format!("h0 = {h0} must be non-negative")));
    }
    if t > 0.9 || h0 > 1.0 {
        log::warn!("recipe outside T <= 0.9, h0 <= 1 (T = {t}, h0 = {h0})");
    }
    let gamma0 = recipe_gamma0(s, h0);
    if gamma0 == 0.0 {
        return Err(domain("recipe degenerate: gamma0 = 0 gives tau = 0"));
    }
    let g = gamma0 * t.powi(4);
    if g >= 1.0 {
        return Err(domain(format!("recipe degenerate: gamma0 T^4 = {g} >= 1")));
    }
    let alpha0 = 0.5 * (1.0 - g) * (1.0 - RECIPE_BACKOFF);
    Multipliers::new(1.0, alpha0 / t, alpha0 * t, gamma0 * t.powi(3), 1.0)
}

/// `⌊q / (8√(εδ)(β arcsin β + √(1−β²)) − 2πβ)⌋`, the closed-form count of
/// slipped cycles for the sine PLL with `a = 1`, `ϑ = 1`. `None` when the
/// denominator is not positive.
pub fn pll_r0_formula(eps: f64, delta: f64, beta: f64, q: f64) -> Option<u32> {
    let d = 8.0 * (eps * delta).sqrt() * (beta * beta.asin() + (1.0 - beta * beta).sqrt())
        - 2.0 * std::f64::consts::PI * beta;
    (d > 0.0).then(|| (q / d).floor() as u32)
}

/// The system to certify, with its PLL form when there is one.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: SystemSpec,
    pub tf: TransferFunction,
    pub pll: Option<PllSpec>,
}

impl Problem {
    pub fn from_pll(pll: PllSpec) -> Result<Self> {
        Ok(Self {
            system: pll_to_volterra(&pll)?,
            tf: TransferFunction::from_pll(&pll)?,
            pll: Some(pll),
        })
    }

    pub fn from_system(system: SystemSpec) -> Self {
        Self {
            tf: TransferFunction::from_spec(&system),
            system,
            pll: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "theorem", rename_all = "snake_case")]
pub enum TheoremChoice {
    T1 { q: f64 },
    T2 { q: f64 },
    T3,
    T4 { mu_tilde: f64 },
}

impl TheoremChoice {
    pub fn theorem(&self) -> Theorem {
        match self {
            TheoremChoice::T1 { .. } => Theorem::T1,
            TheoremChoice::T2 { .. } => Theorem::T2,
            TheoremChoice::T3 => Theorem::T3,
            TheoremChoice::T4 { .. } => Theorem::T4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Recipe,
    Free,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub strategy: Strategy,
    pub k_cap: u32,
    /// Objective evaluations per `k`, shared by the restarts.
    pub budget: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Both,
            k_cap: 64,
            budget: 2000,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearMiss {
    pub k: u32,
    pub multipliers: Multipliers,
    /// `min(frequency margin, positive-definiteness margin)`, normalised.
    pub margin: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub certificate: Option<SlipCertificate>,
    pub near_miss: Option<NearMiss>,
    pub evaluations: usize,
}

/// Cached data for the cheap surrogate used inside the simplex search.
struct Surrogate<'a> {
    problem: &'a Problem,
    choice: TheoremChoice,
    omegas: Vec<f64>,
    ks: Vec<Complex64>,
    alpha1: f64,
    alpha2: f64,
    int_phi: f64,
    int_abs: f64,
    int_abs_phi: f64,
    /// `|φ|` and `Φ` at midpoints of a uniform grid over one period.
    abs_phi: Vec<f64>,
    big_phi: Vec<f64>,
    cell: f64,
}

const SURROGATE_OMEGAS: usize = 800;
const SURROGATE_CELLS: usize = 512;

impl<'a> Surrogate<'a> {
    fn new(problem: &'a Problem, choice: TheoremChoice, prepared_ints: (f64, f64, f64)) -> Result<Self> {
        let nl = &problem.system.nonlinearity;
        let w0 = 1.0 / problem.system.time_scale();
        let mut omegas = vec![0.0];
        for i in 0..SURROGATE_OMEGAS {
            let e = -4.0 + 8.0 * i as f64 / (SURROGATE_OMEGAS - 1) as f64;
            omegas.push(w0 * 10f64.powf(e));
        }
        let ks = omegas.iter().map(|&w| eval_k(&problem.tf, w)).collect();
        let cell = nl.period() / SURROGATE_CELLS as f64;
        let mut abs_phi = Vec::with_capacity(SURROGATE_CELLS);
        let mut big_phi = Vec::with_capacity(SURROGATE_CELLS);
        for i in 0..SURROGATE_CELLS {
            let s = (i as f64 + 0.5) * cell;
            abs_phi.push(nl.eval(s).abs());
            big_phi.push(phi_factor(nl, s)?);
        }
        Ok(Self {
            problem,
            choice,
            omegas,
            ks,
            alpha1: nl.alpha1(),
            alpha2: nl.alpha2(),
            int_phi: prepared_ints.0,
            int_abs: prepared_ints.1,
            int_abs_phi: prepared_ints.2,
            abs_phi,
            big_phi,
            cell,
        })
    }

    fn decode(x: &[f64; 5]) -> Option<Multipliers> {
        let m = Multipliers {
            theta: x[0].exp(),
            eps: x[1].exp(),
            delta: x[2].exp(),
            tau: x[3].exp(),
            a: x[4].clamp(0.0, 1.0),
        };
        m.validate().ok().map(|_| m)
    }

    fn bound_constant(&self, m: &Multipliers) -> Option<f64> {
        match self.choice {
            TheoremChoice::T1 { q } | TheoremChoice::T2 { q } => Some(q),
            TheoremChoice::T3 => BoundInputs::from_spec(&self.problem.system, m).lemma2_q().ok(),
            TheoremChoice::T4 { .. } => BoundInputs::from_spec(&self.problem.system, m).q0().ok(),
        }
    }

    fn fdi_margin(&self, m: &Multipliers) -> f64 {
        self.omegas
            .iter()
            .zip(&self.ks)
            .map(|(&w, &k)| {
                let (v, scale) = popov_with_scale(k, m, self.alpha1, self.alpha2, w);
                v / scale
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Normalised LDLᵀ pivots of the `T_j`, or the scalar condition's
    /// relative slack for the first theorem.
    fn algebraic_margin(&self, m: &Multipliers, k: u32, x: f64) -> f64 {
        let shift = x / (m.theta * k as f64);
        let nums = [self.int_phi - shift, self.int_phi + shift];
        if let TheoremChoice::T1 { .. } = self.choice {
            let int_abs_p: f64 = self
                .abs_phi
                .iter()
                .zip(&self.big_phi)
                .map(|(&a, &b)| a * p_factor(m.eps, m.tau, b))
                .sum::<f64>()
                * self.cell;
            return nums
                .iter()
                .map(|n| 1.0 - (m.theta * n / int_abs_p).powi(2) / (4.0 * m.delta))
                .fold(f64::INFINITY, f64::min);
        }
        nums.iter()
            .map(|n| {
                let b = m.a * m.theta * n / self.int_abs / 2.0;
                let c = m.a0() * m.theta * n / self.int_abs_phi / 2.0;
                let d2 = m.delta - b * b / m.eps;
                if d2 <= 0.0 {
                    return d2 / m.delta - 1.0;
                }
                (d2 / m.delta).min((m.tau - c * c / d2) / m.tau)
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Positive when the surrogate expects a certificate.
    fn margin(&self, x: &[f64; 5], k: u32) -> f64 {
        let Some(m) = Self::decode(x) else {
            return -1e3;
        };
        let Some(q) = self.bound_constant(&m) else {
            return -1e3;
        };
        let v = self.fdi_margin(&m).min(self.algebraic_margin(&m, k, q));
        let out_of_range = (x[4] - x[4].clamp(0.0, 1.0)).abs();
        if v.is_finite() {
            v - out_of_range
        } else {
            -1e3
        }
    }
}

/// Nelder–Mead on `f` (minimised) from `start` with initial step `step`,
/// stopping after `budget` evaluations. Returns the best point and value.
fn nelder_mead<F: Fn(&[f64; 5]) -> f64>(f: F, start: [f64; 5], step: f64, budget: usize) -> ([f64; 5], f64, usize) {
    const N: usize = 5;
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut p = start;
        p[i] += if i == 4 { -0.25 } else { step };
        simplex.push((p, f(&p)));
    }
    let mut evals = N + 1;
    let combine = |a: &[f64; N], b: &[f64; N], t: f64| -> [f64; N] {
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = a[i] + t * (b[i] - a[i]);
        }
        out
    };
    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[N].1 - simplex[0].1;
        if spread.abs() < 1e-15 && evals > 4 * N {
            break;
        }
        let mut centroid = [0.0; N];
        for (p, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += p[i] / N as f64;
            }
        }
        let worst = simplex[N];
        let reflected = combine(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        evals += 1;
        if fr < simplex[0].1 {
            let expanded = combine(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            evals += 1;
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let (target, ft) = if fr < worst.1 { (reflected, fr) } else { worst };
            let contracted = combine(&centroid, &target, 0.5);
            let fc = f(&contracted);
            evals += 1;
            if fc < ft {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let p = combine(&best, &entry.0, 0.5);
                    *entry = (p, f(&p));
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1, evals)
}

fn encode(m: &Multipliers) -> [f64; 5] {
    [m.theta.ln(), m.eps.ln(), m.delta.ln(), m.tau.ln(), m.a]
}

/// Starting point when there is no PLL recipe: `ϑ = 1`, `a = 1`, and
/// `ε`, `δ`, `τ` scaled by `K(0)` the way the recipe scales with `T`.
fn generic_start(problem: &Problem) -> Multipliers {
    let k0 = eval_k(&problem.tf, 0.0).re.abs().max(1e-6);
    Multipliers {
        theta: 1.0,
        eps: 0.5 / k0,
        delta: 0.5 * k0,
        tau: k0.powi(3),
        a: 1.0,
    }
}

fn lex_key(m: &Multipliers) -> [f64; 5] {
    [m.theta, m.eps, m.delta, m.tau, m.a]
}

fn lex_less(a: &Multipliers, b: &Multipliers) -> bool {
    let (ka, kb) = (lex_key(a), lex_key(b));
    for i in 0..5 {
        match ka[i].total_cmp(&kb[i]) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            _ => {}
        }
    }
    false
}

fn check(problem: &Problem, prep: &Prepared, choice: TheoremChoice, k: u32, recipe: bool) -> Result<Verdict> {
    let system = &problem.system;
    let ic = InitialCondition::Phase(system.initial_phase());
    match choice {
        TheoremChoice::T1 { q } => prep.theorem1(k, q),
        TheoremChoice::T2 { q } => prep.theorem2(k, q),
        TheoremChoice::T3 => {
            let q = match (&problem.pll, recipe) {
                (Some(p), true) => QUsed {
                    value: pll_q(p.t_filter, p.s, p.beta, p.h0()),
                    source: QSource::PllFormula,
                },
                _ => QUsed {
                    value: BoundInputs::from_spec(system, &prep.multipliers).lemma2_q()?,
                    source: QSource::Lemma2,
                },
            };
            prep.theorem3(&system.nonlinearity, k, q, ic)
        }
        TheoremChoice::T4 { mu_tilde } => {
            let opts = Theorem4Options {
                initial: ic,
                ..Default::default()
            };
            prep.theorem4(system, &problem.tf, k, mu_tilde, &opts)
        }
    }
}

/// Smallest `k` with a verified certificate, trying `k = 1, 2, …` up to the
/// cap. At each `k` the PLL recipe is tried first, then seeded simplex
/// restarts on a surrogate; surrogate winners are verified in full.
pub fn min_certified_k(problem: &Problem, choice: TheoremChoice, opts: &SearchOptions) -> Result<SearchOutcome> {
    let use_recipe = matches!(opts.strategy, Strategy::Recipe | Strategy::Both) && problem.pll.is_some();
    let use_free = matches!(opts.strategy, Strategy::Free | Strategy::Both);
    let nl = &problem.system.nonlinearity;

    let recipe = match (&problem.pll, use_recipe) {
        (Some(p), true) => Some(Prepared::new(
            &problem.tf,
            nl,
            &pll_recipe(p.t_filter, p.s, p.h0())?,
        )?),
        _ => None,
    };
    let start = match &recipe {
        Some(r) => r.multipliers,
        None => match &problem.pll {
            Some(p) => pll_recipe(p.t_filter, p.s, p.h0()).unwrap_or_else(|_| generic_start(problem)),
            None => generic_start(problem),
        },
    };
    let base_ints = match &recipe {
        Some(r) => r.integrals,
        None => crate::certificates::periodic_integrals(nl, start.eps, start.tau)?,
    };
    let surrogate = Surrogate::new(
        problem,
        choice,
        (base_ints.int_phi, base_ints.int_abs, base_ints.int_abs_phi),
    )?;

    let mut near_miss: Option<NearMiss> = None;
    let mut evaluations = 0;
    let mut note = |k: u32, m: Multipliers, margin: f64, reason: String| {
        if near_miss.as_ref().is_none_or(|n| margin > n.margin) {
            near_miss = Some(NearMiss {
                k,
                multipliers: m,
                margin,
                reason,
            });
        }
    };

    let restarts = opts.restarts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let decade = std::f64::consts::LN_10;
    let mut starts = vec![encode(&start)];
    for _ in 1..restarts {
        let mut x = encode(&start);
        for v in x.iter_mut().take(4).skip(1) {
            *v += decade * rng.random_range(-1.5..1.5);
        }
        x[4] = rng.random_range(0.0..1.0);
        starts.push(x);
    }
    let per_restart = (opts.budget / restarts).max(12);

    for k in 1..=opts.k_cap {
        if let Some(prep) = &recipe {
            match check(problem, prep, choice, k, true)? {
                Verdict::Certified(c) => {
                    return Ok(SearchOutcome {
                        certificate: Some(*c),
                        near_miss,
                        evaluations,
                    })
                }
                Verdict::Rejected(r) => {
                    let x = encode(&prep.multipliers);
                    note(k, prep.multipliers, surrogate.margin(&x, k), r.reason.clone());
                }
            }
        }
        if !use_free {
            continue;
        }
        let runs: Vec<([f64; 5], f64, usize)> = starts
            .par_iter()
            .map(|&x0| nelder_mead(|x| -surrogate.margin(x, k), x0, decade, per_restart))
            .collect();
        let mut winners = Vec::new();
        for (x, value, evals) in runs {
            evaluations += evals;
            let Some(m) = Surrogate::decode(&x) else {
                continue;
            };
            if value >= 0.0 {
                note(k, m, -value, "surrogate margin not positive".into());
                continue;
            }
            let prep = Prepared::new(&problem.tf, nl, &m)?;
            match check(problem, &prep, choice, k, false)? {
                Verdict::Certified(c) => winners.push(*c),
                Verdict::Rejected(r) => note(k, m, -value, r.reason.clone()),
            }
        }
        let mut best: Option<SlipCertificate> = None;
        for c in winners {
            if best
                .as_ref()
                .is_none_or(|b| lex_less(&c.params.multipliers, &b.params.multipliers))
            {
                best = Some(c);
            }
        }
        if let Some(c) = best {
            if c.revalidate()? {
                return Ok(SearchOutcome {
                    certificate: Some(c),
                    near_miss,
                    evaluations,
                });
            }
        }
    }
    Ok(SearchOutcome {
        certificate: None,
        near_miss,
        evaluations,
    })
}

/// Smallest `k ≤ k_cap` certified by one fixed multiplier set.
pub fn certify_fixed(problem: &Problem, m: &Multipliers, choice: TheoremChoice, k_cap: u32) -> Result<SearchOutcome> {
    let prep = Prepared::new(&problem.tf, &problem.system.nonlinearity, m)?;
    let mut near_miss = None;
    for k in 1..=k_cap {
        match check(problem, &prep, choice, k, false)? {
            Verdict::Certified(c) => {
                return Ok(SearchOutcome {
                    certificate: Some(*c),
                    near_miss,
                    evaluations: 0,
                })
            }
            Verdict::Rejected(r) => {
                near_miss = Some(NearMiss {
                    k,
                    multipliers: *m,
                    margin: f64::NAN,
                    reason: r.reason,
                })
            }
        }
    }
    Ok(SearchOutcome {
        certificate: None,
        near_miss,
        evaluations: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuSweepRow {
    pub mu: f64,
    pub q_mu: f64,
    pub pd_ok: bool,
    pub sim_slips: Option<u32>,
}

/// `q_μ`, positive definiteness of the `T_j` at the certified `k`, and a
/// simulated slip count for each `μ`. Simulation is skipped when `sim` is
/// `None`.
pub fn mu_sweep(
    problem: &Problem,
    cert: &SlipCertificate,
    mus: &[f64],
    sim: Option<&SimOptions>,
) -> Result<Vec<MuSweepRow>> {
    let m = cert.params.multipliers;
    let inputs = BoundInputs::from_spec(&problem.system, &m);
    let rows: Vec<Result<MuSweepRow>> = mus
        .par_iter()
        .map(|&mu| {
            let q_mu = inputs.q_mu(mu)?;
            let pd_ok = matrices_positive_definite(&cert.integrals, &m, cert.k, q_mu)?;
            let sim_slips = match sim {
                Some(o) => {
                    let o = SimOptions { mu: Some(mu), ..*o };
                    let traj = integrate(&problem.system, &o)?;
                    Some(count_slipped_cycles(&traj, problem.system.nonlinearity.period())?.k)
                }
                None => None,
            };
            Ok(MuSweepRow {
                mu,
                q_mu,
                pd_ok,
                sim_slips,
            })
        })
        .collect();
    rows.into_iter().collect()
}

pub fn write_mu_csv<W: Write>(rows: &[MuSweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mu", "q_mu", "pd_ok", "sim_slips"])?;
    for r in rows {
        w.write_record([
            g12(r.mu),
            g12(r.q_mu),
            r.pd_ok.to_string(),
            r.sim_slips.map_or(String::new(), |k| k.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
