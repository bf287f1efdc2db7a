//! Fixed-step RK4 integration of the delayed Volterra system and cycle
//! counting.
//!
//! Each kernel term `c e^{−a(t−o)}1[t ≥ o]` is carried as an auxiliary state
//! `ẇ = −aw + φ(σ)`, so the convolution becomes `c·w(t − o)`. Delayed values
//! are read from stored nodes by cubic Hermite interpolation; before `t = 0`
//! the history `σ⁰` is used and `w` is zero.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::format::g12;
use crate::model::{pll_to_volterra, PllSpec, SystemSpec};

const BLOW_UP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Overrides the spec's `μ`; `Some(0.0)` forces the first-order form.
    pub mu: Option<f64>,
    /// Defaults to `min(h/8, T/40, μ/20)` with `T` the shortest time scale.
    pub dt: Option<f64>,
    /// Defaults to `500·max(T, 1/T)`.
    pub horizon: Option<f64>,
    pub tol_rate: f64,
    pub tol_residual: f64,
    /// Stop once the trailing 10% of the elapsed time is within tolerance.
    pub early_exit: bool,
    /// Keep every `record_every`-th step in the trajectory.
    pub record_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            mu: None,
            dt: None,
            horizon: None,
            tol_rate: 1e-6,
            tol_residual: 1e-6,
            early_exit: true,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub mu: Option<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub spec_hash: u64,
    pub steps: usize,
    pub stopped_early: bool,
    pub tol_rate: f64,
    pub tol_residual: f64,
    pub period: f64,
}

/// Samples `(t, σ, σ̇, w)` on a uniform grid starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_dt: f64,
    pub sigma: Vec<f64>,
    pub sigma_dot: Vec<f64>,
    /// One series per kernel term.
    pub w: Vec<Vec<f64>>,
    /// Extremes of `σ(t) − σ(0)` over every integration step.
    pub min_dev: f64,
    pub max_dev: f64,
    /// `φ(σ)` at each sample.
    pub residual: Vec<f64>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.sample_dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    /// Writes `t,sigma,sigma_dot` with a comment header.
    pub fn write_csv<W: Write>(&self, mut out: W, description: &str) -> Result<()> {
        writeln!(out, "# {description}")?;
        writeln!(
            out,
            "# mu={} dt={} horizon={} spec_hash={:016x} steps={}",
            self.meta.mu.map_or("none".to_string(), g12),
            g12(self.meta.dt),
            g12(self.meta.horizon),
            self.meta.spec_hash,
            self.meta.steps
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "sigma", "sigma_dot"])?;
        for i in 0..self.len() {
            w.write_record([g12(self.time(i)), g12(self.sigma[i]), g12(self.sigma_dot[i])])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn spec_hash(spec: &SystemSpec) -> u64 {
    let mut h = DefaultHasher::new();
    spec.describe().hash(&mut h);
    h.finish()
}

/// Largest admissible step and the reason it binds.
pub fn step_limit(spec: &SystemSpec, mu: Option<f64>) -> (f64, &'static str) {
    let mut limit = (spec.time_scale() / 20.0, "T/20");
    if spec.delay > 0.0 && spec.delay / 4.0 < limit.0 {
        limit = (spec.delay / 4.0, "h/4");
    }
    for o in spec.kernel.onsets().filter(|&o| o > 0.0) {
        if o / 4.0 < limit.0 {
            limit = (o / 4.0, "kernel onset/4");
        }
    }
    if let Some(mu) = mu.filter(|&m| m > 0.0) {
        if mu / 10.0 < limit.0 {
            limit = (mu / 10.0, "mu/10");
        }
    }
    limit
}

pub fn default_dt(spec: &SystemSpec, mu: Option<f64>) -> f64 {
    let mut dt = spec.time_scale() / 40.0;
    if spec.delay > 0.0 {
        dt = dt.min(spec.delay / 8.0);
    }
    for o in spec.kernel.onsets().filter(|&o| o > 0.0) {
        dt = dt.min(o / 8.0);
    }
    if let Some(mu) = mu.filter(|&m| m > 0.0) {
        dt = dt.min(mu / 20.0);
    }
    dt
}

pub fn default_horizon(spec: &SystemSpec) -> f64 {
    let t = spec.time_scale();
    500.0 * t.max(1.0 / t)
}

/// Stored nodes for delayed lookups: values and derivatives of `σ` and each
/// `w_i` at `t = n·dt`, in a ring buffer covering the longest lag.
struct Past {
    dt: f64,
    cap: usize,
    stride: usize,
    data: Vec<f64>,
    len: usize,
}

impl Past {
    fn new(dt: f64, max_lag: f64, stride: usize) -> Self {
        let cap = (max_lag / dt).ceil() as usize + 8;
        Self {
            dt,
            cap,
            stride,
            data: vec![0.0; cap * stride],
            len: 0,
        }
    }

    fn push(&mut self, node: &[f64]) {
        let i = self.len % self.cap;
        self.data[i * self.stride..(i + 1) * self.stride].copy_from_slice(node);
        self.len += 1;
    }

    fn node(&self, n: usize) -> &[f64] {
        debug_assert!(n < self.len && n + self.cap >= self.len);
        let i = n % self.cap;
        &self.data[i * self.stride..(i + 1) * self.stride]
    }

    /// Hermite interpolation of value slot `v` (derivative in slot `v + 1`)
    /// at time `t ≥ 0`, strictly before the newest node.
    fn at(&self, t: f64, v: usize) -> f64 {
        let x = t / self.dt;
        let n = (x.floor() as usize).min(self.len.saturating_sub(2));
        let s = x - n as f64;
        let (a, b) = (self.node(n), self.node(n + 1));
        let (y0, d0, y1, d1) = (a[v], a[v + 1] * self.dt, b[v], b[v + 1] * self.dt);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * d1
    }
}

struct Rhs<'a> {
    spec: &'a SystemSpec,
    mu: Option<f64>,
    terms: usize,
}

impl Rhs<'_> {
    // State layout: [σ, (v), w_1..w_n]. Node layout in `Past`:
    // [σ, σ̇, w_1, ẇ_1, ...].
    fn w_offset(&self) -> usize {
        if self.mu.is_some() {
            2
        } else {
            1
        }
    }

    fn sigma_at(&self, t: f64, past: &Past, y: &[f64]) -> f64 {
        if t < 0.0 {
            self.spec.history.eval(t)
        } else if t >= past.dt * (past.len as f64 - 1.0) {
            y[0]
        } else {
            past.at(t, 0)
        }
    }

    fn w_at(&self, i: usize, t: f64, past: &Past, y: &[f64]) -> f64 {
        if t < 0.0 {
            0.0
        } else if t >= past.dt * (past.len as f64 - 1.0) {
            y[self.w_offset() + i]
        } else {
            past.at(t, 2 + 2 * i)
        }
    }

    /// `F(t) = α(t) + ρφ(σ(t−h)) − Σ c_i w_i(t − o_i)`.
    fn forcing(&self, t: f64, y: &[f64], past: &Past) -> f64 {
        let spec = self.spec;
        let nl = &spec.nonlinearity;
        let delayed = if spec.rho != 0.0 {
            spec.rho * nl.eval(self.sigma_at(t - spec.delay, past, y))
        } else {
            0.0
        };
        let conv: f64 = spec
            .kernel
            .terms
            .iter()
            .enumerate()
            .map(|(i, e)| e.coefficient * self.w_at(i, t - e.onset, past, y))
            .sum();
        spec.forcing.eval(t) + delayed - conv
    }

    fn eval(&self, t: f64, y: &[f64], past: &Past, dy: &mut [f64]) {
        let f = self.forcing(t, y, past);
        let off = self.w_offset();
        match self.mu {
            None => dy[0] = f,
            Some(mu) => {
                dy[0] = y[1];
                dy[1] = (f - y[1]) / mu;
            }
        }
        let phi = self.spec.nonlinearity.eval(y[0]);
        for (i, e) in self.spec.kernel.terms.iter().enumerate() {
            dy[off + i] = -e.rate * y[off + i] + phi;
        }
        debug_assert_eq!(self.terms, self.spec.kernel.terms.len());
    }
}

/// Integrates the system. `μ` is taken from `opts.mu`, falling back to
/// `spec.mu`; zero means the first-order form.
pub fn integrate(spec: &SystemSpec, opts: &SimOptions) -> Result<Trajectory> {
    let mu = opts.mu.or(spec.mu).filter(|&m| m != 0.0);
    if let Some(m) = mu {
        if !(m > 0.0 && m.is_finite()) {
            return Err(domain(format!("mu = {m} must be positive")));
        }
    }
    let dt = opts.dt.unwrap_or_else(|| default_dt(spec, mu));
    let (limit, reason) = step_limit(spec, mu);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(domain(format!("step dt = {dt} must be positive")));
    }
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit, reason });
    }
    let horizon = opts.horizon.unwrap_or_else(|| default_horizon(spec));
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(domain(format!("horizon = {horizon} must be positive")));
    }
    let record_every = opts.record_every.max(1);

    let terms = spec.kernel.terms.len();
    let rhs = Rhs { spec, mu, terms };
    let off = rhs.w_offset();
    let dim = off + terms;
    let max_lag = spec.kernel.onsets().fold(spec.delay, f64::max);
    let mut past = Past::new(dt, max_lag, 2 + 2 * terms);

    let mut y = vec![0.0; dim];
    y[0] = spec.initial_phase();
    if mu.is_some() {
        y[1] = spec.initial_rate;
    }
    let sigma0 = y[0];
    let steps = (horizon / dt).ceil() as usize;
    let nl = &spec.nonlinearity;

    let mut traj = Trajectory {
        sample_dt: dt * record_every as f64,
        sigma: Vec::new(),
        sigma_dot: Vec::new(),
        w: vec![Vec::new(); terms],
        min_dev: 0.0,
        max_dev: 0.0,
        residual: Vec::new(),
        meta: TrajectoryMeta {
            mu,
            dt,
            horizon,
            spec_hash: spec_hash(spec),
            steps: 0,
            stopped_early: false,
            tol_rate: opts.tol_rate,
            tol_residual: opts.tol_residual,
            period: nl.period(),
        },
    };

    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let mut node = vec![0.0; 2 + 2 * terms];
    let mut last_violation = f64::NEG_INFINITY;
    let min_run = 4.0 * max_lag + 10.0 * dt;

    for n in 0..=steps {
        let t = n as f64 * dt;
        rhs.eval(t, &y, &past, &mut k1);
        let sigma_dot = k1[0];
        if !(y[0].is_finite() && sigma_dot.is_finite()) || y[0].abs() > BLOW_UP || sigma_dot.abs() > BLOW_UP {
            return Err(Error::BlowUp {
                t,
                sigma: y[0],
                sigma_dot,
            });
        }
        node[0] = y[0];
        node[1] = sigma_dot;
        for i in 0..terms {
            node[2 + 2 * i] = y[off + i];
            node[3 + 2 * i] = k1[off + i];
        }
        past.push(&node);

        let dev = y[0] - sigma0;
        traj.min_dev = traj.min_dev.min(dev);
        traj.max_dev = traj.max_dev.max(dev);
        let residual = nl.eval(y[0]);
        if n % record_every == 0 {
            traj.sigma.push(y[0]);
            traj.sigma_dot.push(sigma_dot);
            traj.residual.push(residual);
            for i in 0..terms {
                traj.w[i].push(y[off + i]);
            }
        }
        if sigma_dot.abs() > opts.tol_rate || residual.abs() > opts.tol_residual {
            last_violation = t;
        }
        traj.meta.steps = n;
        if n == steps {
            break;
        }
        // Same rule as `detect_convergence`: the first sample after the last
        // violation must lie in the first 90% of the run.
        let settle = last_violation + traj.sample_dt;
        if opts.early_exit && n % record_every == 0 && t >= min_run && settle <= 0.9 * t {
            traj.meta.stopped_early = true;
            break;
        }

        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * dt * k1[j];
        }
        rhs.eval(t + 0.5 * dt, &tmp, &past, &mut k2);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * dt * k2[j];
        }
        rhs.eval(t + 0.5 * dt, &tmp, &past, &mut k3);
        for j in 0..dim {
            tmp[j] = y[j] + dt * k3[j];
        }
        rhs.eval(t + dt, &tmp, &past, &mut k4);
        for j in 0..dim {
            y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    Ok(traj)
}

/// Integrates the PLL through its Volterra form.
pub fn integrate_pll(pll: &PllSpec, opts: &SimOptions) -> Result<Trajectory> {
    integrate(&pll_to_volterra(pll)?, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipCount {
    pub k: u32,
    pub sup_dev: f64,
    pub converged: bool,
    pub settle_time: f64,
    /// Set when the trajectory had not converged, so `k` may still grow.
    pub provisional: bool,
}

/// Convergence means `|σ̇| ≤ tol_rate` and `|φ(σ)| ≤ tol_residual` on every
/// sample of the trailing 10% of the run. `settle_time` is the first sample
/// time after which the tolerances hold to the end.
pub fn detect_convergence(traj: &Trajectory, tol_rate: f64, tol_residual: f64) -> (bool, f64) {
    let n = traj.len();
    if n == 0 {
        return (false, 0.0);
    }
    let mut settle = 0;
    for i in (0..n).rev() {
        if traj.sigma_dot[i].abs() > tol_rate || traj.residual[i].abs() > tol_residual {
            settle = i + 1;
            break;
        }
    }
    if settle >= n {
        return (false, traj.end_time());
    }
    let settle_time = traj.time(settle);
    (settle_time <= 0.9 * traj.end_time(), settle_time)
}

fn parabola_peak(y0: f64, y1: f64, y2: f64) -> f64 {
    let denom = y0 - 2.0 * y1 + y2;
    if denom >= 0.0 {
        return y1;
    }
    let s = 0.5 * (y0 - y2) / denom;
    if s.abs() > 1.0 {
        return y1;
    }
    (y1 - 0.25 * (y0 - y2) * s).max(y1)
}

/// `k = ⌊sup|σ(t) − σ(0)| / Δ⌋`, with the sup taken over both signed
/// extremes, refined by a parabola at the sampled maximiser and never below
/// the per-step extremes recorded during integration.
pub fn count_slipped_cycles(traj: &Trajectory, period: f64) -> Result<SlipCount> {
    if !(period > 0.0) {
        return Err(domain(format!("period {period} must be positive")));
    }
    if traj.is_empty() {
        return Err(domain("empty trajectory"));
    }
    let s0 = traj.sigma[0];
    let mut sup = traj.max_dev.max(-traj.min_dev);
    for sign in [1.0, -1.0] {
        let dev = |i: usize| sign * (traj.sigma[i] - s0);
        let (i, _) = (0..traj.len())
            .map(|i| (i, dev(i)))
            .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let peak = if i > 0 && i + 1 < traj.len() {
            parabola_peak(dev(i - 1), dev(i), dev(i + 1))
        } else {
            dev(i)
        };
        sup = sup.max(peak);
    }
    let (converged, settle_time) = detect_convergence(traj, traj.meta.tol_rate, traj.meta.tol_residual);
    Ok(SlipCount {
        k: (sup / period).floor() as u32,
        sup_dev: sup,
        converged,
        settle_time,
        provisional: !converged,
    })
}
