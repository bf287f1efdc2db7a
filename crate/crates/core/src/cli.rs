//! Command-line front end.
//!
//! Exit codes: 0 success, 1 input error, 2 no certificate, 3 simulation
//! failure, 4 reproduction mismatch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::bounds::pll_q;
use crate::config::{self, Config, TheoremName, FIXTURES};
use crate::error::{Error, Result};
use crate::format::g12;
use crate::frequency::frequency_scan;
use crate::search::{
    certify_fixed, min_certified_k, mu_sweep, pll_r0_formula, pll_recipe, write_mu_csv, SearchOutcome, Strategy,
};
use crate::simulator::{count_slipped_cycles, integrate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NO_CERTIFICATE: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

/// Published `(β, r₀)` rows.
pub const PUBLISHED_ROWS: [(f64, u32); 3] = [(0.9, 1), (0.92, 2), (0.95, 5)];

#[derive(Debug, Parser)]
#[command(name = "cycle-slip", version, about = "Certified bounds on slipped cycles of phase-locked systems")]
struct Cli {
    /// Seed for the randomised restarts of the multiplier search.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the smallest certified cycle bound and print the certificate.
    Certify {
        config: PathBuf,
        #[arg(long, value_enum)]
        theorem: Option<TheoremName>,
        #[arg(long)]
        k_cap: Option<u32>,
        #[arg(long, value_enum)]
        strategy: Option<Strategy>,
        /// Bound constant for the first two theorems.
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        mu_tilde: Option<f64>,
        /// Print the certificate as JSON instead of a report.
        #[arg(long)]
        json: bool,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the system and count slipped cycles.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Trajectory CSV (`t,sigma,sigma_dot`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the published PLL table from the built-in configs.
    Reproduce {
        #[arg(long)]
        json: bool,
    },
    /// Tabulate `q_mu`, positive definiteness and simulated slips over `mu`.
    SweepMu {
        config: PathBuf,
        /// Comma-separated values; overrides the range flags.
        #[arg(long, value_delimiter = ',')]
        mus: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-5)]
        mu_min: f64,
        #[arg(long, default_value_t = 1e-2)]
        mu_max: f64,
        #[arg(long, default_value_t = 4)]
        points: usize,
        /// Skip the simulations.
        #[arg(long)]
        no_sim: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the frequency-domain inequality (`omega,pi_value`).
    Scan {
        config: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        omega_max: f64,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BlowUp { .. } => EXIT_SIMULATION,
        Error::NotCertified(_) => EXIT_NO_CERTIFICATE,
        _ => EXIT_INPUT,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Certify {
            config,
            theorem,
            k_cap,
            strategy,
            q,
            mu_tilde,
            json,
            out,
        } => {
            let mut cfg = config::load(&config)?;
            let c = &mut cfg.certificate;
            if let Some(t) = theorem {
                c.theorem = t;
            }
            if let Some(k) = k_cap {
                c.k_cap = k;
            }
            if let Some(s) = strategy {
                c.strategy = s;
            }
            if q.is_some() {
                c.q = q;
            }
            if let Some(m) = mu_tilde {
                c.mu_tilde = m;
            }
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            let outcome = certify(&cfg)?;
            let Some(cert) = outcome.certificate else {
                writeln!(stdout, "no certificate for k <= {}", cfg.certificate.k_cap)?;
                if let Some(n) = outcome.near_miss {
                    let m = n.multipliers;
                    writeln!(
                        stdout,
                        "closest: k = {}, theta = {}, eps = {}, delta = {}, tau = {}, a = {}, margin = {}: {}",
                        n.k,
                        g12(m.theta),
                        g12(m.eps),
                        g12(m.delta),
                        g12(m.tau),
                        g12(m.a),
                        g12(n.margin),
                        n.reason
                    )?;
                }
                return Ok(EXIT_NO_CERTIFICATE);
            };
            let text = if json { cert.to_json() + "\n" } else { cert.report() };
            stdout.write_all(text.as_bytes())?;
            if let Some(path) = out {
                let mut f = create(&path)?;
                f.write_all(text.as_bytes())?;
                f.flush()?;
            }
            Ok(EXIT_OK)
        }
        Command::Simulate {
            config,
            mu,
            dt,
            horizon,
            out,
        } => {
            let cfg = config::load(&config)?;
            let mut opts = cfg.simulation.options();
            if mu.is_some() {
                opts.mu = mu;
            }
            if dt.is_some() {
                opts.dt = dt;
            }
            if horizon.is_some() {
                opts.horizon = horizon;
            }
            let system = &cfg.problem.system;
            let traj = integrate(system, &opts)?;
            let count = count_slipped_cycles(&traj, system.nonlinearity.period())?;
            if let Some(path) = out {
                let mut f = create(&path)?;
                traj.write_csv(&mut f, &system.describe())?;
                f.flush()?;
            }
            if count.provisional {
                writeln!(stderr, "warning: trajectory did not converge; slip count is provisional")?;
            }
            writeln!(
                stdout,
                "slips={} sup_dev={} converged={}",
                count.k,
                g12(count.sup_dev),
                count.converged
            )?;
            Ok(EXIT_OK)
        }
        Command::Reproduce { json } => reproduce(json, stdout, stderr),
        Command::SweepMu {
            config,
            mus,
            mu_min,
            mu_max,
            points,
            no_sim,
            out,
        } => {
            let mut cfg = config::load(&config)?;
            if let Some(s) = cli.seed {
                cfg.certificate.seed = s;
            }
            let mus = match mus {
                Some(v) => v,
                None => log_range(mu_min, mu_max, points)?,
            };
            let outcome = certify(&cfg)?;
            let Some(cert) = outcome.certificate else {
                writeln!(stderr, "no certificate for k <= {}", cfg.certificate.k_cap)?;
                return Ok(EXIT_NO_CERTIFICATE);
            };
            let sim = cfg.simulation.options();
            let rows = mu_sweep(&cfg.problem, &cert, &mus, (!no_sim).then_some(&sim))?;
            match out {
                Some(path) => {
                    let mut f = create(&path)?;
                    write_mu_csv(&rows, &mut f)?;
                    f.flush()?;
                }
                None => write_mu_csv(&rows, &mut *stdout)?,
            }
            Ok(EXIT_OK)
        }
        Command::Scan {
            config,
            omega_max,
            points,
            out,
        } => {
            let cfg = config::load(&config)?;
            let m = match (&cfg.certificate.multipliers, &cfg.problem.pll) {
                (Some(m), _) => *m,
                (None, Some(p)) => pll_recipe(p.t_filter, p.s, p.h0())?,
                (None, None) => {
                    return Err(Error::Config {
                        line: None,
                        message: "scan needs [certificate] multipliers for a general system".into(),
                    })
                }
            };
            let nl = &cfg.problem.system.nonlinearity;
            let rows = frequency_scan(&cfg.problem.tf, &m, nl.alpha1(), nl.alpha2(), omega_max, points);
            let write = |w: &mut dyn Write| -> Result<()> {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["omega", "pi_value"])?;
                for (w, v) in &rows {
                    c.write_record([g12(*w), g12(*v)])?;
                }
                c.flush()?;
                Ok(())
            };
            match out {
                Some(path) => {
                    let mut f = create(&path)?;
                    write(&mut f)?;
                    f.flush()?;
                }
                None => write(stdout)?,
            }
            Ok(EXIT_OK)
        }
    }
}

fn log_range(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && n >= 1) {
        return Err(Error::Config {
            line: None,
            message: format!("mu range [{lo}, {hi}] with {n} points is invalid"),
        });
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    v[0] = lo;
    v[n - 1] = hi;
    Ok(v)
}

/// Certification as configured: fixed multipliers when given, search
/// otherwise.
pub fn certify(cfg: &Config) -> Result<SearchOutcome> {
    let choice = cfg.certificate.choice()?;
    match &cfg.certificate.multipliers {
        Some(m) => certify_fixed(&cfg.problem, m, choice, cfg.certificate.k_cap),
        None => min_certified_k(&cfg.problem, choice, &cfg.certificate.search_options()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproductionRow {
    pub beta: f64,
    pub q: f64,
    pub k: u32,
    pub r0: u32,
    pub r0_formula: Option<u32>,
    pub expected_r0: u32,
    pub matches: bool,
}

/// Certifies the built-in fixtures and compares with the published values.
pub fn reproduction_table() -> Result<Vec<ReproductionRow>> {
    let mut rows = Vec::new();
    for ((name, src), (beta, expected)) in FIXTURES.iter().zip(PUBLISHED_ROWS) {
        let cfg = config::parse(src)?;
        let pll = cfg
            .problem
            .pll
            .as_ref()
            .ok_or_else(|| crate::error::domain(format!("fixture {name} is not a PLL")))?;
        if pll.beta != beta {
            return Err(crate::error::domain(format!("fixture {name} has beta = {}", pll.beta)));
        }
        let q = pll_q(pll.t_filter, pll.s, pll.beta, pll.h0());
        let outcome = certify(&cfg)?;
        let (k, r0, r0_formula) = match &outcome.certificate {
            Some(c) => {
                let m = c.params.multipliers;
                (c.k, c.r0(), pll_r0_formula(m.eps, m.delta, beta, q))
            }
            None => (0, u32::MAX, None),
        };
        rows.push(ReproductionRow {
            beta,
            q,
            k,
            r0,
            r0_formula,
            expected_r0: expected,
            matches: outcome.certificate.is_some() && r0 == expected && r0_formula == Some(expected),
        });
    }
    Ok(rows)
}

fn reproduce(json: bool, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let rows = reproduction_table()?;
    if json {
        let text = serde_json::to_string_pretty(&rows).map_err(|e| crate::error::domain(e.to_string()))?;
        writeln!(stdout, "{text}")?;
    } else {
        writeln!(stdout, "beta,q,k,r0,r0_formula,published_r0,status")?;
        for r in &rows {
            writeln!(
                stdout,
                "{},{},{},{},{},{},{}",
                g12(r.beta),
                g12(r.q),
                r.k,
                r.r0,
                r.r0_formula.map_or("-".to_string(), |v| v.to_string()),
                r.expected_r0,
                if r.matches { "ok" } else { "MISMATCH" }
            )?;
        }
    }
    let bad: Vec<_> = rows.iter().filter(|r| !r.matches).collect();
    if bad.is_empty() {
        return Ok(EXIT_OK);
    }
    for r in bad {
        writeln!(
            stderr,
            "mismatch at beta = {}: got r0 = {} (formula {:?}), published {}",
            g12(r.beta),
            r.r0,
            r.r0_formula,
            r.expected_r0
        )?;
    }
    Ok(EXIT_MISMATCH)
}
