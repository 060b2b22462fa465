//! Replication harness.
//!
//! Builds a benchmark instance from an [`ExperimentConfig`], computes its
//! sample-average reference solution once, runs independent replications
//! (replication `r` is seeded with `seed + r`), and writes the averaged
//! trajectory with 90% confidence intervals on the log error.
//!
//! Random streams: replication `r` draws from `ChaCha8Rng::seed_from_u64(seed + r)`
//! on stream 0. Problem generation, the reference sample and the noise pilot
//! use the base seed on streams 1, 2 and 3. Normal variates come from the
//! Ziggurat sampler of `rand_distr`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bounds::{csa_bound_trajectory, e_k, BoundParams};
use crate::error::{config, invalid, Result, SaError};
use crate::problems::saa::{saa_reference, SaaReference, SolverOptions, DEFAULT_SAMPLE_SIZE};
use crate::problems::{
    capacity_profile, BimatrixIntegrand, BimatrixProblem, CapacityPolytope, NetworkProblem,
    Simplex, SimplexPair, UtilityProblem,
};
use crate::sa_core::{
    estimate_noise_second_moment, run_sa, GradientSample, Point, Projection, SaRun,
    SteplengthPolicy, StochasticOracle,
};
use crate::smoothing::{PlainOracle, SmoothedOracle};
use crate::steplength::{
    csa_phase1, csa_schedule, rsa_e0_scale, rsa_init, CsaParams, CsaPolicy, HsaPolicy, RsaPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Utility,
    Bimatrix,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Hsa,
    Rsa,
    Csa,
}

fn parse_enum<E: ValueEnum>(value: &str) -> Result<E> {
    E::from_str(value, true).map_err(|e| invalid(format!("{value}: {e}")))
}

impl FromStr for ProblemKind {
    type Err = SaError;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum(s)
    }
}

impl FromStr for Scheme {
    type Err = SaError;
    fn from_str(s: &str) -> Result<Self> {
        parse_enum(s)
    }
}

fn enum_name<E: ValueEnum>(e: &E) -> String {
    e.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

/// Fully resolved experiment parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub scheme: Scheme,
    pub n: usize,
    pub iterations: usize,
    /// Regularization modulus. The network problem estimates its own.
    pub eta: f64,
    pub epsilon: f64,
    pub theta: f64,
    pub alpha: f64,
    /// Explicit RSA starting stepsize; derived from the constants when absent.
    pub gamma0: Option<f64>,
    /// Explicit noise bound ν²; estimated by a pilot when absent.
    pub nu2: Option<f64>,
    pub replications: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Network capacity profile 1, 2 or 3.
    pub capacity: u8,
    pub saa_samples: usize,
    pub pieces: usize,
    pub pilot_samples: usize,
    pub level: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Utility,
            scheme: Scheme::Rsa,
            n: 20,
            iterations: 4000,
            eta: 0.5,
            epsilon: 0.5,
            theta: 0.5,
            alpha: 1.0,
            gamma0: None,
            nu2: None,
            replications: 50,
            seed: 1,
            out: PathBuf::from("trajectory.csv"),
            capacity: 3,
            saa_samples: DEFAULT_SAMPLE_SIZE,
            pieces: crate::problems::utility::DEFAULT_PIECES,
            pilot_samples: 10_000,
            level: 0.90,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| invalid(format!("cannot parse value {value:?} for key {key}")))
}

impl ExperimentConfig {
    /// Sets one parameter from its flag name (with or without `--`).
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().trim_start_matches("--");
        let value = value.trim();
        match key {
            "problem" => self.problem = value.parse()?,
            "scheme" => self.scheme = value.parse()?,
            "n" => self.n = parse_value(key, value)?,
            "iters" => self.iterations = parse_value(key, value)?,
            "eta" => self.eta = parse_value(key, value)?,
            "eps" => self.epsilon = parse_value(key, value)?,
            "theta" => self.theta = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "gamma0" => self.gamma0 = Some(parse_value(key, value)?),
            "nu2" => self.nu2 = Some(parse_value(key, value)?),
            "replications" => self.replications = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "capacity" => self.capacity = parse_value(key, value)?,
            "saa-samples" => self.saa_samples = parse_value(key, value)?,
            "pieces" => self.pieces = parse_value(key, value)?,
            "pilot-samples" => self.pilot_samples = parse_value(key, value)?,
            "level" => self.level = parse_value(key, value)?,
            _ => return Err(invalid(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key=value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key=value", lineno + 1)))?;
            self.apply(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(config("at least two replications are needed for a confidence interval"));
        }
        if self.iterations == 0 {
            return Err(config("iteration budget must be at least 1"));
        }
        if self.n == 0 || (self.problem == ProblemKind::Bimatrix && self.n < 2) {
            return Err(config("problem dimension too small"));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.eta) || !positive(self.epsilon) {
            return Err(config("eta and eps must be positive"));
        }
        match self.scheme {
            Scheme::Hsa if !positive(self.alpha) => return Err(config("HSA needs alpha > 0")),
            Scheme::Csa if !(self.theta > 0.0 && self.theta < 1.0) => {
                return Err(config("CSA needs theta in (0, 1)"))
            }
            Scheme::Rsa if self.gamma0.is_some_and(|g| !positive(g)) => {
                return Err(config("RSA gamma0 must be positive"))
            }
            _ => {}
        }
        if self.nu2.is_some_and(|v| !positive(v)) {
            return Err(config("nu2 must be positive"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(config("confidence level must lie in (0, 1)"));
        }
        if self.pilot_samples < 2 {
            return Err(config("pilot needs at least two samples"));
        }
        Ok(())
    }

    /// `key=value` lines for every resolved parameter.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "problem={}", enum_name(&self.problem));
        let _ = writeln!(s, "scheme={}", enum_name(&self.scheme));
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "iters={}", self.iterations);
        let _ = writeln!(s, "eta={}", self.eta);
        let _ = writeln!(s, "eps={}", self.epsilon);
        let _ = writeln!(s, "theta={}", self.theta);
        let _ = writeln!(s, "alpha={}", self.alpha);
        if let Some(g) = self.gamma0 {
            let _ = writeln!(s, "gamma0={g}");
        }
        if let Some(v) = self.nu2 {
            let _ = writeln!(s, "nu2={v}");
        }
        let _ = writeln!(s, "replications={}", self.replications);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "capacity={}", self.capacity);
        let _ = writeln!(s, "saa-samples={}", self.saa_samples);
        let _ = writeln!(s, "pieces={}", self.pieces);
        let _ = writeln!(s, "pilot-samples={}", self.pilot_samples);
        let _ = writeln!(s, "level={}", self.level);
        s
    }
}

/// Sampled oracle of any benchmark.
#[derive(Debug, Clone)]
pub enum ProblemOracle {
    Utility(SmoothedOracle<UtilityProblem<f64>, f64>),
    Bimatrix(SmoothedOracle<BimatrixIntegrand<f64>, f64>),
    Network(PlainOracle<NetworkProblem<f64>>),
}

impl StochasticOracle<f64> for ProblemOracle {
    fn dim(&self) -> usize {
        match self {
            Self::Utility(o) => o.dim(),
            Self::Bimatrix(o) => o.dim(),
            Self::Network(o) => o.dim(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<GradientSample<f64>> {
        match self {
            Self::Utility(o) => o.sample(x, rng),
            Self::Bimatrix(o) => o.sample(x, rng),
            Self::Network(o) => o.sample(x, rng),
        }
    }

    fn subgradient_bound(&self) -> Option<f64> {
        match self {
            Self::Utility(o) => o.subgradient_bound(),
            Self::Bimatrix(o) => o.subgradient_bound(),
            Self::Network(o) => o.subgradient_bound(),
        }
    }
}

/// Feasible set of any benchmark.
#[derive(Debug, Clone)]
pub enum ProblemProjection {
    Simplex(Simplex),
    SimplexPair(SimplexPair),
    Capacity(CapacityPolytope<f64>),
}

impl Projection<f64> for ProblemProjection {
    fn dim(&self) -> usize {
        match self {
            Self::Simplex(p) => Projection::<f64>::dim(p),
            Self::SimplexPair(p) => Projection::<f64>::dim(p),
            Self::Capacity(p) => p.dim(),
        }
    }

    fn project(&self, v: &[f64]) -> Result<Point<f64>> {
        match self {
            Self::Simplex(p) => p.project(v),
            Self::SimplexPair(p) => p.project(v),
            Self::Capacity(p) => p.project(v),
        }
    }

    fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Self::Simplex(p) => p.contains(x, tol),
            Self::SimplexPair(p) => p.contains(x, tol),
            Self::Capacity(p) => p.contains(x, tol),
        }
    }
}

/// Problem constants feeding the steplength policies and bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub eta: f64,
    pub lipschitz: f64,
    pub nu2: f64,
    /// Pilot estimate before the safety factor (NaN when ν² was supplied).
    pub nu2_raw: f64,
    pub d2: f64,
    /// Subgradient norm bound `C`, when the oracle declares one.
    pub subgradient_bound: Option<f64>,
}

const NOISE_SAFETY_FACTOR: f64 = 1.5;
const TRUNCATION_PILOT_DRAWS: usize = 100_000;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A prepared experiment: instance, constants and reference solution.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub oracle: ProblemOracle,
    pub projection: ProblemProjection,
    pub x0: Point<f64>,
    pub constants: Constants,
    pub reference: SaaReference<f64>,
}

/// Stepsizes and per-iteration bounds shared by all replications.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub gammas: Vec<f64>,
    /// Theoretical bound per iteration (NaN for HSA).
    pub bounds: Vec<f64>,
    /// Metadata lines describing how the schedule was derived.
    pub notes: Vec<(String, String)>,
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let mut build_rng = stream_rng(config.seed, 1);
        let mut saa_rng = stream_rng(config.seed, 2);
        let mut pilot_rng = stream_rng(config.seed, 3);
        let options = SolverOptions::default();
        let (oracle, projection, x0, eta, lipschitz, d2, reference, probes) = match config.problem {
            ProblemKind::Utility => {
                let p = UtilityProblem::generate(
                    config.n,
                    config.pieces,
                    config.eta,
                    config.epsilon,
                    TRUNCATION_PILOT_DRAWS,
                    &mut build_rng,
                )?;
                let reference = saa_reference(&p, config.saa_samples, &options, &mut saa_rng)?;
                let x0 = p.barycenter();
                let mut probes = vec![x0.clone()];
                for i in 0..p.n {
                    let mut v = vec![0.0; p.n];
                    v[i] = 1.0;
                    probes.push(Point::new(v)?);
                }
                (
                    ProblemOracle::Utility(p.oracle()?),
                    ProblemProjection::Simplex(p.projection()),
                    x0,
                    p.eta,
                    p.lipschitz()?,
                    2.0,
                    reference,
                    probes,
                )
            }
            ProblemKind::Bimatrix => {
                let p = BimatrixProblem::new(config.n, config.eta, config.epsilon)?;
                let reference = saa_reference(&p, config.saa_samples, &options, &mut saa_rng)?;
                let x0 = crate::sa_core::SaddlePoint::barycenter(p.n).stacked();
                (
                    ProblemOracle::Bimatrix(p.oracle()?),
                    ProblemProjection::SimplexPair(p.projection()),
                    x0.clone(),
                    p.eta,
                    p.lipschitz(),
                    p.diameter_sq(),
                    reference,
                    vec![x0],
                )
            }
            ProblemKind::Network => {
                let capacity = capacity_profile(config.capacity)?;
                let p = NetworkProblem::generate(config.n, capacity, &mut build_rng)?;
                let reference = saa_reference(&p, config.saa_samples, &options, &mut saa_rng)?;
                let x0 = p.origin();
                (
                    ProblemOracle::Network(p.oracle()),
                    ProblemProjection::Capacity(p.polytope()),
                    x0.clone(),
                    p.strong_convexity(),
                    p.lipschitz(),
                    p.diameter_sq(),
                    reference,
                    vec![x0],
                )
            }
        };
        if !reference.converged {
            log::warn!(
                "reference residual {:.3e} above tolerance; error curves carry that offset",
                reference.residual
            );
        }
        let (nu2, nu2_raw) = match config.nu2 {
            Some(v) => (v, f64::NAN),
            None => {
                let est = estimate_noise_second_moment(
                    &oracle,
                    &probes,
                    config.pilot_samples,
                    NOISE_SAFETY_FACTOR,
                    &mut pilot_rng,
                )?;
                (est.nu2, est.raw_max)
            }
        };
        let subgradient_bound = oracle.subgradient_bound();
        Ok(Self {
            config,
            oracle,
            projection,
            x0,
            constants: Constants { eta, lipschitz, nu2, nu2_raw, d2, subgradient_bound },
            reference,
        })
    }

    fn csa_params(&self) -> CsaParams<f64> {
        let c = &self.constants;
        CsaParams {
            gamma_init: 1.0 / c.lipschitz,
            theta: self.config.theta,
            eta: c.eta,
            lipschitz: c.lipschitz,
            nu2: c.nu2,
            d2: c.d2,
        }
    }

    fn rsa_policy(&self) -> Result<(RsaPolicy<f64>, f64)> {
        let c = &self.constants;
        match self.config.gamma0 {
            Some(g) => Ok((RsaPolicy::new(g, c.eta / 2.0)?, f64::NAN)),
            None => {
                let beta = rsa_e0_scale(c.eta, c.nu2, c.d2, c.lipschitz);
                // When β < 1 the optimal start sits exactly on 1/L; rounding
                // may nudge η β D²/(2ν²) just above it.
                let gamma0 = rsa_init(c.eta, c.nu2, beta * c.d2, c.lipschitz)
                    .unwrap_or(1.0 / c.lipschitz);
                Ok((RsaPolicy::new(gamma0, c.eta / 2.0)?, beta))
            }
        }
    }

    fn policy(&self) -> Result<Box<dyn SteplengthPolicy<f64> + Send>> {
        Ok(match self.config.scheme {
            Scheme::Hsa => Box::new(HsaPolicy::new(self.config.alpha)?),
            Scheme::Rsa => Box::new(self.rsa_policy()?.0),
            Scheme::Csa => Box::new(CsaPolicy::new(self.csa_params())?),
        })
    }

    /// The deterministic stepsize sequence and its theoretical bound.
    pub fn schedule(&self) -> Result<Schedule> {
        let n_iter = self.config.iterations;
        let mut policy = self.policy()?;
        let gammas: Vec<f64> = (0..n_iter).map(|_| policy.next_gamma()).collect::<Result<_>>()?;
        let c = &self.constants;
        let mut notes = Vec::new();
        let bounds = match self.config.scheme {
            Scheme::Hsa => vec![f64::NAN; n_iter],
            Scheme::Rsa => {
                let (policy, beta) = self.rsa_policy()?;
                notes.push(("rsa_gamma0".into(), format!("{:e}", policy.gamma0)));
                notes.push(("rsa_c".into(), format!("{:e}", policy.c)));
                notes.push(("rsa_e0_scale".into(), format!("{beta:e}")));
                let mut out = Vec::with_capacity(n_iter);
                let mut e = c.d2;
                for &g in &gammas {
                    out.push(e);
                    e = e_k(&[g], e, c.eta, c.nu2).unwrap_or(f64::NAN);
                }
                out
            }
            Scheme::Csa => {
                let params = self.csa_params();
                let phase = csa_phase1(&params)?;
                notes.push(("csa_ell".into(), phase.ell.to_string()));
                notes.push(("csa_gamma0".into(), format!("{:e}", phase.gamma0)));
                notes.push(("csa_k0".into(), phase.k0.to_string()));
                let schedule = csa_schedule(&params, n_iter)?;
                notes.push(("csa_regimes".into(), schedule.len().to_string()));
                let bp = BoundParams {
                    eta: c.eta,
                    lipschitz: c.lipschitz,
                    nu2: c.nu2,
                    e0: c.d2,
                    d2: c.d2,
                };
                csa_bound_trajectory(&schedule, &bp, n_iter)
            }
        };
        notes.push(("clamped".into(), policy.is_clamped().to_string()));
        Ok(Schedule { gammas, bounds, notes })
    }

    /// Runs one replication with seed `seed + r`.
    pub fn run_one(&self, r: usize) -> Result<SaRun<f64>> {
        let seed = self.config.seed.wrapping_add(r as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut policy = self.policy()?;
        run_sa(
            &self.oracle,
            &self.projection,
            policy.as_mut(),
            self.x0.clone(),
            self.config.iterations,
            &self.reference.point,
            &mut rng,
        )
        .map_err(|e| SaError::Replication { seed, source: Box::new(e) })
    }

    /// All replications, in replication order.
    pub fn run_replications(&self) -> Result<Vec<SaRun<f64>>> {
        (0..self.config.replications)
            .into_par_iter()
            .map(|r| self.run_one(r))
            .collect()
    }
}

/// Prepares the experiment and runs every replication.
pub fn run_replications(config: &ExperimentConfig) -> Result<Vec<SaRun<f64>>> {
    Experiment::prepare(config.clone())?.run_replications()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Sample mean (of the logs when `log_domain`).
    pub center: f64,
    pub level: f64,
    pub log_domain: bool,
}

/// Student-t interval `mean ± t_{(1+level)/2, m−1} s/√m`, on log samples
/// when `log_domain` is set.
pub fn confidence_interval(samples: &[f64], level: f64, log_domain: bool) -> Result<ConfidenceInterval> {
    if samples.len() < 2 {
        return Err(invalid("confidence interval needs at least two samples"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("confidence level must lie in (0, 1)"));
    }
    let values: Vec<f64> = if log_domain {
        if let Some(bad) = samples.iter().find(|&&s| !(s > 0.0)) {
            return Err(invalid(format!("log-domain interval needs positive samples, got {bad}")));
        }
        samples.iter().map(|s| s.ln()).collect()
    } else {
        samples.to_vec()
    };
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let t = StudentsT::new(0.0, 1.0, m - 1.0)
        .map_err(|e| invalid(e.to_string()))?
        .inverse_cdf((1.0 + level) / 2.0);
    let half = t * (var / m).sqrt();
    Ok(ConfidenceInterval {
        lower: mean - half,
        upper: mean + half,
        center: mean,
        level,
        log_domain,
    })
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub k: usize,
    pub gamma: f64,
    pub mean_sq_error: f64,
    /// Interval endpoints in the log domain.
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub theory_bound: f64,
}

/// Zero errors (iterate exactly at the reference) enter the log interval at
/// the smallest positive normal value.
fn log_safe(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE)
}

/// Per-iteration mean error and log-domain interval across replications.
pub fn summarize(trajectories: &[SaRun<f64>], bounds: &[f64], level: f64) -> Result<Vec<SummaryRow>> {
    let first = trajectories
        .first()
        .ok_or_else(|| invalid("no trajectories to summarize"))?;
    let len = first.records.len();
    if trajectories.iter().any(|t| t.records.len() != len) {
        return Err(invalid("trajectories have different lengths"));
    }
    if !bounds.is_empty() && bounds.len() != len {
        return Err(invalid("bound trajectory length does not match"));
    }
    (0..len)
        .map(|k| {
            let errors: Vec<f64> = trajectories.iter().map(|t| t.records[k].squared_error).collect();
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            let (ci_lo, ci_hi) = if errors.len() >= 2 {
                let logs: Vec<f64> = errors.iter().map(|&e| log_safe(e)).collect();
                let ci = confidence_interval(&logs, level, true)?;
                (ci.lower, ci.upper)
            } else {
                (f64::NAN, f64::NAN)
            };
            Ok(SummaryRow {
                k,
                gamma: first.records[k].gamma,
                mean_sq_error: mean,
                ci_lo,
                ci_hi,
                theory_bound: bounds.get(k).copied().unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub const CSV_HEADER: &str = "k,gamma,mean_sq_error,ci_lo,ci_hi,theory_bound";

/// Writes the summary table; floats carry 17 significant digits.
pub fn write_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.k, r.gamma, r.mean_sq_error, r.ci_lo, r.ci_hi, r.theory_bound
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Summarizes `trajectories` (90% level) and writes them to `path`.
pub fn emit_csv(trajectories: &[SaRun<f64>], bounds: &[f64], path: &Path) -> Result<()> {
    let rows = summarize(trajectories, bounds, 0.90)?;
    let file = fs::File::create(path)?;
    write_csv(&rows, std::io::BufWriter::new(file))
}

/// Parses a file written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(invalid("unexpected CSV header"));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(invalid(format!("malformed row {line:?}")));
            }
            let num = |i: usize| parse_value::<f64>("column", f[i]);
            Ok(SummaryRow {
                k: parse_value("k", f[0])?,
                gamma: num(1)?,
                mean_sq_error: num(2)?,
                ci_lo: num(3)?,
                ci_hi: num(4)?,
                theory_bound: num(5)?,
            })
        })
        .collect()
}

/// Location of the metadata file written next to `csv`.
pub fn metadata_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

/// Outcome of a full harness run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
    pub terminal_mean: f64,
    pub terminal_ci: ConfidenceInterval,
    pub csv_path: PathBuf,
    pub metadata_path: PathBuf,
}

/// Terminal squared errors of a set of runs.
pub fn terminal_errors(runs: &[SaRun<f64>]) -> Vec<f64> {
    runs.iter().map(|r| r.terminal_squared_error).collect()
}

/// Prepares, runs and writes CSV plus metadata for `config`.
pub fn execute(config: ExperimentConfig) -> Result<RunSummary> {
    let experiment = Experiment::prepare(config)?;
    let schedule = experiment.schedule()?;
    let runs = experiment.run_replications()?;
    let cfg = &experiment.config;
    let rows = summarize(&runs, &schedule.bounds, cfg.level)?;
    let csv_path = cfg.out.clone();
    write_csv(&rows, std::io::BufWriter::new(fs::File::create(&csv_path)?))?;

    let terminal = terminal_errors(&runs);
    let terminal_mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
    let logs: Vec<f64> = terminal.iter().map(|&e| log_safe(e)).collect();
    let terminal_ci = confidence_interval(&logs, cfg.level, true)?;

    let c = &experiment.constants;
    let mut meta = cfg.to_text();
    let _ = writeln!(meta, "strong_convexity={:e}", c.eta);
    let _ = writeln!(meta, "lipschitz={:e}", c.lipschitz);
    let _ = writeln!(meta, "nu2={:e}", c.nu2);
    let _ = writeln!(meta, "nu2_pilot_raw={:e}", c.nu2_raw);
    let _ = writeln!(meta, "nu2_safety_factor={NOISE_SAFETY_FACTOR}");
    let _ = writeln!(meta, "diameter_sq={:e}", c.d2);
    match c.subgradient_bound {
        Some(b) => {
            let _ = writeln!(meta, "subgradient_bound={b:e}");
        }
        None => {
            let _ = writeln!(meta, "subgradient_bound=none");
        }
    }
    let _ = writeln!(meta, "reference_sample_size={}", experiment.reference.sample_size);
    let _ = writeln!(meta, "reference_residual={:e}", experiment.reference.residual);
    let _ = writeln!(meta, "reference_converged={}", experiment.reference.converged);
    let _ = writeln!(meta, "reference_iterations={}", experiment.reference.iterations);
    for (k, v) in &schedule.notes {
        let _ = writeln!(meta, "{k}={v}");
    }
    let _ = writeln!(meta, "terminal_mean_sq_error={terminal_mean:e}");
    let _ = writeln!(meta, "terminal_log_ci_lo={:e}", terminal_ci.lower);
    let _ = writeln!(meta, "terminal_log_ci_hi={:e}", terminal_ci.upper);
    let _ = writeln!(meta, "terminal_ci_lo={:e}", terminal_ci.lower.exp());
    let _ = writeln!(meta, "terminal_ci_hi={:e}", terminal_ci.upper.exp());
    let metadata_path = metadata_path(&csv_path);
    fs::write(&metadata_path, meta)?;
    Ok(RunSummary { rows, terminal_mean, terminal_ci, csv_path, metadata_path })
}

/// Command-line interface. Flags override values from `--config`.
#[derive(Debug, Parser)]
#[command(name = "sa-harness", about = "Replicated stochastic approximation experiments")]
pub struct Cli {
    /// Flat key=value file using the flag names as keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Benchmark problem [default: utility]
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    /// Steplength scheme [default: rsa]
    #[arg(long, value_enum)]
    pub scheme: Option<Scheme>,
    /// Problem dimension (users or strategies) [default: 20]
    #[arg(long)]
    pub n: Option<usize>,
    /// Iterations per replication [default: 4000]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Regularization modulus; the network problem estimates its own [default: 0.5]
    #[arg(long)]
    pub eta: Option<f64>,
    /// Smoothing radius [default: 0.5]
    #[arg(long)]
    pub eps: Option<f64>,
    /// CSA reduction factor [default: 0.5]
    #[arg(long)]
    pub theta: Option<f64>,
    /// HSA numerator [default: 1]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// RSA starting stepsize [default: derived from eta, nu2, L and D^2]
    #[arg(long)]
    pub gamma0: Option<f64>,
    /// Noise second-moment bound [default: pilot estimate times 1.5]
    #[arg(long)]
    pub nu2: Option<f64>,
    /// Number of replications [default: 50]
    #[arg(long)]
    pub replications: Option<usize>,
    /// Base seed; replication r uses seed + r [default: 1]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; metadata goes to <out>.meta [default: trajectory.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Network capacity profile 1, 2 or 3 [default: 3]
    #[arg(long)]
    pub capacity: Option<u8>,
    /// Reference sample size [default: 100000]
    #[arg(long)]
    pub saa_samples: Option<usize>,
    /// Pieces of the utility function [default: 10]
    #[arg(long)]
    pub pieces: Option<usize>,
}

impl Cli {
    /// Resolves defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field { cfg.$target = v.clone().into(); })*
            };
        }
        set!(
            problem => problem, scheme => scheme, n => n, iters => iterations,
            eta => eta, eps => epsilon, theta => theta, alpha => alpha,
            replications => replications, seed => seed, out => out,
            capacity => capacity, saa_samples => saa_samples, pieces => pieces,
        );
        if let Some(g) = self.gamma0 {
            cfg.gamma0 = Some(g);
        }
        if let Some(v) = self.nu2 {
            cfg.nu2 = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ci_zero_variance() {
        let ci = confidence_interval(&[1.0; 5], 0.9, true).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.0, 0.0));
    }

    #[test]
    fn ci_log_center() {
        let e = std::f64::consts::E;
        let ci = confidence_interval(&[1.0, e, e * e], 0.9, true).unwrap();
        assert!((ci.center - 1.0).abs() < 1e-15);
        assert!(((ci.lower + ci.upper) / 2.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ci_linear_textbook() {
        let ci = confidence_interval(&[1.0, 2.0, 3.0], 0.9, false).unwrap();
        // t_{0.95, 2} = 2.919985580355516.
        let half = 2.919985580355516 / 3f64.sqrt();
        assert!((ci.center - 2.0).abs() < 1e-15);
        assert!((ci.upper - 2.0 - half).abs() < 1e-9);
        assert!((2.0 - ci.lower - half).abs() < 1e-9);
    }

    #[test]
    fn ci_rejects_nonpositive_in_log_domain() {
        assert!(confidence_interval(&[1.0, 0.0], 0.9, true).is_err());
        assert!(confidence_interval(&[1.0], 0.9, false).is_err());
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text("problem = bimatrix\n# comment\nscheme=csa\nn=7\ngamma0=0.1 # trailing\n")
            .unwrap();
        assert_eq!(cfg.problem, ProblemKind::Bimatrix);
        assert_eq!(cfg.scheme, Scheme::Csa);
        assert_eq!(cfg.n, 7);
        assert_eq!(cfg.gamma0, Some(0.1));
        let mut again = ExperimentConfig::default();
        again.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(again, cfg);
        assert!(cfg.apply("bogus", "1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        fs::write(&path, "n=7\nseed=3\n").unwrap();
        let cli = Cli::parse_from(["sa-harness", "--config", path.to_str().unwrap(), "--n", "9"]);
        let cfg = cli.resolve().unwrap();
        assert_eq!(cfg.n, 9);
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn validation_rejects_single_replication() {
        let cfg = ExperimentConfig { replications: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
