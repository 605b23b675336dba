//! Data generating processes and Monte Carlo drivers for size and power.
//!
//! Every replication draws from `ChaCha8Rng::seed_from_u64(base_seed)` on
//! stream `rep_index`, so tables do not depend on scheduling or thread
//! count. Normals come from `rand_distr::StandardNormal` (ziggurat).

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ci::ProblemFamily;
use crate::error::{invalid, Error, Result};
use crate::gcc::{gcc_run, Estimates, GccOptions, ProblemSpec, TestResult};
use crate::models::{mean_and_covariance, MomentData};
use crate::rgcc::refine;
use crate::{Matrix, Variant, Vector};

/// The RNG for replication `rep` of a run seeded with `seed`.
pub fn rep_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

// ---------------------------------------------------------------------------
// one-sided model with a scalar nuisance

/// Population `(μ, C)` of the one-sided model.
pub fn simple_population(j: usize, q: f64, n: usize) -> (Vector, Vector) {
    let mut mu = Vector::from_element(j, 1.0 - q / (n as f64).sqrt());
    mu[0] = -1.0;
    mu[1] = 1.0;
    let mut c = Vector::from_element(j, -1.0);
    c[0] = 1.0;
    (mu, c)
}

/// `B = I_J`, `D = 0`, `d = −(1, 1, 0, …, 0)'θ`.
pub fn simple_spec(j: usize, n: usize, theta: f64) -> Result<ProblemSpec> {
    if j < 3 {
        return invalid(format!("the one-sided model needs J >= 3, got {j}"));
    }
    let mut d = Vector::zeros(j);
    d[0] = -theta;
    d[1] = -theta;
    ProblemSpec::new(Matrix::identity(j, j), Matrix::zeros(j, 1), d, Vec::new(), n)
}

/// One sample: `n` draws of `N(μ, I)` and `N(C, 2I)`, summarised by their
/// means and the joint sample covariance.
pub fn simple_sample<R: Rng>(j: usize, q: f64, n: usize, theta: f64, rng: &mut R) -> Result<(ProblemSpec, Estimates)> {
    let spec = simple_spec(j, n, theta)?;
    if n < 2 {
        return invalid("need at least two observations");
    }
    let (mu, c) = simple_population(j, q, n);
    let sd_c = 2f64.sqrt();
    let mut z = Matrix::zeros(n, 2 * j);
    for i in 0..n {
        for k in 0..j {
            let e: f64 = rng.sample(StandardNormal);
            z[(i, k)] = mu[k] + e;
        }
        for k in 0..j {
            let e: f64 = rng.sample(StandardNormal);
            z[(i, j + k)] = c[k] + sd_c * e;
        }
    }
    let (mean, omega_bar) = mean_and_covariance(&z);
    let mu_bar = mean.rows(0, j).into_owned();
    let pi_bar = mean.rows(j, j).into_owned();
    Ok((spec, Estimates { mu_bar, pi_bar: Matrix::from_column_slice(j, 1, pi_bar.as_slice()), omega_bar }))
}

pub fn simple_dgp(j: usize, q: f64, n: usize, theta: f64, seed: u64) -> Result<(ProblemSpec, Estimates)> {
    simple_sample(j, q, n, theta, &mut rep_rng(seed, 0))
}

// ---------------------------------------------------------------------------
// interval-outcome IV regression

pub const IV_THETA1: f64 = -1.0;
pub const IV_THETA2: f64 = -1.0;
pub const IV_MARKET_SIZE: u64 = 100;
pub const IV_LOWER_OFFSET: f64 = 0.00125;

/// `(Y^L, Y^U)` for an observed share `s`.
pub fn iv_bounds(s: f64) -> (f64, f64) {
    let big = 2.0 / IV_MARKET_SIZE as f64;
    let upper = (s + big).ln() - (1.0 - s + IV_LOWER_OFFSET).ln();
    let lower = (s + IV_LOWER_OFFSET).ln() - (1.0 - s + big).ln();
    (lower, upper)
}

/// Instrument cell of `(X2, W, Z_e)`; the constant first entry of `W` is
/// ignored.
pub fn iv_cell(x2: bool, w_extra: &[bool], ze: bool) -> usize {
    let mut k = x2 as usize + 2 * ze as usize;
    for (i, &b) in w_extra.iter().enumerate() {
        k += (b as usize) << (2 + i);
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvSample {
    pub d_w: usize,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// `n × d_W`, first column all ones
    pub w: Matrix,
    pub ze: Vec<f64>,
    pub share: Vec<f64>,
    pub y_lower: Vec<f64>,
    pub y_upper: Vec<f64>,
    pub cell: Vec<usize>,
}

pub fn interval_iv_sample<R: Rng>(d_w: usize, n: usize, rng: &mut R) -> Result<IvSample> {
    if !(1..=3).contains(&d_w) {
        return invalid(format!("d_W must be 1, 2 or 3, got {d_w}"));
    }
    if n < 2 {
        return invalid("need at least two observations");
    }
    let mut s = IvSample {
        d_w,
        x1: Vec::with_capacity(n),
        x2: Vec::with_capacity(n),
        w: Matrix::zeros(n, d_w),
        ze: Vec::with_capacity(n),
        share: Vec::with_capacity(n),
        y_lower: Vec::with_capacity(n),
        y_upper: Vec::with_capacity(n),
        cell: Vec::with_capacity(n),
    };
    let mut extra = vec![false; d_w - 1];
    for i in 0..n {
        let x2: bool = rng.random_bool(0.5);
        for e in extra.iter_mut() {
            *e = rng.random_bool(0.5);
        }
        let ze: bool = rng.random_bool(0.5);
        let eps: f64 = rng.sample::<f64, _>(StandardNormal).clamp(-4.0, 4.0);
        let x1 = if ze as u8 as f64 + eps / 2.0 > 0.0 { 1.0 } else { 0.0 };
        let index = IV_THETA1 * x1 + IV_THETA2 * x2 as u8 as f64 + eps;
        let p = 1.0 / (1.0 + (-index).exp());
        let k = Binomial::new(IV_MARKET_SIZE, p).map_err(|e| Error::Internal(e.to_string()))?.sample(rng);
        let share = k as f64 / IV_MARKET_SIZE as f64;
        let (lo, hi) = iv_bounds(share);
        s.x1.push(x1);
        s.x2.push(x2 as u8 as f64);
        s.w[(i, 0)] = 1.0;
        for (c, &b) in extra.iter().enumerate() {
            s.w[(i, c + 1)] = b as u8 as f64;
        }
        s.ze.push(ze as u8 as f64);
        s.share.push(share);
        s.y_lower.push(lo);
        s.y_upper.push(hi);
        s.cell.push(iv_cell(x2, &extra, ze));
    }
    Ok(s)
}

pub fn interval_iv_dgp(d_w: usize, n: usize, seed: u64) -> Result<IvSample> {
    interval_iv_sample(d_w, n, &mut rep_rng(seed, 0))
}

impl IvSample {
    pub fn n(&self) -> usize {
        self.x1.len()
    }

    pub fn d_z(&self) -> usize {
        1 << (self.d_w + 1)
    }

    /// Moment rows `Z(X'β) − Y^L Z ≥ 0` and `Y^U Z − Z(X'β) ≥ 0` at
    /// `θ₂ = theta`, with `δ = (θ₁, γ')` left free.
    pub fn moment_data(&self, theta: f64) -> MomentData {
        let n = self.n();
        let dz = self.d_z();
        let dd = 1 + self.d_w;
        let mut g_obs = Matrix::zeros(n, 2 * dz);
        let mut jac_obs = Vec::with_capacity(n);
        for i in 0..n {
            let k = self.cell[i];
            g_obs[(i, k)] = self.x2[i] * theta - self.y_lower[i];
            g_obs[(i, dz + k)] = self.y_upper[i] - self.x2[i] * theta;
            let mut g = Matrix::zeros(2 * dz, dd);
            g[(k, 0)] = self.x1[i];
            g[(dz + k, 0)] = -self.x1[i];
            for c in 0..self.d_w {
                g[(k, 1 + c)] = self.w[(i, c)];
                g[(dz + k, 1 + c)] = -self.w[(i, c)];
            }
            jac_obs.push(g);
        }
        MomentData { g_obs, jac_obs, cluster_ids: None }
    }

    /// The test problem for `H₀: θ₂ = theta`.
    pub fn problem(&self, theta: f64) -> Result<(ProblemSpec, Estimates)> {
        let n = self.n();
        let dz = self.d_z();
        let dm = 2 * dz;
        let dd = 1 + self.d_w;
        // stacked rows (g_i, vec G_i) built directly; same layout as MomentData::stacked
        let mut z = Matrix::zeros(n, dm * (1 + dd));
        for i in 0..n {
            let k = self.cell[i];
            z[(i, k)] = self.x2[i] * theta - self.y_lower[i];
            z[(i, dz + k)] = self.y_upper[i] - self.x2[i] * theta;
            z[(i, dm + k)] = self.x1[i];
            z[(i, dm + dz + k)] = -self.x1[i];
            for c in 0..self.d_w {
                z[(i, dm * (2 + c) + k)] = self.w[(i, c)];
                z[(i, dm * (2 + c) + dz + k)] = -self.w[(i, c)];
            }
        }
        let (mean, omega_bar) = mean_and_covariance(&z);
        let mu_bar = mean.rows(0, dm).into_owned();
        let mut pi_bar = Matrix::zeros(dm, dd);
        for c in 0..dd {
            for r in 0..dm {
                pi_bar[(r, c)] = mean[dm + c * dm + r];
            }
        }
        let spec = ProblemSpec::new(-Matrix::identity(dm, dm), Matrix::zeros(dm, dd), Vector::zeros(dm), Vec::new(), n)?;
        Ok((spec, Estimates { mu_bar, pi_bar, omega_bar }))
    }

    pub fn family(self: &Arc<Self>) -> ProblemFamily {
        let s = Arc::clone(self);
        ProblemFamily::generic(move |t| s.problem(t))
    }
}

// ---------------------------------------------------------------------------
// drivers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Simple {
        #[serde(rename = "J")]
        j: usize,
        q: f64,
        n: usize,
    },
    IntervalIv { d_w: usize, n: usize },
}

impl Scenario {
    pub fn label(&self) -> String {
        match self {
            Scenario::Simple { j, q, n } => format!("simple-J{j}-q{q}-n{n}"),
            Scenario::IntervalIv { d_w, n } => format!("iv-dW{d_w}-n{n}"),
        }
    }

    pub fn sample_size(&self) -> usize {
        match self {
            Scenario::Simple { n, .. } | Scenario::IntervalIv { n, .. } => *n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::Simple { j, q, n } => {
                if *j < 3 || *n < 2 || !q.is_finite() {
                    return invalid(format!("invalid simple scenario J={j}, q={q}, n={n}"));
                }
            }
            Scenario::IntervalIv { d_w, n } => {
                if !(1..=3).contains(d_w) || *n < 2 {
                    return invalid(format!("invalid IV scenario d_W={d_w}, n={n}"));
                }
            }
        }
        Ok(())
    }

    /// Draw one replication's test problem at `theta`.
    pub fn draw<R: Rng>(&self, theta: f64, rng: &mut R) -> Result<(ProblemSpec, Estimates)> {
        match self {
            Scenario::Simple { j, q, n } => simple_sample(*j, *q, *n, theta, rng),
            Scenario::IntervalIv { d_w, n } => interval_iv_sample(*d_w, *n, rng)?.problem(theta),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub reps: usize,
    pub alpha: f64,
    pub variants: Vec<Variant>,
    pub base_seed: u64,
    /// Worker count; the global pool when `None`.
    pub threads: Option<usize>,
    pub options: GccOptions,
}

impl SimConfig {
    pub fn new(reps: usize, alpha: f64, variants: Vec<Variant>, base_seed: u64) -> Self {
        SimConfig { reps, alpha, variants, base_seed, threads: None, options: GccOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub variant: Variant,
    pub theta: f64,
    pub reps: usize,
    pub reject_rate: f64,
    /// Wall time is the one non-deterministic output.
    pub median_ms: f64,
    pub failures: usize,
}

/// Counts of the structural properties checked in every replication.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub tests: usize,
    pub dof_zero: usize,
    /// `ŝ = 0` with `T > 1e-8`
    pub dof_zero_violations: usize,
    pub refined: usize,
    /// `β̂ ∉ [α, 2α]`
    pub level_violations: usize,
    /// GCC rejects but RGCC does not
    pub dominance_violations: usize,
    /// `ŝ ≠ 1` but the two decisions differ
    pub identity_violations: usize,
    pub infeasible: usize,
    pub fallbacks: usize,
    pub failures: usize,
}

impl Tallies {
    pub fn merge(&mut self, o: &Tallies) {
        self.tests += o.tests;
        self.dof_zero += o.dof_zero;
        self.dof_zero_violations += o.dof_zero_violations;
        self.refined += o.refined;
        self.level_violations += o.level_violations;
        self.dominance_violations += o.dominance_violations;
        self.identity_violations += o.identity_violations;
        self.infeasible += o.infeasible;
        self.fallbacks += o.fallbacks;
        self.failures += o.failures;
    }

    pub fn clean(&self) -> bool {
        self.dof_zero_violations == 0
            && self.level_violations == 0
            && self.dominance_violations == 0
            && self.identity_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTable {
    pub rows: Vec<TableRow>,
    pub tallies: Tallies,
}

#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub gcc: Option<TestResult>,
    pub rgcc: Option<TestResult>,
    pub gcc_ms: f64,
    pub rgcc_ms: f64,
    pub error: Option<String>,
}

/// One replication: draw, then run the requested variants on the same data.
pub fn run_replication(scenario: &Scenario, theta: f64, rep: usize, cfg: &SimConfig) -> RepOutcome {
    let mut rng = rep_rng(cfg.base_seed, rep as u64);
    let mut out = RepOutcome { gcc: None, rgcc: None, gcc_ms: 0.0, rgcc_ms: 0.0, error: None };
    let (spec, est) = match scenario.draw(theta, &mut rng) {
        Ok(v) => v,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let t0 = Instant::now();
    let run = match gcc_run(&spec, &est, cfg.alpha, &cfg.options) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.gcc_ms = t0.elapsed().as_secs_f64() * 1e3;
    if cfg.variants.contains(&Variant::Rgcc) {
        let t1 = Instant::now();
        match refine(&spec, &run, &cfg.options) {
            Ok(r) => out.rgcc = Some(r),
            Err(e) => out.error = Some(e.to_string()),
        }
        out.rgcc_ms = out.gcc_ms + t1.elapsed().as_secs_f64() * 1e3;
    }
    out.gcc = Some(run.result);
    out
}

fn tally(o: &RepOutcome, alpha: f64) -> Tallies {
    let mut t = Tallies::default();
    if o.error.is_some() {
        t.failures = 1;
    }
    if let Some(g) = &o.gcc {
        t.tests += 1;
        if g.infeasible {
            t.infeasible += 1;
        } else if g.dof_s == 0 {
            t.dof_zero += 1;
            if g.statistic > 1e-8 {
                t.dof_zero_violations += 1;
            }
        }
        if let Some(r) = &o.rgcc {
            if let Some(b) = r.refined_level {
                t.refined += 1;
                if !(b >= alpha && b <= 2.0 * alpha) {
                    t.level_violations += 1;
                }
            }
            if r.fallback {
                t.fallbacks += 1;
            }
            if g.reject && !r.reject {
                t.dominance_violations += 1;
            }
            if g.dof_s != 1 && g.reject != r.reject {
                t.identity_violations += 1;
            }
        }
    }
    t
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| Error::Internal(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn validate_config(cfg: &SimConfig) -> Result<()> {
    if cfg.reps == 0 {
        return invalid("reps must be at least 1");
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 0.5) {
        return invalid(format!("alpha must lie in (0, 0.5), got {}", cfg.alpha));
    }
    if cfg.variants.is_empty() {
        return invalid("no variants requested");
    }
    Ok(())
}

/// All replications at one θ, in replication order.
pub fn run_point(scenario: &Scenario, theta: f64, cfg: &SimConfig) -> Result<Vec<RepOutcome>> {
    scenario.validate()?;
    validate_config(cfg)?;
    in_pool(cfg.threads, || (0..cfg.reps).into_par_iter().map(|r| run_replication(scenario, theta, r, cfg)).collect())
}

fn summarise(scenario: &Scenario, theta: f64, outcomes: &[RepOutcome], cfg: &SimConfig) -> (Vec<TableRow>, Tallies) {
    let mut tallies = Tallies::default();
    for o in outcomes {
        tallies.merge(&tally(o, cfg.alpha));
    }
    let mut rows = Vec::new();
    for &v in &cfg.variants {
        let pick = |o: &RepOutcome| match v {
            Variant::Gcc => o.gcc.as_ref().map(|r| (r.reject, o.gcc_ms)),
            Variant::Rgcc => o.rgcc.as_ref().map(|r| (r.reject, o.rgcc_ms)),
        };
        let done: Vec<(bool, f64)> = outcomes.iter().filter_map(pick).collect();
        let failures = cfg.reps - done.len();
        let rejects = done.iter().filter(|d| d.0).count();
        rows.push(TableRow {
            label: scenario.label(),
            variant: v,
            theta,
            reps: cfg.reps,
            // failed replications count as non-rejections and are reported
            reject_rate: rejects as f64 / cfg.reps as f64,
            median_ms: median(done.iter().map(|d| d.1).collect()),
            failures,
        });
    }
    (rows, tallies)
}

pub fn run_rejection_table(scenario: &Scenario, theta: f64, cfg: &SimConfig) -> Result<SimTable> {
    let outcomes = run_point(scenario, theta, cfg)?;
    let (rows, tallies) = summarise(scenario, theta, &outcomes, cfg);
    Ok(SimTable { rows, tallies })
}

pub fn run_power_curve(scenario: &Scenario, theta_grid: &[f64], cfg: &SimConfig) -> Result<SimTable> {
    if theta_grid.is_empty() {
        return invalid("theta grid is empty");
    }
    if let Some(t) = theta_grid.iter().find(|t| !t.is_finite()) {
        return invalid(format!("theta grid contains {t}"));
    }
    let mut table = SimTable { rows: Vec::new(), tallies: Tallies::default() };
    for &theta in theta_grid {
        let outcomes = run_point(scenario, theta, cfg)?;
        let (rows, tallies) = summarise(scenario, theta, &outcomes, cfg);
        table.rows.extend(rows);
        table.tallies.merge(&tallies);
    }
    Ok(table)
}

/// CSV with columns `variant,theta,reps,reject_rate,median_ms`. When several
/// scenarios share a file the variant column reads `label/variant`. Timing
/// is written as `NA` unless requested, keeping the output reproducible.
pub fn to_csv(rows: &[TableRow], with_label: bool, timing: bool) -> String {
    let mut s = String::from("variant,theta,reps,reject_rate,median_ms\n");
    for r in rows {
        let v = if with_label { format!("{}/{}", r.label, r.variant.name()) } else { r.variant.name().to_string() };
        let ms = if timing { format!("{:.4}", r.median_ms) } else { "NA".to_string() };
        s.push_str(&format!("{v},{},{},{},{ms}\n", r.theta, r.reps, r.reject_rate));
    }
    s
}
