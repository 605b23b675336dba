//! `ineqgcc` command-line front end.
//!
//! Exit codes: 0 accept (or success), 1 reject, 2 input error, 3 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ineqgcc::ci::{invert_test, CiOptions, CiResult, DEFAULT_GRID};
use ineqgcc::io::{FamilyFile, ProblemFile, ScenarioFile};
use ineqgcc::linalg::RankTolerance;
use ineqgcc::sim::{run_power_curve, to_csv, SimConfig, Tallies};
use ineqgcc::{run_test, Error, GccOptions, Variant};

const EXIT_ACCEPT: u8 = 0;
const EXIT_REJECT: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Parser, Debug)]
#[command(name = "ineqgcc", version, about = "GCC / RGCC tests for linear inequalities with estimated nuisance coefficients")]
struct Cli {
    /// Significance level (default 0.05; simulate falls back to the scenario file)
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// gcc or rgcc (default gcc; simulate falls back to the scenario file)
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Relative tolerance for "holds with equality"
    #[arg(long, global = true)]
    active_tol: Option<f64>,
    /// Relative singular-value threshold for ranks
    #[arg(long, global = true)]
    rank_tol: Option<f64>,
    /// Worker threads
    #[arg(long, global = true, env = "INEQGCC_THREADS")]
    threads: Option<usize>,
    /// Base seed for simulate (overrides the scenario file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also compute the r and t degrees of freedom
    #[arg(long, global = true)]
    diagnostics: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one test on a problem file and print the result as JSON
    Test {
        /// Problem file (JSON)
        problem: PathBuf,
    },
    /// Invert the test over θ for a family file
    Ci {
        /// Family file (JSON, with d_slope)
        family: PathBuf,
        /// Search interval for θ
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true, required = true)]
        bracket: Vec<f64>,
        /// Bisection tolerance on the endpoints (default 1e-4 of the bracket width)
        #[arg(long)]
        tol: Option<f64>,
        /// Number of grid points scanned before refining
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
    },
    /// Run a scenario file and write the rejection table as CSV
    Simulate {
        /// Scenario file (JSON)
        scenario: PathBuf,
        /// Where to write the CSV table
        #[arg(long)]
        out: PathBuf,
        /// Fill the median_ms column (otherwise NA, keeping output reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Check a problem or family file against every invariant
    Validate {
        /// Problem or family file (JSON)
        problem: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidInput(_) | Error::GuardExceeded(_) => EXIT_INPUT,
            _ => EXIT_NUMERIC,
        };
        Failure { code, message: e.to_string() }
    }
}

fn input_error(message: String) -> Failure {
    Failure { code: EXIT_INPUT, message }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("output serialises"));
}

fn options(cli: &Cli) -> Result<GccOptions, Failure> {
    let mut o = GccOptions { diagnostics: cli.diagnostics, ..Default::default() };
    if let Some(t) = cli.active_tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(input_error(format!("--active-tol must be positive, got {t}")));
        }
        o.active_tol = t;
    }
    if let Some(t) = cli.rank_tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(input_error(format!("--rank-tol must be positive, got {t}")));
        }
        o.rank_tol = RankTolerance { relative: t, ..RankTolerance::default() };
    }
    Ok(o)
}

fn cmd_test(cli: &Cli, path: &Path) -> Result<u8, Failure> {
    let (spec, est) = ProblemFile::from_json(&read(path)?)?.to_problem()?;
    let alpha = cli.alpha.unwrap_or(DEFAULT_ALPHA);
    let r = run_test(&spec, &est, alpha, cli.variant.unwrap_or(Variant::Gcc), &options(cli)?)?;
    print_json(&r);
    Ok(if r.reject { EXIT_REJECT } else { EXIT_ACCEPT })
}

#[derive(Serialize)]
struct CiReport {
    variant: Variant,
    alpha: f64,
    #[serde(flatten)]
    interval: CiResult,
    warning: Option<String>,
}

fn cmd_ci(cli: &Cli, path: &Path, bracket: &[f64], tol: Option<f64>, grid: usize) -> Result<u8, Failure> {
    let family = FamilyFile::from_json(&read(path)?)?.to_family()?;
    let alpha = cli.alpha.unwrap_or(DEFAULT_ALPHA);
    let variant = cli.variant.unwrap_or(Variant::Gcc);
    let opts = CiOptions { variant, grid, tol, test: options(cli)? };
    let interval = invert_test(&family, alpha, (bracket[0], bracket[1]), &opts)?;
    let warning = if interval.empty {
        Some("no grid point was accepted; the interval is empty on this bracket".to_string())
    } else if interval.multi_segment {
        Some(format!("acceptance region has {} separate segments", interval.segments.len()))
    } else {
        None
    };
    print_json(&CiReport { variant, alpha, interval, warning });
    Ok(EXIT_ACCEPT)
}

#[derive(Serialize)]
struct SimRow {
    label: String,
    variant: Variant,
    theta: f64,
    reps: usize,
    reject_rate: f64,
    failures: usize,
}

#[derive(Serialize)]
struct SimSummary {
    out: String,
    seed: u64,
    alpha: f64,
    rows: Vec<SimRow>,
    tallies: Tallies,
}

fn cmd_simulate(cli: &Cli, path: &Path, out: &Path, timing: bool) -> Result<u8, Failure> {
    let file = ScenarioFile::from_json(&read(path)?)?;
    // fail on an unwritable destination before doing any work
    fs::File::create(out).map_err(|e| input_error(format!("cannot write {}: {e}", out.display())))?;
    let seed = cli.seed.unwrap_or(file.seed);
    let alpha = cli.alpha.unwrap_or(file.alpha);
    let variants = match cli.variant {
        Some(v) => vec![v],
        None => file.variants.clone(),
    };
    let cfg = SimConfig { reps: file.reps, alpha, variants, base_seed: seed, threads: cli.threads, options: options(cli)? };
    let mut rows = Vec::new();
    let mut tallies = Tallies::default();
    for s in &file.scenarios {
        let t = run_power_curve(s, &file.grid_for(s), &cfg)?;
        rows.extend(t.rows);
        tallies.merge(&t.tallies);
    }
    let csv = to_csv(&rows, file.scenarios.len() > 1, timing);
    fs::write(out, csv).map_err(|e| input_error(format!("cannot write {}: {e}", out.display())))?;
    let summary = SimSummary {
        out: out.display().to_string(),
        seed,
        alpha,
        rows: rows
            .into_iter()
            .map(|r| SimRow {
                label: r.label,
                variant: r.variant,
                theta: r.theta,
                reps: r.reps,
                reject_rate: r.reject_rate,
                failures: r.failures,
            })
            .collect(),
        tallies,
    };
    print_json(&summary);
    Ok(EXIT_ACCEPT)
}

#[derive(Serialize)]
struct ValidationReport {
    valid: bool,
    kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(rename = "d_C", skip_serializing_if = "Option::is_none")]
    d_c: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_mu: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_delta: Option<usize>,
}

fn cmd_validate(path: &Path) -> Result<u8, Failure> {
    let text = read(path)?;
    let value: serde_json::Value =
        ineqgcc::io::parse_json(&text, "problem file").map_err(Failure::from)?;
    let is_family = value.get("d_slope").is_some();
    let kind = if is_family { "family" } else { "problem" };
    let checked = if is_family {
        FamilyFile::from_json(&text).and_then(|f| {
            f.to_family()?;
            ProblemFile {
                n: f.n,
                b: f.b,
                d_mat: f.d_mat,
                d: f.d,
                eq_indices: f.eq_indices,
                mu_bar: f.mu_bar,
                pi_bar: f.pi_bar,
                omega: f.omega,
            }
            .to_problem()
        })
    } else {
        ProblemFile::from_json(&text).and_then(|f| f.to_problem())
    };
    let report = match checked {
        Ok((spec, _)) => ValidationReport {
            valid: true,
            kind,
            error: None,
            n: Some(spec.n),
            d_c: Some(spec.d_c()),
            d_mu: Some(spec.d_mu()),
            d_delta: Some(spec.d_delta()),
        },
        Err(e) => ValidationReport { valid: false, kind, error: Some(e.to_string()), n: None, d_c: None, d_mu: None, d_delta: None },
    };
    print_json(&report);
    Ok(if report.valid { EXIT_ACCEPT } else { EXIT_INPUT })
}

fn run(cli: &Cli) -> Result<u8, Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(input_error("--threads must be at least 1".into()));
        }
        // the grid scan of `ci` uses the global pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.cmd {
        Cmd::Test { problem } => cmd_test(cli, problem),
        Cmd::Ci { family, bracket, tol, grid } => cmd_ci(cli, family, bracket, *tol, *grid),
        Cmd::Simulate { scenario, out, timing } => cmd_simulate(cli, scenario, out, *timing),
        Cmd::Validate { problem } => cmd_validate(problem),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
