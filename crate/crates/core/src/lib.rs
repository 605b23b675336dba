//! Generalized conditional chi-squared (GCC) tests for hypotheses of the form
//! "C δ ≤ b for some δ" where both C and b are estimated.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] – tolerance-aware rank, pseudoinverse and the Σ̃ constructor.
//! * [`distributions`] – chi-squared quantiles and the standard normal CDF.
//! * [`qp`] – the restricted projection problem and its KKT multipliers.
//! * [`polytope`] – vertex enumeration and the projected μ-representation.
//! * [`gcc`] / [`rgcc`] – the test and its refinement.
//! * [`models`], [`ci`], [`sim`] – problem builders, test inversion and the
//!   Monte Carlo harness.
//! * [`io`] – JSON file formats shared by the CLI and the Python bindings.

pub mod ci;
pub mod distributions;
pub mod error;
pub mod gcc;
pub mod io;
pub mod linalg;
pub mod models;
pub mod polytope;
pub mod qp;
pub mod rgcc;
pub mod sim;

pub use error::{Error, Result};
pub use gcc::{gcc_test, Estimates, GccOptions, ProblemSpec, TestResult};
pub use rgcc::rgcc_test;



pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;

/// Which member of the test family to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gcc,
    Rgcc,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Gcc => "gcc",
            Variant::Rgcc => "rgcc",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcc" => Ok(Variant::Gcc),
            "rgcc" => Ok(Variant::Rgcc),
            other => error::invalid(format!("unknown variant `{other}` (expected gcc or rgcc)")),
        }
    }
}

/// Run either variant.
pub fn run_test(spec: &ProblemSpec, est: &Estimates, alpha: f64, variant: Variant, opts: &GccOptions) -> Result<TestResult> {
    match variant {
        Variant::Gcc => gcc_test(spec, est, alpha, opts),
        Variant::Rgcc => rgcc_test(spec, est, alpha, opts),
    }
}
