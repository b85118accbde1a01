//! Socio-technical macroscopic traffic model.
//!
//! The pipeline runs in one direction: passengers value two routes under
//! Cumulative Prospect Theory ([`cpt`]), a logit rule turns those values into
//! route assignments and a class split `alpha` ([`route_choice`]), and
//! `alpha` parameterizes a two-class conservation-law model ([`model`]) whose
//! hyperbolicity and stability are analysed ([`analysis`]) and simulated
//! ([`solver`]). [`density`] holds the kernel density estimator that links
//! vehicle positions to macroscopic densities, and [`scenario`] is the JSON
//! scenario format used by the command-line front end.

pub mod analysis;
pub mod cpt;
pub mod density;
pub mod model;
pub mod route_choice;
pub mod scenario;
pub mod solver;

pub use analysis::{StabilityReport, block_eigenvalues, check_hyperbolicity, fit_decay};
pub use cpt::{CptParams, Prospect, cpt_value, cpt_value_empirical};
pub use model::{OperatingPoint, TrafficState};
pub use route_choice::{RouteChoiceOutcome, SocialScenario, choose_routes};
pub use scenario::Scenario;
pub use solver::{SolverConfig, Trajectory, run_simulation};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid prospect: {0}")]
    InvalidProspect(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate route split: M1 = {m1}, M2 = {m2}")]
    DegenerateSplit { m1: usize, m2: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("insufficient grid margin: {0}")]
    InsufficientMargin(String),
    #[error("cost is not convex: {0}")]
    NonConvex(String),
    #[error("conjugate unbounded below at p = {0}; p is outside the effective domain")]
    Unbounded(f64),
    #[error("CFL violation: dt = {dt} exceeds limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("non-finite state at cell {cell}")]
    NonFinite { cell: usize },
    #[error("Jacobian is not strictly hyperbolic: {0}")]
    NotHyperbolic(String),
    #[error("junction blocked: incoming flux {incoming} with zero outgoing flux")]
    JunctionBlocked { incoming: f64 },
    #[error("decay fit: {0}")]
    Fit(String),
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scenario validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;
