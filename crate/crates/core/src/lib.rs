//! Predictive link scheduling for an aerial relay that must stay quiet at
//! protected ground stations.
//!
//! A transmitter flying a known route has to deliver a fixed number of bits to
//! each of several receivers within a horizon of `T` scheduling slots, while
//! the *expected* interference it leaks into known neighboring base stations
//! stays below a hard threshold in every slot. Channel knowledge comes from a
//! radio map: per-slot large-scale gains plus a Gamma fading shape per link,
//! never instantaneous realizations. The planner
//!
//! 1. turns the map into a deterministic [`ProblemInstance`] — capped rates
//!    `c̄`, interference-equivalent power caps `p̄`, a fading back-off `ε` that
//!    makes `log2(1+pg) − ε` a guaranteed lower bound on expected throughput
//!    ([`problem`]),
//! 2. solves the convex relaxation of the joint power/bandwidth schedule with
//!    a threshold-driven dual method ([`solver`]),
//! 3. rounds the fractional schedule into few fully-used slots without ever
//!    raising the relaxed cost, and certifies the distance to the unknown
//!    mixed-integer optimum ([`rounding`]).
//!
//! [`baselines`] holds the comparison schemes (reactive best-effort, map-free
//! prediction), [`oracle`] the independent solvers used to validate the fast
//! path, [`channel`] the scenario generator, and [`experiment`] the
//! evaluation pipeline behind the `skyplan` CLI.

pub mod baselines;
pub mod channel;
pub mod experiment;
pub mod io;
pub mod oracle;
pub mod problem;
pub mod rounding;
pub mod solver;

pub use problem::{Plan, PhiPlan, ProblemInstance};
pub use rounding::GapCertificate;
pub use solver::{MultiOutcome, SolveConfig};

/// Errors surfaced by planning, solving, and IO.
///
/// `Infeasible` and `NoConvergence` are contractual: the CLI maps them to
/// exit codes 2 and 3 respectively.
#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(
        "demand {demand:.6e} for receiver {receiver} exceeds max deliverable {max_deliverable:.6e}"
    )]
    Infeasible {
        receiver: usize,
        demand: f64,
        max_deliverable: f64,
    },
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("bad instance: {0}")]
    BadInstance(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
