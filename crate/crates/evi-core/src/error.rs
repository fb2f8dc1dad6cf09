//! Error type shared across the crate.
//!
//! Checks report violations through [`crate::report::CheckReport`] values;
//! errors are reserved for contract breaches (bad arguments, mismatched
//! spaces, missing capabilities) and honest numerical failure (divergence,
//! unbounded objectives, exhausted budgets).

use alloc::string::String;

/// Everything that can go wrong while building spaces, running schemes, or
/// evaluating checks.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Mismatched dimensions, supports, or point variants.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A trajectory or curve was queried past its stored horizon.
    #[error("time {t} is beyond the horizon; max queryable time is {max}")]
    Horizon { t: f64, max: f64 },

    /// A point lies outside the domain of an energy or divergence.
    #[error("out of domain: {0}")]
    OutOfDomain(String),

    /// A quantity is genuinely infinite (e.g. relative entropy with an
    /// absolutely-continuous part missing), as opposed to float overflow.
    #[error("infinite value: {0}")]
    Infinite(String),

    /// An iterative solver ran out of budget; carries its last error measure.
    #[error("no convergence: {detail} (last error {last:.3e})")]
    NonConvergence { detail: String, last: f64 },

    /// A minimization objective decreases without bound.
    #[error("objective unbounded below: {0}")]
    UnboundedBelow(String),

    /// An argmin or membership set came back empty.
    #[error("empty set: {0}")]
    EmptySet(String),

    /// A capability required by the operation is missing (asymmetric cost,
    /// absent decomposition, unsupported point variant, ...).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// No closed-form rule is registered for the requested combination.
    #[error("no closed form: {0}")]
    NoClosedForm(String),

    /// A density left its ratio box or lost normalization.
    #[error("density constraint violated: {0}")]
    DensityConstraint(String),

    /// A resolution or iteration budget guard tripped before starting work.
    #[error("budget exceeded: {0}")]
    Budget(String),
}

pub type Result<T> = core::result::Result<T, Error>;
