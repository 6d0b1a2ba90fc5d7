//! Error type shared by all solver and simulation modules.

use std::fmt;

/// Errors reported by the allocation solvers, policies and the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An argument violates a documented precondition (negative energy,
    /// draw outside `[0, 1)`, bad distribution parameter, ...).
    InvalidArgument(String),
    /// Vector or matrix dimensions do not match the system parameters.
    DimensionMismatch(String),
    /// A policy tried to spend more energy than a user has left.
    Overdraft {
        user: usize,
        requested: f64,
        available: f64,
    },
    /// A water-filling problem has no feasible allocation.
    Infeasible(String),
    /// The DP state grid would exceed the configured memory budget.
    Capacity(String),
    /// Unsupported distribution kind / quadrature order combination.
    Unsupported(String),
    /// An internal cross-check failed (e.g. a causal policy out-performed
    /// the offline optimum on the same realization).
    Inconsistency(String),
    /// Reading or writing a cache file failed.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Overdraft {
                user,
                requested,
                available,
            } => write!(
                f,
                "energy overdraft for user {user}: requested {requested} J with {available} J available"
            ),
            Error::Infeasible(msg) => write!(f, "infeasible: {msg}"),
            Error::Capacity(msg) => write!(f, "capacity: {msg}"),
            Error::Unsupported(msg) => write!(f, "unsupported: {msg}"),
            Error::Inconsistency(msg) => write!(f, "internal consistency: {msg}"),
            Error::Io(msg) => write!(f, "io: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
