use thiserror::Error;

/// Every failure the library can report.
///
/// Variants map one-to-one onto the documented error codes; the CLI turns
/// them into exit statuses via [`Error::exit_code`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invariant violated on `{field}`: {rule}")]
    Invariant { field: String, rule: String },

    #[error("dangling reference: {kind} `{id}` not found")]
    DanglingRef { kind: &'static str, id: String },

    #[error("`{what}` = {value} outside [{lo}, {hi}]")]
    Range {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("upgrade must increase key cost (delta = {0})")]
    NonpositiveDeltaCost(f64),

    #[error("queue unstable: utilization {0} >= 1")]
    Unstable(f64),

    #[error("topology: demand at node `{node}` has no path to any supply")]
    Topology { node: String },

    #[error("base compliant assignment costs {base_cost} bits but only {budget} available")]
    InfeasibleBase { base_cost: f64, budget: f64 },

    #[error("no base-feasible assignment in scenario {scenario}, slot {slot}")]
    NoBaseFeasible { scenario: usize, slot: usize },

    #[error("operation not defined for strategy {0}")]
    WrongStrategy(&'static str),

    #[error("feasibility recovery failed: deficit {deficit} bits exceeds total relaxation capacity {capacity}{}", slot.map(|s| format!(" (slot {s})")).unwrap_or_default())]
    RecoveryFailed {
        deficit: f64,
        capacity: f64,
        slot: Option<usize>,
    },

    #[error("usage: {0}")]
    Usage(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn invariant(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Invariant {
            field: field.into(),
            rule: rule.into(),
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) => 2,
            Error::Invariant { .. } => 3,
            Error::DanglingRef { .. } => 4,
            Error::NoBaseFeasible { .. } | Error::InfeasibleBase { .. } => 5,
            Error::RecoveryFailed { .. } => 6,
            Error::Io(_) => 7,
            Error::Usage(_) => 64,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
