use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied an invalid argument or configuration.
    Argument(String),
    /// Two operands do not have conformable shapes.
    Shape {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// An iterative kernel did not converge.
    NoConvergence { what: &'static str, iterations: usize },
    /// A linear system could not be solved because the matrix is singular
    /// or not positive definite.
    RankDeficient(String),
    /// A computation produced a NaN or infinity.
    NonFinite(&'static str),
    /// Panel observations violate the grid or labelling invariants.
    Panel(PanelIssue),
}

/// Structural problems found while assembling a panel from observations.
#[derive(Debug, Clone, PartialEq)]
pub enum PanelIssue {
    MissingCell { unit: String, time: i64 },
    DuplicateCell { unit: String, time: i64 },
    InconsistentTreatment { unit: String },
    NonFiniteOutcome { unit: String, time: i64 },
    NoTreatedUnits,
    NoControlUnits,
    NoPreTreatmentPeriods,
    Empty,
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::Shape { op, expected, found }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Argument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Shape { op, expected, found } => write!(
                f,
                "{op}: shape mismatch, expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::NoConvergence { what, iterations } => {
                write!(f, "{what} did not converge after {iterations} iterations")
            }
            Error::RankDeficient(msg) => write!(f, "rank deficient system: {msg}"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Panel(issue) => write!(f, "{issue}"),
        }
    }
}

impl fmt::Display for PanelIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PanelIssue::MissingCell { unit, time } => {
                write!(f, "panel grid is missing unit {unit} at time {time}")
            }
            PanelIssue::DuplicateCell { unit, time } => {
                write!(f, "panel has more than one row for unit {unit} at time {time}")
            }
            PanelIssue::InconsistentTreatment { unit } => {
                write!(f, "unit {unit} has inconsistent treated flags across rows")
            }
            PanelIssue::NonFiniteOutcome { unit, time } => {
                write!(f, "outcome for unit {unit} at time {time} is not finite")
            }
            PanelIssue::NoTreatedUnits => f.write_str("panel has no treated units"),
            PanelIssue::NoControlUnits => f.write_str("panel has no control units"),
            PanelIssue::NoPreTreatmentPeriods => {
                f.write_str("no time periods at or before the pre-treatment marker")
            }
            PanelIssue::Empty => f.write_str("panel has no observations"),
        }
    }
}

impl core::error::Error for Error {}

impl From<PanelIssue> for Error {
    fn from(issue: PanelIssue) -> Self {
        Error::Panel(issue)
    }
}
