//! Gate-level simulator of optical fault injection against shift registers
//! built from duplicated-transistor (series common-gate pair) logic.
//!
//! The crate models four layers and the campaigns that tie them together:
//!
//! * [`geom`] — points and axis-aligned rectangles in micrometres.
//! * [`layout`] — cell geometry: transistor gate sites, the fixed spacing
//!   between the two halves of each duplicated pair, filler metal, and
//!   builders for inverter / NAND / flip-flop / register cells.
//! * [`beam`] — focused Gaussian spot: objective table, waist from the 80%
//!   encircled-energy diameter, intensity and mean-intensity queries with
//!   filler occlusion.
//! * [`circuit`] — three-valued NAND netlists, the six-gate flip-flop, shift
//!   registers, settling, and stimulus traces.
//! * [`fault`] — intensity-threshold site opening, pair blocking, outcome
//!   classification, and threshold calibration against behavioural targets.
//! * [`campaign`] — grid scans, sensitivity maps, escalation ladders, region
//!   extraction and report summaries.
//! * [`cli`] — configuration and the `jicgsim` command-line front end.
//!
//! Everything is deterministic: equal inputs (including seeds) produce
//! byte-identical outputs.

pub mod beam;
pub mod campaign;
pub mod circuit;
pub mod cli;
pub mod fault;
pub mod geom;
pub mod layout;
pub mod model;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or input value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A named entity (site, pair, flip-flop, objective) does not exist.
    #[error("not found: {0}")]
    NotFound(String),
    /// No fault threshold satisfies every calibration target.
    #[error("calibration infeasible: constraint {constraint}: {detail}")]
    CalibrationInfeasible {
        /// Human-readable name of the first target that cannot be met.
        constraint: String,
        /// Why the target is unreachable.
        detail: String,
    },
    /// The netlist did not reach a fixed point within the sweep budget.
    #[error("circuit did not settle: {0}")]
    Unstable(String),
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// Malformed or unreadable JSON.
    #[error("bad JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Shorthand for [`Error::NotFound`].
    pub fn not_found(msg: impl Into<String>) -> Self {
        Error::NotFound(msg.into())
    }
}
