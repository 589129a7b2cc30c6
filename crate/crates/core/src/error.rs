use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report. `code()` yields the stable
/// upper-case identifier surfaced by the API and CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown id: {0}")]
    UnknownId(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("gap in log: expected seq {expected}, found {found}")]
    GapInLog { expected: u64, found: u64 },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("name must not be empty")]
    EmptyName,
    #[error("unknown parent context: {0}")]
    UnknownParent(String),
    #[error("parent context {0} is not active")]
    ParentNotActive(String),
    #[error("strength {0} outside (0, 1]")]
    BadStrength(f64),
    #[error("context {0} does not accept new items")]
    CtxNotWritable(String),
    #[error("context {0} is not active")]
    CtxNotActive(String),
    #[error("context {0} is retracted")]
    CtxRetracted(String),
    #[error("cannot merge a context into itself")]
    MergeSelf,
    #[error("source context {0} is the current context")]
    SrcIsCurrent(String),
    #[error("context {0} is the current context")]
    CtxIsCurrent(String),
    #[error("assignment does not cover member {0}")]
    PartialAssignment(String),
    #[error("no membership of {item} in {ctx}")]
    UnknownMembership { item: String, ctx: String },
    #[error("proposal {0} is stale")]
    StaleProposal(String),
    #[error("clock skew: now precedes last access by {0} ms")]
    ClockSkew(i64),
    #[error("view kinds differ")]
    KindMismatch,
    #[error("missing attribute {0}")]
    MissingAttr(&'static str),
    #[error("invalid policy: {0}")]
    BadPolicy(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownId(_) => "UNKNOWN_ID",
            Error::InvariantViolation(_) => "INVARIANT_VIOLATION",
            Error::GapInLog { .. } => "GAP_IN_LOG",
            Error::CorruptRecord { .. } => "CORRUPT_RECORD",
            Error::Io(_) => "IO_FAILURE",
            Error::EmptyName => "EMPTY_NAME",
            Error::UnknownParent(_) => "UNKNOWN_PARENT",
            Error::ParentNotActive(_) => "PARENT_NOT_ACTIVE",
            Error::BadStrength(_) => "BAD_STRENGTH",
            Error::CtxNotWritable(_) => "CTX_NOT_WRITABLE",
            Error::CtxNotActive(_) => "CTX_NOT_ACTIVE",
            Error::CtxRetracted(_) => "CTX_RETRACTED",
            Error::MergeSelf => "MERGE_SELF",
            Error::SrcIsCurrent(_) => "SRC_IS_CURRENT",
            Error::CtxIsCurrent(_) => "CTX_IS_CURRENT",
            Error::PartialAssignment(_) => "PARTIAL_ASSIGNMENT",
            Error::UnknownMembership { .. } => "UNKNOWN_MEMBERSHIP",
            Error::StaleProposal(_) => "STALE_PROPOSAL",
            Error::ClockSkew(_) => "CLOCK_SKEW",
            Error::KindMismatch => "KIND_MISMATCH",
            Error::MissingAttr(_) => "MISSING_ATTR",
            Error::BadPolicy(_) => "BAD_POLICY",
            Error::InvalidArgument(_) => "INVALID_ARGUMENT",
        }
    }

    /// HTTP status used by the sidebar API for this error.
    pub fn http_status(&self) -> u16 {
        match self {
            Error::UnknownId(_)
            | Error::UnknownParent(_)
            | Error::UnknownMembership { .. } => 404,
            Error::EmptyName
            | Error::BadStrength(_)
            | Error::MergeSelf
            | Error::PartialAssignment(_)
            | Error::ClockSkew(_)
            | Error::KindMismatch
            | Error::MissingAttr(_)
            | Error::BadPolicy(_)
            | Error::InvalidArgument(_) => 400,
            Error::ParentNotActive(_)
            | Error::CtxNotWritable(_)
            | Error::CtxNotActive(_)
            | Error::CtxRetracted(_)
            | Error::SrcIsCurrent(_)
            | Error::CtxIsCurrent(_)
            | Error::StaleProposal(_)
            | Error::InvariantViolation(_) => 409,
            Error::GapInLog { .. } | Error::CorruptRecord { .. } | Error::Io(_) => 500,
        }
    }
}
