use thiserror::Error;

/// Errors raised by fitting, inference and I/O routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("split at {0} leaves an empty side")]
    EmptySide(f64),
    #[error("levels coincide ({0}); split criterion is constant")]
    DegenerateLevels(f64),
    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("estimate is not positive: {0}")]
    NonpositiveEstimate(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("unstable: {0}")]
    Unstable(String),
    #[error("no candidate split accepted by the {0} procedure")]
    EmptySet(String),
    #[error("probability level {0} is outside the tabulated range")]
    LevelOutOfRange(f64),
    #[error("block size {m} too small for n = {n}")]
    BlockTooSmall { m: usize, n: usize },
    #[error("block size {m} must be smaller than n = {n}")]
    BlockTooLarge { m: usize, n: usize },
    #[error("level {value} outside the domain of the {link} link")]
    DomainError { link: String, value: f64 },
    #[error("relative-risk limit is degenerate (c1/beta_l == c2/beta_u)")]
    DegenerateRatio,
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable code used on the CLI error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::EmptySide(_) => "empty_side",
            Error::DegenerateLevels(_) => "degenerate_levels",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::NonpositiveEstimate(_) => "nonpositive_estimate",
            Error::SingularDesign(_) => "singular_design",
            Error::Unstable(_) => "unstable",
            Error::EmptySet(_) => "empty_set",
            Error::LevelOutOfRange(_) => "level_out_of_range",
            Error::BlockTooSmall { .. } => "block_too_small",
            Error::BlockTooLarge { .. } => "block_too_large",
            Error::DomainError { .. } => "domain_error",
            Error::DegenerateRatio => "degenerate_ratio",
            Error::Parse { .. } => "parse_error",
            Error::Config { .. } => "config_error",
            Error::InvalidInput(_) => "invalid_input",
            Error::Io(_) => "io_error",
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric/instability.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::LevelOutOfRange(_) => 2,
            Error::Parse { .. }
            | Error::Config { .. }
            | Error::Io(_)
            | Error::DegenerateSample(_)
            | Error::DomainError { .. }
            | Error::TooFewPoints { .. }
            | Error::BlockTooSmall { .. }
            | Error::BlockTooLarge { .. } => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
