use thiserror::Error;

/// Broad classification used by the CLI (exit codes) and the HTTP layer
/// (status codes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed input: bad syntax, wrong shapes, missing fields.
    Validation,
    /// Well-formed input the math cannot accept (degenerate geometry,
    /// degree out of range, non-finite loss).
    Domain,
    /// The request conflicts with existing state (duplicate names, model
    /// fingerprint mismatches).
    Conflict,
    NotFound,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("line {line}: expected {expected} points, found {found}")]
    InconsistentPointCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: non-finite coordinate")]
    NonFiniteCoordinate { line: usize },
    #[error("expected {expected} points, found {found}")]
    PointCount { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate bounding box: landmarks are coincident")]
    DegenerateBoundingBox,
    #[error("degenerate inter-ocular distance ({0:e})")]
    DegenerateInterocular(f64),
    #[error("inter-ocular distance needs 68 points, found {0}")]
    NotSixtyEightPoints(usize),
    #[error("need at least 2 samples to build a model, got {0}")]
    TooFewSamples(usize),
    #[error("degree {k} out of range 1..={max}")]
    DegreeOutOfRange { k: usize, max: usize },
    #[error("degree mismatch: expected {expected}, found {found}")]
    DegreeMismatch { expected: usize, found: usize },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("interpolation factor {0} outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported {format} version {found} (expected {expected})")]
    VersionMismatch {
        format: &'static str,
        found: u64,
        expected: u64,
    },
    #[error("expected format tag {expected:?}, found {found:?}")]
    FormatTag { expected: &'static str, found: String },
    #[error("basis not orthonormal (max deviation {0:e})")]
    BasisNotOrthonormal(f64),
    #[error("invalid file contents: {0}")]
    InvalidFile(String),
    #[error("blendshape built for different model (expected {expected}, found {found})")]
    FingerprintMismatch { expected: String, found: String },
    #[error("blendshape {0:?} already exists")]
    DuplicateName(String),
    #[error("blendshape {0:?} not found")]
    NotFound(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            EmptyDataset
            | MalformedRecord { .. }
            | InconsistentPointCount { .. }
            | NonFiniteCoordinate { .. }
            | PointCount { .. }
            | NonFinite(_)
            | DimensionMismatch { .. }
            | InvalidArgument(_)
            | VersionMismatch { .. }
            | FormatTag { .. }
            | BasisNotOrthonormal(_)
            | InvalidFile(_)
            | Json(_) => ErrorKind::Validation,
            DegenerateBoundingBox
            | DegenerateInterocular(_)
            | NotSixtyEightPoints(_)
            | TooFewSamples(_)
            | DegreeOutOfRange { .. }
            | DegreeMismatch { .. }
            | AlphaOutOfRange(_)
            | NonFiniteLoss { .. } => ErrorKind::Domain,
            FingerprintMismatch { .. } | DuplicateName(_) => ErrorKind::Conflict,
            NotFound(_) => ErrorKind::NotFound,
            Io(_) => ErrorKind::Io,
        }
    }

    /// Stable machine-readable code, used in HTTP error bodies.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            EmptyDataset => "empty_dataset",
            MalformedRecord { .. } => "malformed_record",
            InconsistentPointCount { .. } | PointCount { .. } => "point_count",
            NonFiniteCoordinate { .. } | NonFinite(_) => "non_finite",
            DegenerateBoundingBox => "degenerate_bbox",
            DegenerateInterocular(_) => "degenerate_interocular",
            NotSixtyEightPoints(_) => "not_68_points",
            TooFewSamples(_) => "too_few_samples",
            DegreeOutOfRange { .. } => "degree_out_of_range",
            DegreeMismatch { .. } => "degree_mismatch",
            DimensionMismatch { .. } => "dimension_mismatch",
            AlphaOutOfRange(_) => "alpha_out_of_range",
            InvalidArgument(_) => "invalid_argument",
            VersionMismatch { .. } => "version_mismatch",
            FormatTag { .. } => "format_tag",
            BasisNotOrthonormal(_) => "basis_not_orthonormal",
            InvalidFile(_) => "invalid_file",
            FingerprintMismatch { .. } => "fingerprint_mismatch",
            DuplicateName(_) => "duplicate_name",
            NotFound(_) => "not_found",
            NonFiniteLoss { .. } => "non_finite_loss",
            Json(_) => "invalid_json",
            Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
