use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("malformed AST document: {0}")]
    MalformedAst(String),

    #[error("invalid AST: {0}")]
    InvalidAst(AstDefect),

    #[error("invalid node {0}: {1}")]
    InvalidNode(u32, String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no training example has an in-vocabulary label")]
    NoLabels,

    #[error("vocabulary is empty after applying min_count={0}")]
    EmptyVocab(usize),

    #[error("malformed vocabulary file: {0}")]
    MalformedVocab(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u64, expected: u64 },

    #[error("vocabulary fingerprint mismatch for {0} vocabulary")]
    FingerprintMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("class {0} has no examples in the sampled fraction; try another seed or a larger fraction")]
    MissingClass(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstDefect {
    #[error("tree has no nodes")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateId(u32),
    #[error("root id {0} is not in the node table")]
    MissingRoot(u32),
    #[error("node {parent} references missing child {child}")]
    DanglingChild { parent: u32, child: u32 },
    #[error("node {0} has more than one parent")]
    MultipleParents(u32),
    #[error("multiple roots: {0:?}")]
    MultipleRoots(Vec<u32>),
    #[error("cycle through node {0}")]
    Cycle(u32),
    #[error("{kind} node {id} must carry a token and have no children")]
    LeafShape { id: u32, kind: String },
}

impl Error {
    /// Whether the failure is numeric (as opposed to bad data or bad usage).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }

    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }
}
