//! Crate-wide error type.
//!
//! One flat enum serves every subsystem. Errors cross module boundaries
//! constantly here (a read touches the container, the filter pipeline, the
//! trust store, and the sandbox in one call), and a single enum keeps those
//! paths free of conversion noise while still letting callers match on the
//! precise failure.

use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    // Container format.
    #[error("path already exists: {0}")]
    DuplicatePath(String),
    #[error("path not found: {0}")]
    NotFound(String),
    #[error("invalid datatype: {0}")]
    InvalidDType(String),
    #[error("layout conflict: {0}")]
    ShapeFilterConflict(String),
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("dataset {0} is a user-defined function; read it through the engine")]
    UdfDataset(String),

    // Filter pipeline.
    #[error("unknown filter id {0}")]
    UnknownFilter(u32),
    #[error("bad parameters for filter {id}: {reason}")]
    BadFilterParams { id: u32, reason: String },
    #[error("filter {id} failed: {reason}")]
    FilterFailure { id: u32, reason: String },
    #[error("decoded chunk is {got} bytes, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    // Expression language.
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("function `{name}` takes {expected} argument(s), got {got}")]
    Arity {
        offset: usize,
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("malformed bytecode: {0}")]
    MalformedBytecode(String),
    #[error("unsupported bytecode version {0}")]
    UnsupportedVersion(u16),

    // Virtual machine.
    #[error("static cost {cost} exceeds op budget {budget}")]
    BudgetExceeded { cost: u64, budget: u64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input datatype unsupported: {0}")]
    InputDTypeUnsupported(String),

    // Runtime library.
    #[error("unknown dataset or member name: {0}")]
    UnknownName(String),
    #[error("index {index} out of bounds for {len} elements")]
    OutOfBounds { index: usize, len: usize },
    #[error("string of {len} bytes does not fit in fixed field of {cap}")]
    StringTooLong { len: usize, cap: usize },
    #[error("variable-length string fields are read-only")]
    VarStringWriteUnsupported,
    #[error("sanitized member name collides: {0}")]
    NameCollision(String),
    #[error("target is read-only: {0}")]
    ReadOnly(String),

    // Sandbox.
    #[error("execution exceeded the wall-clock timeout")]
    Timeout,
    #[error("memory demand {need} bytes exceeds cap {cap}")]
    MemoryCapExceeded { need: u64, cap: u64 },
    #[error("capability denied: {0}")]
    CapabilityDenied(String),
    #[error("user function panicked: {0}")]
    UdfPanic(String),

    // Trust store.
    #[error("malformed key material: {0}")]
    MalformedKey(String),
    #[error("key file {path}: {reason}")]
    KeyFile { path: PathBuf, reason: String },
    #[error("trust store: {0}")]
    TrustStore(String),
    #[error("key {fingerprint} appears in profiles `{first}` and `{second}`")]
    DuplicateKey {
        fingerprint: String,
        first: String,
        second: String,
    },
    #[error("unknown profile: {0}")]
    UnknownProfile(String),
    #[error("unknown key: {0}")]
    UnknownKey(String),

    // UDF engine.
    #[error("unknown backend: {0}")]
    UnknownBackend(String),
    #[error("backend already registered: {0}")]
    DuplicateBackend(String),
    #[error("backend {backend} failed to compile the source: {message}")]
    CompileError { backend: String, message: String },
    #[error("input dataset missing: {0}")]
    MissingInput(String),
    #[error("malformed payload header: {0}")]
    MalformedHeader(String),
    #[error("signature verification failed: {0}")]
    SignatureInvalid(String),
    #[error("trust policy violation: {0}")]
    TrustViolation(String),
    #[error("cyclic dataset dependency: {}", .0.join(" -> "))]
    CyclicDependency(Vec<String>),
    #[error("no hosted function registered under `{0}`")]
    UnknownHostedFunction(String),

    // Bench.
    #[error("insufficient scratch space: {0}")]
    InsufficientSpace(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Maps storage-full conditions onto the dedicated variant so callers
    /// can distinguish a full disk from a genuine format problem.
    pub(crate) fn from_io(err: io::Error, context: &str) -> Error {
        if err.kind() == io::ErrorKind::StorageFull {
            Error::InsufficientSpace(format!("{context}: {err}"))
        } else {
            Error::Io(err)
        }
    }
}
