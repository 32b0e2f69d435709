use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trait matrix contains non-finite entries")]
    NonFinite,

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: String, found: String },

    #[error("item index {item} out of range for catalog of {num_items} items")]
    ItemOutOfRange { item: usize, num_items: usize },

    #[error("basket {index} has a singular Gram matrix (degenerate trait rows)")]
    SingularBasket { index: usize },

    #[error(
        "conditioning basket has a singular Gram matrix; it has probability 0 under this component"
    )]
    SingularConditioning,

    #[error("conditional distribution degenerate")]
    DegenerateConditional,

    #[error("observation unsupported by every component")]
    UnsupportedObservation,

    #[error("basket unsupported by posterior")]
    UnsupportedBasket,

    #[error("no candidates left to predict")]
    NoCandidates,

    #[error("basket {index} has {size} items but trait dimension is {k}: zero probability mass on subsets with more than K items")]
    BasketExceedsRank { index: usize, size: usize, k: usize },

    #[error("diverged at sweep {sweep}; reduce eta")]
    Diverged { sweep: usize },

    #[error("gradient is not finite; diverged, reduce eta")]
    NonFiniteGradient,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("oracle refuses catalogs larger than {max} items (got {m})")]
    OracleTooLarge { m: usize, max: usize },

    #[error("basket of size {size} cannot produce an evaluation instance (need at least 2 items)")]
    BasketTooSmall { size: usize },

    #[error("held-out item {item} never occurs in the training data")]
    UnseenHeldOut { item: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}:{line}: malformed line: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    #[error("corrupt chain file: {0}")]
    CorruptChain(String),

    #[error("chain file version {found} is not supported (expected {expected})")]
    ChainVersion { found: u32, expected: u32 },

    #[error("chain dimension mismatch: expected M={expected_m}, K={expected_k}, chain has M={found_m}, K={found_k}")]
    ChainDimension {
        expected_m: usize,
        expected_k: usize,
        found_m: usize,
        found_k: usize,
    },

    #[error("catalog mismatch: {0}")]
    CatalogMismatch(String),

    #[error("infeasible synthetic configuration: {0}")]
    Infeasible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
