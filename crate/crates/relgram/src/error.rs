use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence shorter than kernel (length {length}, kernel {kernel})")]
    SequenceShorterThanKernel { length: usize, kernel: usize },

    #[error("out-of-vocabulary id {id} (vocabulary size {vocab_size})")]
    OutOfVocabularyId { id: u32, vocab_size: usize },

    #[error("numeric overflow in forward pass ({context})")]
    NumericOverflow { context: &'static str },

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error(
        "layer count mismatch: trace has {trace_layers} dense layers, model has {model_layers}"
    )]
    LayerMismatch {
        trace_layers: usize,
        model_layers: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("unsupported model format version {found} (this build reads version {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("{path}:{line}: {message}")]
    MalformedLine {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: unknown label {label:?}")]
    UnknownLabel {
        path: String,
        line: usize,
        label: String,
    },

    #[error("instance too large for exhaustive oracle ({size} positive features, cap {cap})")]
    TooLargeForOracle { size: usize, cap: usize },

    #[error("inconsistent trace: stored prediction {stored}, re-evaluation gives {reevaluated}")]
    InconsistentTrace { stored: usize, reevaluated: usize },

    #[error("input has no tokens after tokenization")]
    DegenerateInput,

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.display().to_string(),
            source,
        }
    }
}
