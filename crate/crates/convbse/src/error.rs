use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(String),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("signal too short: {got} samples, need at least {need}")]
    SignalTooShort { got: usize, need: usize },

    #[error("too few frames: {got} frames, need more than {need}")]
    TooFewFrames { got: usize, need: usize },

    #[error("{what}: matrix solve failed (condition estimate {cond:.3e})")]
    Singular { what: &'static str, cond: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed run log at line {line}: {msg}")]
    RunLogParse { line: usize, msg: String },

    #[error("manifest error: {0}")]
    Manifest(String),
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Wav(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
