use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("shape chain broken between layer {prev} ({prev_desc}) and layer {next} ({next_desc})")]
    ShapeChain {
        prev: usize,
        prev_desc: String,
        next: usize,
        next_desc: String,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid architecture: {0}")]
    Arch(String),

    #[error("invalid profile: {0}")]
    Profile(String),

    #[error("invalid design: {0}")]
    Design(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("deadlock at cycle {cycle}: blocked on {blocked:?}")]
    Deadlock { cycle: f64, blocked: Vec<String> },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub fn read_file(path: impl AsRef<std::path::Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: impl AsRef<std::path::Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
