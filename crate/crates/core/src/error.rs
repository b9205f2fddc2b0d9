use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The shield found no certified command for a state.
    #[error("unrecoverable state at loc {loc:.2} m, vel {vel:.3} km/h, step {step}")]
    Unrecoverable { loc: f64, vel: f64, step: usize },

    #[error("parameter shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("network produced a non-finite output")]
    NonFinite,

    /// Every violated invariant, one entry per field path.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
