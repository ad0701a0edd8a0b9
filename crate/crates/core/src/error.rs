use thiserror::Error;

/// Errors surfaced by the planning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain (a point outside the
    /// resource hypercube, a negative standard deviation, an empty candidate
    /// list, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-side contract was broken (missing successor value, policy
    /// undefined on a closed region, ...). These indicate bugs upstream, not
    /// bad data.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Problem construction from parameters failed (unknown location index,
    /// bad path reference, ...).
    #[error("construction error: {0}")]
    Construction(String),

    /// Forward enumeration exceeded its state cap; the instance is too large
    /// for the exact oracle.
    #[error("oracle overflow: more than {cap} reachable hybrid states")]
    OracleOverflow { cap: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn construction(msg: impl Into<String>) -> Self {
        Error::Construction(msg.into())
    }
}
