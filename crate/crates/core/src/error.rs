//! Crate error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The range-measurement graph does not connect all nodes.
    #[error("disconnected network")]
    DisconnectedNetwork,

    /// Two points coincide where a direction between them is required.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A zero range carries a bearing, so the grouped bearing term is undefined.
    #[error("degenerate measurement: {0}")]
    DegenerateMeasurement(String),

    /// A measurement edge or node has no associated noise parameter.
    #[error("missing parameter: {0}")]
    MissingParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite value produced by the solver iteration.
    #[error("divergence at iteration {0}")]
    Divergence(usize),

    /// A node update ran without the broadcast it depends on.
    #[error("protocol error: missing message from node {sender} at round {round}")]
    MissingMessage { sender: usize, round: usize },

    #[error("filter covariance not positive definite at tick {0}")]
    CovarianceNotPd(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
