//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("ring width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: u32, got: u32 },

    #[error("invalid fixed-point type: {0}")]
    InvalidType(String),

    #[error("invalid cast: {0}")]
    InvalidCast(String),

    #[error("channel closed between party {from} and party {to}")]
    ChannelClosed { from: u8, to: u8 },

    #[error("party {0} cannot send to itself")]
    SelfSend(u8),

    #[error("replicated shares are inconsistent: {0}")]
    Integrity(String),

    #[error("wire format error: {0}")]
    Wire(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("weight store error: {0}")]
    Weights(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
