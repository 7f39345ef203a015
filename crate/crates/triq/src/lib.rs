//! Three-party secure computation over dynamically sized rings with
//! quantization-aware type casts, fixed-point non-linear kernels, and a
//! typed-graph executor with exact communication accounting.
//!
//! The building blocks, bottom up:
//!
//! * [`fxp`] — fixed-point codec and the wrapping ring tensor.
//! * [`transport`] — in-process three-party fabric, byte/round accounting,
//!   and the analytical LAN/WAN time model.
//! * [`rss`] — 2-out-of-3 replicated sharing: linear algebra,
//!   multiplication with resharing, truncation, sign extraction, select.
//! * [`typecast`] — local downcast and the interactive three-round upcast
//!   between fixed-point types of different ring widths.
//! * [`nonlinear`] — softmax, GeLU variants, exponential, reciprocal,
//!   reciprocal square root and layer normalization on shares.
//! * [`oracle`] — deterministic plaintext mirror of every secure kernel
//!   plus float references and error metrics.
//! * [`graph`] — typed DAG compiler (precision annotation, automatic cast
//!   insertion) and the dual secure/plaintext executor.
//! * [`model`] — desk-scale transformer blocks emitted as typed graphs.

pub mod error;
pub mod fxp;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod nonlinear;
pub mod oracle;
pub mod prf;
pub mod rss;
pub mod runtime;
pub mod selftest;
pub mod transport;
pub mod typecast;

pub use error::{Error, Result};
pub use fxp::{FloatTensor, FxpType, RingTensor, HIGH, LOW};
pub use rss::{BoolShare, RssShare};
pub use runtime::{run_protocol, PartyCtx};
pub use transport::{CommStats, NetworkConfig, PartyId};
