//! Live delivery of the reaction stream over WebSocket, plus the headless
//! simulator client used to verify it.

// `!(x > 0.0)` is how NaN gets rejected along with the rest
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod protocol;
pub mod server;

pub use client::{simulate, SimError, SimOptions, SimReport, Simulator, Violation};
pub use protocol::{CollectiveState, WireMessage, PROTOCOL_VERSION};
pub use server::{bind, serve, ServeError, ServeOptions, ServeReport};
