//! Translates live concert chat into collective audience reactions for a
//! virtual venue: movements synced to the song, cheers on chat surges, and
//! singalongs when chat quotes the lyrics.
//!
//! The pipeline runs once per one-second tick:
//!
//! 1. [`chat`] cuts the chat stream into tick batches.
//! 2. [`emotion`] bins each message by arousal and valence and takes the
//!    dominant bin.
//! 3. [`detectors`] watch the chat rate for surges and the lyric ratio
//!    inside declared singalong windows.
//! 4. [`reactor`] combines these with the [`timeline`] phase and [`tempo`]
//!    into [`reactor::ReactionEvent`]s.
//!
//! [`crowd`] holds the avatar state a renderer would draw, and [`eventlog`]
//! writes the canonical newline-delimited JSON log.

// `!(x > 0.0)` is how NaN gets rejected along with the rest
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chat;
pub mod config;
pub mod crowd;
pub mod detectors;
pub mod emotion;
pub mod engine;
pub mod eventlog;
pub mod reactor;
pub mod tempo;
pub mod timeline;

pub use chat::{ChatMessage, ChatSource, ReplayClock, TickBatch, TickReader};
pub use config::{EngineConfig, LoadedConfig};
pub use crowd::CrowdState;
pub use emotion::{EmotionBin, Level};
pub use reactor::{CheerKind, MovementKind, Reaction, ReactionEvent, Reactor, TickOutput};
pub use timeline::ConcertTimeline;
