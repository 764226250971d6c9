//! Wire messages: one JSON object per text frame, each carrying `"v":1`.

use crowdcast_core::emotion::{EmotionBin, Level};
use crowdcast_core::reactor::{MovementKind, Reaction, ReactionEvent, ReactorState, TickOutput};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum WireMessage {
    Hello {
        client: String,
    },
    Welcome {
        tick_ms: u64,
        n_avatars: usize,
        /// Lets clients write a log header identical to the server's.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config_hash: Option<String>,
    },
    Snapshot {
        t_ms: u64,
        movement: MovementKind,
        playback_rate: f64,
        arousal: Level,
        valence: Level,
    },
    Tick {
        t_ms: u64,
        rate: f64,
        arousal: Level,
        valence: Level,
        surge: bool,
    },
    Reaction {
        t_ms: u64,
        #[serde(flatten)]
        reaction: Reaction,
    },
    Bye {
        t_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(flatten)]
    pub msg: WireMessage,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("protocol version {got}, expected {PROTOCOL_VERSION}")]
    Version { got: u64 },
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Deserialize)]
struct VersionProbe {
    v: Option<u64>,
}

impl WireMessage {
    pub fn encode(&self) -> String {
        serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, msg: self.clone() }).expect("wire message serializes")
    }

    /// Checks the version before the schema, so a newer server is reported
    /// as such rather than as garbage.
    pub fn decode(text: &str) -> Result<Self, DecodeError> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        match probe.v {
            Some(v) if v == PROTOCOL_VERSION as u64 => {}
            Some(got) => return Err(DecodeError::Version { got }),
            None => return Err(DecodeError::Malformed("missing \"v\"".into())),
        }
        serde_json::from_str::<Envelope>(text).map(|e| e.msg).map_err(|e| DecodeError::Malformed(e.to_string()))
    }

    pub fn tick(out: &TickOutput) -> Self {
        Self::Tick {
            t_ms: out.t_ms,
            rate: out.rate,
            arousal: out.bin.arousal,
            valence: out.bin.valence,
            surge: out.surge,
        }
    }

    pub fn reaction(ev: &ReactionEvent) -> Self {
        Self::Reaction { t_ms: ev.t_ms, reaction: ev.reaction.clone() }
    }

    pub fn snapshot(t_ms: u64, state: &ReactorState) -> Self {
        Self::Snapshot {
            t_ms,
            movement: state.movement,
            playback_rate: state.playback_rate,
            arousal: state.bin.arousal,
            valence: state.bin.valence,
        }
    }

    pub fn t_ms(&self) -> Option<u64> {
        match self {
            Self::Snapshot { t_ms, .. }
            | Self::Tick { t_ms, .. }
            | Self::Reaction { t_ms, .. }
            | Self::Bye { t_ms } => Some(*t_ms),
            Self::Hello { .. } | Self::Welcome { .. } => None,
        }
    }
}

/// The state a late joiner needs: what the crowd is doing and how the chat
/// feels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectiveState {
    pub movement: MovementKind,
    pub playback_rate: f64,
    pub bin: EmotionBin,
}

impl Default for CollectiveState {
    fn default() -> Self {
        Self { movement: MovementKind::Idle, playback_rate: 1.0, bin: EmotionBin::NEUTRAL }
    }
}
