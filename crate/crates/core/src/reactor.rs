//! The translation core. Each tick combines phase, tempo, dominant emotion,
//! chat surges and lyric ratios into movement, cheer and singalong events.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::TickBatch;
use crate::detectors::{DetectorError, SingalongDetector, SurgeDetector, SurgeParams};
use crate::emotion::{message_bins, Classifier, EmotionBin, EmotionTracker, LabelBinMap, Level};
use crate::tempo::{classify_bpm_with, TempoClass};
use crate::timeline::{ConcertTimeline, SegmentKind, TimelineError};

pub const DEFAULT_MAPPING_JSON: &str = include_str!("../data/mapping.json");

pub const MIN_PLAYBACK_RATE: f64 = 0.5;
pub const MAX_PLAYBACK_RATE: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ReactorError {
    #[error("malformed mapping table: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("mapping table: {0}")]
    Table(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("timeline must start at concert time 0, starts at {0} ms")]
    TimelineStart(u64),
    #[error("nominal bpm must be positive, got {0}")]
    NominalBpm(f64),
    #[error("segment {id}: {reason}")]
    Segment { id: String, reason: String },
    #[error("tick {tick_index} is past the end of the concert")]
    Finished { tick_index: u64 },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MovementKind {
    ArmShakeBackForth,
    ArmShakeSideBySide,
    HandClap,
    Disappointed,
    Idle,
}

impl MovementKind {
    pub const ALL: [MovementKind; 5] = [
        MovementKind::ArmShakeBackForth,
        MovementKind::ArmShakeSideBySide,
        MovementKind::HandClap,
        MovementKind::Disappointed,
        MovementKind::Idle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MovementKind::ArmShakeBackForth => "arm_shake_back_forth",
            MovementKind::ArmShakeSideBySide => "arm_shake_side_by_side",
            MovementKind::HandClap => "hand_clap",
            MovementKind::Disappointed => "disappointed",
            MovementKind::Idle => "idle",
        }
    }
}

impl fmt::Display for MovementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheerKind {
    LoudCheer,
    Applause,
    Groan,
    None,
}

impl CheerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CheerKind::LoudCheer => "loud_cheer",
            CheerKind::Applause => "applause",
            CheerKind::Groan => "groan",
            CheerKind::None => "none",
        }
    }
}

impl fmt::Display for CheerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct MovementKey {
    phase: SegmentKind,
    tempo: Option<TempoClass>,
    bin: EmotionBin,
}

#[derive(Deserialize)]
struct MovementRuleDoc {
    phase: SegmentKind,
    #[serde(default)]
    tempo: Option<TempoClass>,
    arousal: Level,
    valence: Level,
    movement: MovementKind,
}

#[derive(Deserialize)]
struct CheerRuleDoc {
    arousal: Level,
    valence: Level,
    cheer: CheerKind,
}

#[derive(Deserialize)]
struct MappingDoc {
    movement_rules: Vec<MovementRuleDoc>,
    cheer_rules: Vec<CheerRuleDoc>,
}

/// Emotion × context → reaction lookup, total over its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingTable {
    movement: HashMap<MovementKey, MovementKind>,
    cheer: HashMap<EmotionBin, CheerKind>,
}

impl MappingTable {
    pub fn from_json(json: &str) -> Result<Self, ReactorError> {
        let doc: MappingDoc = serde_json::from_str(json)?;
        let mut movement = HashMap::new();
        for r in doc.movement_rules {
            let tempo = match (r.phase, r.tempo) {
                (SegmentKind::Performance, None) => {
                    return Err(ReactorError::Table("performance rule without tempo".into()))
                }
                (SegmentKind::Conversation, Some(_)) => {
                    return Err(ReactorError::Table("conversation rule with a tempo".into()))
                }
                (_, t) => t,
            };
            let key = MovementKey { phase: r.phase, tempo, bin: EmotionBin::new(r.arousal, r.valence) };
            if movement.insert(key, r.movement).is_some() {
                return Err(ReactorError::Table(format!("duplicate movement rule {key:?}")));
            }
        }
        let mut cheer = HashMap::new();
        for r in doc.cheer_rules {
            let bin = EmotionBin::new(r.arousal, r.valence);
            if cheer.insert(bin, r.cheer).is_some() {
                return Err(ReactorError::Table(format!("duplicate cheer rule {bin:?}")));
            }
        }
        let table = Self { movement, cheer };
        table.check_total()?;
        Ok(table)
    }

    pub fn default_table() -> Self {
        Self::from_json(DEFAULT_MAPPING_JSON).expect("shipped mapping table is valid")
    }

    fn movement_domain() -> impl Iterator<Item = MovementKey> {
        let perf = [TempoClass::Fast, TempoClass::Slow].into_iter().flat_map(|t| {
            EmotionBin::all().map(move |bin| MovementKey { phase: SegmentKind::Performance, tempo: Some(t), bin })
        });
        let talk = EmotionBin::all().map(|bin| MovementKey { phase: SegmentKind::Conversation, tempo: None, bin });
        perf.chain(talk)
    }

    fn check_total(&self) -> Result<(), ReactorError> {
        if let Some(key) = Self::movement_domain().find(|k| !self.movement.contains_key(k)) {
            return Err(ReactorError::Table(format!("no movement rule for {key:?}")));
        }
        if let Some(bin) = EmotionBin::all().find(|b| !self.cheer.contains_key(b)) {
            return Err(ReactorError::Table(format!("no cheer rule for {bin:?}")));
        }
        Ok(())
    }

    pub fn movement(&self, phase: SegmentKind, tempo: Option<TempoClass>, bin: EmotionBin) -> MovementKind {
        let tempo = match phase {
            SegmentKind::Performance => tempo,
            SegmentKind::Conversation => None,
        };
        self.movement.get(&MovementKey { phase, tempo, bin }).copied().unwrap_or(MovementKind::Idle)
    }

    pub fn cheer(&self, bin: EmotionBin) -> CheerKind {
        self.cheer.get(&bin).copied().unwrap_or(CheerKind::None)
    }
}

pub fn select_movement(
    table: &MappingTable,
    phase: SegmentKind,
    tempo: Option<TempoClass>,
    bin: EmotionBin,
) -> MovementKind {
    table.movement(phase, tempo, bin)
}

pub fn select_cheer(table: &MappingTable, bin: EmotionBin) -> CheerKind {
    table.cheer(bin)
}

/// Animation speed multiplier. Conversation is never beat-synced.
pub fn playback_rate(phase: SegmentKind, bpm: Option<f64>, nominal_bpm: f64) -> f64 {
    match (phase, bpm) {
        (SegmentKind::Performance, Some(bpm)) => (bpm / nominal_bpm).clamp(MIN_PLAYBACK_RATE, MAX_PLAYBACK_RATE),
        _ => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Reaction {
    Movement {
        movement: MovementKind,
        playback_rate: f64,
    },
    Cheer {
        cheer: CheerKind,
    },
    Singalong {
        window_id: String,
        /// End of the singalong window; sound lasts until then.
        until_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionEvent {
    pub t_ms: u64,
    pub reaction: Reaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub tick_index: u64,
    pub t_ms: u64,
    /// Messages per second.
    pub rate: f64,
    pub bin: EmotionBin,
    /// A surge episode started this tick.
    pub surge: bool,
    pub events: Vec<ReactionEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReactorParams {
    pub surge: SurgeParams,
    pub singalong_threshold: f64,
    pub cheer_refractory_ticks: u64,
    pub emotion_hold_ticks: u32,
    pub tempo_threshold_bpm: f64,
    pub nominal_bpm: f64,
}

impl Default for ReactorParams {
    fn default() -> Self {
        Self {
            surge: SurgeParams::default(),
            singalong_threshold: 0.30,
            cheer_refractory_ticks: 5,
            emotion_hold_ticks: crate::emotion::DEFAULT_HOLD_TICKS,
            tempo_threshold_bpm: crate::tempo::DEFAULT_TEMPO_THRESHOLD_BPM,
            nominal_bpm: 120.0,
        }
    }
}

/// Current collective state, as a late joiner would need it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReactorState {
    pub movement: MovementKind,
    pub playback_rate: f64,
    pub bin: EmotionBin,
}

/// Sequential per-tick state machine.
pub struct Reactor {
    timeline: Arc<ConcertTimeline>,
    table: MappingTable,
    classifier: Arc<dyn Classifier>,
    label_map: LabelBinMap,
    params: ReactorParams,
    tempo: Vec<Option<TempoClass>>,
    emotion: EmotionTracker,
    surge: SurgeDetector,
    singalong: SingalongDetector,
    last_movement: Option<(MovementKind, f64)>,
    last_cheer_tick: Option<u64>,
    ticks: u64,
}

impl Reactor {
    pub fn new(
        timeline: Arc<ConcertTimeline>,
        table: MappingTable,
        classifier: Arc<dyn Classifier>,
        label_map: LabelBinMap,
        params: ReactorParams,
    ) -> Result<Self, ReactorError> {
        if timeline.start_ms() != 0 {
            return Err(ReactorError::TimelineStart(timeline.start_ms()));
        }
        if !(params.nominal_bpm > 0.0 && params.nominal_bpm.is_finite()) {
            return Err(ReactorError::NominalBpm(params.nominal_bpm));
        }
        let tempo = timeline
            .segments()
            .iter()
            .map(|s| match (s.kind, s.bpm) {
                (SegmentKind::Performance, Some(bpm)) => classify_bpm_with(bpm, params.tempo_threshold_bpm)
                    .map(Some)
                    .map_err(|e| ReactorError::Segment { id: s.id.clone(), reason: e.to_string() }),
                (SegmentKind::Performance, None) => {
                    Err(ReactorError::Segment { id: s.id.clone(), reason: "missing bpm".into() })
                }
                (SegmentKind::Conversation, _) => Ok(None),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            surge: SurgeDetector::new(params.surge)?,
            singalong: SingalongDetector::new(params.singalong_threshold)?,
            emotion: EmotionTracker::new(params.emotion_hold_ticks),
            timeline,
            table,
            classifier,
            label_map,
            params,
            tempo,
            last_movement: None,
            last_cheer_tick: None,
            ticks: 0,
        })
    }

    pub fn params(&self) -> &ReactorParams {
        &self.params
    }

    pub fn timeline(&self) -> &ConcertTimeline {
        &self.timeline
    }

    pub fn ticks_processed(&self) -> u64 {
        self.ticks
    }

    pub fn state(&self) -> ReactorState {
        let (movement, playback_rate) = self.last_movement.unwrap_or((MovementKind::Idle, 1.0));
        ReactorState { movement, playback_rate, bin: self.emotion.current() }
    }

    pub fn process_tick(&mut self, batch: &TickBatch) -> Result<TickOutput, ReactorError> {
        let t_ms = batch.start_ms;
        let phase = match self.timeline.phase_at(t_ms) {
            Ok(p) => p,
            Err(TimelineError::OutOfRange { .. }) => {
                return Err(ReactorError::Finished { tick_index: batch.tick_index })
            }
            Err(e) => return Err(e.into()),
        };
        let segment = phase.segment;
        let seg_idx = self
            .timeline
            .segments()
            .iter()
            .position(|s| std::ptr::eq(s, segment))
            .expect("segment belongs to timeline");

        let bin = self.emotion.observe(message_bins(batch, self.classifier.as_ref(), &self.label_map));
        let rate = batch.rate();
        let surge = self.surge.step(batch.tick_index, rate).event;
        let singalong = phase.window.and_then(|w| self.singalong.step(w, batch).map(|id| (id, w.end_ms)));

        let mut events = Vec::new();

        // without chat to go on, the crowd stands still
        let (movement, rate_mul) = if self.emotion.has_evidence() {
            let kind = self.table.movement(segment.kind, self.tempo[seg_idx], bin);
            let r = match kind {
                MovementKind::Idle => 1.0,
                _ => playback_rate(segment.kind, segment.bpm, self.params.nominal_bpm),
            };
            (kind, r)
        } else {
            (MovementKind::Idle, 1.0)
        };
        if self.last_movement != Some((movement, rate_mul)) {
            self.last_movement = Some((movement, rate_mul));
            events.push(ReactionEvent { t_ms, reaction: Reaction::Movement { movement, playback_rate: rate_mul } });
        }

        if surge.is_some() {
            let cheer = self.table.cheer(bin);
            let rested =
                self.last_cheer_tick.is_none_or(|last| batch.tick_index - last >= self.params.cheer_refractory_ticks);
            if cheer != CheerKind::None && rested {
                self.last_cheer_tick = Some(batch.tick_index);
                events.push(ReactionEvent { t_ms, reaction: Reaction::Cheer { cheer } });
            }
        }

        if let Some((window_id, until_ms)) = singalong {
            events.push(ReactionEvent { t_ms, reaction: Reaction::Singalong { window_id, until_ms } });
        }

        self.ticks += 1;
        Ok(TickOutput { tick_index: batch.tick_index, t_ms, rate, bin, surge: surge.is_some(), events })
    }
}
