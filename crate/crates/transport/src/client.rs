//! Headless simulator: consumes the stream, drives a local crowd, checks the
//! protocol as it goes, and re-emits the event log.

use std::io::Write;

use crowdcast_core::crowd::{CrowdError, CrowdState, VariationRegistry, VARIATION_PROBABILITY};
use crowdcast_core::emotion::EmotionBin;
use crowdcast_core::eventlog::{EventLogWriter, LogHeader, LogLine};
use crowdcast_core::reactor::{Reaction, ReactionEvent};
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{CollectiveState, DecodeError, WireMessage};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("server speaks protocol version {got}")]
    Version { got: u64 },
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("first message was {got}, expected welcome")]
    MissingWelcome { got: String },
    #[error("tick {t_ms} arrived before the snapshot")]
    TickBeforeSnapshot { t_ms: u64 },
    #[error("second snapshot at {t_ms}")]
    DuplicateSnapshot { t_ms: u64 },
    #[error("tick {got} after tick {prev}: ticks must strictly increase")]
    TickOrder { prev: u64, got: u64 },
    #[error("tick {got} precedes the snapshot time {snapshot}")]
    TickBeforeSnapshotTime { snapshot: u64, got: u64 },
    #[error("reaction at {got} outside the current tick {tick:?}")]
    ReactionOutsideTick { tick: Option<u64>, got: u64 },
    #[error("cheer at {t_ms} without a surge flag on that tick")]
    CheerWithoutSurge { t_ms: u64 },
    #[error("unexpected {kind} message from server")]
    Unexpected { kind: String },
    #[error("bye at {got} precedes tick {last}")]
    ByeOrder { last: u64, got: u64 },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot connect to {url}: {reason}")]
    Connect { url: String, reason: String },
    #[error("connection lost: {0}")]
    Io(String),
    #[error("stream closed before bye")]
    Truncated,
    #[error("protocol violation: {0}")]
    Protocol(#[from] Violation),
    #[error(transparent)]
    Crowd(#[from] CrowdError),
    #[error("writing output: {0}")]
    Output(#[from] std::io::Error),
}

impl SimError {
    /// 2 for transport trouble, 3 for a misbehaving server.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Protocol(_) => 3,
            Self::Crowd(_) => 1,
            _ => 2,
        }
    }
}

pub struct SimOptions {
    pub url: String,
    pub client_name: String,
    /// Crowd size; the server's welcome value when absent.
    pub n_avatars: Option<usize>,
    /// Variation seed; the server's seed when absent.
    pub seed: Option<u64>,
    pub variation_probability: f64,
    pub registry: VariationRegistry,
    /// One human-readable line per received event.
    pub render: Option<Box<dyn Write + Send>>,
    pub log: Option<Box<dyn Write + Send>>,
}

impl SimOptions {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            client_name: "simulator".into(),
            n_avatars: None,
            seed: None,
            variation_probability: VARIATION_PROBABILITY,
            registry: VariationRegistry::default(),
            render: None,
            log: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub ticks: u64,
    pub reactions: u64,
    pub snapshot_t_ms: u64,
    /// Collective state after each received tick, keyed by tick time.
    pub states: Vec<(u64, CollectiveState)>,
    pub crowd: CrowdState,
    pub bye_t_ms: u64,
}

/// Protocol checker and crowd driver, independent of the socket.
pub struct Simulator {
    opts_avatars: Option<usize>,
    opts_seed: Option<u64>,
    variation_probability: f64,
    registry: VariationRegistry,
    render: Option<Box<dyn Write + Send>>,
    log_out: Option<Box<dyn Write + Send>>,
    log: Option<EventLogWriter<Box<dyn Write + Send>>>,
    welcomed: bool,
    snapshot_t: Option<u64>,
    tick: Option<(u64, bool)>,
    state: CollectiveState,
    crowd: Option<CrowdState>,
    states: Vec<(u64, CollectiveState)>,
    ticks: u64,
    reactions: u64,
    bye: Option<u64>,
}

impl Simulator {
    pub fn new(opts: SimOptions) -> Self {
        Self {
            opts_avatars: opts.n_avatars,
            opts_seed: opts.seed,
            variation_probability: opts.variation_probability,
            registry: opts.registry,
            render: opts.render,
            log_out: opts.log,
            log: None,
            welcomed: false,
            snapshot_t: None,
            tick: None,
            state: CollectiveState::default(),
            crowd: None,
            states: Vec::new(),
            ticks: 0,
            reactions: 0,
            bye: None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.bye.is_some()
    }

    fn render(&mut self, line: std::fmt::Arguments<'_>) -> std::io::Result<()> {
        if let Some(r) = self.render.as_mut() {
            r.write_fmt(line)?;
            r.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Feeds one text frame. Returns an error on the first violation.
    pub fn on_frame(&mut self, text: &str) -> Result<(), SimError> {
        let msg = WireMessage::decode(text).map_err(|e| match e {
            DecodeError::Version { got } => Violation::Version { got },
            DecodeError::Malformed(m) => Violation::Malformed(m),
        })?;
        self.on_message(msg)
    }

    pub fn on_message(&mut self, msg: WireMessage) -> Result<(), SimError> {
        if self.bye.is_some() {
            return Err(Violation::Unexpected { kind: kind_of(&msg).into() }.into());
        }
        if !self.welcomed {
            let WireMessage::Welcome { n_avatars, seed, config_hash, .. } = msg else {
                return Err(Violation::MissingWelcome { got: kind_of(&msg).into() }.into());
            };
            self.welcomed = true;
            let n = self.opts_avatars.unwrap_or(n_avatars);
            let crowd_seed = self.opts_seed.or(seed).unwrap_or(0);
            self.crowd = Some(
                CrowdState::new(n, crowd_seed, self.registry.clone())?
                    .with_variation_probability(self.variation_probability)?,
            );
            if let Some(out) = self.log_out.take() {
                let header =
                    LogHeader { seed: seed.unwrap_or(crowd_seed), config_hash: config_hash.unwrap_or_default() };
                self.log = Some(EventLogWriter::new(out, &header)?);
            }
            self.render(format_args!("welcome: {n} avatars"))?;
            return Ok(());
        }
        match msg {
            WireMessage::Snapshot { t_ms, movement, playback_rate, arousal, valence } => {
                if self.snapshot_t.is_some() {
                    return Err(Violation::DuplicateSnapshot { t_ms }.into());
                }
                self.snapshot_t = Some(t_ms);
                self.state = CollectiveState { movement, playback_rate, bin: EmotionBin::new(arousal, valence) };
                let crowd = self.crowd.as_mut().expect("welcomed");
                crowd.expire(t_ms);
                crowd.apply_movement(movement, playback_rate)?;
                self.render(format_args!("snapshot @{t_ms}: {movement} x{playback_rate:.2}"))?;
            }
            WireMessage::Tick { t_ms, rate, arousal, valence, surge } => {
                let Some(snap) = self.snapshot_t else {
                    return Err(Violation::TickBeforeSnapshot { t_ms }.into());
                };
                match self.tick {
                    Some((prev, _)) if t_ms <= prev => return Err(Violation::TickOrder { prev, got: t_ms }.into()),
                    None if t_ms < snap => {
                        return Err(Violation::TickBeforeSnapshotTime { snapshot: snap, got: t_ms }.into())
                    }
                    _ => {}
                }
                self.close_tick();
                self.tick = Some((t_ms, surge));
                self.ticks += 1;
                let bin = EmotionBin::new(arousal, valence);
                self.state.bin = bin;
                self.crowd.as_mut().expect("welcomed").expire(t_ms);
                if let Some(log) = self.log.as_mut() {
                    log.write_line(&LogLine::tick(t_ms, rate, bin))?;
                }
                let mark = if surge { " SURGE" } else { "" };
                self.render(format_args!("{t_ms:>8} tick rate={rate:.1} arousal={arousal} valence={valence}{mark}"))?;
            }
            WireMessage::Reaction { t_ms, reaction } => {
                let current = self.tick;
                let Some((tick_t, surge)) = current.filter(|(t, _)| *t == t_ms) else {
                    return Err(Violation::ReactionOutsideTick { tick: current.map(|c| c.0), got: t_ms }.into());
                };
                if matches!(reaction, Reaction::Cheer { .. }) && !surge {
                    return Err(Violation::CheerWithoutSurge { t_ms }.into());
                }
                let event = ReactionEvent { t_ms: tick_t, reaction };
                if let Reaction::Movement { movement, playback_rate } = event.reaction {
                    self.state.movement = movement;
                    self.state.playback_rate = playback_rate;
                }
                let crowd = self.crowd.as_mut().expect("welcomed");
                crowd.apply_event(&event);
                let varied = crowd.variant_count();
                let n = crowd.len();
                self.reactions += 1;
                if let Some(log) = self.log.as_mut() {
                    log.write_line(&LogLine::reaction(&event))?;
                }
                match &event.reaction {
                    Reaction::Movement { movement, playback_rate } => self.render(format_args!(
                        "{t_ms:>8}   movement {movement} x{playback_rate:.2} ({varied}/{n} varied)"
                    ))?,
                    Reaction::Cheer { cheer } => self.render(format_args!("{t_ms:>8}   cheer {cheer}"))?,
                    Reaction::Singalong { window_id, until_ms } => {
                        self.render(format_args!("{t_ms:>8}   singalong {window_id} until {until_ms}"))?
                    }
                }
            }
            WireMessage::Bye { t_ms } => {
                if let Some((last, _)) = self.tick.filter(|(last, _)| t_ms < *last) {
                    return Err(Violation::ByeOrder { last, got: t_ms }.into());
                }
                self.close_tick();
                self.bye = Some(t_ms);
                if let Some(log) = self.log.take() {
                    log.finish()?;
                }
                self.render(format_args!("bye @{t_ms}"))?;
                if let Some(r) = self.render.as_mut() {
                    r.flush()?;
                }
            }
            other => return Err(Violation::Unexpected { kind: kind_of(&other).into() }.into()),
        }
        Ok(())
    }

    fn close_tick(&mut self) {
        if let Some((t, _)) = self.tick {
            if self.states.last().is_none_or(|(last, _)| *last != t) {
                self.states.push((t, self.state));
            }
        }
    }

    pub fn finish(self) -> Result<SimReport, SimError> {
        let bye_t_ms = self.bye.ok_or(SimError::Truncated)?;
        Ok(SimReport {
            ticks: self.ticks,
            reactions: self.reactions,
            snapshot_t_ms: self.snapshot_t.unwrap_or_default(),
            states: self.states,
            crowd: self.crowd.expect("welcomed before bye"),
            bye_t_ms,
        })
    }
}

fn kind_of(msg: &WireMessage) -> &'static str {
    match msg {
        WireMessage::Hello { .. } => "hello",
        WireMessage::Welcome { .. } => "welcome",
        WireMessage::Snapshot { .. } => "snapshot",
        WireMessage::Tick { .. } => "tick",
        WireMessage::Reaction { .. } => "reaction",
        WireMessage::Bye { .. } => "bye",
    }
}

/// Connects, says hello and follows the stream until bye.
pub async fn simulate(opts: SimOptions) -> Result<SimReport, SimError> {
    let url = opts.url.clone();
    let (mut ws, _) = tokio_tungstenite::connect_async(url.as_str())
        .await
        .map_err(|e| SimError::Connect { url: url.clone(), reason: e.to_string() })?;
    let hello = WireMessage::Hello { client: opts.client_name.clone() };
    ws.send(Message::Text(hello.encode().into())).await.map_err(|e| SimError::Io(e.to_string()))?;

    let mut sim = Simulator::new(opts);
    while let Some(frame) = ws.next().await {
        match frame.map_err(|e| SimError::Io(e.to_string()))? {
            Message::Text(t) => {
                sim.on_frame(t.as_str())?;
                if sim.is_done() {
                    break;
                }
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    let _ = ws.close(None).await;
    sim.finish()
}
