//! Broadcast server. The tick loop runs on its own thread and hands each
//! encoded frame to every session's bounded queue without ever waiting on a
//! socket; a session whose queue is full is cut off.

use std::collections::HashMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use crowdcast_core::chat::{ChatSource, ReplayClock, TickReader};
use crowdcast_core::config::LoadedConfig;
use crowdcast_core::engine::{drive, EngineError, RunSummary};
use crowdcast_core::eventlog::{EventLogWriter, LogHeader};
use crowdcast_core::reactor::{Reaction, ReactorState};
use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, Notify};
use tokio::task::JoinSet;
use tokio_tungstenite::tungstenite::{Message, Utf8Bytes};

use crate::protocol::WireMessage;

pub const DEFAULT_QUEUE_BOUND: usize = 1000;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("invalid replay speed {0}")]
    Speed(f64),
    #[error("engine thread panicked")]
    EnginePanic,
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr: addr.to_string(), source })
}

pub struct ServeOptions {
    pub seed: u64,
    /// Virtual seconds per wall second; infinity means no pacing.
    pub speed: f64,
    pub queue_bound: usize,
    /// Hold the first tick until this many clients have said hello.
    pub wait_for: usize,
    /// How long sessions get to drain after the last tick.
    pub drain_grace: Duration,
    pub hello_timeout: Duration,
    /// Kernel send buffer per session. Smaller values make the queue bound,
    /// not the OS, decide when a slow client is cut off.
    pub send_buffer: Option<usize>,
    /// Where to write the server-side event log, if anywhere.
    pub log: Option<Box<dyn Write + Send>>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            speed: 1.0,
            queue_bound: DEFAULT_QUEUE_BOUND,
            wait_for: 0,
            drain_grace: Duration::from_secs(5),
            hello_timeout: Duration::from_secs(5),
            send_buffer: None,
            log: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeReport {
    pub summary: RunSummary,
    /// Wall-clock instant at which each tick was handed to the sessions.
    pub tick_instants: Vec<Instant>,
    pub clients_joined: u64,
    /// Sessions cut off because their queue overflowed.
    pub clients_overflowed: u64,
}

impl ServeReport {
    /// Largest deviation of a tick from its ideal schedule, anchored at the
    /// first tick.
    pub fn max_jitter(&self, tick_period: Duration) -> Duration {
        let Some(&first) = self.tick_instants.first() else {
            return Duration::ZERO;
        };
        self.tick_instants
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let actual = t.duration_since(first).as_secs_f64();
                let ideal = tick_period.as_secs_f64() * i as f64;
                Duration::from_secs_f64((actual - ideal).abs())
            })
            .max()
            .unwrap_or_default()
    }
}

struct Outbound {
    text: Utf8Bytes,
    last: bool,
}

struct Session {
    tx: mpsc::Sender<Outbound>,
    kill: Arc<Notify>,
}

struct HubState {
    sessions: HashMap<u64, Session>,
    welcome: Utf8Bytes,
    snapshot: Utf8Bytes,
    bye: Option<Utf8Bytes>,
    joined: u64,
    overflowed: u64,
}

struct Hub {
    state: Mutex<HubState>,
    joined: Condvar,
    next_id: AtomicU64,
}

impl Hub {
    fn new(welcome: WireMessage) -> Self {
        let snapshot = WireMessage::snapshot(
            0,
            &ReactorState {
                movement: crowdcast_core::MovementKind::Idle,
                playback_rate: 1.0,
                bin: crowdcast_core::EmotionBin::NEUTRAL,
            },
        );
        Self {
            state: Mutex::new(HubState {
                sessions: HashMap::new(),
                welcome: welcome.encode().into(),
                snapshot: snapshot.encode().into(),
                bye: None,
                joined: 0,
                overflowed: 0,
            }),
            joined: Condvar::new(),
            next_id: AtomicU64::new(0),
        }
    }

    /// Queues welcome and the current snapshot, then subscribes. Both happen
    /// under the broadcast lock, so the snapshot and the first streamed tick
    /// line up exactly.
    fn join(&self, tx: mpsc::Sender<Outbound>, kill: Arc<Notify>) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut st = self.state.lock().unwrap();
        st.joined += 1;
        let _ = tx.try_send(Outbound { text: st.welcome.clone(), last: false });
        let _ = tx.try_send(Outbound { text: st.snapshot.clone(), last: false });
        if let Some(bye) = st.bye.clone() {
            let _ = tx.try_send(Outbound { text: bye, last: true });
        } else {
            st.sessions.insert(id, Session { tx, kill });
        }
        self.joined.notify_all();
        id
    }

    fn leave(&self, id: u64) {
        self.state.lock().unwrap().sessions.remove(&id);
    }

    fn wait_for_clients(&self, n: usize) {
        let mut st = self.state.lock().unwrap();
        while (st.sessions.len() as u64) < n as u64 {
            st = self.joined.wait(st).unwrap();
        }
    }

    fn broadcast(&self, frames: &[Utf8Bytes], snapshot: Option<Utf8Bytes>, last: bool) {
        let mut st = self.state.lock().unwrap();
        let mut dead = Vec::new();
        for (&id, s) in &st.sessions {
            for (i, text) in frames.iter().enumerate() {
                let item = Outbound { text: text.clone(), last: last && i + 1 == frames.len() };
                match s.tx.try_send(item) {
                    Ok(()) => {}
                    Err(mpsc::error::TrySendError::Full(_)) => {
                        s.kill.notify_one();
                        dead.push((id, true));
                        break;
                    }
                    Err(mpsc::error::TrySendError::Closed(_)) => {
                        dead.push((id, false));
                        break;
                    }
                }
            }
        }
        for (id, overflow) in dead {
            st.sessions.remove(&id);
            st.overflowed += overflow as u64;
        }
        if let Some(s) = snapshot {
            st.snapshot = s;
        }
        if last {
            st.bye = frames.last().cloned();
            st.sessions.clear();
        }
    }
}

struct EngineRun {
    summary: RunSummary,
    instants: Vec<Instant>,
}

fn run_engine<S: ChatSource>(
    hub: &Hub,
    loaded: &LoadedConfig,
    source: S,
    speed: f64,
    wait_for: usize,
    log: Option<Box<dyn Write + Send>>,
    seed: u64,
) -> Result<EngineRun, ServeError> {
    let clock = if speed.is_infinite() {
        ReplayClock::batch()
    } else {
        ReplayClock::paced(speed).map_err(|_| ServeError::Speed(speed))?
    };
    let tick_ms = loaded.config.tick_ms;
    let mut reactor = loaded.reactor().map_err(EngineError::from)?;
    let mut log = match log {
        Some(w) => Some(
            EventLogWriter::new(w, &LogHeader { seed, config_hash: loaded.config_hash.clone() })
                .map_err(EngineError::from)?,
        ),
        None => None,
    };

    hub.wait_for_clients(wait_for);
    let mut reader = TickReader::with_tick_ms(source, clock, tick_ms).until(loaded.timeline.end_ms());
    reader.clock_mut().restart();

    let mut instants = Vec::new();
    let mut state = ReactorState {
        movement: crowdcast_core::MovementKind::Idle,
        playback_rate: 1.0,
        bin: crowdcast_core::EmotionBin::NEUTRAL,
    };
    let mut next_t = 0;
    let summary = drive(&mut reactor, &mut reader, |out| {
        let mut frames: Vec<Utf8Bytes> = Vec::with_capacity(1 + out.events.len());
        frames.push(WireMessage::tick(out).encode().into());
        for ev in &out.events {
            if let Reaction::Movement { movement, playback_rate } = ev.reaction {
                state.movement = movement;
                state.playback_rate = playback_rate;
            }
            frames.push(WireMessage::reaction(ev).encode().into());
        }
        state.bin = out.bin;
        next_t = out.t_ms + tick_ms;
        hub.broadcast(&frames, Some(WireMessage::snapshot(next_t, &state).encode().into()), false);
        instants.push(Instant::now());
        if let Some(log) = log.as_mut() {
            log.write_tick(out)?;
        }
        Ok(())
    })?;
    hub.broadcast(&[WireMessage::Bye { t_ms: next_t }.encode().into()], None, true);
    if let Some(log) = log {
        log.finish().map_err(EngineError::from)?;
    }
    Ok(EngineRun { summary, instants })
}

/// Runs the concert to the end, streaming to every client that connects.
pub async fn serve<S: ChatSource + 'static>(
    listener: TcpListener,
    loaded: LoadedConfig,
    source: S,
    options: ServeOptions,
) -> Result<ServeReport, ServeError> {
    if !(options.speed > 0.0) {
        return Err(ServeError::Speed(options.speed));
    }
    let welcome = WireMessage::Welcome {
        tick_ms: loaded.config.tick_ms,
        n_avatars: loaded.config.n_avatars,
        seed: Some(options.seed),
        config_hash: Some(loaded.config_hash.clone()),
    };
    let hub = Arc::new(Hub::new(welcome));

    let (done_tx, mut done_rx) = tokio::sync::oneshot::channel();
    {
        let hub = hub.clone();
        let ServeOptions { speed, wait_for, log, seed, .. } = options;
        std::thread::Builder::new()
            .name("tick-loop".into())
            .spawn(move || {
                let result = run_engine(&hub, &loaded, source, speed, wait_for, log, seed);
                let _ = done_tx.send(result);
            })
            .expect("spawn tick loop");
    }

    let mut sessions = JoinSet::new();
    let engine = loop {
        tokio::select! {
            done = &mut done_rx => break done.map_err(|_| ServeError::EnginePanic)?,
            accepted = listener.accept() => {
                if let Ok((stream, _)) = accepted {
                    let _ = stream.set_nodelay(true);
                    if let Some(size) = options.send_buffer {
                        let _ = socket2::SockRef::from(&stream).set_send_buffer_size(size);
                    }
                    sessions.spawn(session(
                        stream,
                        hub.clone(),
                        options.queue_bound,
                        options.hello_timeout,
                    ));
                }
            }
        }
    };
    let engine = engine?;

    let drained =
        tokio::time::timeout(options.drain_grace, async { while sessions.join_next().await.is_some() {} }).await;
    if drained.is_err() {
        sessions.shutdown().await;
    }

    let st = hub.state.lock().unwrap();
    Ok(ServeReport {
        summary: engine.summary,
        tick_instants: engine.instants,
        clients_joined: st.joined,
        clients_overflowed: st.overflowed,
    })
}

async fn session(stream: TcpStream, hub: Arc<Hub>, queue_bound: usize, hello_timeout: Duration) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let (mut sink, mut incoming) = ws.split();

    // the first frame must be a hello at our version
    let hello = tokio::time::timeout(hello_timeout, incoming.next()).await;
    let ok = match hello {
        Ok(Some(Ok(Message::Text(t)))) => {
            matches!(WireMessage::decode(t.as_str()), Ok(WireMessage::Hello { .. }))
        }
        _ => false,
    };
    if !ok {
        let _ = sink.close().await;
        return;
    }

    let (tx, mut rx) = mpsc::channel::<Outbound>(queue_bound.max(2));
    let kill = Arc::new(Notify::new());
    let id = hub.join(tx, kill.clone());

    loop {
        tokio::select! {
            biased;
            _ = kill.notified() => break,
            item = rx.recv() => {
                let Some(item) = item else { break };
                let sent = tokio::select! {
                    r = sink.send(Message::Text(item.text)) => r.is_ok(),
                    _ = kill.notified() => false,
                };
                if !sent || item.last {
                    break;
                }
            }
            frame = incoming.next() => match frame {
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    hub.leave(id);
    let _ = tokio::time::timeout(Duration::from_millis(500), sink.close()).await;
}
