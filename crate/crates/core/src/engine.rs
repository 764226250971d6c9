//! Tick loop driver shared by batch analysis and live serving.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::chat::{ChatError, ChatSource, ReplayClock, TickReader};
use crate::config::LoadedConfig;
use crate::eventlog::{EventLogWriter, LogHeader};
use crate::reactor::{CheerKind, Reaction, Reactor, ReactorError, TickOutput};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Reactor(#[from] ReactorError),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error("writing event log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub ticks: u64,
    pub messages: u64,
    pub skipped_rows: u64,
    pub surges: u64,
    pub cheers: BTreeMap<CheerKind, u64>,
    pub singalongs: u64,
    pub movement_transitions: u64,
}

impl RunSummary {
    pub fn record(&mut self, out: &TickOutput, messages: usize) {
        self.ticks += 1;
        self.messages += messages as u64;
        self.surges += out.surge as u64;
        for ev in &out.events {
            match &ev.reaction {
                Reaction::Movement { .. } => self.movement_transitions += 1,
                Reaction::Cheer { cheer } => *self.cheers.entry(*cheer).or_default() += 1,
                Reaction::Singalong { .. } => self.singalongs += 1,
            }
        }
    }

    pub fn total_cheers(&self) -> u64 {
        self.cheers.values().sum()
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "ticks: {}", self.ticks)?;
        writeln!(f, "messages: {} ({} skipped rows)", self.messages, self.skipped_rows)?;
        writeln!(f, "surges: {}", self.surges)?;
        let by_kind: Vec<String> = self.cheers.iter().map(|(k, n)| format!("{k}={n}")).collect();
        writeln!(f, "cheers: {} [{}]", self.total_cheers(), by_kind.join(", "))?;
        writeln!(f, "singalongs: {}", self.singalongs)?;
        write!(f, "movement transitions: {}", self.movement_transitions)
    }
}

/// Runs ticks until the chat and the timeline are both done, handing every
/// output to `on_tick` in order.
pub fn drive<S: ChatSource>(
    reactor: &mut Reactor,
    reader: &mut TickReader<S>,
    mut on_tick: impl FnMut(&TickOutput) -> std::io::Result<()>,
) -> Result<RunSummary, EngineError> {
    let mut summary = RunSummary::default();
    loop {
        let batch = match reader.next_tick() {
            Ok(b) => b,
            Err(ChatError::SourceExhausted) => break,
            Err(e) => return Err(e.into()),
        };
        let out = match reactor.process_tick(&batch) {
            Ok(out) => out,
            Err(ReactorError::Finished { .. }) => break,
            Err(e) => return Err(e.into()),
        };
        summary.record(&out, batch.len());
        on_tick(&out)?;
    }
    summary.skipped_rows = reader.stats().skipped_rows;
    Ok(summary)
}

/// Batch analysis: the whole concert as fast as possible, written as an
/// event log.
pub fn analyze<S: ChatSource, W: Write>(
    loaded: &LoadedConfig,
    seed: u64,
    source: S,
    out: W,
) -> Result<(RunSummary, W), EngineError> {
    let mut reactor = loaded.reactor()?;
    let mut reader =
        TickReader::with_tick_ms(source, ReplayClock::batch(), loaded.config.tick_ms).until(loaded.timeline.end_ms());
    let header = LogHeader { seed, config_hash: loaded.config_hash.clone() };
    let mut log = EventLogWriter::new(out, &header)?;
    let summary = drive(&mut reactor, &mut reader, |o| log.write_tick(o))?;
    Ok((summary, log.finish()?))
}
