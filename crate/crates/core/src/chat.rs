//! Chat ingestion: recorded CSV replay and live newline-delimited JSON, cut
//! into fixed one-second tick batches under a replay clock.

use std::collections::VecDeque;
use std::io::BufRead;
use std::path::Path;
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TICK_MS: u64 = 1000;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("cannot read chat source {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("chat csv: {0}")]
    Parse(String),
    #[error("replay speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("chat source exhausted")]
    SourceExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub t_ms: u64,
    pub author: String,
    pub text: String,
}

impl ChatMessage {
    pub fn new(t_ms: u64, author: impl Into<String>, text: impl Into<String>) -> Self {
        Self { t_ms, author: author.into(), text: text.into() }
    }
}

/// All messages whose timestamp falls in `[start_ms, end_ms)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TickBatch {
    pub tick_index: u64,
    pub start_ms: u64,
    pub end_ms: u64,
    pub messages: Vec<ChatMessage>,
}

impl TickBatch {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Messages per second over the tick.
    pub fn rate(&self) -> f64 {
        self.messages.len() as f64 * 1000.0 / (self.end_ms - self.start_ms) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRow {
    /// 1-based data row (CSV) or line number (live).
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub parsed: u64,
    pub skipped_rows: u64,
    /// Live messages whose timestamp regressed and was clamped up.
    pub clamped: u64,
    /// Messages that arrived after their tick had already been emitted.
    pub late: u64,
    /// First few skip reasons, for diagnostics.
    pub skipped: Vec<SkippedRow>,
}

const MAX_SKIP_DETAILS: usize = 32;

impl SourceStats {
    fn skip(&mut self, row: u64, reason: impl Into<String>) {
        self.skipped_rows += 1;
        if self.skipped.len() < MAX_SKIP_DETAILS {
            self.skipped.push(SkippedRow { row, reason: reason.into() });
        }
    }
}

/// Result of asking a source for its next message.
#[derive(Debug, Clone, PartialEq)]
pub enum Pull {
    Message(ChatMessage),
    /// Nothing arrived before the deadline.
    Pending,
    Exhausted,
}

/// A single-consumer stream of chat messages in nondecreasing `t_ms` order.
pub trait ChatSource: Send {
    /// Next message, waiting no later than `deadline`. `None` waits as long
    /// as it takes.
    fn pull(&mut self, deadline: Option<Instant>) -> Pull;

    fn stats(&self) -> SourceStats;
}

impl<S: ChatSource + ?Sized> ChatSource for Box<S> {
    fn pull(&mut self, deadline: Option<Instant>) -> Pull {
        (**self).pull(deadline)
    }

    fn stats(&self) -> SourceStats {
        (**self).stats()
    }
}

/// CSV header names for the three chat columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub time: String,
    pub author: String,
    pub message: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self { time: "time_ms".into(), author: "author".into(), message: "message".into() }
    }
}

/// A recorded chat log, fully loaded and sorted by timestamp.
#[derive(Debug, Clone, Default)]
pub struct CsvSource {
    messages: VecDeque<ChatMessage>,
    stats: SourceStats,
}

impl CsvSource {
    pub fn from_messages(mut messages: Vec<ChatMessage>) -> Self {
        messages.sort_by_key(|m| m.t_ms);
        let stats = SourceStats { parsed: messages.len() as u64, ..Default::default() };
        Self { messages: messages.into(), stats }
    }

    pub fn from_reader<R: std::io::Read>(reader: R, columns: &ColumnMap) -> Result<Self, ChatError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.byte_headers().map_err(|e| ChatError::Parse(e.to_string()))?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| String::from_utf8_lossy(h).trim() == name)
                .ok_or_else(|| ChatError::Parse(format!("missing column {name:?} in header")))
        };
        let (ti, ai, mi) = (find(&columns.time)?, find(&columns.author)?, find(&columns.message)?);

        let mut stats = SourceStats::default();
        let mut messages = Vec::new();
        let mut record = csv::ByteRecord::new();
        let mut row = 0u64;
        loop {
            row += 1;
            match rdr.read_byte_record(&mut record) {
                Ok(false) => break,
                Ok(true) => {}
                Err(e) => {
                    if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                        return Err(ChatError::Parse(format!("row {row}: {e}")));
                    }
                    stats.skip(row, e.to_string());
                    continue;
                }
            }
            match parse_row(&record, ti, ai, mi) {
                Ok(msg) => messages.push(msg),
                Err(reason) => stats.skip(row, reason),
            }
        }
        // stable: rows sharing a timestamp keep file order
        messages.sort_by_key(|m| m.t_ms);
        stats.parsed = messages.len() as u64;
        Ok(Self { messages: messages.into(), stats })
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

fn parse_row(record: &csv::ByteRecord, ti: usize, ai: usize, mi: usize) -> Result<ChatMessage, String> {
    let field = |i: usize, name: &str| -> Result<&str, String> {
        let raw = record.get(i).ok_or_else(|| format!("missing {name} field"))?;
        std::str::from_utf8(raw).map_err(|_| format!("{name} field is not valid UTF-8"))
    };
    let t_raw = field(ti, "time")?.trim();
    let t_ms = t_raw.parse::<u64>().map_err(|_| format!("bad timestamp {t_raw:?}"))?;
    Ok(ChatMessage { t_ms, author: field(ai, "author")?.to_string(), text: field(mi, "message")?.to_string() })
}

impl ChatSource for CsvSource {
    fn pull(&mut self, _deadline: Option<Instant>) -> Pull {
        match self.messages.pop_front() {
            Some(m) => Pull::Message(m),
            None => Pull::Exhausted,
        }
    }

    fn stats(&self) -> SourceStats {
        self.stats.clone()
    }
}

pub fn open_csv_source(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<CsvSource, ChatError> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|source| ChatError::Io { path: path.display().to_string(), source })?;
    CsvSource::from_reader(std::io::BufReader::new(file), columns)
}

#[derive(Deserialize)]
struct LiveLine {
    t_ms: u64,
    author: String,
    text: String,
}

/// Live adapter over newline-delimited JSON. A reader thread moves raw lines
/// into a channel; parsing and clamping happen on the consuming side.
pub struct LineSource {
    rx: mpsc::Receiver<std::io::Result<String>>,
    last_t_ms: u64,
    line_no: u64,
    done: bool,
    stats: SourceStats,
}

impl LineSource {
    fn accept(&mut self, line: &str) -> Option<ChatMessage> {
        self.line_no += 1;
        if line.trim().is_empty() {
            return None;
        }
        match serde_json::from_str::<LiveLine>(line) {
            Ok(l) => {
                let mut t_ms = l.t_ms;
                if t_ms < self.last_t_ms {
                    t_ms = self.last_t_ms;
                    self.stats.clamped += 1;
                }
                self.last_t_ms = t_ms;
                self.stats.parsed += 1;
                Some(ChatMessage { t_ms, author: l.author, text: l.text })
            }
            Err(e) => {
                self.stats.skip(self.line_no, e.to_string());
                None
            }
        }
    }
}

impl ChatSource for LineSource {
    fn pull(&mut self, deadline: Option<Instant>) -> Pull {
        while !self.done {
            let next = match deadline {
                None => self.rx.recv().map_err(|_| true),
                Some(d) => {
                    let wait = d.saturating_duration_since(Instant::now());
                    self.rx.recv_timeout(wait).map_err(|e| e == mpsc::RecvTimeoutError::Disconnected)
                }
            };
            match next {
                Ok(Ok(line)) => {
                    if let Some(msg) = self.accept(&line) {
                        return Pull::Message(msg);
                    }
                }
                Ok(Err(e)) => {
                    // undecodable line: the reader keeps going
                    self.line_no += 1;
                    self.stats.skip(self.line_no, e.to_string());
                }
                Err(true) => self.done = true,
                Err(false) => return Pull::Pending,
            }
        }
        Pull::Exhausted
    }

    fn stats(&self) -> SourceStats {
        self.stats.clone()
    }
}

pub fn open_line_source<R: BufRead + Send + 'static>(reader: R) -> LineSource {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let mut reader = reader;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            match reader.read_until(b'\n', &mut buf) {
                Ok(0) => break,
                Ok(_) => {
                    let line = String::from_utf8(std::mem::take(&mut buf))
                        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e));
                    if tx.send(line).is_err() {
                        break;
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
    });
    LineSource { rx, last_t_ms: 0, line_no: 0, done: false, stats: SourceStats::default() }
}

/// Maps concert time onto wall time. Batch mode never waits.
#[derive(Debug, Clone, Copy)]
pub struct ReplayClock {
    speed: Option<f64>,
    origin: Instant,
}

impl ReplayClock {
    pub fn batch() -> Self {
        Self { speed: None, origin: Instant::now() }
    }

    /// `speed` virtual seconds per wall second; infinity selects batch mode.
    pub fn paced(speed: f64) -> Result<Self, ChatError> {
        if speed.is_infinite() && speed > 0.0 {
            return Ok(Self::batch());
        }
        if !(speed > 0.0) {
            return Err(ChatError::BadSpeed(speed));
        }
        Ok(Self { speed: Some(speed), origin: Instant::now() })
    }

    pub fn is_batch(&self) -> bool {
        self.speed.is_none()
    }

    pub fn speed(&self) -> f64 {
        self.speed.unwrap_or(f64::INFINITY)
    }

    /// Re-anchors concert time 0 to now.
    pub fn restart(&mut self) {
        self.origin = Instant::now();
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }

    /// Wall instant at which concert time `virtual_ms` is reached.
    pub fn deadline_for(&self, virtual_ms: u64) -> Option<Instant> {
        self.speed.map(|s| self.origin + Duration::from_secs_f64(virtual_ms as f64 / 1000.0 / s))
    }

    pub fn wait_until(&self, virtual_ms: u64) {
        if let Some(deadline) = self.deadline_for(virtual_ms) {
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
        }
    }
}

/// Cuts a source into consecutive tick batches.
pub struct TickReader<S> {
    source: S,
    clock: ReplayClock,
    tick_ms: u64,
    next_index: u64,
    /// Keep emitting (possibly empty) ticks at least until this time.
    min_end_ms: u64,
    peeked: Option<ChatMessage>,
    exhausted: bool,
    late: u64,
}

impl<S: ChatSource> TickReader<S> {
    pub fn new(source: S, clock: ReplayClock) -> Self {
        Self::with_tick_ms(source, clock, DEFAULT_TICK_MS)
    }

    pub fn with_tick_ms(source: S, clock: ReplayClock, tick_ms: u64) -> Self {
        assert!(tick_ms > 0, "tick_ms must be positive");
        Self { source, clock, tick_ms, next_index: 0, min_end_ms: 0, peeked: None, exhausted: false, late: 0 }
    }

    /// Emits ticks up to at least `end_ms` even when chat runs dry.
    pub fn until(mut self, end_ms: u64) -> Self {
        self.min_end_ms = end_ms;
        self
    }

    pub fn tick_ms(&self) -> u64 {
        self.tick_ms
    }

    pub fn clock(&self) -> &ReplayClock {
        &self.clock
    }

    pub fn clock_mut(&mut self) -> &mut ReplayClock {
        &mut self.clock
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn stats(&self) -> SourceStats {
        let mut stats = self.source.stats();
        stats.late += self.late;
        stats
    }

    pub fn next_tick(&mut self) -> Result<TickBatch, ChatError> {
        let index = self.next_index;
        let start_ms = index * self.tick_ms;
        let end_ms = start_ms + self.tick_ms;
        if self.exhausted && self.peeked.is_none() && start_ms >= self.min_end_ms {
            return Err(ChatError::SourceExhausted);
        }

        let mut messages = Vec::new();
        if let Some(m) = self.peeked.take() {
            if m.t_ms < end_ms {
                messages.push(m);
            } else {
                self.peeked = Some(m);
            }
        }
        let deadline = self.clock.deadline_for(end_ms);
        while self.peeked.is_none() && !self.exhausted {
            match self.source.pull(deadline) {
                Pull::Message(mut m) if m.t_ms < end_ms => {
                    if m.t_ms < start_ms {
                        m.t_ms = start_ms;
                        self.late += 1;
                    }
                    messages.push(m);
                }
                Pull::Message(m) => self.peeked = Some(m),
                Pull::Pending => break,
                Pull::Exhausted => self.exhausted = true,
            }
        }
        if messages.is_empty() && self.exhausted && self.peeked.is_none() && start_ms >= self.min_end_ms {
            return Err(ChatError::SourceExhausted);
        }
        self.clock.wait_until(end_ms);
        self.next_index += 1;
        Ok(TickBatch { tick_index: index, start_ms, end_ms, messages })
    }
}

impl<S: ChatSource> Iterator for TickReader<S> {
    type Item = TickBatch;

    fn next(&mut self) -> Option<TickBatch> {
        self.next_tick().ok()
    }
}
