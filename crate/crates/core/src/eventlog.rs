//! Newline-delimited JSON event log: a header line, then per tick one
//! summary line followed by that tick's reactions in emission order.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::emotion::{EmotionBin, Level};
use crate::reactor::{CheerKind, MovementKind, Reaction, ReactionEvent, TickOutput};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineKind {
    Tick,
    Movement,
    Cheer,
    Singalong,
}

/// One body line. Field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub t_ms: u64,
    pub kind: LineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub movement: Option<MovementKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub playback_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cheer: Option<CheerKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<Level>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
}

impl LogLine {
    fn bare(t_ms: u64, kind: LineKind) -> Self {
        Self {
            t_ms,
            kind,
            movement: None,
            playback_rate: None,
            cheer: None,
            window_id: None,
            arousal: None,
            valence: None,
            rate: None,
        }
    }

    pub fn tick(t_ms: u64, rate: f64, bin: EmotionBin) -> Self {
        Self {
            arousal: Some(bin.arousal),
            valence: Some(bin.valence),
            rate: Some(rate),
            ..Self::bare(t_ms, LineKind::Tick)
        }
    }

    pub fn reaction(event: &ReactionEvent) -> Self {
        match &event.reaction {
            Reaction::Movement { movement, playback_rate } => Self {
                movement: Some(*movement),
                playback_rate: Some(*playback_rate),
                ..Self::bare(event.t_ms, LineKind::Movement)
            },
            Reaction::Cheer { cheer } => Self { cheer: Some(*cheer), ..Self::bare(event.t_ms, LineKind::Cheer) },
            Reaction::Singalong { window_id, .. } => {
                Self { window_id: Some(window_id.clone()), ..Self::bare(event.t_ms, LineKind::Singalong) }
            }
        }
    }
}

pub fn lines_for(output: &TickOutput) -> impl Iterator<Item = LogLine> + '_ {
    std::iter::once(LogLine::tick(output.t_ms, output.rate, output.bin))
        .chain(output.events.iter().map(LogLine::reaction))
}

pub struct EventLogWriter<W: Write> {
    out: W,
    lines: u64,
}

impl<W: Write> EventLogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> io::Result<Self> {
        serde_json::to_writer(&mut out, header)?;
        out.write_all(b"\n")?;
        Ok(Self { out, lines: 1 })
    }

    pub fn write_line(&mut self, line: &LogLine) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.lines += 1;
        Ok(())
    }

    pub fn write_tick(&mut self, output: &TickOutput) -> io::Result<()> {
        for line in lines_for(output) {
            self.write_line(&line)?;
        }
        Ok(())
    }

    pub fn lines_written(&self) -> u64 {
        self.lines
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Level::*;

    #[test]
    fn exact_line_formats() {
        let header = LogHeader { seed: 42, config_hash: "ab".into() };
        let mut w = EventLogWriter::new(Vec::new(), &header).unwrap();
        w.write_tick(&TickOutput {
            tick_index: 3,
            t_ms: 3000,
            rate: 7.0,
            bin: EmotionBin::new(High, High),
            surge: true,
            events: vec![
                ReactionEvent {
                    t_ms: 3000,
                    reaction: Reaction::Movement { movement: MovementKind::ArmShakeBackForth, playback_rate: 1.1 },
                },
                ReactionEvent { t_ms: 3000, reaction: Reaction::Cheer { cheer: CheerKind::LoudCheer } },
                ReactionEvent { t_ms: 3000, reaction: Reaction::Singalong { window_id: "c1".into(), until_ms: 9000 } },
            ],
        })
        .unwrap();
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let expected = concat!(
            "{\"seed\":42,\"config_hash\":\"ab\"}\n",
            "{\"t_ms\":3000,\"kind\":\"tick\",\"arousal\":\"high\",\"valence\":\"high\",\"rate\":7.0}\n",
            "{\"t_ms\":3000,\"kind\":\"movement\",\"movement\":\"arm_shake_back_forth\",\"playback_rate\":1.1}\n",
            "{\"t_ms\":3000,\"kind\":\"cheer\",\"cheer\":\"loud_cheer\"}\n",
            "{\"t_ms\":3000,\"kind\":\"singalong\",\"window_id\":\"c1\"}\n",
        );
        assert_eq!(text, expected);
    }

    #[test]
    fn lines_parse_back() {
        let line: LogLine = serde_json::from_str(r#"{"t_ms":1,"kind":"cheer","cheer":"groan"}"#).unwrap();
        assert_eq!(line.cheer, Some(CheerKind::Groan));
        assert_eq!(line.kind, LineKind::Cheer);
    }
}
