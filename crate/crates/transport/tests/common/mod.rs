#![allow(dead_code)]

use std::io::Write;
use std::sync::{Arc, Mutex};

use crowdcast_core::chat::{ChatMessage, CsvSource};
use crowdcast_core::config::{EngineConfig, LoadedConfig};

/// Performance, conversation, performance; `secs` long in total.
pub fn loaded(dir: &std::path::Path, secs: u64) -> LoadedConfig {
    let end = secs * 1000;
    let a = end * 2 / 5;
    let b = end * 3 / 5;
    let timeline = format!(
        r#"{{"segments":[
            {{"id":"open","start_ms":0,"end_ms":{a},"kind":"performance","bpm":132}},
            {{"id":"talk","start_ms":{a},"end_ms":{b},"kind":"conversation"}},
            {{"id":"ballad","start_ms":{b},"end_ms":{end},"kind":"performance","bpm":84}}],
          "singalong_windows":[{{"id":"chorus","start_ms":{w0},"end_ms":{w1},"patterns":["la la la"]}}]}}"#,
        w0 = b + 1000,
        w1 = b + 4000,
    );
    let path = dir.join("timeline.json");
    std::fs::write(&path, timeline).unwrap();
    let mut cfg = EngineConfig::default();
    cfg.paths.timeline = Some(path);
    cfg.load().unwrap()
}

/// Bursty chat with a mix of moods and lyric quotes.
pub fn chat(secs: u64) -> Vec<ChatMessage> {
    let texts = ["wow amazing", "love this", "so boring", "la la la", "hello", "ugh", "omg"];
    let mut out = Vec::new();
    for s in 0..secs {
        let n = if s % 9 == 4 { 30 } else { 3 + (s % 4) };
        for i in 0..n {
            let t = s * 1000 + i * 997 / n;
            out.push(ChatMessage::new(t, format!("u{i}"), texts[((s + i) % 7) as usize]));
        }
    }
    out
}

pub fn source(secs: u64) -> CsvSource {
    CsvSource::from_messages(chat(secs))
}

/// A Write that can be read back after being moved into a boxed sink.
#[derive(Clone, Default)]
pub struct SharedBuf(pub Arc<Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }
}

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
