//! Concert structure: performance and conversation segments, per-song BPM,
//! and the windows in which a singalong may fire.
//!
//! All intervals are half-open `[start_ms, end_ms)`.

use regex::{RegexSet, RegexSetBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TimelineError {
    #[error("malformed timeline document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid timeline: {0}")]
    Validation(#[from] TimelineViolation),
    #[error("t_ms {t_ms} is outside the timeline span [{start_ms}, {end_ms})")]
    OutOfRange { t_ms: u64, start_ms: u64, end_ms: u64 },
}

/// The invariant a rejected timeline violated.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimelineViolation {
    #[error("timeline has no segments")]
    Empty,
    #[error("segment {id}: start_ms {start_ms} is not before end_ms {end_ms}")]
    EmptyInterval { id: String, start_ms: u64, end_ms: u64 },
    #[error("segments {first} and {second} overlap")]
    Overlap { first: String, second: String },
    #[error("gap between segments {first} and {second}")]
    Gap { first: String, second: String },
    #[error("performance segment {id} is missing a bpm")]
    MissingBpm { id: String },
    #[error("segment {id} has non-positive bpm {bpm}")]
    BadBpm { id: String, bpm: f64 },
    #[error("singalong window {id} lies outside any single performance segment")]
    WindowOutsidePerformance { id: String },
    #[error("singalong window {id} has no lyric patterns")]
    NoPatterns { id: String },
    #[error("singalong window {id}: invalid pattern: {reason}")]
    BadPattern { id: String, reason: String },
    #[error("duplicate id {id}")]
    DuplicateId { id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Performance,
    Conversation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub kind: SegmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bpm: Option<f64>,
}

impl Segment {
    pub fn contains(&self, t_ms: u64) -> bool {
        self.start_ms <= t_ms && t_ms < self.end_ms
    }

    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// Case-insensitive lyric matcher compiled once when the timeline loads.
#[derive(Debug, Clone)]
pub struct LyricMatcher {
    set: RegexSet,
}

impl LyricMatcher {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self, regex::Error> {
        let set = RegexSetBuilder::new(patterns.iter().map(AsRef::as_ref)).case_insensitive(true).build()?;
        Ok(Self { set })
    }

    /// True iff any pattern matches anywhere in the case-folded text.
    pub fn is_match(&self, text: &str) -> bool {
        self.set.is_match(&text.to_lowercase())
    }
}

#[derive(Debug, Clone)]
pub struct SingalongWindow {
    pub id: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub patterns: Vec<String>,
    matcher: LyricMatcher,
}

impl SingalongWindow {
    pub fn new(
        id: impl Into<String>,
        start_ms: u64,
        end_ms: u64,
        patterns: Vec<String>,
    ) -> Result<Self, TimelineViolation> {
        let id = id.into();
        if start_ms >= end_ms {
            return Err(TimelineViolation::EmptyInterval { id, start_ms, end_ms });
        }
        if patterns.is_empty() {
            return Err(TimelineViolation::NoPatterns { id });
        }
        let matcher = LyricMatcher::new(&patterns)
            .map_err(|e| TimelineViolation::BadPattern { id: id.clone(), reason: e.to_string() })?;
        Ok(Self { id, start_ms, end_ms, patterns, matcher })
    }

    pub fn contains(&self, t_ms: u64) -> bool {
        self.start_ms <= t_ms && t_ms < self.end_ms
    }

    pub fn matcher(&self) -> &LyricMatcher {
        &self.matcher
    }

    pub fn matches(&self, text: &str) -> bool {
        self.matcher.is_match(text)
    }
}

impl PartialEq for SingalongWindow {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.start_ms == other.start_ms
            && self.end_ms == other.end_ms
            && self.patterns == other.patterns
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WindowDoc {
    id: String,
    start_ms: u64,
    end_ms: u64,
    patterns: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TimelineDoc {
    segments: Vec<Segment>,
    #[serde(default)]
    singalong_windows: Vec<WindowDoc>,
}

/// A validated concert timeline. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcertTimeline {
    segments: Vec<Segment>,
    windows: Vec<SingalongWindow>,
}

/// What is happening at a given instant.
#[derive(Debug, Clone, Copy)]
pub struct Phase<'a> {
    pub segment: &'a Segment,
    pub window: Option<&'a SingalongWindow>,
}

impl ConcertTimeline {
    /// Validates segments and windows. Performance segments must carry a bpm.
    pub fn new(segments: Vec<Segment>, windows: Vec<SingalongWindow>) -> Result<Self, TimelineViolation> {
        if segments.is_empty() {
            return Err(TimelineViolation::Empty);
        }
        let mut ids = std::collections::HashSet::new();
        for seg in &segments {
            if !ids.insert(seg.id.as_str()) {
                return Err(TimelineViolation::DuplicateId { id: seg.id.clone() });
            }
            if seg.start_ms >= seg.end_ms {
                return Err(TimelineViolation::EmptyInterval {
                    id: seg.id.clone(),
                    start_ms: seg.start_ms,
                    end_ms: seg.end_ms,
                });
            }
            match (seg.kind, seg.bpm) {
                (_, Some(bpm)) if !(bpm > 0.0 && bpm.is_finite()) => {
                    return Err(TimelineViolation::BadBpm { id: seg.id.clone(), bpm });
                }
                (SegmentKind::Performance, None) => {
                    return Err(TimelineViolation::MissingBpm { id: seg.id.clone() });
                }
                _ => {}
            }
        }
        for pair in segments.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.start_ms < a.end_ms {
                return Err(TimelineViolation::Overlap { first: a.id.clone(), second: b.id.clone() });
            }
            if b.start_ms > a.end_ms {
                return Err(TimelineViolation::Gap { first: a.id.clone(), second: b.id.clone() });
            }
        }
        let mut window_ids = std::collections::HashSet::new();
        for w in &windows {
            if !window_ids.insert(w.id.as_str()) {
                return Err(TimelineViolation::DuplicateId { id: w.id.clone() });
            }
            let inside = segments
                .iter()
                .any(|s| s.kind == SegmentKind::Performance && s.start_ms <= w.start_ms && w.end_ms <= s.end_ms);
            if !inside {
                return Err(TimelineViolation::WindowOutsidePerformance { id: w.id.clone() });
            }
        }
        let mut windows = windows;
        windows.sort_by_key(|w| w.start_ms);
        Ok(Self { segments, windows })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn windows(&self) -> &[SingalongWindow] {
        &self.windows
    }

    pub fn start_ms(&self) -> u64 {
        self.segments[0].start_ms
    }

    pub fn end_ms(&self) -> u64 {
        self.segments[self.segments.len() - 1].end_ms
    }

    pub fn window(&self, id: &str) -> Option<&SingalongWindow> {
        self.windows.iter().find(|w| w.id == id)
    }

    pub fn phase_at(&self, t_ms: u64) -> Result<Phase<'_>, TimelineError> {
        if t_ms < self.start_ms() || t_ms >= self.end_ms() {
            return Err(TimelineError::OutOfRange { t_ms, start_ms: self.start_ms(), end_ms: self.end_ms() });
        }
        // first segment whose end is past t; contiguity makes it the container
        let idx = self.segments.partition_point(|s| s.end_ms <= t_ms);
        let segment = &self.segments[idx];
        debug_assert!(segment.contains(t_ms));
        let window = self.windows.iter().find(|w| w.contains(t_ms));
        Ok(Phase { segment, window })
    }

    pub fn to_json(&self) -> String {
        let doc = TimelineDoc {
            segments: self.segments.clone(),
            singalong_windows: self
                .windows
                .iter()
                .map(|w| WindowDoc {
                    id: w.id.clone(),
                    start_ms: w.start_ms,
                    end_ms: w.end_ms,
                    patterns: w.patterns.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("timeline serializes")
    }
}

/// Parses and validates a timeline document.
pub fn load_timeline(document: &str) -> Result<ConcertTimeline, TimelineError> {
    load_timeline_with(document, |_| None)
}

/// Like [`load_timeline`], but asks `bpm_for` for the tempo of any performance
/// segment whose document entry omits `bpm`.
pub fn load_timeline_with(
    document: &str,
    mut bpm_for: impl FnMut(&Segment) -> Option<f64>,
) -> Result<ConcertTimeline, TimelineError> {
    let doc: TimelineDoc = serde_json::from_str(document)?;
    let mut segments = doc.segments;
    for seg in segments.iter_mut() {
        if seg.kind == SegmentKind::Performance && seg.bpm.is_none() {
            seg.bpm = bpm_for(seg);
        }
    }
    let windows = doc
        .singalong_windows
        .into_iter()
        .map(|w| SingalongWindow::new(w.id, w.start_ms, w.end_ms, w.patterns))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConcertTimeline::new(segments, windows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perf(id: &str, start: u64, end: u64, bpm: f64) -> Segment {
        Segment { id: id.into(), start_ms: start, end_ms: end, kind: SegmentKind::Performance, bpm: Some(bpm) }
    }

    fn talk(id: &str, start: u64, end: u64) -> Segment {
        Segment { id: id.into(), start_ms: start, end_ms: end, kind: SegmentKind::Conversation, bpm: None }
    }

    #[test]
    fn single_segment_is_valid() {
        let tl = load_timeline(
            r#"{"segments":[{"id":"s1","start_ms":0,"end_ms":600000,"kind":"performance","bpm":120}],"singalong_windows":[]}"#,
        )
        .unwrap();
        assert_eq!(tl.segments().len(), 1);
        assert_eq!(tl.end_ms(), 600_000);
    }

    #[test]
    fn overlap_is_rejected() {
        let err = load_timeline(
            r#"{"segments":[
                {"id":"a","start_ms":0,"end_ms":10000,"kind":"performance","bpm":120},
                {"id":"b","start_ms":9000,"end_ms":20000,"kind":"conversation"}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TimelineError::Validation(TimelineViolation::Overlap { .. })), "{err}");
    }

    #[test]
    fn gap_is_rejected() {
        let err = ConcertTimeline::new(vec![perf("a", 0, 1000, 120.0), talk("b", 2000, 3000)], vec![]).unwrap_err();
        assert!(matches!(err, TimelineViolation::Gap { .. }));
    }

    #[test]
    fn window_in_conversation_is_rejected() {
        let err = load_timeline(
            r#"{"segments":[
                {"id":"a","start_ms":0,"end_ms":4000,"kind":"performance","bpm":120},
                {"id":"b","start_ms":4000,"end_ms":20000,"kind":"conversation"}],
               "singalong_windows":[{"id":"w","start_ms":5000,"end_ms":8000,"patterns":["la"]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TimelineError::Validation(TimelineViolation::WindowOutsidePerformance { .. })));
    }

    #[test]
    fn window_straddling_two_performances_is_rejected() {
        let w = SingalongWindow::new("w", 500, 1500, vec!["x".into()]).unwrap();
        let err =
            ConcertTimeline::new(vec![perf("a", 0, 1000, 120.0), perf("b", 1000, 2000, 90.0)], vec![w]).unwrap_err();
        assert!(matches!(err, TimelineViolation::WindowOutsidePerformance { .. }));
    }

    #[test]
    fn missing_bpm_is_rejected_unless_supplied() {
        let doc = r#"{"segments":[{"id":"a","start_ms":0,"end_ms":1000,"kind":"performance"}]}"#;
        assert!(matches!(
            load_timeline(doc).unwrap_err(),
            TimelineError::Validation(TimelineViolation::MissingBpm { .. })
        ));
        let tl = load_timeline_with(doc, |_| Some(95.0)).unwrap();
        assert_eq!(tl.segments()[0].bpm, Some(95.0));
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_timeline("{\"segments\": [").unwrap_err(), TimelineError::Parse(_)));
        assert!(matches!(
            load_timeline(r#"{"segments":[{"id":"a","start_ms":0,"end_ms":1,"kind":"encore"}]}"#).unwrap_err(),
            TimelineError::Parse(_)
        ));
    }

    #[test]
    fn invalid_pattern_is_load_time_error() {
        let err = load_timeline(
            r#"{"segments":[{"id":"a","start_ms":0,"end_ms":9000,"kind":"performance","bpm":100}],
               "singalong_windows":[{"id":"w","start_ms":0,"end_ms":1000,"patterns":["(unclosed"]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, TimelineError::Validation(TimelineViolation::BadPattern { .. })));
    }

    #[test]
    fn empty_pattern_list_is_rejected() {
        assert!(matches!(SingalongWindow::new("w", 0, 10, vec![]).unwrap_err(), TimelineViolation::NoPatterns { .. }));
    }

    #[test]
    fn half_open_boundaries() {
        let w = SingalongWindow::new("w", 2000, 3000, vec!["la".into()]).unwrap();
        let tl = ConcertTimeline::new(vec![perf("a", 0, 5000, 120.0), talk("b", 5000, 9000)], vec![w]).unwrap();
        assert_eq!(tl.phase_at(0).unwrap().segment.id, "a");
        assert_eq!(tl.phase_at(5000).unwrap().segment.id, "b");
        assert_eq!(tl.phase_at(4999).unwrap().segment.id, "a");
        let p = tl.phase_at(2500).unwrap();
        assert_eq!(p.segment.id, "a");
        assert_eq!(p.window.unwrap().id, "w");
        assert!(tl.phase_at(2000).unwrap().window.is_some());
        assert!(tl.phase_at(3000).unwrap().window.is_none());
        assert!(matches!(tl.phase_at(9000), Err(TimelineError::OutOfRange { .. })));
    }

    #[test]
    fn timeline_need_not_start_at_zero() {
        let tl = ConcertTimeline::new(vec![talk("a", 1000, 2000)], vec![]).unwrap();
        assert!(tl.phase_at(999).is_err());
        assert!(tl.phase_at(1000).is_ok());
    }

    #[test]
    fn lyric_matching_folds_case() {
        let m = LyricMatcher::new(&["la la la", "Panorama"]).unwrap();
        assert!(m.is_match("oh la la la yeah"));
        assert!(m.is_match("PANORAMA!!"));
        assert!(m.is_match("LA LA LA"));
        assert!(!m.is_match("good evening"));
    }
}
