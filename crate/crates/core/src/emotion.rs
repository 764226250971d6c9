//! Chat emotion: message → label → (arousal, valence) bin, and the per-tick
//! dominant bin with hold-then-decay across silent ticks.

use std::collections::HashMap;
use std::fmt;
use std::marker::PhantomData;

use indexmap::IndexMap;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::TickBatch;

pub const DEFAULT_LEXICON_JSON: &str = include_str!("../data/lexicon.json");
pub const DEFAULT_LABEL_BINS_JSON: &str = include_str!("../data/label_bins.json");

/// Silent ticks for which the last dominant bin is held before decaying.
pub const DEFAULT_HOLD_TICKS: u32 = 5;

#[derive(Debug, Error)]
pub enum EmotionError {
    #[error("malformed json: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("duplicate entry {0:?}")]
    Duplicate(String),
    #[error("lexicon term {0:?} is empty or not a single token")]
    BadTerm(String),
    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),
    #[error("label set is empty")]
    EmptyLabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Neutral,
    High,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Neutral, Level::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Neutral => "neutral",
            Level::High => "high",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmotionBin {
    pub arousal: Level,
    pub valence: Level,
}

impl EmotionBin {
    pub const NEUTRAL: EmotionBin = EmotionBin { arousal: Level::Neutral, valence: Level::Neutral };

    pub const fn new(arousal: Level, valence: Level) -> Self {
        Self { arousal, valence }
    }

    /// All nine bins.
    pub fn all() -> impl Iterator<Item = EmotionBin> {
        Level::ALL.into_iter().flat_map(|a| Level::ALL.into_iter().map(move |v| EmotionBin::new(a, v)))
    }

    /// Mode tie-break rank: valence first, then arousal, higher wins.
    fn priority(self) -> (Level, Level) {
        (self.valence, self.arousal)
    }
}

impl Default for EmotionBin {
    fn default() -> Self {
        Self::NEUTRAL
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionLabel(pub String);

impl EmotionLabel {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// JSON object read as ordered key/value pairs so duplicate keys are visible.
struct OrderedPairs<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for OrderedPairs<V> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PairsVisitor<V>(PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for PairsVisitor<V> {
            type Value = OrderedPairs<V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((k, v)) = map.next_entry::<String, V>()? {
                    out.push((k, v));
                }
                Ok(OrderedPairs(out))
            }
        }

        deserializer.deserialize_map(PairsVisitor(PhantomData))
    }
}

/// Total map from the configured label set to bins. Its keys define the
/// label set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBinMap {
    entries: IndexMap<EmotionLabel, EmotionBin>,
}

impl LabelBinMap {
    pub fn from_json(json: &str) -> Result<Self, EmotionError> {
        let OrderedPairs(pairs) = serde_json::from_str::<OrderedPairs<EmotionBin>>(json)?;
        Self::from_pairs(pairs)
    }

    pub fn from_pairs<L: Into<String>>(pairs: impl IntoIterator<Item = (L, EmotionBin)>) -> Result<Self, EmotionError> {
        let mut entries = IndexMap::new();
        for (label, bin) in pairs {
            let label = EmotionLabel(label.into());
            if entries.insert(label.clone(), bin).is_some() {
                return Err(EmotionError::Duplicate(label.0));
            }
        }
        if entries.is_empty() {
            return Err(EmotionError::EmptyLabelSet);
        }
        Ok(Self { entries })
    }

    /// Every label maps to (Neutral, Neutral).
    pub fn uniform<L: Into<String>>(labels: impl IntoIterator<Item = L>) -> Result<Self, EmotionError> {
        Self::from_pairs(labels.into_iter().map(|l| (l, EmotionBin::NEUTRAL)))
    }

    pub fn default_map() -> Self {
        Self::from_json(DEFAULT_LABEL_BINS_JSON).expect("shipped label map is valid")
    }

    pub fn bin_of(&self, label: &EmotionLabel) -> Result<EmotionBin, EmotionError> {
        self.entries.get(label).copied().ok_or_else(|| EmotionError::UnknownLabel(label.0.clone()))
    }

    pub fn contains(&self, label: &EmotionLabel) -> bool {
        self.entries.contains_key(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &EmotionLabel> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Punctuation stripped before tokenizing. Zero-width joiners and variation
/// selectors are not in this set, so emoji sequences survive intact.
fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}'
            | '\u{2010}'..='\u{2027}'
            | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}'
            | '\u{3008}'..='\u{3011}'
            | '\u{FF01}'..='\u{FF0F}'
            | '\u{FF1A}'..='\u{FF20}')
}

/// Case-folds, replaces punctuation with spaces, splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let folded: String = text.to_lowercase().chars().map(|c| if is_punct(c) { ' ' } else { c }).collect();
    folded.split_whitespace().map(str::to_owned).collect()
}

/// Anything that can turn a chat line into at most one emotion label.
pub trait Classifier: Send + Sync {
    fn classify(&self, text: &str) -> Option<EmotionLabel>;
}

impl<F> Classifier for F
where
    F: Fn(&str) -> Option<EmotionLabel> + Send + Sync,
{
    fn classify(&self, text: &str) -> Option<EmotionLabel> {
        self(text)
    }
}

/// Term → label lookup. Label precedence for ties follows the order in which
/// each label first appears in the lexicon.
#[derive(Debug, Clone)]
pub struct Lexicon {
    terms: HashMap<String, usize>,
    labels: Vec<EmotionLabel>,
}

impl Lexicon {
    pub fn from_json(json: &str) -> Result<Self, EmotionError> {
        let OrderedPairs(pairs) = serde_json::from_str::<OrderedPairs<String>>(json)?;
        Self::from_pairs(pairs)
    }

    pub fn from_pairs<T: AsRef<str>, L: Into<String>>(
        pairs: impl IntoIterator<Item = (T, L)>,
    ) -> Result<Self, EmotionError> {
        let mut terms = HashMap::new();
        let mut labels: Vec<EmotionLabel> = Vec::new();
        for (term, label) in pairs {
            let raw = term.as_ref();
            let mut toks = tokenize(raw);
            if toks.len() != 1 {
                return Err(EmotionError::BadTerm(raw.to_string()));
            }
            let term = toks.pop().unwrap();
            let label = EmotionLabel(label.into());
            let idx = match labels.iter().position(|l| *l == label) {
                Some(i) => i,
                None => {
                    labels.push(label);
                    labels.len() - 1
                }
            };
            if terms.insert(term.clone(), idx).is_some() {
                return Err(EmotionError::Duplicate(term));
            }
        }
        Ok(Self { terms, labels })
    }

    pub fn default_lexicon() -> Self {
        Self::from_json(DEFAULT_LEXICON_JSON).expect("shipped lexicon is valid")
    }

    /// Every label the lexicon can produce must exist in `map`.
    pub fn validate_against(&self, map: &LabelBinMap) -> Result<(), EmotionError> {
        match self.labels.iter().find(|l| !map.contains(l)) {
            Some(l) => Err(EmotionError::UnknownLabel(l.0.clone())),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn labels(&self) -> &[EmotionLabel] {
        &self.labels
    }
}

impl Classifier for Lexicon {
    fn classify(&self, text: &str) -> Option<EmotionLabel> {
        let mut hits = vec![0u32; self.labels.len()];
        let mut any = false;
        for tok in tokenize(text) {
            if let Some(&idx) = self.terms.get(&tok) {
                hits[idx] += 1;
                any = true;
            }
        }
        if !any {
            return None;
        }
        // max count; earliest label wins ties
        let (best, _) =
            hits.iter().enumerate().fold((0usize, 0u32), |acc, (i, &n)| if n > acc.1 { (i, n) } else { acc });
        Some(self.labels[best].clone())
    }
}

pub fn classify(text: &str, lexicon: &Lexicon) -> Option<EmotionLabel> {
    lexicon.classify(text)
}

pub fn bin_of(label: &EmotionLabel, map: &LabelBinMap) -> Result<EmotionBin, EmotionError> {
    map.bin_of(label)
}

/// Most frequent bin; ties go to higher valence, then higher arousal.
pub fn mode_bin(bins: impl IntoIterator<Item = EmotionBin>) -> Option<EmotionBin> {
    let mut counts: HashMap<EmotionBin, u32> = HashMap::new();
    for b in bins {
        *counts.entry(b).or_default() += 1;
    }
    counts.into_iter().max_by_key(|&(bin, n)| (n, bin.priority())).map(|(bin, _)| bin)
}

/// Bins of every classifiable message in the batch.
pub fn message_bins<'a, C: Classifier + ?Sized>(
    batch: &'a TickBatch,
    classifier: &'a C,
    map: &'a LabelBinMap,
) -> impl Iterator<Item = EmotionBin> + 'a {
    batch
        .messages
        .iter()
        .filter_map(move |m| classifier.classify(&m.text))
        .filter_map(move |label| map.bin_of(&label).ok())
}

/// Dominant bin for one tick given how many silent ticks preceded it.
/// Returns the bin and the updated silent-tick count.
pub fn dominant_bin<C: Classifier + ?Sized>(
    batch: &TickBatch,
    previous: EmotionBin,
    silent_ticks: u32,
    classifier: &C,
    map: &LabelBinMap,
) -> (EmotionBin, u32) {
    match mode_bin(message_bins(batch, classifier, map)) {
        Some(bin) => (bin, 0),
        None => {
            let silent = silent_ticks.saturating_add(1);
            if silent <= DEFAULT_HOLD_TICKS {
                (previous, silent)
            } else {
                (EmotionBin::NEUTRAL, silent)
            }
        }
    }
}

/// Carries the dominant bin across ticks.
#[derive(Debug, Clone)]
pub struct EmotionTracker {
    current: EmotionBin,
    silent_ticks: u32,
    hold_ticks: u32,
    seen_any: bool,
}

impl Default for EmotionTracker {
    fn default() -> Self {
        Self::new(DEFAULT_HOLD_TICKS)
    }
}

impl EmotionTracker {
    pub fn new(hold_ticks: u32) -> Self {
        Self { current: EmotionBin::NEUTRAL, silent_ticks: 0, hold_ticks, seen_any: false }
    }

    pub fn current(&self) -> EmotionBin {
        self.current
    }

    pub fn hold_ticks(&self) -> u32 {
        self.hold_ticks
    }

    /// Whether the current bin comes from chat, fresh or held, rather than
    /// from the silent default.
    pub fn has_evidence(&self) -> bool {
        self.seen_any && self.silent_ticks <= self.hold_ticks
    }

    pub fn observe(&mut self, bins: impl IntoIterator<Item = EmotionBin>) -> EmotionBin {
        match mode_bin(bins) {
            Some(bin) => {
                self.current = bin;
                self.silent_ticks = 0;
                self.seen_any = true;
            }
            None => {
                self.silent_ticks = self.silent_ticks.saturating_add(1);
                if self.silent_ticks > self.hold_ticks {
                    self.current = EmotionBin::NEUTRAL;
                }
            }
        }
        self.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::ChatMessage;
    use Level::*;

    fn batch(texts: &[&str]) -> TickBatch {
        TickBatch {
            tick_index: 0,
            start_ms: 0,
            end_ms: 1000,
            messages: texts.iter().map(|t| ChatMessage::new(0, "a", *t)).collect(),
        }
    }

    #[test]
    fn classify_tie_uses_lexicon_order() {
        let lex = Lexicon::from_pairs([("wow", "excitement"), ("amazing", "admiration")]).unwrap();
        assert_eq!(classify("WOW AMAZING!!!", &lex), Some(EmotionLabel::new("excitement")));
        let lex = Lexicon::from_pairs([("amazing", "admiration"), ("wow", "excitement")]).unwrap();
        assert_eq!(classify("WOW AMAZING!!!", &lex), Some(EmotionLabel::new("admiration")));
    }

    #[test]
    fn classify_majority_wins() {
        let lex = Lexicon::from_pairs([("wow", "excitement"), ("amazing", "admiration")]).unwrap();
        assert_eq!(classify("wow amazing amazing", &lex), Some(EmotionLabel::new("admiration")));
    }

    #[test]
    fn classify_no_match_and_empty() {
        let lex = Lexicon::default_lexicon();
        assert_eq!(classify("asdfgh", &lex), None);
        assert_eq!(classify("", &lex), None);
        assert_eq!(classify("   ...!!! ", &lex), None);
    }

    #[test]
    fn emoji_survive_tokenizing() {
        assert_eq!(tokenize("so good🔥 ❤️!!"), vec!["so", "good🔥", "❤️"]);
        assert_eq!(tokenize("Hello,World"), vec!["hello", "world"]);
        let lex = Lexicon::default_lexicon();
        assert_eq!(classify("🔥 🔥", &lex), Some(EmotionLabel::new("excitement")));
    }

    #[test]
    fn duplicate_and_bad_terms_rejected() {
        assert!(matches!(Lexicon::from_json(r#"{"wow":"joy","WOW":"joy"}"#), Err(EmotionError::Duplicate(_))));
        assert!(matches!(Lexicon::from_json(r#"{"wow":"joy","wow":"anger"}"#), Err(EmotionError::Duplicate(_))));
        assert!(matches!(Lexicon::from_json(r#"{"":"joy"}"#), Err(EmotionError::BadTerm(_))));
        assert!(matches!(Lexicon::from_json(r#"{"two words":"joy"}"#), Err(EmotionError::BadTerm(_))));
        assert!(matches!(Lexicon::from_json("[1]"), Err(EmotionError::Parse(_))));
    }

    #[test]
    fn default_map_has_44_labels_and_reference_bins() {
        let map = LabelBinMap::default_map();
        assert_eq!(map.len(), 44);
        assert_eq!(bin_of(&EmotionLabel::new("excitement"), &map).unwrap(), EmotionBin::new(High, High));
        assert_eq!(bin_of(&EmotionLabel::new("boredom"), &map).unwrap(), EmotionBin::new(Low, Low));
        assert!(matches!(bin_of(&EmotionLabel::new("ennui"), &map), Err(EmotionError::UnknownLabel(_))));
        Lexicon::default_lexicon().validate_against(&map).unwrap();
    }

    #[test]
    fn uniform_map_is_neutral() {
        let map = LabelBinMap::uniform(["a", "b"]).unwrap();
        assert_eq!(map.bin_of(&EmotionLabel::new("b")).unwrap(), EmotionBin::NEUTRAL);
    }

    #[test]
    fn label_map_rejects_bad_levels_and_dupes() {
        assert!(LabelBinMap::from_json(r#"{"x":{"arousal":"huge","valence":"low"}}"#).is_err());
        assert!(matches!(
            LabelBinMap::from_json(r#"{"x":{"arousal":"low","valence":"low"},"x":{"arousal":"low","valence":"low"}}"#),
            Err(EmotionError::Duplicate(_))
        ));
        assert!(matches!(LabelBinMap::from_json("{}"), Err(EmotionError::EmptyLabelSet)));
    }

    #[test]
    fn lexicon_validation_catches_unknown_labels() {
        let lex = Lexicon::from_pairs([("meh", "ennui")]).unwrap();
        assert!(matches!(
            lex.validate_against(&LabelBinMap::default_map()),
            Err(EmotionError::UnknownLabel(l)) if l == "ennui"
        ));
    }

    fn hh_ll_setup() -> (Lexicon, LabelBinMap) {
        let lex = Lexicon::from_pairs([("yay", "up"), ("meh", "down")]).unwrap();
        let map = LabelBinMap::from_pairs([("up", EmotionBin::new(High, High)), ("down", EmotionBin::new(Low, Low))])
            .unwrap();
        (lex, map)
    }

    #[test]
    fn dominant_strict_majority() {
        let (lex, map) = hh_ll_setup();
        let mut texts = vec!["yay"; 7];
        texts.extend(["meh"; 3]);
        let (bin, silent) = dominant_bin(&batch(&texts), EmotionBin::NEUTRAL, 0, &lex, &map);
        assert_eq!(bin, EmotionBin::new(High, High));
        assert_eq!(silent, 0);
    }

    #[test]
    fn dominant_tie_prefers_positive_high() {
        let (lex, map) = hh_ll_setup();
        let mut texts = vec!["meh"; 5];
        texts.extend(["yay"; 5]);
        let (bin, _) = dominant_bin(&batch(&texts), EmotionBin::NEUTRAL, 0, &lex, &map);
        assert_eq!(bin, EmotionBin::new(High, High));
        // valence outranks arousal
        assert_eq!(
            mode_bin([EmotionBin::new(High, Neutral), EmotionBin::new(Low, High)]),
            Some(EmotionBin::new(Low, High))
        );
        assert_eq!(
            mode_bin([EmotionBin::new(Low, Neutral), EmotionBin::new(Neutral, Neutral)]),
            Some(EmotionBin::new(Neutral, Neutral))
        );
    }

    #[test]
    fn hold_then_decay() {
        let (lex, map) = hh_ll_setup();
        let quiet = batch(&["asdf"]);
        let hh = EmotionBin::new(High, High);
        let (bin, silent) = dominant_bin(&quiet, hh, 0, &lex, &map);
        assert_eq!((bin, silent), (hh, 1));
        let (bin, silent) = dominant_bin(&quiet, hh, 4, &lex, &map);
        assert_eq!((bin, silent), (hh, 5));
        let (bin, _) = dominant_bin(&quiet, hh, 5, &lex, &map);
        assert_eq!(bin, EmotionBin::NEUTRAL);

        let mut tracker = EmotionTracker::default();
        assert!(!tracker.has_evidence());
        tracker.observe([hh]);
        for _ in 0..5 {
            assert_eq!(tracker.observe([]), hh);
            assert!(tracker.has_evidence());
        }
        assert_eq!(tracker.observe([]), EmotionBin::NEUTRAL);
        assert!(!tracker.has_evidence());
    }

    #[test]
    fn closure_classifier_is_pluggable() {
        let map = LabelBinMap::uniform(["x"]).unwrap();
        let constant = |_: &str| Some(EmotionLabel::new("x"));
        let (bin, _) = dominant_bin(&batch(&["anything"]), EmotionBin::new(High, High), 0, &constant, &map);
        assert_eq!(bin, EmotionBin::NEUTRAL);
    }
}
