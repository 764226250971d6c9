//! Engine configuration: one TOML file naming the input files plus every
//! tunable, with relative paths resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chat::{ColumnMap, DEFAULT_TICK_MS};
use crate::crowd::{DEFAULT_AVATARS, VARIATION_PROBABILITY};
use crate::detectors::SurgeParams;
use crate::emotion::{LabelBinMap, Lexicon, DEFAULT_LABEL_BINS_JSON, DEFAULT_LEXICON_JSON};
use crate::reactor::{MappingTable, Reactor, ReactorError, ReactorParams, DEFAULT_MAPPING_JSON};
use crate::timeline::{load_timeline, ConcertTimeline};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
    #[error("config: {0}")]
    Invalid(String),
}

impl ConfigError {
    fn file(path: &Path, reason: impl ToString) -> Self {
        Self::File { path: path.display().to_string(), reason: reason.to_string() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub chat: Option<PathBuf>,
    pub timeline: Option<PathBuf>,
    /// Built-in defaults are used for the three tables when omitted.
    pub lexicon: Option<PathBuf>,
    pub label_bins: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub z_window: usize,
    pub z_threshold: f64,
    pub influence: f64,
    pub sigma_floor: f64,
    pub singalong_threshold: f64,
    pub cheer_refractory_ticks: u64,
    pub emotion_hold_ticks: u32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        let p = ReactorParams::default();
        Self {
            z_window: p.surge.window,
            z_threshold: p.surge.threshold_z,
            influence: p.surge.influence,
            sigma_floor: p.surge.sigma_floor,
            singalong_threshold: p.singalong_threshold,
            cheer_refractory_ticks: p.cheer_refractory_ticks,
            emotion_hold_ticks: p.emotion_hold_ticks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub seed: Option<u64>,
    pub tick_ms: u64,
    pub n_avatars: usize,
    pub nominal_bpm: f64,
    pub tempo_threshold_bpm: f64,
    pub variation_probability: f64,
    /// Virtual seconds per wall second; `inf` replays as fast as possible.
    pub speed: f64,
    pub paths: PathsConfig,
    pub chat_columns: ColumnMap,
    pub detectors: DetectorConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let p = ReactorParams::default();
        Self {
            seed: None,
            tick_ms: DEFAULT_TICK_MS,
            n_avatars: DEFAULT_AVATARS,
            nominal_bpm: p.nominal_bpm,
            tempo_threshold_bpm: p.tempo_threshold_bpm,
            variation_probability: VARIATION_PROBABILITY,
            speed: 1.0,
            paths: PathsConfig::default(),
            chat_columns: ColumnMap::default(),
            detectors: DetectorConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct HashedParams {
    tick_ms: u64,
    z_window: usize,
    z_threshold: f64,
    influence: f64,
    sigma_floor: f64,
    singalong_threshold: f64,
    cheer_refractory_ticks: u64,
    emotion_hold_ticks: u32,
    tempo_threshold_bpm: f64,
    nominal_bpm: f64,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::file(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::file(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for slot in [
            &mut cfg.paths.chat,
            &mut cfg.paths.timeline,
            &mut cfg.paths.lexicon,
            &mut cfg.paths.label_bins,
            &mut cfg.paths.mapping,
        ] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn reactor_params(&self) -> ReactorParams {
        ReactorParams {
            surge: SurgeParams {
                window: self.detectors.z_window,
                threshold_z: self.detectors.z_threshold,
                influence: self.detectors.influence,
                sigma_floor: self.detectors.sigma_floor,
            },
            singalong_threshold: self.detectors.singalong_threshold,
            cheer_refractory_ticks: self.detectors.cheer_refractory_ticks,
            emotion_hold_ticks: self.detectors.emotion_hold_ticks,
            tempo_threshold_bpm: self.tempo_threshold_bpm,
            nominal_bpm: self.nominal_bpm,
        }
    }

    fn params_json(&self) -> String {
        let d = &self.detectors;
        serde_json::to_string(&HashedParams {
            tick_ms: self.tick_ms,
            z_window: d.z_window,
            z_threshold: d.z_threshold,
            influence: d.influence,
            sigma_floor: d.sigma_floor,
            singalong_threshold: d.singalong_threshold,
            cheer_refractory_ticks: d.cheer_refractory_ticks,
            emotion_hold_ticks: d.emotion_hold_ticks,
            tempo_threshold_bpm: self.tempo_threshold_bpm,
            nominal_bpm: self.nominal_bpm,
        })
        .expect("params serialize")
    }

    /// Reads and validates every referenced file.
    pub fn load(&self) -> Result<LoadedConfig, ConfigError> {
        if self.tick_ms == 0 {
            return Err(ConfigError::Invalid("tick_ms must be positive".into()));
        }
        if self.n_avatars == 0 {
            return Err(ConfigError::Invalid("n_avatars must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.variation_probability) {
            return Err(ConfigError::Invalid("variation_probability must lie in [0, 1]".into()));
        }
        if !(self.speed > 0.0) {
            return Err(ConfigError::Invalid(format!("speed must be positive, got {}", self.speed)));
        }

        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| ConfigError::file(p, e));
        let read_or = |p: &Option<PathBuf>, fallback: &str| match p {
            Some(p) => read(p),
            None => Ok(fallback.to_string()),
        };

        let timeline_path =
            self.paths.timeline.as_ref().ok_or_else(|| ConfigError::Invalid("paths.timeline is required".into()))?;
        let timeline_text = read(timeline_path)?;
        let timeline = load_timeline(&timeline_text).map_err(|e| ConfigError::file(timeline_path, e))?;

        let named = |p: &Option<PathBuf>, what: &str| {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| format!("<built-in {what}>"))
        };
        let lexicon_text = read_or(&self.paths.lexicon, DEFAULT_LEXICON_JSON)?;
        let lexicon = Lexicon::from_json(&lexicon_text)
            .map_err(|e| ConfigError::File { path: named(&self.paths.lexicon, "lexicon"), reason: e.to_string() })?;
        let bins_text = read_or(&self.paths.label_bins, DEFAULT_LABEL_BINS_JSON)?;
        let label_map = LabelBinMap::from_json(&bins_text).map_err(|e| ConfigError::File {
            path: named(&self.paths.label_bins, "label map"),
            reason: e.to_string(),
        })?;
        lexicon
            .validate_against(&label_map)
            .map_err(|e| ConfigError::File { path: named(&self.paths.lexicon, "lexicon"), reason: e.to_string() })?;
        let mapping_text = read_or(&self.paths.mapping, DEFAULT_MAPPING_JSON)?;
        let table = MappingTable::from_json(&mapping_text).map_err(|e| ConfigError::File {
            path: named(&self.paths.mapping, "mapping table"),
            reason: e.to_string(),
        })?;

        let mut hasher = Sha256::new();
        for part in [&timeline_text, &lexicon_text, &bins_text, &mapping_text] {
            hasher.update(part.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(self.params_json().as_bytes());
        let config_hash = hex::encode(hasher.finalize());

        let loaded = LoadedConfig {
            config: self.clone(),
            timeline: Arc::new(timeline),
            lexicon: Arc::new(lexicon),
            label_map,
            table,
            config_hash,
        };
        // surface parameter errors at startup rather than on first tick
        loaded.reactor().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(loaded)
    }
}

/// A validated configuration with all tables in memory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: EngineConfig,
    pub timeline: Arc<ConcertTimeline>,
    pub lexicon: Arc<Lexicon>,
    pub label_map: LabelBinMap,
    pub table: MappingTable,
    pub config_hash: String,
}

impl LoadedConfig {
    pub fn reactor(&self) -> Result<Reactor, ReactorError> {
        Reactor::new(
            self.timeline.clone(),
            self.table.clone(),
            self.lexicon.clone(),
            self.label_map.clone(),
            self.config.reactor_params(),
        )
    }
}
