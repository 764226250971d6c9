//! Streaming detectors over tick-level chat signals.
//!
//! [`SurgeDetector`] is a moving-window z-score peak detector on the chat
//! rate. [`SingalongDetector`] fires once per declared window when enough of
//! a tick's chat quotes the lyrics.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::TickBatch;
use crate::timeline::{LyricMatcher, SingalongWindow};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("z window must hold at least one sample")]
    EmptyWindow,
    #[error("z threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("influence must lie in [0, 1], got {0}")]
    BadInfluence(f64),
    #[error("sigma floor must be positive, got {0}")]
    BadSigmaFloor(f64),
    #[error("singalong ratio threshold must lie in (0, 1], got {0}")]
    BadRatio(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurgeParams {
    /// Moving window length in samples (ticks).
    pub window: usize,
    pub threshold_z: f64,
    /// Weight of a surging sample in the baseline; 0 keeps surges out.
    pub influence: f64,
    /// Lower bound on the standard deviation, in messages/sec.
    pub sigma_floor: f64,
}

impl Default for SurgeParams {
    fn default() -> Self {
        Self { window: 5, threshold_z: 1.0, influence: 0.0, sigma_floor: 1.0 }
    }
}

impl SurgeParams {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.window == 0 {
            return Err(DetectorError::EmptyWindow);
        }
        if !(self.threshold_z > 0.0) {
            return Err(DetectorError::BadThreshold(self.threshold_z));
        }
        if !(0.0..=1.0).contains(&self.influence) {
            return Err(DetectorError::BadInfluence(self.influence));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(DetectorError::BadSigmaFloor(self.sigma_floor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurgeEvent {
    pub tick_index: u64,
    pub rate: f64,
    pub z: f64,
}

/// Outcome of one detector step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurgeStep {
    /// `None` while the window is still filling.
    pub z: Option<f64>,
    pub event: Option<SurgeEvent>,
}

/// Population mean and standard deviation, summed in buffer order.
pub fn mean_std(samples: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.clone().sum::<f64>() / n;
    let var = samples.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct SurgeDetector {
    params: SurgeParams,
    buffer: VecDeque<f64>,
    in_surge: bool,
}

impl SurgeDetector {
    pub fn new(params: SurgeParams) -> Result<Self, DetectorError> {
        params.validate()?;
        Ok(Self { params, buffer: VecDeque::with_capacity(params.window + 1), in_surge: false })
    }

    pub fn params(&self) -> &SurgeParams {
        &self.params
    }

    pub fn in_surge(&self) -> bool {
        self.in_surge
    }

    pub fn is_warm(&self) -> bool {
        self.buffer.len() >= self.params.window
    }

    pub fn buffer(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffer.iter().copied()
    }

    /// Feeds one rate sample. Events fire only on the rising edge of an
    /// above-threshold episode.
    pub fn step(&mut self, tick_index: u64, rate: f64) -> SurgeStep {
        if !self.is_warm() {
            self.buffer.push_back(rate);
            return SurgeStep { z: None, event: None };
        }
        let (mean, std) = mean_std(self.buffer.iter().copied());
        let z = (rate - mean) / std.max(self.params.sigma_floor);
        let above = z > self.params.threshold_z;
        let event = (above && !self.in_surge).then_some(SurgeEvent { tick_index, rate, z });
        self.in_surge = above;

        let sample = if above { self.params.influence * rate + (1.0 - self.params.influence) * mean } else { rate };
        self.buffer.pop_front();
        self.buffer.push_back(sample);
        SurgeStep { z: Some(z), event }
    }
}

pub fn surge_step(detector: &mut SurgeDetector, tick_index: u64, rate: f64) -> Option<SurgeEvent> {
    detector.step(tick_index, rate).event
}

pub fn match_lyric(text: &str, patterns: &LyricMatcher) -> bool {
    patterns.is_match(text)
}

/// Share of the batch that quotes the window's lyrics; 0 for an empty batch.
pub fn lyric_ratio(window: &SingalongWindow, batch: &TickBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let hits = batch.messages.iter().filter(|m| window.matches(&m.text)).count();
    hits as f64 / batch.len() as f64
}

#[derive(Debug, Clone)]
pub struct SingalongDetector {
    threshold_ratio: f64,
    triggered: HashSet<String>,
}

impl SingalongDetector {
    pub fn new(threshold_ratio: f64) -> Result<Self, DetectorError> {
        if !(threshold_ratio > 0.0 && threshold_ratio <= 1.0) {
            return Err(DetectorError::BadRatio(threshold_ratio));
        }
        Ok(Self { threshold_ratio, triggered: HashSet::new() })
    }

    pub fn threshold_ratio(&self) -> f64 {
        self.threshold_ratio
    }

    pub fn is_triggered(&self, window_id: &str) -> bool {
        self.triggered.contains(window_id)
    }

    /// Returns the window id the first time its lyric ratio strictly exceeds
    /// the threshold.
    pub fn step(&mut self, window: &SingalongWindow, batch: &TickBatch) -> Option<String> {
        if self.triggered.contains(&window.id) {
            return None;
        }
        if lyric_ratio(window, batch) > self.threshold_ratio {
            self.triggered.insert(window.id.clone());
            Some(window.id.clone())
        } else {
            None
        }
    }
}

pub fn singalong_step(detector: &mut SingalongDetector, window: &SingalongWindow, batch: &TickBatch) -> Option<String> {
    detector.step(window, batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::ChatMessage;

    fn warm(samples: &[f64]) -> SurgeDetector {
        let mut d = SurgeDetector::new(SurgeParams::default()).unwrap();
        for (i, &s) in samples.iter().enumerate() {
            assert!(d.step(i as u64, s).z.is_none());
        }
        d
    }

    #[test]
    fn flat_baseline_then_spike() {
        let mut d = warm(&[2.0; 5]);
        let step = d.step(5, 20.0);
        assert_eq!(step.z, Some(18.0));
        assert_eq!(step.event.unwrap().tick_index, 5);
    }

    #[test]
    fn small_wiggle_stays_below_threshold() {
        let mut d = warm(&[3.0, 2.0, 3.0, 2.0, 3.0]);
        let (_, std) = mean_std(d.buffer().collect::<Vec<_>>().into_iter());
        assert!((std - 0.4899).abs() < 1e-3);
        let step = d.step(5, 3.0);
        assert!((step.z.unwrap() - 0.4).abs() < 1e-12);
        assert!(step.event.is_none());
    }

    #[test]
    fn sustained_burst_emits_once() {
        let mut d = warm(&[2.0; 5]);
        let events: Vec<_> = (5..10).filter_map(|i| surge_step(&mut d, i, 20.0)).collect();
        assert_eq!(events.len(), 1);
        assert!(d.in_surge());
        // baseline untouched at influence 0, so return to 2 ends the episode
        assert!(surge_step(&mut d, 10, 2.0).is_none());
        assert!(!d.in_surge());
        assert_eq!(surge_step(&mut d, 11, 20.0).map(|e| e.tick_index), Some(11));
    }

    #[test]
    fn influence_one_lets_surges_into_baseline() {
        let params = SurgeParams { influence: 1.0, ..Default::default() };
        let mut d = SurgeDetector::new(params).unwrap();
        for i in 0..5 {
            d.step(i, 2.0);
        }
        d.step(5, 20.0);
        assert_eq!(d.buffer().last(), Some(20.0));
    }

    #[test]
    fn bad_params_rejected() {
        let bad = |p: SurgeParams| SurgeDetector::new(p).is_err();
        assert!(bad(SurgeParams { window: 0, ..Default::default() }));
        assert!(bad(SurgeParams { threshold_z: 0.0, ..Default::default() }));
        assert!(bad(SurgeParams { influence: 1.5, ..Default::default() }));
        assert!(bad(SurgeParams { sigma_floor: 0.0, ..Default::default() }));
        assert!(SingalongDetector::new(0.0).is_err());
        assert!(SingalongDetector::new(1.01).is_err());
        assert!(SingalongDetector::new(1.0).is_ok());
    }

    fn window() -> SingalongWindow {
        SingalongWindow::new("chorus", 0, 10_000, vec!["la la la".into(), r"\bpanorama\b".into()]).unwrap()
    }

    fn batch(hits: usize, total: usize) -> TickBatch {
        let messages =
            (0..total).map(|i| ChatMessage::new(0, "a", if i < hits { "LA LA LA" } else { "hello" })).collect();
        TickBatch { tick_index: 0, start_ms: 0, end_ms: 1000, messages }
    }

    #[test]
    fn singalong_strict_boundary() {
        let w = window();
        let mut d = SingalongDetector::new(0.3).unwrap();
        assert_eq!(singalong_step(&mut d, &w, &batch(3, 10)), None);
        assert_eq!(singalong_step(&mut d, &w, &batch(4, 10)), Some("chorus".to_string()));
    }

    #[test]
    fn singalong_fires_once_per_window() {
        let w = window();
        let mut d = SingalongDetector::new(0.3).unwrap();
        assert!(d.step(&w, &batch(10, 10)).is_some());
        assert!(d.step(&w, &batch(10, 10)).is_none());
        assert!(d.is_triggered("chorus"));
    }

    #[test]
    fn singalong_empty_tick_is_zero_ratio() {
        let w = window();
        assert_eq!(lyric_ratio(&w, &batch(0, 0)), 0.0);
        let mut d = SingalongDetector::new(0.3).unwrap();
        assert!(d.step(&w, &batch(0, 0)).is_none());
    }

    #[test]
    fn lyric_match_cases() {
        let w = window();
        assert!(match_lyric("we sing la la la together", w.matcher()));
        assert!(!match_lyric("nice outfit", w.matcher()));
        assert!(match_lyric("PaNoRaMa", w.matcher()));
        assert!(!match_lyric("panoramas", w.matcher()));
    }
}
