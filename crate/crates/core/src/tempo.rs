//! Song tempo: fast/slow classification from BPM, and an offline BPM
//! estimator for performance segments that do not declare one.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPO_THRESHOLD_BPM: f64 = 100.0;

pub const FRAME_LEN: usize = 1024;
pub const HOP_LEN: usize = FRAME_LEN / 2;
pub const MIN_BPM: f64 = 60.0;
pub const MAX_BPM: f64 = 180.0;
pub const MIN_TRACK_SECS: f64 = 10.0;
pub const MIN_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Error)]
pub enum TempoError {
    #[error("bpm must be positive, got {0}")]
    Domain(f64),
    #[error("track is {secs:.2} s long; at least {MIN_TRACK_SECS} s needed")]
    TooShort { secs: f64 },
    #[error("track has no onsets")]
    SilentTrack,
    #[error("no periodicity between 60 and 180 bpm")]
    NoPeriodicity,
    #[error("sample rate {0} Hz is below {MIN_SAMPLE_RATE} Hz")]
    SampleRate(u32),
    #[error("track is empty")]
    Empty,
    #[error("track contains non-finite samples")]
    NonFinite,
    #[error("unsupported wav format: {0}")]
    Format(String),
    #[error("cannot read wav: {0}")]
    Wav(#[from] hound::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TempoClass {
    Fast,
    Slow,
}

/// Fast strictly above the threshold, otherwise slow.
pub fn classify_bpm_with(bpm: f64, threshold_bpm: f64) -> Result<TempoClass, TempoError> {
    if !(bpm > 0.0) || !bpm.is_finite() {
        return Err(TempoError::Domain(bpm));
    }
    Ok(if bpm > threshold_bpm { TempoClass::Fast } else { TempoClass::Slow })
}

pub fn classify_bpm(bpm: f64) -> Result<TempoClass, TempoError> {
    classify_bpm_with(bpm, DEFAULT_TEMPO_THRESHOLD_BPM)
}

/// Mono PCM in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmTrack {
    sample_rate: u32,
    samples: Vec<f32>,
}

impl PcmTrack {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Result<Self, TempoError> {
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(TempoError::SampleRate(sample_rate));
        }
        if samples.is_empty() {
            return Err(TempoError::Empty);
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(TempoError::NonFinite);
        }
        Ok(Self { sample_rate, samples })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads 16-bit PCM WAVE; stereo (or wider) is averaged to mono.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self, TempoError> {
        let reader = hound::WavReader::open(path)?;
        Self::from_wav_reader(reader)
    }

    pub fn from_wav_reader<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<Self, TempoError> {
        let spec = reader.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(TempoError::Format(format!(
                "{:?} {}-bit (need 16-bit integer PCM)",
                spec.sample_format, spec.bits_per_sample
            )));
        }
        let channels = spec.channels.max(1) as usize;
        let raw = reader.into_samples::<i16>().collect::<Result<Vec<_>, _>>()?;
        let samples = raw
            .chunks(channels)
            .map(|frame| frame.iter().map(|&s| s as f32 / 32768.0).sum::<f32>() / frame.len() as f32)
            .collect();
        Self::new(spec.sample_rate, samples)
    }
}

/// Positive energy flux between successive 1024-sample frames at 50% hop.
/// The first frame has no predecessor and scores 0.
pub fn onset_strength(samples: &[f32]) -> Vec<f64> {
    if samples.len() < FRAME_LEN {
        return Vec::new();
    }
    let frames = (samples.len() - FRAME_LEN) / HOP_LEN + 1;
    let energy: Vec<f64> = (0..frames)
        .map(|i| samples[i * HOP_LEN..i * HOP_LEN + FRAME_LEN].iter().map(|&s| (s as f64) * (s as f64)).sum())
        .collect();
    std::iter::once(0.0).chain(energy.windows(2).map(|w| (w[1] - w[0]).max(0.0))).collect()
}

/// Unnormalized autocorrelation of the mean-removed signal for lags
/// `0..=max_lag`.
fn autocorrelation(signal: &[f64], max_lag: usize) -> Vec<f64> {
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let centered: Vec<f64> = signal.iter().map(|x| x - mean).collect();
    (0..=max_lag)
        .map(|lag| {
            if lag >= centered.len() {
                return 0.0;
            }
            centered[..centered.len() - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Estimates a single tempo in [60, 180] BPM for the whole track.
pub fn estimate_bpm(track: &PcmTrack) -> Result<f64, TempoError> {
    let secs = track.duration_secs();
    if secs < MIN_TRACK_SECS {
        return Err(TempoError::TooShort { secs });
    }
    let onset = onset_strength(track.samples());
    if onset.iter().all(|&x| x == 0.0) {
        return Err(TempoError::SilentTrack);
    }

    let frame_rate = track.sample_rate() as f64 / HOP_LEN as f64;
    let lag_of = |bpm: f64| 60.0 * frame_rate / bpm;
    let min_lag = lag_of(MAX_BPM).ceil().max(2.0) as usize;
    let max_lag = lag_of(MIN_BPM).floor() as usize;
    let acf: Vec<f64> = autocorrelation(&onset, max_lag + 2).into_iter().map(|v| v.max(0.0)).collect();

    // peak mass over a 3-lag neighbourhood absorbs frame-quantization jitter
    let mass = |lag: usize| acf[lag - 1] + acf[lag] + acf[lag + 1];
    let mut best =
        (min_lag..=max_lag).max_by(|&a, &b| mass(a).total_cmp(&mass(b)).then(b.cmp(&a))).expect("non-empty lag band");
    if mass(best) <= 0.0 {
        return Err(TempoError::NoPeriodicity);
    }
    // a comparable peak at half the lag means we locked onto every other beat
    loop {
        let half = (best as f64 / 2.0).round() as usize;
        if half < min_lag || mass(half) < 0.5 * mass(best) {
            break;
        }
        best = half;
    }

    let weights = [acf[best - 1], acf[best], acf[best + 1]];
    let total: f64 = weights.iter().sum();
    let lag = (best - 1) as f64 + (weights[1] + 2.0 * weights[2]) / total;
    Ok((60.0 * frame_rate / lag).clamp(MIN_BPM, MAX_BPM))
}
