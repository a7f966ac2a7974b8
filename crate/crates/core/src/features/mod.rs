//! Signal-processing frontend: waveform to log-mel, normalization, F0 and
//! Griffin-Lim inversion.
//!
//! Framing is centered with reflect padding: frame `t` is centered on sample
//! `t * hop` and an utterance of `n` samples yields `ceil(n / hop)` frames.

mod f0;
mod mel;
mod stft;
mod vocoder;
mod wav;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use f0::{extract_f0, interpolate_f0, F0Contour, VOICING_THRESHOLD};
pub use mel::{compute_log_mel, mel_filterbank, utterance_mvn, LOG_FLOOR, MVN_VAR_FLOOR};
pub use stft::{hann_window, num_frames, reflect_index, Stft};
pub use vocoder::{invert_mel, GRIFFIN_LIM_ITERS};
pub use wav::{read_wav, resample_linear, write_wav};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
    pub f0_floor: f64,
    pub f0_ceil: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            n_mels: 80,
            frame_shift_ms: 12.5,
            frame_length_ms: 50.0,
            f0_floor: 50.0,
            f0_ceil: 500.0,
        }
    }
}

impl FeatureConfig {
    pub fn hop_length(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    pub fn win_length(&self) -> usize {
        (self.sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn n_fft(&self) -> usize {
        self.win_length().next_power_of_two()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be positive".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be at least 1".into()));
        }
        if self.hop_length() == 0 {
            return Err(Error::InvalidConfig("frame shift rounds to zero samples".into()));
        }
        if self.frame_length_ms < self.frame_shift_ms {
            return Err(Error::InvalidConfig(
                "frame length must not be shorter than frame shift".into(),
            ));
        }
        if !(self.f0_floor > 0.0 && self.f0_ceil > self.f0_floor) {
            return Err(Error::InvalidConfig("need 0 < f0_floor < f0_ceil".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioWaveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioWaveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Rejects empty or non-finite audio.
    pub fn check(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if self.samples.is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(())
    }
}

/// `T × n_mels` log-mel energies.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array2<f64>,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
}

impl MelSpectrogram {
    pub fn new(frames: Array2<f64>, cfg: &FeatureConfig) -> Self {
        Self {
            frames,
            frame_shift_ms: cfg.frame_shift_ms,
            frame_length_ms: cfg.frame_length_ms,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.ncols()
    }
}
