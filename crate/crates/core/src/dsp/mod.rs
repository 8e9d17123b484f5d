//! Audio input, energy-based silence removal and MFCC features.

mod features;
mod mfcc;
mod wav;

use crate::error::{Error, Result};

pub use features::{read_feature_dir, write_feature_dir, FeatureSequence};
pub use mfcc::{mfcc, MfccConfig};
pub use wav::{read_wav, write_wav};

/// Mono samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Contract(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Keeps the non-overlapping `frame_ms` frames whose RMS exceeds the loudest
/// frame's RMS scaled by `threshold_db` (e.g. -40), in their original order.
/// A trailing partial frame is judged on its own samples.
pub fn remove_silence(signal: &AudioSignal, frame_ms: f64, threshold_db: f64) -> Result<AudioSignal> {
    if !(frame_ms > 0.0) {
        return Err(Error::Contract(format!("frame_ms must be positive, got {frame_ms}")));
    }
    let n = ms_to_samples(frame_ms, signal.sample_rate).max(1);
    let rms: Vec<f64> = signal
        .samples
        .chunks(n)
        .map(|c| (c.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / c.len() as f64).sqrt())
        .collect();
    let peak = rms.iter().copied().fold(0.0, f64::max);
    let floor = peak * 10f64.powf(threshold_db / 20.0);
    let samples = signal
        .samples
        .chunks(n)
        .zip(&rms)
        .filter(|(_, &r)| r > floor)
        .flat_map(|(c, _)| c.iter().copied())
        .collect();
    Ok(AudioSignal { samples, sample_rate: signal.sample_rate })
}
