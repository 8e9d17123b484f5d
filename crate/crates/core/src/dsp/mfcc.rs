use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{ms_to_samples, AudioSignal, FeatureSequence};
use crate::error::{Error, Result};

const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub pre_emphasis: f64,
    /// Appends first and second differences, tripling the dimension.
    pub add_deltas: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self { window_ms: 25.0, hop_ms: 10.0, n_mels: 26, n_ceps: 13, pre_emphasis: 0.97, add_deltas: true }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ceps == 0 || self.n_ceps > self.n_mels {
            return Err(Error::Contract(format!(
                "need 0 < n_ceps <= n_mels, got {} and {}",
                self.n_ceps, self.n_mels
            )));
        }
        if !(self.hop_ms > 0.0 && self.window_ms >= self.hop_ms) {
            return Err(Error::Contract(format!(
                "need 0 < hop_ms <= window_ms, got {} and {}",
                self.hop_ms, self.window_ms
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        if self.add_deltas {
            3 * self.n_ceps
        } else {
            self.n_ceps
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters spaced evenly on the mel scale from 0 to Nyquist,
/// evaluated at the FFT bin frequencies.
fn mel_filters(n_mels: usize, n_fft: usize, rate: f64) -> Vec<Vec<f64>> {
    let top = hz_to_mel(rate / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=n_fft / 2)
                .map(|k| {
                    let f = k as f64 * rate / n_fft as f64;
                    ((f - lo) / (mid - lo)).min((hi - f) / (hi - mid)).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Regression deltas over ±2 frames with edge frames repeated.
fn deltas(c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t_max = c.len() as isize - 1;
    let at = |t: isize| &c[t.clamp(0, t_max) as usize];
    (0..c.len() as isize)
        .map(|t| {
            (0..c[0].len())
                .map(|j| {
                    let mut s = 0.0;
                    for n in 1..=2isize {
                        s += n as f64 * (at(t + n)[j] - at(t - n)[j]);
                    }
                    s / 10.0
                })
                .collect()
        })
        .collect()
}

/// Pre-emphasis, Hann-windowed magnitude spectrum, mel filterbank, natural
/// log with a 1e-10 floor, orthonormal DCT-II, then optional Δ and ΔΔ.
///
/// Frames are `floor((L - N) / hop) + 1`; a signal shorter than one window
/// yields an empty sequence.
pub fn mfcc(signal: &AudioSignal, cfg: &MfccConfig) -> Result<FeatureSequence> {
    cfg.validate()?;
    let rate = signal.sample_rate();
    let n = ms_to_samples(cfg.window_ms, rate).max(1);
    let hop = ms_to_samples(cfg.hop_ms, rate).max(1);
    let frame_rate = (1000.0 / cfg.hop_ms) as f32;
    let x = signal.samples();
    if x.len() < n {
        return FeatureSequence::empty(cfg.dim(), frame_rate);
    }
    let n_frames = (x.len() - n) / hop + 1;

    let emph: Vec<f64> = (0..x.len())
        .map(|i| {
            let prev = if i == 0 { 0.0 } else { x[i - 1] as f64 };
            x[i] as f64 - cfg.pre_emphasis * prev
        })
        .collect();
    let window: Vec<f64> = (0..n)
        .map(|i| if n == 1 { 1.0 } else { 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos() })
        .collect();
    let n_fft = n.next_power_of_two();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let filters = mel_filters(cfg.n_mels, n_fft, rate as f64);
    let m = cfg.n_mels as f64;
    let dct: Vec<Vec<f64>> = (0..cfg.n_ceps)
        .map(|k| {
            let s = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            (0..cfg.n_mels)
                .map(|j| s * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                .collect()
        })
        .collect();

    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut ceps = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let frame = &emph[t * hop..t * hop + n];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < n { frame[i] * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..=n_fft / 2].iter().map(|c| c.norm()).collect();
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|f| f.iter().zip(&mag).map(|(w, a)| w * a).sum::<f64>().max(LOG_FLOOR).ln())
            .collect();
        ceps.push(
            dct.iter()
                .map(|row| row.iter().zip(&log_mel).map(|(a, b)| a * b).sum())
                .collect::<Vec<f64>>(),
        );
    }

    let rows: Vec<Vec<f64>> = if cfg.add_deltas {
        let d1 = deltas(&ceps);
        let d2 = deltas(&d1);
        ceps.iter()
            .zip(&d1)
            .zip(&d2)
            .map(|((c, a), b)| c.iter().chain(a).chain(b).copied().collect())
            .collect()
    } else {
        ceps
    };
    FeatureSequence::new(rows.into_iter().flatten().map(|v| v as f32).collect(), cfg.dim(), frame_rate)
}
