//! Seeded synthetic corpus with known ground truth.
//!
//! Hidden unit sequences come from a random bigram chain over the inventory
//! (no self transitions, Zipf-shaped unit popularity). Each unit emits a run
//! of frames around its own mean vector. Unpaired text is drawn from the
//! same chain and never repeats an audio transcript.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};
use crate::textproc::{UnitInventory, UnitSequence};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Inventory size including silence.
    pub n_units: usize,
    pub dim: usize,
    pub frame_rate: f32,
    pub min_duration: usize,
    pub max_duration: usize,
    /// Smallest distance between two emission means.
    pub delta_min: f64,
    /// RMS norm of the emission noise vector; defaults to `0.2 * delta_min`.
    pub noise: Option<f64>,
    /// Exponent of the rank-based unit popularity.
    pub zipf_exponent: f64,
    /// Gamma shape of the per-transition weights; smaller is peakier.
    pub transition_shape: f64,
    /// Probability that a non-silence unit is followed by silence.
    pub silence_prob: f64,
    /// Sentences stop at the first silence reached after this many units.
    pub min_sentence_units: usize,
    pub n_train_utts: usize,
    pub n_dev_utts: usize,
    pub n_text_sents: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_units: 12,
            dim: 16,
            frame_rate: 50.0,
            min_duration: 2,
            max_duration: 5,
            delta_min: 1.0,
            noise: None,
            zipf_exponent: 1.0,
            transition_shape: 0.5,
            silence_prob: 0.2,
            min_sentence_units: 8,
            n_train_utts: 2000,
            n_dev_utts: 200,
            n_text_sents: 5000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn noise_rms(&self) -> f64 {
        self.noise.unwrap_or(0.2 * self.delta_min)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.n_units < 2 {
            return bad(format!("need at least 2 units, got {}", self.n_units));
        }
        if self.dim == 0 {
            return bad("feature dimension must be positive".into());
        }
        if self.min_duration == 0 || self.max_duration < self.min_duration {
            return bad(format!("bad duration range [{}, {}]", self.min_duration, self.max_duration));
        }
        if !(self.delta_min > 0.0) || !(self.noise_rms() >= 0.0) {
            return bad("delta_min must be positive and noise nonnegative".into());
        }
        if !(self.silence_prob > 0.0 && self.silence_prob <= 1.0) {
            return bad(format!("silence_prob must lie in (0, 1], got {}", self.silence_prob));
        }
        if !(self.transition_shape > 0.0) || !(self.frame_rate > 0.0) {
            return bad("transition_shape and frame_rate must be positive".into());
        }
        Ok(())
    }
}

/// One synthetic utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub features: FeatureSequence,
    /// Hidden unit sequence, silence included.
    pub transcript: UnitSequence,
    /// Unit id of every frame.
    pub frame_labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub inventory: UnitInventory,
    pub train: Vec<SynthUtterance>,
    pub dev: Vec<SynthUtterance>,
    pub text: Vec<UnitSequence>,
    /// Emission means, `V × D` row-major.
    pub means: Vec<f64>,
    /// Transition matrix, `V × V` row-major; rows sum to 1.
    pub transitions: Vec<f64>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent generator for item `index` of stream `tag`.
fn derived_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ splitmix(tag)) ^ index))
}

/// Gram-Schmidt on Gaussian vectors for as many as the dimension allows,
/// plain Gaussian vectors beyond that, then scaled so the closest pair is
/// exactly `delta_min` apart.
fn emission_means(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (v, d) = (spec.n_units, spec.dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(v);
    while basis.len() < v {
        let mut x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if basis.len() < d {
            for b in &basis {
                let dot: f64 = x.iter().zip(b).map(|(a, c)| a * c).sum();
                x.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
            let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            x.iter_mut().for_each(|a| *a /= norm);
        }
        basis.push(x);
    }
    let mut closest = f64::INFINITY;
    for i in 0..v {
        for j in i + 1..v {
            let dist = basis[i].iter().zip(&basis[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            closest = closest.min(dist);
        }
    }
    let scale = spec.delta_min / closest;
    basis.into_iter().map(|b| b.into_iter().map(|a| a * scale).collect()).collect()
}

/// Row-stochastic matrix with zero diagonal. Column popularity follows a
/// Zipf law over a random ranking; each entry is further scaled by a
/// Gamma draw so that rows differ.
fn bigram(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v = spec.n_units;
    let mut rank: Vec<usize> = (0..v).collect();
    for i in (1..v).rev() {
        rank.swap(i, rng.random_range(0..=i));
    }
    let gamma = Gamma::new(spec.transition_shape, 1.0).expect("positive shape");
    let mut m = vec![0.0; v * v];
    for i in 0..v {
        for j in 0..v {
            if i != j {
                let pop = (1.0 + rank[j] as f64).powf(-spec.zipf_exponent);
                m[i * v + j] = pop * (gamma.sample(rng) + 1e-3);
            }
        }
        let row = &mut m[i * v..(i + 1) * v];
        if i == 0 {
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
        } else {
            let z: f64 = row[1..].iter().sum();
            // with two units the only other successor is silence
            let p_sil = if z > 0.0 { spec.silence_prob } else { 1.0 };
            row[1..].iter_mut().for_each(|x| *x *= (1.0 - p_sil) / z.max(f64::MIN_POSITIVE));
            row[0] = p_sil;
        }
    }
    m
}

fn step(transitions: &[f64], v: usize, from: usize, rng: &mut ChaCha8Rng) -> usize {
    let row = &transitions[from * v..(from + 1) * v];
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if r < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap()
}

/// Runs the chain from silence until silence recurs with at least
/// `min_units` units emitted (both silences counted).
fn sentence(transitions: &[f64], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> UnitSequence {
    let v = spec.n_units;
    let mut s = vec![0];
    loop {
        let next = step(transitions, v, *s.last().unwrap(), rng);
        s.push(next);
        if next == 0 && s.len() >= spec.min_sentence_units {
            return UnitSequence(s);
        }
    }
}

fn render(
    transcript: UnitSequence,
    means: &[Vec<f64>],
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) -> Result<SynthUtterance> {
    let d = spec.dim;
    let per_dim = spec.noise_rms() / (d as f64).sqrt();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for &u in transcript.as_slice() {
        let dur = rng.random_range(spec.min_duration..=spec.max_duration);
        for _ in 0..dur {
            for &m in &means[u] {
                let z: f64 = StandardNormal.sample(rng);
                data.push((m + per_dim * z) as f32);
            }
            labels.push(u);
        }
    }
    Ok(SynthUtterance {
        features: FeatureSequence::new(data, d, spec.frame_rate)?,
        transcript,
        frame_labels: labels,
    })
}

const TAG_MODEL: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_DEV: u64 = 3;
const TAG_TEXT: u64 = 4;

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let v = spec.n_units;
    let mut rng = derived_rng(spec.seed, TAG_MODEL, 0);
    let means = emission_means(spec, &mut rng);
    let transitions = bigram(spec, &mut rng);

    let utterances = |tag: u64, n: usize| -> Result<Vec<SynthUtterance>> {
        (0..n)
            .map(|i| {
                let mut r = derived_rng(spec.seed, tag, i as u64);
                let s = sentence(&transitions, spec, &mut r);
                render(s, &means, spec, &mut r)
            })
            .collect()
    };
    let train = utterances(TAG_TRAIN, spec.n_train_utts)?;
    let dev = utterances(TAG_DEV, spec.n_dev_utts)?;

    let audio: HashSet<&UnitSequence> = train.iter().chain(&dev).map(|u| &u.transcript).collect();
    let mut text = Vec::with_capacity(spec.n_text_sents);
    for i in 0..spec.n_text_sents {
        let mut r = derived_rng(spec.seed, TAG_TEXT, i as u64);
        let mut tries = 0;
        let s = loop {
            let s = sentence(&transitions, spec, &mut r);
            if !audio.contains(&s) {
                break s;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(Error::Contract(
                    "cannot draw text disjoint from the audio transcripts; the chain is too small".into(),
                ));
            }
        };
        text.push(s);
    }

    Ok(SynthCorpus {
        inventory: UnitInventory::numbered(v - 1),
        train,
        dev,
        text,
        means: means.concat(),
        transitions,
    })
}

impl SynthCorpus {
    /// Writes `units.txt`, `text.txt` and, per split, `feats/*.feat`,
    /// `transcripts.txt` and `frame_labels.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.inventory.write(&dir.join("units.txt"))?;
        crate::textproc::write_unit_lines(&dir.join("text.txt"), &self.inventory, &self.text)?;
        for (name, split) in [("train", &self.train), ("dev", &self.dev)] {
            let sub = dir.join(name);
            let feats: Vec<FeatureSequence> = split.iter().map(|u| u.features.clone()).collect();
            crate::dsp::write_feature_dir(&sub.join("feats"), &feats)?;
            let refs: Vec<UnitSequence> = split.iter().map(|u| u.transcript.clone()).collect();
            crate::textproc::write_unit_lines(&sub.join("transcripts.txt"), &self.inventory, &refs)?;
            let labels: Vec<String> = split
                .iter()
                .map(|u| u.frame_labels.iter().map(usize::to_string).collect::<Vec<_>>().join(" "))
                .collect();
            std::fs::write(sub.join("frame_labels.txt"), labels.join("\n") + "\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
