//! Alternating adversarial optimization, checkpoints, and model selection.

mod probe;
mod state;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape};
use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};
use crate::evalkit::{greedy_decode, per, PerReport};
use crate::model::{generator_forward, Architecture, Bound, GeneratorParams, Padding, ParamSet};
use crate::objectives::{total_losses, Batch, LossOptions, LossRecord, LossWeights, Phase};
use crate::quantizer::PseudoLabelSequence;
use crate::textproc::{NgramLm, UnitInventory, UnitSequence};

pub use probe::{supervised_probe, ProbeConfig, ProbeReport};
pub use state::{Adam, ModelState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.5, beta2: 0.98, eps: 1e-8 }
    }
}

/// Architecture constants that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub gen_kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub disc_kernel: usize,
    pub disc_hidden: usize,
    pub bn_scale_init: f64,
    pub init_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::desk(1, 2, 1);
        Self {
            hidden: a.hidden,
            gen_kernel: a.gen_kernel,
            stride: a.stride,
            padding: a.padding,
            disc_kernel: a.disc_kernel,
            disc_hidden: a.disc_hidden,
            bn_scale_init: a.bn_scale_init,
            init_gain: a.init_gain,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, feature_dim: usize, num_units: usize, aux_classes: usize) -> Architecture {
        Architecture {
            feature_dim,
            num_units,
            aux_classes,
            hidden: self.hidden,
            gen_kernel: self.gen_kernel,
            stride: self.stride,
            padding: self.padding,
            disc_kernel: self.disc_kernel,
            disc_hidden: self.disc_hidden,
            bn_scale_init: self.bn_scale_init,
            init_gain: self.init_gain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub batch_audio: usize,
    pub batch_text: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Checkpoint period in steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
    /// Dev evaluation period in steps; 0 evaluates only at the end.
    pub eval_every: u64,
    pub adam: AdamConfig,
    pub loss: LossOptions,
    pub model: ModelConfig,
    /// Stride used when decoding; the training stride when absent.
    pub decode_stride: Option<usize>,
    pub strip_silence: bool,
    /// Weight μ of the usage-entropy bonus in the selection metric.
    pub selection_mu: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            lr_generator: 5e-5,
            lr_discriminator: 3e-4,
            batch_audio: 160,
            batch_text: 160,
            weights: LossWeights::PRESET_B,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            adam: AdamConfig::default(),
            loss: LossOptions::default(),
            model: ModelConfig { hidden: 512, disc_hidden: 384, ..ModelConfig::default() },
            decode_stride: Some(2),
            strip_silence: true,
            selection_mu: 1.0,
        }
    }
}

impl TrainConfig {
    /// CPU-sized preset: 5000 steps, batches of 32, narrow layers. Both
    /// learning rates are scaled by 20 to match the 20x shorter schedule,
    /// keeping their 1:6 ratio.
    pub fn desk() -> Self {
        Self {
            total_steps: 5000,
            lr_generator: 1e-3,
            lr_discriminator: 6e-3,
            batch_audio: 32,
            batch_text: 32,
            model: ModelConfig::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_generator > 0.0 && self.lr_discriminator > 0.0) {
            return Err(Error::Contract("learning rates must be positive".into()));
        }
        if self.batch_audio == 0 || self.batch_text == 0 {
            return Err(Error::Contract("batch sizes must be at least 1".into()));
        }
        self.weights.validate()
    }
}

/// Training corpus: audio with aligned pseudo-labels, and unpaired text.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub audio: Vec<FeatureSequence>,
    pub pseudo: Vec<PseudoLabelSequence>,
    pub text: Vec<UnitSequence>,
    pub inventory: UnitInventory,
}

impl TrainData {
    pub fn validate(&self) -> Result<()> {
        if self.audio.is_empty() || self.text.is_empty() {
            return Err(Error::Contract("training needs audio and text".into()));
        }
        if self.audio.len() != self.pseudo.len() {
            return Err(Error::Contract(format!(
                "{} audio sequences but {} pseudo-label sequences",
                self.audio.len(),
                self.pseudo.len()
            )));
        }
        let d = self.audio[0].dim();
        if self.audio.iter().any(|a| a.dim() != d) {
            return Err(Error::Contract("audio feature dimensions differ".into()));
        }
        if let Some(s) = self.text.iter().find(|s| s.is_empty()) {
            return Err(Error::Contract(format!("empty text sequence {s:?}")));
        }
        self.text.iter().try_for_each(|s| self.inventory.check(s))
    }

    pub fn aux_classes(&self) -> usize {
        self.pseudo.iter().map(|p| p.num_classes).max().unwrap_or(1)
    }

    pub fn architecture(&self, cfg: &TrainConfig) -> Architecture {
        cfg.model.architecture(self.audio[0].dim(), self.inventory.len(), self.aux_classes())
    }
}

/// Held-out audio with reference transcripts.
#[derive(Clone, Debug)]
pub struct DevData {
    pub audio: Vec<FeatureSequence>,
    pub refs: Vec<UnitSequence>,
}

/// `[T', V]` unit logits of one utterance.
pub fn generator_logits<T: Real>(
    arch: &Architecture,
    gen: &GeneratorParams<T>,
    features: &FeatureSequence,
    stride: Option<usize>,
) -> Result<crate::autodiff::Array<T>> {
    let tape = Tape::new();
    let g = Bound::new(&tape, gen, false);
    let x = tape.constant(features.to_array::<T>(0, features.len()));
    Ok(generator_forward(arch, &g, x, stride)?.logits.value())
}

/// Greedy transcripts of `audio`, decoded in parallel and returned in order.
pub fn decode_corpus<T: Real>(
    arch: &Architecture,
    gen: &GeneratorParams<T>,
    audio: &[FeatureSequence],
    stride: Option<usize>,
    inventory: &UnitInventory,
    strip_silence: bool,
) -> Result<Vec<UnitSequence>> {
    audio
        .par_iter()
        .map(|f| greedy_decode(&generator_logits(arch, gen, f, stride)?, inventory, strip_silence))
        .collect()
}

/// Unit error rate of greedy transcripts against `refs`, silence removed
/// from both sides when `strip_silence` is set.
pub fn dev_per<T: Real>(
    arch: &Architecture,
    gen: &GeneratorParams<T>,
    dev: &DevData,
    stride: Option<usize>,
    inventory: &UnitInventory,
    strip_silence: bool,
) -> Result<PerReport> {
    let hyps = decode_corpus(arch, gen, &dev.audio, stride, inventory, strip_silence)?;
    let refs: Vec<UnitSequence> = if strip_silence {
        dev.refs.iter().map(|r| r.without(inventory.silence())).collect()
    } else {
        dev.refs.clone()
    };
    per(&refs, &hyps)
}

/// Components of the unsupervised selection score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub score: f64,
    pub lm_nll: f64,
    pub usage_entropy: f64,
}

/// `NLL − μ·H`: mean per-token LM negative log-likelihood of the decoded
/// transcripts minus μ times the entropy (nats) of their unit-usage
/// histogram. Silence is kept, as the LM models it. Lower is better; a
/// model that decodes nothing scores `+∞`.
pub fn selection_score(transcripts: &[UnitSequence], lm: &NgramLm, mu: f64) -> Result<SelectionScore> {
    let v = lm.inventory().len();
    let mut counts = vec![0usize; v];
    let mut log_prob = 0.0;
    let mut tokens = 0usize;
    for s in transcripts.iter().filter(|s| !s.is_empty()) {
        log_prob += lm.log_prob(s)?;
        tokens += s.len();
        s.as_slice().iter().for_each(|&u| counts[u] += 1);
    }
    if tokens == 0 {
        return Ok(SelectionScore { score: f64::INFINITY, lm_nll: f64::INFINITY, usage_entropy: 0.0 });
    }
    let n = tokens as f64;
    let usage_entropy = -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| (c as f64 / n) * (c as f64 / n).ln())
        .sum::<f64>();
    let lm_nll = -log_prob / n;
    Ok(SelectionScore { score: lm_nll - mu * usage_entropy, lm_nll, usage_entropy })
}

/// Decodes `dev_audio` greedily (silence kept) and scores it with [`selection_score`].
pub fn selection_metric<T: Real>(
    arch: &Architecture,
    gen: &GeneratorParams<T>,
    dev_audio: &[FeatureSequence],
    lm: &NgramLm,
    mu: f64,
    stride: Option<usize>,
) -> Result<SelectionScore> {
    let hyps = decode_corpus(arch, gen, dev_audio, stride, lm.inventory(), false)?;
    selection_score(&hyps, lm, mu)
}

/// One line of `eval.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub per: Option<f64>,
    pub selection: Option<SelectionScore>,
    pub checkpoint: Option<String>,
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub state: ModelState<f32>,
    pub arch: Architecture,
    pub losses: Vec<LossRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Draws the next audio batch (without replacement within an epoch) and
/// a text batch (uniformly with replacement).
fn sample_batch<T: Real>(state: &mut ModelState<T>, cfg: &TrainConfig, data: &TrainData) -> (Vec<usize>, Vec<usize>) {
    let n = data.audio.len();
    let mut audio = Vec::with_capacity(cfg.batch_audio);
    while audio.len() < cfg.batch_audio.min(n) {
        if state.cursor >= state.order.len() {
            state.order = (0..n).collect();
            state.order.shuffle(&mut state.rng);
            state.cursor = 0;
        }
        audio.push(state.order[state.cursor]);
        state.cursor += 1;
    }
    let text = (0..cfg.batch_text).map(|_| state.rng.random_range(0..data.text.len())).collect();
    (audio, text)
}

/// Runs one update. Odd steps (counting from 1) update the discriminator,
/// even steps the generator.
pub fn train_step<T: Real>(
    state: &mut ModelState<T>,
    arch: &Architecture,
    cfg: &TrainConfig,
    data: &TrainData,
) -> Result<LossRecord> {
    let step = state.step + 1;
    let phase = if step % 2 == 1 { Phase::Discriminator } else { Phase::Generator };
    let (ai, ti) = sample_batch(state, cfg, data);
    let audio: Vec<&FeatureSequence> = ai.iter().map(|&i| &data.audio[i]).collect();
    let pseudo: Vec<&PseudoLabelSequence> = ai.iter().map(|&i| &data.pseudo[i]).collect();
    let text: Vec<&UnitSequence> = ti.iter().map(|&i| &data.text[i]).collect();
    let batch = Batch { audio: &audio, pseudo: &pseudo, text: &text };

    let tape = Tape::new();
    let train_gen = phase == Phase::Generator;
    let g = Bound::new(&tape, &state.gen, train_gen);
    let d = Bound::new(&tape, &state.disc, !train_gen);
    let terms = total_losses(&tape, arch, &g, &d, &batch, &cfg.weights, &cfg.loss, phase, &mut state.rng)?;
    let record = LossRecord::from_terms(step, &terms);
    if let Some(term) = record.non_finite() {
        return Err(Error::NonFinite { term: term.to_string(), step });
    }
    if train_gen {
        let grads = tape.gradient(terms.l_g, &g.values)?;
        state.gen_opt.update(state.gen.arrays_mut(), &grads, cfg.lr_generator, &cfg.adam);
    } else {
        let grads = tape.gradient(terms.l_d, &d.values)?;
        state.disc_opt.update(state.disc.arrays_mut(), &grads, cfg.lr_discriminator, &cfg.adam);
    }
    state.step = step;
    Ok(record)
}

fn append_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

/// Trains from a fresh seeded state (or `resume`) up to `cfg.total_steps`.
///
/// With `out_dir`, every loss record is appended to `losses.jsonl`,
/// evaluations to `eval.jsonl`, and checkpoints are written as
/// `step_XXXXXXX.ckpt` plus `final.ckpt`.
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    dev: Option<&DevData>,
    lm: Option<&NgramLm>,
    out_dir: Option<&Path>,
    resume: Option<ModelState<f32>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.validate()?;
    let arch = data.architecture(cfg);
    arch.validate()?;
    let mut state = match resume {
        Some(s) => s,
        None => ModelState::init(&arch, cfg.seed),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut losses = Vec::new();
    let mut evals = Vec::new();
    let decode_stride = cfg.decode_stride;
    while state.step < cfg.total_steps {
        let record = train_step(&mut state, &arch, cfg, data)?;
        if let Some(dir) = out_dir {
            append_json(&dir.join("losses.jsonl"), &record)?;
        }
        losses.push(record);
        let s = state.step;
        let last = s == cfg.total_steps;
        let ckpt = out_dir.filter(|_| last || (cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0));
        let eval = last || (cfg.eval_every > 0 && s % cfg.eval_every == 0);
        let mut ckpt_name = None;
        if let Some(dir) = ckpt {
            let name = if last { "final.ckpt".to_string() } else { format!("step_{s:07}.ckpt") };
            state.to_checkpoint(&arch, cfg).write(&dir.join(&name))?;
            ckpt_name = Some(name);
        }
        if eval && (dev.is_some() || lm.is_some()) {
            let per = dev
                .map(|d| dev_per(&arch, &state.gen, d, decode_stride, &data.inventory, cfg.strip_silence))
                .transpose()?
                .map(|r| r.per);
            let selection = match (lm, dev) {
                (Some(lm), Some(d)) => Some(selection_metric(&arch, &state.gen, &d.audio, lm, cfg.selection_mu, decode_stride)?),
                _ => None,
            };
            let rec = EvalRecord { step: s, per, selection, checkpoint: ckpt_name };
            log::info!("step {s}: {}", serde_json::to_string(&rec)?);
            if let Some(dir) = out_dir {
                append_json(&dir.join("eval.jsonl"), &rec)?;
            }
            evals.push(rec);
        }
    }
    Ok(TrainOutcome { state, arch, losses, evals })
}

#[cfg(test)]
mod tests;
