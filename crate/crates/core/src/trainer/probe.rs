//! Supervised sanity check: train only the auxiliary head path on true
//! frame labels and measure frame accuracy. If this cannot reach high
//! accuracy, the features or the architecture are broken, not the GAN.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Adam, AdamConfig, ModelConfig};
use crate::autodiff::Tape;
use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};
use crate::evalkit::argmax;
use crate::model::{generator_forward, pool_labels, Bound, GeneratorParams, ParamSet};
use crate::objectives::auxiliary_loss;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// Permute the training labels across all frames first (control run).
    pub shuffle_labels: bool,
    pub model: ModelConfig,
    pub adam: AdamConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 32,
            lr: 1e-3,
            seed: 0,
            shuffle_labels: false,
            model: ModelConfig::default(),
            adam: AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub steps: u64,
    /// Frame accuracy of the auxiliary head on the evaluation set.
    pub accuracy: f64,
    /// Frequency of the most common pooled evaluation label.
    pub majority_rate: f64,
    pub frames: usize,
    pub final_loss: f64,
}

fn check(feats: &[FeatureSequence], labels: &[Vec<usize>], classes: usize) -> Result<()> {
    if feats.len() != labels.len() || feats.is_empty() {
        return Err(Error::Contract(format!("{} feature sequences, {} label sequences", feats.len(), labels.len())));
    }
    for (f, l) in feats.iter().zip(labels) {
        if f.len() != l.len() {
            return Err(Error::Contract(format!("{} frames but {} labels", f.len(), l.len())));
        }
        if let Some(&c) = l.iter().find(|&&c| c >= classes) {
            return Err(Error::Contract(format!("label {c} out of range for {classes} classes")));
        }
    }
    Ok(())
}

/// Trains the generator's first layer and auxiliary head with the
/// auxiliary cross-entropy alone, then scores the head on `eval`.
pub fn supervised_probe(
    cfg: &ProbeConfig,
    train: (&[FeatureSequence], &[Vec<usize>]),
    eval: (&[FeatureSequence], &[Vec<usize>]),
    num_classes: usize,
) -> Result<ProbeReport> {
    check(train.0, train.1, num_classes)?;
    check(eval.0, eval.1, num_classes)?;
    let arch = cfg.model.architecture(train.0[0].dim(), 2, num_classes);
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gen: GeneratorParams<f32> = GeneratorParams::init(&arch, &mut rng);
    let mut opt = Adam::new(&gen);

    let mut labels: Vec<Vec<usize>> = train.1.to_vec();
    if cfg.shuffle_labels {
        let mut flat: Vec<usize> = labels.iter().flatten().copied().collect();
        flat.shuffle(&mut rng);
        let mut it = flat.into_iter();
        for l in &mut labels {
            l.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
    }

    let mut final_loss = f64::NAN;
    for _ in 0..cfg.steps {
        let tape = Tape::new();
        let g = Bound::new(&tape, &gen, true);
        let mut terms = Vec::with_capacity(cfg.batch);
        let mut frames = 0;
        for _ in 0..cfg.batch {
            let i = rng.random_range(0..train.0.len());
            let f = &train.0[i];
            let out = generator_forward(&arch, &g, tape.constant(f.to_array(0, f.len())), None)?;
            let t1 = out.aux_logits.shape()[0];
            frames += t1;
            terms.push(auxiliary_loss(out.aux_logits, &pool_labels(&labels[i], out.geom, t1))?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = total.add(t)?;
        }
        let total = total.scale(1.0 / frames as f32);
        final_loss = total.item() as f64;
        if !final_loss.is_finite() {
            return Err(Error::NonFinite { term: "aux".into(), step: opt.t + 1 });
        }
        let grads = tape.gradient(total, &g.values)?;
        opt.update(gen.arrays_mut(), &grads, cfg.lr, &cfg.adam);
    }

    let (mut correct, mut frames) = (0usize, 0usize);
    let mut hist = vec![0usize; num_classes];
    for (f, l) in eval.0.iter().zip(eval.1) {
        let tape = Tape::new();
        let g = Bound::new(&tape, &gen, false);
        let out = generator_forward(&arch, &g, tape.constant(f.to_array(0, f.len())), None)?;
        let aux = out.aux_logits.value();
        let pooled = pool_labels(l, out.geom, aux.rows());
        for (t, &z) in pooled.iter().enumerate() {
            correct += usize::from(argmax(aux.row(t)) == z);
            hist[z] += 1;
        }
        frames += pooled.len();
    }
    let majority = hist.iter().copied().max().unwrap_or(0);
    Ok(ProbeReport {
        steps: cfg.steps,
        accuracy: correct as f64 / frames as f64,
        majority_rate: majority as f64 / frames as f64,
        frames,
        final_loss,
    })
}
