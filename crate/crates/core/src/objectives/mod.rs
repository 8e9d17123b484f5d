//! Adversarial losses, the three generator regularizers, the gradient
//! penalty, and their weighted composition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Value};
use crate::dsp::FeatureSequence;
use crate::error::{Error, Result};
use crate::model::{discriminator_score, generator_forward, merge_plan, pool_labels, Architecture, Bound};
use crate::quantizer::PseudoLabelSequence;
use crate::textproc::UnitSequence;

mod suite;

pub use suite::gradient_suite;

const PROB_EPS: f64 = 1e-7;
const LOG_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_gp: f64,
    pub gamma_sp: f64,
    pub eta_pd: f64,
    pub delta_ss: f64,
}

impl LossWeights {
    pub const PRESET_A: Self = Self { lambda_gp: 1.0, gamma_sp: 1.5, eta_pd: 0.0, delta_ss: 0.3 };
    pub const PRESET_B: Self = Self { lambda_gp: 1.5, gamma_sp: 2.5, eta_pd: 3.0, delta_ss: 0.5 };
    pub const ZERO: Self = Self { lambda_gp: 0.0, gamma_sp: 0.0, eta_pd: 0.0, delta_ss: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_gp, self.gamma_sp, self.eta_pd, self.delta_ss];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Contract(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::PRESET_B
    }
}

/// How the diversity term summarizes an utterance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversityMode {
    /// Entropy of the frame-averaged distribution.
    #[default]
    AveragedDistribution,
    /// Average of the per-frame entropies.
    FrameEntropy,
}

/// Non-saturating losses from discriminator probabilities, clamped to
/// `[1e-7, 1 - 1e-7]`: `(−ln r − ln(1 − f), −ln f)`.
pub fn gan_losses(disc_real: f64, disc_fake: f64) -> (f64, f64) {
    let r = disc_real.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let f = disc_fake.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (-r.ln() - (1.0 - f).ln(), -f.ln())
}

/// The same losses from pre-sigmoid scores, using `ln σ(x)` directly:
/// `(−ln σ(r) − ln σ(−f), −ln σ(f))`.
pub fn gan_losses_from_scores<'t, T: Real>(
    real_score: Value<'t, T>,
    fake_score: Value<'t, T>,
) -> Result<(Value<'t, T>, Value<'t, T>)> {
    let d = real_score.log_sigmoid().add(fake_score.neg().log_sigmoid())?.neg();
    let g = fake_score.log_sigmoid().neg();
    Ok((d, g))
}

/// `(‖∇ₓ critic(x̂)‖ − 1)²` at `x̂ = α·fake + (1 − α)·real`, both truncated to
/// the shorter length. Returns `None` when that length is zero.
///
/// The input gradient is recorded on the tape, so the result can be
/// differentiated with respect to the critic's parameters.
pub fn gradient_penalty<'t, T: Real>(
    critic: impl Fn(Value<'t, T>) -> Result<Value<'t, T>>,
    real: Value<'t, T>,
    fake: Value<'t, T>,
    alpha: T,
) -> Result<Option<Value<'t, T>>> {
    let m = real.shape()[0].min(fake.shape()[0]);
    if m == 0 {
        log::warn!("gradient penalty skipped: empty sequence after truncation");
        return Ok(None);
    }
    let mix = fake
        .slice(0, 0, m)?
        .scale(alpha)
        .add(real.slice(0, 0, m)?.scale(T::one() - alpha))?;
    let score = critic(mix)?;
    let grad = real.tape().input_gradient_graph(score, mix)?;
    let norm = grad.squared_norm().shift(T::lit(1e-12)).sqrt();
    Ok(Some(norm.shift(-T::one()).square()?))
}

/// `Σ_t ‖p_t − p_{t+1}‖²` over consecutive rows; zero for fewer than two.
pub fn smoothness_penalty<'t, T: Real>(logits: Value<'t, T>) -> Result<Value<'t, T>> {
    let n = logits.shape()[0];
    if n < 2 {
        return Ok(logits.tape().scalar(T::zero()));
    }
    let diff = logits.slice(0, 0, n - 1)?.sub(logits.slice(0, 1, n)?)?;
    Ok(diff.squared_norm())
}

fn neg_entropy<'t, T: Real>(p: Value<'t, T>, axis_sum: bool) -> Result<Value<'t, T>> {
    let plogp = p.mul(p.log(T::lit(LOG_FLOOR)))?;
    if axis_sum {
        plogp.sum_axis(1)
    } else {
        Ok(plogp.sum())
    }
}

/// Mean over utterances of the negative entropy (nats) of each utterance's
/// `[T, V]` unit distributions, summarized per `mode`.
pub fn diversity_loss<'t, T: Real>(dists: &[Value<'t, T>], mode: DiversityMode) -> Result<Value<'t, T>> {
    if dists.is_empty() {
        return Err(Error::Contract("diversity loss of an empty batch".into()));
    }
    let mut total: Option<Value<'t, T>> = None;
    for &p in dists {
        let term = match mode {
            DiversityMode::AveragedDistribution => neg_entropy(p.mean_axis(0)?, false)?,
            DiversityMode::FrameEntropy => neg_entropy(p, true)?.mean()?,
        };
        total = Some(match total {
            None => term,
            Some(t) => t.add(term)?,
        });
    }
    let n = T::from_usize(dists.len()).unwrap();
    Ok(total.unwrap().scale(n.recip()))
}

/// `−Σ_t ln softmax(aux_t)[z_t]` for labels already pooled to the aux rate.
pub fn auxiliary_loss<'t, T: Real>(aux_logits: Value<'t, T>, labels: &[usize]) -> Result<Value<'t, T>> {
    let shape = aux_logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Contract(format!(
            "{} pooled labels for auxiliary logits of shape {shape:?}",
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::Contract(format!("pseudo label {l} out of range for {} classes", shape[1])));
    }
    let target = aux_logits.tape().one_hot(labels, shape[1])?;
    Ok(aux_logits.log_softmax().mul(target)?.sum().neg())
}

/// Audio with pseudo-labels, and unpaired text.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub audio: &'a [&'a FeatureSequence],
    pub pseudo: &'a [&'a PseudoLabelSequence],
    pub text: &'a [&'a UnitSequence],
}

impl Batch<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.audio.is_empty() || self.text.is_empty() {
            return Err(Error::Contract("batch needs audio and text".into()));
        }
        if self.audio.len() != self.pseudo.len() {
            return Err(Error::Contract(format!(
                "{} audio sequences but {} pseudo-label sequences",
                self.audio.len(),
                self.pseudo.len()
            )));
        }
        if let Some((a, p)) = self.audio.iter().zip(self.pseudo).find(|(a, p)| a.len() != p.labels.len()) {
            return Err(Error::Contract(format!(
                "{} feature frames but {} pseudo-labels",
                a.len(),
                p.labels.len()
            )));
        }
        Ok(())
    }
}

/// Which side's loss is needed; the other side's exclusive terms are skipped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Discriminator,
    Generator,
    Both,
}

/// How the per-utterance smoothness and auxiliary sums are scaled before
/// batch averaging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScale {
    /// Plain sums over frames; long utterances weigh more.
    Sum,
    /// Smoothness divided by its element count `(T'−1)·V`, auxiliary
    /// cross-entropy by its frame count.
    #[default]
    ElementMean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOptions {
    pub diversity: DiversityMode,
    pub penalty_scale: PenaltyScale,
}

/// All scalar terms of one batch. Skipped terms are zero constants.
pub struct LossTerms<'t, T: Real> {
    pub l_d: Value<'t, T>,
    pub l_g: Value<'t, T>,
    pub gan_d: Value<'t, T>,
    pub gan_g: Value<'t, T>,
    pub gp: Value<'t, T>,
    pub sp: Value<'t, T>,
    pub pd: Value<'t, T>,
    pub ss: Value<'t, T>,
}

fn mean_of<'t, T: Real>(tape: &'t Tape<T>, terms: &[Value<'t, T>]) -> Result<Value<'t, T>> {
    if terms.is_empty() {
        return Ok(tape.scalar(T::zero()));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.scale(T::from_usize(terms.len()).unwrap().recip()))
}

/// `L_D = gan_d + λ·gp`, `L_G = gan_g + γ·sp + η·pd + δ·ss`.
///
/// Generator outputs are merged by random selection (one draw per run, in
/// utterance order) before the discriminator sees them; one mixing weight
/// α per real/fake pair is drawn afterwards. Smoothness uses the unmerged
/// logits. Per-utterance terms are averaged over the batch.
#[allow(clippy::too_many_arguments)]
pub fn total_losses<'t, T: Real>(
    tape: &'t Tape<T>,
    arch: &Architecture,
    gen: &Bound<'t, T>,
    disc: &Bound<'t, T>,
    batch: &Batch<'_>,
    w: &LossWeights,
    opts: &LossOptions,
    phase: Phase,
    rng: &mut impl Rng,
) -> Result<LossTerms<'t, T>> {
    batch.validate()?;
    w.validate()?;
    let need_d = phase != Phase::Generator;
    let need_g = phase != Phase::Discriminator;
    let zero = tape.scalar(T::zero());

    let mut fakes = Vec::with_capacity(batch.audio.len());
    let mut sps = Vec::new();
    let mut sss = Vec::new();
    for (feats, pseudo) in batch.audio.iter().zip(batch.pseudo) {
        let x = tape.constant(feats.to_array(0, feats.len()));
        let out = generator_forward(arch, gen, x, None)?;
        let plan = merge_plan(&out.logits.value(), rng);
        fakes.push(out.logits.gather_rows(&plan.selected)?.softmax());
        if need_g {
            let mean = opts.penalty_scale == PenaltyScale::ElementMean;
            if w.gamma_sp > 0.0 {
                let n = (out.logits.shape()[0].saturating_sub(1) * arch.num_units).max(1);
                let sp = smoothness_penalty(out.logits)?;
                sps.push(if mean { sp.scale(T::from_usize(n).unwrap().recip()) } else { sp });
            }
            if w.delta_ss > 0.0 {
                let t1 = out.aux_logits.shape()[0];
                let labels = pool_labels(&pseudo.labels, out.geom, t1);
                let ss = auxiliary_loss(out.aux_logits, &labels)?;
                sss.push(if mean { ss.scale(T::from_usize(t1).unwrap().recip()) } else { ss });
            }
        }
    }
    let reals = batch
        .text
        .iter()
        .map(|s| tape.one_hot(s.as_slice(), arch.num_units))
        .collect::<Result<Vec<_>>>()?;

    let fake_scores = fakes
        .iter()
        .map(|&f| discriminator_score(arch, disc, f))
        .collect::<Result<Vec<_>>>()?;
    let (mut gan_d, mut gan_g, mut gp) = (zero, zero, zero);
    if need_d {
        let mut real_terms = Vec::with_capacity(reals.len());
        for &r in &reals {
            real_terms.push(discriminator_score(arch, disc, r)?.log_sigmoid().neg());
        }
        let fake_terms: Vec<_> = fake_scores.iter().map(|s| s.neg().log_sigmoid().neg()).collect();
        gan_d = mean_of(tape, &real_terms)?.add(mean_of(tape, &fake_terms)?)?;
        if w.lambda_gp > 0.0 {
            let mut gps = Vec::new();
            for (&r, &f) in reals.iter().zip(&fakes) {
                let alpha = T::lit(rng.random::<f64>());
                if let Some(p) = gradient_penalty(|x| discriminator_score(arch, disc, x), r, f, alpha)? {
                    gps.push(p);
                }
            }
            gp = mean_of(tape, &gps)?;
        }
    }
    let (mut sp, mut pd, mut ss) = (zero, zero, zero);
    if need_g {
        let g_terms: Vec<_> = fake_scores.iter().map(|s| s.log_sigmoid().neg()).collect();
        gan_g = mean_of(tape, &g_terms)?;
        sp = mean_of(tape, &sps)?;
        ss = mean_of(tape, &sss)?;
        if w.eta_pd > 0.0 {
            pd = diversity_loss(&fakes, opts.diversity)?;
        }
    }
    let l_d = gan_d.add(gp.scale(T::lit(w.lambda_gp)))?;
    let l_g = gan_g
        .add(sp.scale(T::lit(w.gamma_sp)))?
        .add(pd.scale(T::lit(w.eta_pd)))?
        .add(ss.scale(T::lit(w.delta_ss)))?;
    Ok(LossTerms { l_d, l_g, gan_d, gan_g, gp, sp, pd, ss })
}

/// One JSON line of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    #[serde(rename = "L_G")]
    pub l_g: f64,
    pub gan_g: f64,
    pub gan_d: f64,
    pub gp: f64,
    pub sp: f64,
    pub pd: f64,
    pub ss: f64,
}

impl LossRecord {
    pub fn from_terms<T: Real>(step: u64, t: &LossTerms<'_, T>) -> Self {
        let f = |v: &Value<'_, T>| v.item().as_f64();
        Self {
            step,
            l_d: f(&t.l_d),
            l_g: f(&t.l_g),
            gan_g: f(&t.gan_g),
            gan_d: f(&t.gan_d),
            gp: f(&t.gp),
            sp: f(&t.sp),
            pd: f(&t.pd),
            ss: f(&t.ss),
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("L_D", self.l_d),
            ("L_G", self.l_g),
            ("gan_g", self.gan_g),
            ("gan_d", self.gan_d),
            ("gp", self.gp),
            ("sp", self.sp),
            ("pd", self.pd),
            ("ss", self.ss),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}
