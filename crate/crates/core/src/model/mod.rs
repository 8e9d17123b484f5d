//! Convolutional generator and discriminator, and merging of repeated
//! generator outputs.

mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Array, ConvGeom, Real, Tape, Value};
use crate::error::{Error, Result};
use crate::evalkit::argmax;

pub use checkpoint::Checkpoint;

/// Padding of the generator's first (strided) convolution. The second
/// generator layer and both discriminator layers always pad to keep length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub feature_dim: usize,
    pub num_units: usize,
    pub aux_classes: usize,
    pub hidden: usize,
    pub gen_kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub disc_kernel: usize,
    pub disc_hidden: usize,
    pub bn_scale_init: f64,
    /// Multiplies the default `1/sqrt(fan_in)` weight standard deviation.
    pub init_gain: f64,
}

impl Architecture {
    /// Reduced widths for CPU-sized experiments.
    pub fn desk(feature_dim: usize, num_units: usize, aux_classes: usize) -> Self {
        Self {
            feature_dim,
            num_units,
            aux_classes,
            hidden: 64,
            gen_kernel: 4,
            stride: 3,
            padding: Padding::Same,
            disc_kernel: 8,
            disc_hidden: 48,
            bn_scale_init: 30.0,
            init_gain: 1.0,
        }
    }

    /// Full-width layers (hidden 512, discriminator 384).
    pub fn full(feature_dim: usize, num_units: usize, aux_classes: usize) -> Self {
        Self { hidden: 512, disc_hidden: 384, ..Self::desk(feature_dim, num_units, aux_classes) }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("aux_classes", self.aux_classes),
            ("hidden", self.hidden),
            ("gen_kernel", self.gen_kernel),
            ("stride", self.stride),
            ("disc_kernel", self.disc_kernel),
            ("disc_hidden", self.disc_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Contract(format!("{name} must be positive")));
        }
        if self.num_units < 2 {
            return Err(Error::Contract("need at least 2 output units (silence included)".into()));
        }
        Ok(())
    }

    pub fn conv1_geom(&self, stride: usize) -> ConvGeom {
        match self.padding {
            Padding::Same => ConvGeom::same(self.gen_kernel, stride),
            Padding::Valid => ConvGeom::valid(self.gen_kernel, stride),
        }
    }

    pub fn conv2_geom(&self) -> ConvGeom {
        ConvGeom::same(self.gen_kernel, 1)
    }

    pub fn disc_geom(&self) -> ConvGeom {
        ConvGeom::same(self.disc_kernel, 1)
    }

    /// Generator output frames for `t_in` input frames, if any.
    pub fn output_len(&self, t_in: usize, stride: usize) -> Option<usize> {
        self.conv1_geom(stride).out_len(t_in).filter(|&n| n > 0)
    }
}

fn gaussian<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Array<T> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    Array::from_vec(shape, (0..n).map(|_| T::lit(dist.sample(rng))).collect()).expect("shape")
}

/// Named parameter arrays in a fixed order.
pub trait ParamSet<T: Real> {
    fn names(&self) -> &'static [&'static str];
    fn arrays(&self) -> Vec<&Array<T>>;
    fn arrays_mut(&mut self) -> Vec<&mut Array<T>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T> {
    pub bn_scale: Array<T>,
    pub bn_bias: Array<T>,
    pub conv1_w: Array<T>,
    pub conv1_b: Array<T>,
    pub aux_w: Array<T>,
    pub aux_b: Array<T>,
    pub conv2_w: Array<T>,
    pub conv2_b: Array<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub conv1_w: Array<T>,
    pub conv1_b: Array<T>,
    pub conv2_w: Array<T>,
    pub conv2_b: Array<T>,
}

impl<T: Real> GeneratorParams<T> {
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Self {
        let (d, h, v, k, kw) = (arch.feature_dim, arch.hidden, arch.num_units, arch.aux_classes, arch.gen_kernel);
        let g = arch.init_gain;
        Self {
            bn_scale: Array::full(&[d], T::lit(arch.bn_scale_init)),
            bn_bias: Array::zeros(&[d]),
            conv1_w: gaussian(&[kw, d, h], g / ((kw * d) as f64).sqrt(), rng),
            conv1_b: Array::zeros(&[h]),
            aux_w: gaussian(&[h, k], g / (h as f64).sqrt(), rng),
            aux_b: Array::zeros(&[k]),
            conv2_w: gaussian(&[kw, h, v], g / ((kw * h) as f64).sqrt(), rng),
            conv2_b: Array::zeros(&[v]),
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let (d, h, v, k, kw) = (arch.feature_dim, arch.hidden, arch.num_units, arch.aux_classes, arch.gen_kernel);
        Self {
            bn_scale: Array::full(&[d], T::lit(arch.bn_scale_init)),
            bn_bias: Array::zeros(&[d]),
            conv1_w: Array::zeros(&[kw, d, h]),
            conv1_b: Array::zeros(&[h]),
            aux_w: Array::zeros(&[h, k]),
            aux_b: Array::zeros(&[k]),
            conv2_w: Array::zeros(&[kw, h, v]),
            conv2_b: Array::zeros(&[v]),
        }
    }
}

impl<T: Real> ParamSet<T> for GeneratorParams<T> {
    fn names(&self) -> &'static [&'static str] {
        &["gen.bn_scale", "gen.bn_bias", "gen.conv1_w", "gen.conv1_b", "gen.aux_w", "gen.aux_b", "gen.conv2_w", "gen.conv2_b"]
    }

    fn arrays(&self) -> Vec<&Array<T>> {
        vec![&self.bn_scale, &self.bn_bias, &self.conv1_w, &self.conv1_b, &self.aux_w, &self.aux_b, &self.conv2_w, &self.conv2_b]
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array<T>> {
        vec![
            &mut self.bn_scale,
            &mut self.bn_bias,
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.aux_w,
            &mut self.aux_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
        ]
    }
}

impl<T: Real> DiscriminatorParams<T> {
    pub fn init(arch: &Architecture, rng: &mut impl Rng) -> Self {
        let (v, h, kw) = (arch.num_units, arch.disc_hidden, arch.disc_kernel);
        let g = arch.init_gain;
        Self {
            conv1_w: gaussian(&[kw, v, h], g / ((kw * v) as f64).sqrt(), rng),
            conv1_b: Array::zeros(&[h]),
            conv2_w: gaussian(&[kw, h, 1], g / ((kw * h) as f64).sqrt(), rng),
            conv2_b: Array::zeros(&[1]),
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let (v, h, kw) = (arch.num_units, arch.disc_hidden, arch.disc_kernel);
        Self {
            conv1_w: Array::zeros(&[kw, v, h]),
            conv1_b: Array::zeros(&[h]),
            conv2_w: Array::zeros(&[kw, h, 1]),
            conv2_b: Array::zeros(&[1]),
        }
    }
}

impl<T: Real> ParamSet<T> for DiscriminatorParams<T> {
    fn names(&self) -> &'static [&'static str] {
        &["disc.conv1_w", "disc.conv1_b", "disc.conv2_w", "disc.conv2_b"]
    }

    fn arrays(&self) -> Vec<&Array<T>> {
        vec![&self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b]
    }

    fn arrays_mut(&mut self) -> Vec<&mut Array<T>> {
        vec![&mut self.conv1_w, &mut self.conv1_b, &mut self.conv2_w, &mut self.conv2_b]
    }
}

/// Parameters placed on a tape, as differentiable leaves or as constants.
pub struct Bound<'t, T: Real> {
    pub values: Vec<Value<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    pub fn new<P: ParamSet<T>>(tape: &'t Tape<T>, params: &P, trainable: bool) -> Self {
        let values = params
            .arrays()
            .into_iter()
            .map(|a| if trainable { tape.leaf(a.clone()) } else { tape.constant(a.clone()) })
            .collect();
        Self { values }
    }
}

/// Generator outputs for one utterance.
pub struct GeneratorOutput<'t, T: Real> {
    /// `[T', V]` unit logits at the output rate.
    pub logits: Value<'t, T>,
    /// `[T', K]` auxiliary logits from the hidden layer.
    pub aux_logits: Value<'t, T>,
    /// Geometry of the strided layer, for aligning frame-level labels.
    pub geom: ConvGeom,
}

/// batchnorm over time → strided conv → smooth GELU → (aux head) → conv → logits.
pub fn generator_forward<'t, T: Real>(
    arch: &Architecture,
    gen: &Bound<'t, T>,
    features: Value<'t, T>,
    stride_override: Option<usize>,
) -> Result<GeneratorOutput<'t, T>> {
    let shape = features.shape();
    if shape.len() != 2 || shape[1] != arch.feature_dim {
        return Err(Error::Contract(format!(
            "features of shape {shape:?} do not match generator input dimension {}",
            arch.feature_dim
        )));
    }
    let stride = stride_override.unwrap_or(arch.stride);
    if stride == 0 {
        return Err(Error::Contract("stride must be positive".into()));
    }
    let geom = arch.conv1_geom(stride);
    if arch.output_len(shape[0], stride).is_none() {
        return Err(Error::Contract(format!(
            "{} input frames give no output frames at stride {stride}",
            shape[0]
        )));
    }
    let p = &gen.values;
    let x = features.batchnorm_time(p[0], p[1], T::lit(1e-5))?;
    let h = x.conv1d(p[2], geom)?.add_bias(p[3])?.smooth_gelu()?;
    let aux_logits = h.linear(p[4], p[5])?;
    let logits = h.conv1d(p[6], arch.conv2_geom())?.add_bias(p[7])?;
    Ok(GeneratorOutput { logits, aux_logits, geom })
}

/// Pre-sigmoid discriminator score of a `[T, V]` sequence of unit
/// distributions: conv → smooth GELU → conv → mean over frames.
pub fn discriminator_score<'t, T: Real>(
    arch: &Architecture,
    disc: &Bound<'t, T>,
    seq: Value<'t, T>,
) -> Result<Value<'t, T>> {
    let shape = seq.shape();
    if shape.len() != 2 || shape[1] != arch.num_units {
        return Err(Error::Contract(format!(
            "discriminator input of shape {shape:?} does not have {} channels",
            arch.num_units
        )));
    }
    if shape[0] == 0 {
        return Err(Error::Contract("discriminator is undefined on an empty sequence".into()));
    }
    let p = &disc.values;
    let g = arch.disc_geom();
    let h = seq.conv1d(p[0], g)?.add_bias(p[1])?.smooth_gelu()?;
    h.conv1d(p[2], g)?.add_bias(p[3])?.mean()
}

/// Discriminator output probability, `sigmoid(score)`.
pub fn discriminator_forward<'t, T: Real>(
    arch: &Architecture,
    disc: &Bound<'t, T>,
    seq: Value<'t, T>,
) -> Result<Value<'t, T>> {
    Ok(discriminator_score(arch, disc, seq)?.sigmoid())
}

/// Runs of equal argmax and the row chosen to represent each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MergePlan {
    /// Half-open frame span of every run.
    pub segments: Vec<(usize, usize)>,
    /// Selected frame inside each run.
    pub selected: Vec<usize>,
}

/// Collapses each maximal run of frames sharing an argmax to one frame
/// drawn uniformly from the run.
pub fn merge_plan<T: Real>(logits: &Array<T>, rng: &mut impl Rng) -> MergePlan {
    let n = if logits.rank() == 2 { logits.rows() } else { 0 };
    let labels: Vec<usize> = (0..n).map(|t| argmax(logits.row(t))).collect();
    let mut segments = Vec::new();
    let mut start = 0;
    for t in 1..=n {
        if t == n || labels[t] != labels[start] {
            segments.push((start, t));
            start = t;
        }
    }
    let selected = segments
        .iter()
        .map(|&(a, b)| if b - a == 1 { a } else { rng.random_range(a..b) })
        .collect();
    MergePlan { segments, selected }
}

/// Per-frame unit distributions with their logits.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionSequence<T> {
    pub logits: Array<T>,
    pub probs: Array<T>,
    /// Input-frame span behind each row.
    pub segments: Vec<(usize, usize)>,
}

impl<T: Real> DistributionSequence<T> {
    /// Unmerged outputs: row `t` covers frame `t`.
    pub fn from_logits(logits: Array<T>) -> Self {
        let segments = (0..logits.rows()).map(|t| (t, t + 1)).collect();
        Self { probs: softmax_rows(&logits), logits, segments }
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Value-level merging; the training loop applies the same [`MergePlan`]
/// with `gather_rows` so that gradients flow to the selected frames.
pub fn merge_consecutive<T: Real>(logits: &Array<T>, rng: &mut impl Rng) -> DistributionSequence<T> {
    let plan = merge_plan(logits, rng);
    let v = if logits.rank() == 2 { logits.cols() } else { 0 };
    let rows: Vec<T> = plan.selected.iter().flat_map(|&t| logits.row(t).iter().copied()).collect();
    let merged = Array::from_vec(&[plan.selected.len(), v], rows).expect("shape");
    DistributionSequence { probs: softmax_rows(&merged), logits: merged, segments: plan.segments }
}

/// Frame-level labels reduced to one label per strided output frame by
/// majority vote over its receptive span, earliest label winning ties.
pub fn pool_labels(labels: &[usize], geom: ConvGeom, t_out: usize) -> Vec<usize> {
    (0..t_out)
        .map(|t| {
            let (a, b) = geom.receptive_span(t, labels.len());
            let span = &labels[a..b];
            let mut best = (span[0], 0);
            for (i, &l) in span.iter().enumerate() {
                if span[..i].contains(&l) {
                    continue;
                }
                let c = span.iter().filter(|&&x| x == l).count();
                if c > best.1 {
                    best = (l, c);
                }
            }
            best.0
        })
        .collect()
}

#[cfg(test)]
mod tests;
