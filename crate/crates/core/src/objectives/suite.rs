use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{check_gradient, random_array, CheckOptions, GradCheck};
use crate::autodiff::Array;
use crate::model::{DiscriminatorParams, GeneratorParams, ParamSet};

/// Loss-term selectors checked by [`gradient_suite`].
const TERMS: [&str; 8] = ["gan_d", "gan_g", "gp", "sp", "pd", "ss", "L_D", "L_G"];

fn pick<'t, T: Real>(t: LossTerms<'t, T>, name: &str) -> Value<'t, T> {
    match name {
        "gan_d" => t.gan_d,
        "gan_g" => t.gan_g,
        "gp" => t.gp,
        "sp" => t.sp,
        "pd" => t.pd,
        "ss" => t.ss,
        "L_D" => t.l_d,
        _ => t.l_g,
    }
}

/// Central-difference checks of every loss term and of both composite
/// losses with respect to all generator and discriminator parameters of a
/// randomly initialized desk-size model, in double precision.
///
/// Coordinates are subsampled per parameter array (`max_coords`).
pub fn gradient_suite(seed: u64, max_coords: usize) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::desk(16, 12, 64);
    let gen = GeneratorParams::<f64>::init(&arch, &mut rng);
    let disc = DiscriminatorParams::<f64>::init(&arch, &mut rng);
    let n_gen = gen.arrays().len();

    let audio: Vec<FeatureSequence> = [31, 24]
        .iter()
        .map(|&t| {
            let a = random_array(&mut rng, &[t, arch.feature_dim]);
            FeatureSequence::new(a.data().iter().map(|&x| x as f32).collect(), arch.feature_dim, 50.0)
        })
        .collect::<Result<_>>()?;
    let pseudo: Vec<PseudoLabelSequence> = audio
        .iter()
        .map(|a| PseudoLabelSequence {
            labels: (0..a.len()).map(|_| rand::Rng::random_range(&mut rng, 0..arch.aux_classes)).collect(),
            num_classes: arch.aux_classes,
            frame_rate: 50.0,
        })
        .collect();
    let text: Vec<UnitSequence> = [9, 12]
        .iter()
        .map(|&n| UnitSequence((0..n).map(|_| rand::Rng::random_range(&mut rng, 0..arch.num_units)).collect()))
        .collect();
    let audio_refs: Vec<&FeatureSequence> = audio.iter().collect();
    let pseudo_refs: Vec<&PseudoLabelSequence> = pseudo.iter().collect();
    let text_refs: Vec<&UnitSequence> = text.iter().collect();
    let batch = Batch { audio: &audio_refs, pseudo: &pseudo_refs, text: &text_refs };

    let inputs: Vec<Array<f64>> = gen.arrays().into_iter().chain(disc.arrays()).cloned().collect();
    let opts = CheckOptions { step: 1e-5, tol: 1e-4, max_coords, seed };
    let loss_seed = seed ^ 0x5eed;
    TERMS
        .iter()
        .map(|&term| {
            check_gradient(term, &inputs, opts, |tape, v| {
                let g = Bound { values: v[..n_gen].to_vec() };
                let d = Bound { values: v[n_gen..].to_vec() };
                let mut r = ChaCha8Rng::seed_from_u64(loss_seed);
                let terms = total_losses(
                    tape,
                    &arch,
                    &g,
                    &d,
                    &batch,
                    &LossWeights::PRESET_B,
                    &LossOptions::default(),
                    Phase::Both,
                    &mut r,
                )?;
                Ok(pick(terms, term))
            })
        })
        .collect()
}
