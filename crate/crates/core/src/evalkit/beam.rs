use std::collections::HashMap;

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::textproc::{NgramLm, UnitSequence};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    /// Weight ω of the unit LM log-probability.
    pub lm_weight: f64,
    pub strip_silence: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { width: 8, lm_weight: 0.5, strip_silence: true }
    }
}

#[derive(Clone)]
struct Hyp {
    units: Vec<usize>,
    last_frame: Option<usize>,
    context: Vec<u32>,
    score: f64,
}

/// Frame-synchronous beam search over `[T, V]` log-probabilities with
/// shallow fusion of a unit LM.
///
/// A unit enters the hypothesis whenever the frame label changes; each such
/// unit adds `ω · ln P(unit | context)`. Paths that end in the same emitted
/// sequence and last frame label are merged keeping the best score.
pub fn beam_decode<T: Real>(
    log_probs: &Array<T>,
    lm: &NgramLm,
    cfg: &BeamConfig,
) -> Result<UnitSequence> {
    let v = lm.inventory().len();
    if log_probs.rank() != 2 || log_probs.cols() != v {
        return Err(Error::Contract(format!(
            "log-probabilities of shape {:?} do not match an LM over {v} units",
            log_probs.shape()
        )));
    }
    if cfg.width == 0 {
        return Err(Error::Contract("beam width must be positive".into()));
    }
    let mut beam = vec![Hyp { units: Vec::new(), last_frame: None, context: lm.start_context(), score: 0.0 }];
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let mut next: HashMap<(Vec<usize>, usize), Hyp> = HashMap::new();
        for h in &beam {
            for (u, lp) in row.iter().enumerate() {
                let mut score = h.score + lp.as_f64();
                let mut cand = Hyp { units: h.units.clone(), last_frame: Some(u), context: h.context.clone(), score };
                if h.last_frame != Some(u) {
                    score += cfg.lm_weight * lm.prob(&h.context, u as u32).ln();
                    cand.units.push(u);
                    cand.context = lm.advance(&h.context, u as u32);
                    cand.score = score;
                }
                let key = (cand.units.clone(), u);
                match next.get(&key) {
                    Some(old) if old.score >= cand.score => {}
                    _ => {
                        next.insert(key, cand);
                    }
                }
            }
        }
        beam = next.into_values().collect();
        beam.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.units.cmp(&b.units)));
        beam.truncate(cfg.width);
    }
    if lm.order() > 1 {
        for h in &mut beam {
            h.score += cfg.lm_weight * lm.prob(&h.context, lm.eos()).ln();
        }
    }
    let best = beam
        .into_iter()
        .max_by(|a, b| a.score.total_cmp(&b.score).then_with(|| b.units.cmp(&a.units)))
        .map(|h| UnitSequence(h.units))
        .unwrap_or_default();
    Ok(if cfg.strip_silence { best.without(lm.inventory().silence()) } else { best })
}
