//! Decoding of per-frame unit scores and phone-error-rate scoring.

mod beam;

use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::textproc::{UnitInventory, UnitSequence};

pub use beam::{beam_decode, BeamConfig};

/// Index of the largest entry, the lowest index winning ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Per-frame argmax, adjacent duplicates collapsed, silence optionally removed.
///
/// `scores` is `[T, V]`; probabilities, log-probabilities and logits all
/// decode the same way.
pub fn greedy_decode<T: Real>(
    scores: &Array<T>,
    inventory: &UnitInventory,
    strip_silence: bool,
) -> Result<UnitSequence> {
    if scores.rank() != 2 || scores.cols() != inventory.len() {
        return Err(Error::Contract(format!(
            "scores of shape {:?} do not match an inventory of {} units",
            scores.shape(),
            inventory.len()
        )));
    }
    let frames = UnitSequence((0..scores.rows()).map(|t| argmax(scores.row(t))).collect());
    let seq = frames.collapsed();
    Ok(if strip_silence { seq.without(inventory.silence()) } else { seq })
}

/// Edit operation counts of one alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EditCounts {
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.sub + self.del + self.ins
    }
}

impl std::ops::Add for EditCounts {
    type Output = EditCounts;
    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts { sub: self.sub + o.sub, del: self.del + o.del, ins: self.ins + o.ins }
    }
}

/// Levenshtein alignment of `hyp` against `reference` with unit costs.
///
/// Among minimum-cost alignments the one with the most substitutions is
/// chosen. Given the total and the substitution count, deletions and
/// insertions follow from the two lengths, so the result does not depend on
/// traversal order and swapping the arguments swaps `del` and `ins`.
pub fn edit_distance(reference: &UnitSequence, hyp: &UnitSequence) -> EditCounts {
    let (r, h) = (reference.as_slice(), hyp.as_slice());
    let (n, m) = (r.len(), h.len());
    // (cost, -substitutions), compared lexicographically
    let mut prev: Vec<(usize, isize)> = (0..=m).map(|j| (j, 0)).collect();
    let mut cur = vec![(0usize, 0isize); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0);
        for j in 1..=m {
            let diag = if r[i - 1] == h[j - 1] {
                prev[j - 1]
            } else {
                (prev[j - 1].0 + 1, prev[j - 1].1 - 1)
            };
            let del = (prev[j].0 + 1, prev[j].1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (dist, neg_sub) = prev[m];
    let sub = (-neg_sub) as usize;
    let rest = dist - sub;
    // del - ins = n - m and del + ins = rest
    let del = (rest as isize + n as isize - m as isize) / 2;
    let ins = rest as isize - del;
    EditCounts { sub, del: del as usize, ins: ins as usize }
}

/// Corpus-level error rate with its components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PerReport {
    pub per: f64,
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
    pub ref_tokens: usize,
}

/// `(ΣS + ΣD + ΣI) / Σ|ref|` over paired utterances.
pub fn per(refs: &[UnitSequence], hyps: &[UnitSequence]) -> Result<PerReport> {
    if refs.len() != hyps.len() {
        return Err(Error::Contract(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let ref_tokens: usize = refs.iter().map(UnitSequence::len).sum();
    if ref_tokens == 0 {
        return Err(Error::Contract("references contain no tokens".into()));
    }
    let counts = refs
        .par_iter()
        .zip(hyps.par_iter())
        .map(|(r, h)| edit_distance(r, h))
        .reduce(EditCounts::default, |a, b| a + b);
    Ok(PerReport {
        per: counts.total() as f64 / ref_tokens as f64,
        sub: counts.sub,
        del: counts.del,
        ins: counts.ins,
        ref_tokens,
    })
}

/// Removes `unit` from every sequence.
pub fn strip_all(seqs: &[UnitSequence], unit: usize) -> Vec<UnitSequence> {
    seqs.iter().map(|s| s.without(unit)).collect()
}

#[cfg(test)]
mod tests;
