use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{UnitInventory, UnitSequence};
use crate::binio::*;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UASRNGLM";
const VERSION: u32 = 1;

/// Add-α smoothed n-gram model over unit indices.
///
/// For order ≥ 2 each sentence is padded with `order - 1` start markers and
/// one end marker; the end marker is a possible prediction, the start marker
/// never is. A unigram model has neither.
#[derive(Clone, Debug, PartialEq)]
pub struct NgramLm {
    order: usize,
    alpha: f64,
    inventory: UnitInventory,
    /// Full n-gram (context then target) → count.
    counts: BTreeMap<Vec<u32>, u64>,
    /// Context → total count of targets following it.
    context_totals: BTreeMap<Vec<u32>, u64>,
}

impl NgramLm {
    pub fn train(
        corpus: &[UnitSequence],
        inventory: &UnitInventory,
        order: usize,
        alpha: f64,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Contract("n-gram corpus is empty".into()));
        }
        if order == 0 {
            return Err(Error::Contract("n-gram order must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Contract(format!("smoothing alpha must be positive, got {alpha}")));
        }
        let mut lm = Self {
            order,
            alpha,
            inventory: inventory.clone(),
            counts: BTreeMap::new(),
            context_totals: BTreeMap::new(),
        };
        for seq in corpus {
            inventory.check(seq)?;
            for (ctx, target) in lm.events(seq) {
                let mut key = ctx.clone();
                key.push(target);
                *lm.counts.entry(key).or_default() += 1;
                *lm.context_totals.entry(ctx).or_default() += 1;
            }
        }
        Ok(lm)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn inventory(&self) -> &UnitInventory {
        &self.inventory
    }

    fn bos(&self) -> u32 {
        self.inventory.len() as u32
    }

    /// Token id of the end-of-sentence marker (only meaningful for order ≥ 2).
    pub fn eos(&self) -> u32 {
        self.inventory.len() as u32 + 1
    }

    /// Number of outcomes a conditional distribution ranges over.
    pub fn outcomes(&self) -> usize {
        self.inventory.len() + usize::from(self.order > 1)
    }

    /// All (context, target) prediction events of a sentence, end marker
    /// included when order ≥ 2.
    fn events(&self, seq: &UnitSequence) -> Vec<(Vec<u32>, u32)> {
        let h = self.order - 1;
        let mut padded = vec![self.bos(); h];
        padded.extend(seq.0.iter().map(|&u| u as u32));
        if self.order > 1 {
            padded.push(self.eos());
        }
        (h..padded.len())
            .map(|i| (padded[i - h..i].to_vec(), padded[i]))
            .collect()
    }

    /// `P(target | context)`; `context` must hold exactly `order - 1` tokens.
    pub fn prob(&self, context: &[u32], target: u32) -> f64 {
        let mut key = context.to_vec();
        key.push(target);
        let c = self.counts.get(&key).copied().unwrap_or(0) as f64;
        let total = self.context_totals.get(context).copied().unwrap_or(0) as f64;
        (c + self.alpha) / (total + self.alpha * self.outcomes() as f64)
    }

    /// Contexts seen in training.
    pub fn contexts(&self) -> impl Iterator<Item = &[u32]> {
        self.context_totals.keys().map(Vec::as_slice)
    }

    /// Tokens that can be predicted: unit ids, plus the end marker for order ≥ 2.
    pub fn targets(&self) -> Vec<u32> {
        let mut t: Vec<u32> = (0..self.inventory.len() as u32).collect();
        if self.order > 1 {
            t.push(self.eos());
        }
        t
    }

    /// Start-of-sentence context for incremental scoring.
    pub fn start_context(&self) -> Vec<u32> {
        vec![self.bos(); self.order - 1]
    }

    /// Shifts `unit` into a context returned by [`Self::start_context`].
    pub fn advance(&self, context: &[u32], unit: u32) -> Vec<u32> {
        if self.order == 1 {
            return Vec::new();
        }
        let mut next = context[1..].to_vec();
        next.push(unit);
        next
    }

    /// Sum of `ln P(u_i | context)` over the units of `seq` (end marker excluded).
    pub fn log_prob(&self, seq: &UnitSequence) -> Result<f64> {
        self.inventory.check(seq)?;
        let n = seq.len();
        Ok(self
            .events(seq)
            .iter()
            .take(n)
            .map(|(ctx, t)| self.prob(ctx, *t).ln())
            .sum())
    }

    /// Mean negative log-likelihood per unit in nats; 0 for an empty sequence.
    pub fn nll(&self, seq: &UnitSequence) -> Result<f64> {
        if seq.is_empty() {
            self.inventory.check(seq)?;
            return Ok(0.0);
        }
        Ok(-self.log_prob(seq)? / seq.len() as f64)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write_magic(&mut w, MAGIC, VERSION)?;
        write_u32(&mut w, self.order as u32)?;
        write_f64(&mut w, self.alpha)?;
        write_u32(&mut w, self.inventory.len() as u32)?;
        for u in self.inventory.units() {
            write_str(&mut w, u)?;
        }
        write_u32(&mut w, self.counts.len() as u32)?;
        for (key, &c) in &self.counts {
            for &t in key {
                write_u32(&mut w, t)?;
            }
            write_u64(&mut w, c)?;
        }
        Ok(w.flush()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let version = read_magic(r, MAGIC, "n-gram model")?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported n-gram model version {version}")));
        }
        let order = read_u32(r)? as usize;
        let alpha = read_f64(r)?;
        let v = read_u32(r)? as usize;
        let names = (0..v).map(|_| read_str(r)).collect::<Result<Vec<_>>>()?;
        if order == 0 || names.first().map(String::as_str) != Some(super::SILENCE) {
            return Err(Error::Format("corrupt n-gram model header".into()));
        }
        let inventory = UnitInventory::new(&names[1..])?;
        let mut lm = Self {
            order,
            alpha,
            inventory,
            counts: BTreeMap::new(),
            context_totals: BTreeMap::new(),
        };
        let n = read_u32(r)?;
        for _ in 0..n {
            let key = (0..order).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
            let c = read_u64(r)?;
            *lm.context_totals.entry(key[..order - 1].to_vec()).or_default() += c;
            lm.counts.insert(key, c);
        }
        Ok(lm)
    }
}
