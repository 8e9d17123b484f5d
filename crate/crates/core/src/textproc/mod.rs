//! Unit inventories, lexicon-driven phonemization and a unit n-gram model.

mod ngram;

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub use ngram::NgramLm;

/// Name of the silence unit. It always sits at index 0 of an inventory.
pub const SILENCE: &str = "sil";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnitInventory {
    units: Vec<String>,
    index: HashMap<String, usize>,
}

impl UnitInventory {
    /// Builds an inventory with `sil` first, followed by `units` in order
    /// (a `sil` inside `units` is skipped).
    pub fn new<S: AsRef<str>>(units: &[S]) -> Result<Self> {
        let mut all = vec![SILENCE.to_string()];
        all.extend(
            units
                .iter()
                .map(|u| u.as_ref().to_string())
                .filter(|u| u != SILENCE),
        );
        let mut index = HashMap::with_capacity(all.len());
        for (i, u) in all.iter().enumerate() {
            if u.is_empty() || u.chars().any(char::is_whitespace) {
                return Err(Error::Contract(format!("invalid unit name {u:?}")));
            }
            if index.insert(u.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate unit {u:?}")));
            }
        }
        Ok(Self { units: all, index })
    }

    /// `sil` plus `n` abstract units named `u1`..`un`.
    pub fn numbered(n: usize) -> Self {
        let names: Vec<String> = (1..=n).map(|i| format!("u{i}")).collect();
        Self::new(&names).expect("numbered names are unique")
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn silence(&self) -> usize {
        0
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.units.get(idx).map(String::as_str)
    }

    pub fn index_of(&self, unit: &str) -> Option<usize> {
        self.index.get(unit).copied()
    }

    /// Maps unit names to indices, listing every unknown name on failure.
    pub fn encode<S: AsRef<str>>(&self, units: &[S]) -> Result<UnitSequence> {
        let mut ids = Vec::with_capacity(units.len());
        let mut unknown = Vec::new();
        for u in units {
            match self.index_of(u.as_ref()) {
                Some(i) => ids.push(i),
                None => unknown.push(u.as_ref().to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(Error::OutOfVocabulary(unknown));
        }
        Ok(UnitSequence(ids))
    }

    /// Parses one space-separated transcript line.
    pub fn encode_line(&self, line: &str) -> Result<UnitSequence> {
        self.encode(&line.split_whitespace().collect::<Vec<_>>())
    }

    pub fn decode(&self, seq: &UnitSequence) -> Result<Vec<&str>> {
        self.check(seq)?;
        Ok(seq.0.iter().map(|&i| self.units[i].as_str()).collect())
    }

    pub fn decode_line(&self, seq: &UnitSequence) -> Result<String> {
        Ok(self.decode(seq)?.join(" "))
    }

    /// Errors if any index in `seq` is outside this inventory.
    pub fn check(&self, seq: &UnitSequence) -> Result<()> {
        match seq.0.iter().find(|&&i| i >= self.len()) {
            Some(i) => Err(Error::Contract(format!(
                "unit index {i} out of range for inventory of size {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }

    /// One unit per line, in index order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = self.units.join("\n");
        s.push('\n');
        Ok(std::fs::write(path, s)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let units: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if units.first() != Some(&SILENCE) {
            return Err(Error::Format(format!(
                "{}: inventory must start with {SILENCE:?}",
                path.display()
            )));
        }
        Self::new(&units[1..])
    }
}

/// Unit indices into some [`UnitInventory`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct UnitSequence(pub Vec<usize>);

impl UnitSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Merges runs of identical adjacent units.
    pub fn collapsed(&self) -> UnitSequence {
        let mut out: Vec<usize> = Vec::with_capacity(self.0.len());
        for &u in &self.0 {
            if out.last() != Some(&u) {
                out.push(u);
            }
        }
        UnitSequence(out)
    }

    pub fn without(&self, unit: usize) -> UnitSequence {
        UnitSequence(self.0.iter().copied().filter(|&u| u != unit).collect())
    }
}

impl From<Vec<usize>> for UnitSequence {
    fn from(v: Vec<usize>) -> Self {
        UnitSequence(v)
    }
}

/// Word → unit-name table.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: HashMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, units: &[&str]) {
        self.entries
            .insert(word.to_string(), units.iter().map(|u| u.to_string()).collect());
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `word<TAB>unit unit ...` lines. Blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, units) = line.split_once('\t').ok_or_else(|| {
                Error::Format(format!("lexicon line {}: expected word<TAB>units", n + 1))
            })?;
            let units: Vec<&str> = units.split_whitespace().collect();
            if units.is_empty() {
                return Err(Error::Format(format!("lexicon line {}: no units for {word:?}", n + 1)));
            }
            lex.insert(word.trim(), &units);
        }
        Ok(lex)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Letter mode: every word in `corpus` is spelled out one character
    /// per unit.
    pub fn spelling<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut lex = Self::new();
        for line in corpus {
            for w in line.split_whitespace() {
                if !lex.entries.contains_key(w) {
                    let letters = w.chars().map(|c| c.to_string()).collect();
                    lex.entries.insert(w.to_string(), letters);
                }
            }
        }
        lex
    }

    /// `sil` followed by every unit used in the table, sorted.
    pub fn inventory(&self) -> Result<UnitInventory> {
        let mut units: Vec<&str> = self.entries.values().flatten().map(String::as_str).collect();
        units.sort_unstable();
        units.dedup();
        UnitInventory::new(&units)
    }
}

/// Converts words to units, padding with silence at both ends and inserting
/// silence at each word boundary independently with probability `p_sil`.
pub fn phonemize<S: AsRef<str>>(
    words: &[S],
    lexicon: &Lexicon,
    inventory: &UnitInventory,
    p_sil: f64,
    rng: &mut impl Rng,
) -> Result<UnitSequence> {
    if !(0.0..=1.0).contains(&p_sil) {
        return Err(Error::Contract(format!("p_sil must lie in [0, 1], got {p_sil}")));
    }
    let oov: Vec<String> = words
        .iter()
        .filter(|w| lexicon.get(w.as_ref()).is_none())
        .map(|w| w.as_ref().to_string())
        .collect();
    if !oov.is_empty() {
        return Err(Error::OutOfVocabulary(oov));
    }
    let sil = inventory.silence();
    let mut out = vec![sil];
    for (i, w) in words.iter().enumerate() {
        if i > 0 && rng.random_bool(p_sil) {
            out.push(sil);
        }
        out.extend(inventory.encode(lexicon.get(w.as_ref()).unwrap())?.0);
    }
    if words.is_empty() {
        return Ok(UnitSequence(out));
    }
    out.push(sil);
    Ok(UnitSequence(out))
}

/// Writes space-separated unit names, one sequence per line.
pub fn write_unit_lines(path: &Path, inventory: &UnitInventory, seqs: &[UnitSequence]) -> Result<()> {
    let mut out = String::new();
    for s in seqs {
        out.push_str(&inventory.decode_line(s)?);
        out.push('\n');
    }
    Ok(std::fs::write(path, out)?)
}

/// Reads one unit sequence per line; blank lines give empty sequences.
pub fn read_unit_lines(path: &Path, inventory: &UnitInventory) -> Result<Vec<UnitSequence>> {
    std::fs::read_to_string(path)?
        .lines()
        .map(|l| inventory.encode_line(l))
        .collect()
}

#[cfg(test)]
mod tests;
