use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn cat_lexicon() -> (Lexicon, UnitInventory) {
    let mut lex = Lexicon::new();
    lex.insert("cat", &["k", "ae", "t"]);
    lex.insert("dog", &["d", "ao", "g"]);
    let inv = lex.inventory().unwrap();
    (lex, inv)
}

fn names(inv: &UnitInventory, seq: &UnitSequence) -> String {
    inv.decode_line(seq).unwrap()
}

#[test]
fn inventory_puts_silence_first() {
    let inv = UnitInventory::new(&["b", "a", "sil"]).unwrap();
    assert_eq!(inv.units(), &["sil", "b", "a"]);
    assert_eq!(inv.index_of("a"), Some(2));
    assert!(UnitInventory::new(&["a", "a"]).is_err());
}

#[test]
fn phonemize_without_interior_silence() {
    let (lex, inv) = cat_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = phonemize(&["cat", "cat"], &lex, &inv, 0.0, &mut rng).unwrap();
    assert_eq!(names(&inv, &seq), "sil k ae t k ae t sil");
}

#[test]
fn phonemize_with_forced_silence() {
    let (lex, inv) = cat_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = phonemize(&["cat", "cat"], &lex, &inv, 1.0, &mut rng).unwrap();
    assert_eq!(names(&inv, &seq), "sil k ae t sil k ae t sil");
}

#[test]
fn phonemize_silence_frequency() {
    let (lex, inv) = cat_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let mut hits = 0;
    for _ in 0..n {
        let seq = phonemize(&["cat", "dog"], &lex, &inv, 0.5, &mut rng).unwrap();
        hits += usize::from(seq.len() == 9);
    }
    let freq = hits as f64 / n as f64;
    assert!((freq - 0.5).abs() <= 0.01, "interior silence frequency {freq}");
}

#[test]
fn phonemize_reports_every_oov_word() {
    let (lex, inv) = cat_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    match phonemize(&["cat", "emu", "yak"], &lex, &inv, 0.5, &mut rng) {
        Err(Error::OutOfVocabulary(w)) => assert_eq!(w, vec!["emu", "yak"]),
        other => panic!("expected OOV error, got {other:?}"),
    }
}

#[test]
fn letter_mode_spells_words() {
    let lex = Lexicon::spelling(["ab ba", "c"]);
    let inv = lex.inventory().unwrap();
    assert_eq!(inv.units(), &["sil", "a", "b", "c"]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = phonemize(&["ab", "c"], &lex, &inv, 0.0, &mut rng).unwrap();
    assert_eq!(names(&inv, &seq), "sil a b c sil");
}

#[test]
fn lexicon_parse_rejects_missing_tab() {
    assert!(Lexicon::parse("cat k ae t\n").is_err());
    let lex = Lexicon::parse("cat\tk ae t\n\n").unwrap();
    assert_eq!(lex.get("cat").unwrap(), &["k", "ae", "t"]);
}

fn ab_inventory() -> UnitInventory {
    UnitInventory::new(&["a", "b"]).unwrap()
}

#[test]
fn bigram_limit_is_deterministic() {
    let inv = ab_inventory();
    let corpus = vec![inv.encode_line("a b a b").unwrap()];
    let lm = NgramLm::train(&corpus, &inv, 2, 1e-12).unwrap();
    let a = inv.index_of("a").unwrap() as u32;
    let b = inv.index_of("b").unwrap() as u32;
    assert!((lm.prob(&[a], b) - 1.0).abs() < 1e-9);
}

#[test]
fn unigram_relative_frequencies() {
    let inv = ab_inventory();
    let corpus = vec![inv.encode_line("a a b").unwrap()];
    let lm = NgramLm::train(&corpus, &inv, 1, 1e-12).unwrap();
    assert!((lm.prob(&[], 1) - 2.0 / 3.0).abs() < 1e-9);
    assert!((lm.prob(&[], 2) - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn smoothing_keeps_probabilities_positive() {
    let inv = ab_inventory();
    let corpus = vec![inv.encode_line("a a a").unwrap()];
    let lm = NgramLm::train(&corpus, &inv, 3, 0.5).unwrap();
    for ctx in [[0u32, 0], [1, 2], [3, 3], [2, 1]] {
        for t in lm.targets() {
            assert!(lm.prob(&ctx, t) > 0.0);
        }
    }
}

#[test]
fn uniform_unigram_nll_is_log_v() {
    let inv = UnitInventory::numbered(9);
    // every unit equally frequent
    let corpus = vec![UnitSequence((0..10).collect())];
    let lm = NgramLm::train(&corpus, &inv, 1, 1.0).unwrap();
    let seq = UnitSequence(vec![3, 1, 4, 1, 5, 9, 2, 6]);
    assert!((lm.nll(&seq).unwrap() - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn deterministic_chain_nll_vanishes() {
    let inv = UnitInventory::numbered(3);
    let seq = UnitSequence(vec![1, 2, 3, 0]);
    let lm = NgramLm::train(std::slice::from_ref(&seq), &inv, 2, 1e-12).unwrap();
    assert!(lm.nll(&seq).unwrap() < 1e-9);
}

#[test]
fn nll_rejects_out_of_range_units() {
    let inv = ab_inventory();
    let lm = NgramLm::train(&[UnitSequence(vec![1, 2])], &inv, 2, 1.0).unwrap();
    assert!(matches!(lm.nll(&UnitSequence(vec![1, 3])), Err(Error::Contract(_))));
}

/// Counts n-gram occurrences by scanning every padded sentence directly.
fn oracle_log_prob(corpus: &[Vec<u32>], v: u32, order: usize, alpha: f64, seq: &[u32]) -> f64 {
    let (bos, eos) = (v, v + 1);
    let pad = |s: &[u32]| {
        let mut p = vec![bos; order - 1];
        p.extend_from_slice(s);
        if order > 1 {
            p.push(eos);
        }
        p
    };
    let outcomes = v as f64 + if order > 1 { 1.0 } else { 0.0 };
    let padded_seq = pad(seq);
    let mut total = 0.0;
    for i in order - 1..order - 1 + seq.len() {
        let ctx = &padded_seq[i + 1 - order..i];
        let target = padded_seq[i];
        let mut joint = 0u64;
        let mut marginal = 0u64;
        for s in corpus {
            let p = pad(s);
            for j in order - 1..p.len() {
                if &p[j + 1 - order..j] == ctx {
                    marginal += 1;
                    if p[j] == target {
                        joint += 1;
                    }
                }
            }
        }
        total += ((joint as f64 + alpha) / (marginal as f64 + alpha * outcomes)).ln();
    }
    total
}

#[test]
fn log_prob_matches_count_oracle() {
    let inv = UnitInventory::numbered(4);
    let v = inv.len() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random_seq = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let n = rng.random_range(1..12);
        (0..n).map(|_| rng.random_range(0..v)).collect()
    };
    let corpus: Vec<Vec<u32>> = (0..40).map(|_| random_seq(&mut rng)).collect();
    let seqs: Vec<UnitSequence> = corpus
        .iter()
        .map(|s| UnitSequence(s.iter().map(|&u| u as usize).collect()))
        .collect();
    for order in 1..=4 {
        for alpha in [0.01, 0.5, 2.0] {
            let lm = NgramLm::train(&seqs, &inv, order, alpha).unwrap();
            for _ in 0..10 {
                let s = random_seq(&mut rng);
                let seq = UnitSequence(s.iter().map(|&u| u as usize).collect());
                let got = lm.log_prob(&seq).unwrap();
                let want = oracle_log_prob(&corpus, v, order, alpha, &s);
                assert!((got - want).abs() < 1e-10, "order {order}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn lm_file_round_trip() {
    let inv = UnitInventory::numbered(3);
    let corpus = vec![UnitSequence(vec![0, 1, 2, 3, 0]), UnitSequence(vec![2, 2, 1])];
    let lm = NgramLm::train(&corpus, &inv, 3, 0.1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.bin");
    lm.write(&path).unwrap();
    assert_eq!(NgramLm::read(&path).unwrap(), lm);
    std::fs::write(&path, b"UASRFEAT\x01\0\0\0").unwrap();
    assert!(matches!(NgramLm::read(&path), Err(Error::Format(_))));
}
