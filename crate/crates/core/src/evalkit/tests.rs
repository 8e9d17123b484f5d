use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::textproc::NgramLm;

fn seq(v: &[usize]) -> UnitSequence {
    UnitSequence(v.to_vec())
}

fn one_hot_frames(labels: &[usize], v: usize) -> Array<f64> {
    let mut a = Array::zeros(&[labels.len(), v]);
    for (t, &l) in labels.iter().enumerate() {
        a.data_mut()[t * v + l] = 1.0;
    }
    a
}

#[test]
fn greedy_collapses_and_strips() {
    let inv = UnitInventory::new(&["a", "b"]).unwrap();
    let scores = one_hot_frames(&[1, 1, 0, 2, 2], 3);
    assert_eq!(greedy_decode(&scores, &inv, true).unwrap(), seq(&[1, 2]));
    assert_eq!(greedy_decode(&scores, &inv, false).unwrap(), seq(&[1, 0, 2]));
    let empty = Array::<f64>::zeros(&[0, 3]);
    assert!(greedy_decode(&empty, &inv, true).unwrap().is_empty());
}

#[test]
fn greedy_matches_straight_line_decoder() {
    let inv = UnitInventory::numbered(5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let data: Vec<f64> = (0..30 * 6).map(|_| rng.random_range(0..4) as f64).collect();
        let scores = Array::from_vec(&[30, 6], data.clone()).unwrap();
        let mut want = Vec::new();
        let mut prev = usize::MAX;
        for t in 0..30 {
            let row = &data[t * 6..t * 6 + 6];
            let mut best = 0;
            let mut k = 1;
            while k < 6 {
                if row[k] > row[best] {
                    best = k;
                }
                k += 1;
            }
            if best != prev && best != 0 {
                want.push(best);
            }
            prev = best;
        }
        assert_eq!(greedy_decode(&scores, &inv, true).unwrap().0, want);
    }
}

#[test]
fn edit_distance_basics() {
    assert_eq!(edit_distance(&seq(&[1, 2, 3]), &seq(&[1, 2, 3])), EditCounts::default());
    assert_eq!(edit_distance(&seq(&[1, 2, 3]), &seq(&[1, 3])), EditCounts { sub: 0, del: 1, ins: 0 });
    assert_eq!(edit_distance(&seq(&[1, 3]), &seq(&[1, 2, 3])), EditCounts { sub: 0, del: 0, ins: 1 });
    assert_eq!(edit_distance(&seq(&[]), &seq(&[4, 4])), EditCounts { sub: 0, del: 0, ins: 2 });
    // "ab" vs "ba": two substitutions beat a deletion plus an insertion
    assert_eq!(edit_distance(&seq(&[1, 2]), &seq(&[2, 1])), EditCounts { sub: 2, del: 0, ins: 0 });
}

fn oracle_distance(a: &[usize], b: &[usize]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let c = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j - 1] + c).min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn random_seq(rng: &mut ChaCha8Rng, max_len: usize, alphabet: usize) -> UnitSequence {
    let n = rng.random_range(0..=max_len);
    UnitSequence((0..n).map(|_| rng.random_range(0..alphabet)).collect())
}

#[test]
fn edit_distance_matches_dp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a = random_seq(&mut rng, 12, 5);
        let b = random_seq(&mut rng, 12, 5);
        let e = edit_distance(&a, &b);
        assert_eq!(e.total(), oracle_distance(&a.0, &b.0));
        assert_eq!(e.sub + e.del, a.len() - (a.len() - e.sub - e.del));
        assert_eq!(a.len() as isize - e.del as isize, b.len() as isize - e.ins as isize);
    }
}

#[test]
fn per_examples() {
    let refs = vec![seq(&[1, 2, 3]), seq(&[4, 5])];
    assert_eq!(per(&refs, &refs).unwrap().per, 0.0);
    let empty = vec![seq(&[]), seq(&[])];
    let r = per(&refs, &empty).unwrap();
    assert_eq!((r.per, r.del, r.ref_tokens), (1.0, 5, 5));
    assert!(matches!(per(&refs, &empty[..1]), Err(Error::Contract(_))));
}

#[test]
fn per_equals_sum_of_utterance_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let refs: Vec<_> = (0..10).map(|_| random_seq(&mut rng, 15, 6)).collect();
    let hyps: Vec<_> = (0..10).map(|_| random_seq(&mut rng, 15, 6)).collect();
    let total: usize = refs.iter().zip(&hyps).map(|(r, h)| edit_distance(r, h).total()).sum();
    let n: usize = refs.iter().map(|r| r.len()).sum();
    let got = per(&refs, &hyps).unwrap().per;
    assert!((got - total as f64 / n as f64).abs() < 1e-12);
}

#[test]
fn beam_without_lm_weight_matches_greedy() {
    let inv = UnitInventory::numbered(4);
    let corpus = vec![seq(&[0, 1, 2, 0])];
    let lm = NgramLm::train(&corpus, &inv, 2, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let data: Vec<f64> = (0..12 * 5).map(|_| rng.random::<f64>()).collect();
        let mut scores = Array::from_vec(&[12, 5], data).unwrap();
        for t in 0..12 {
            let z: f64 = scores.row(t).iter().map(|x| x.exp()).sum();
            let row = &mut scores.data_mut()[t * 5..t * 5 + 5];
            row.iter_mut().for_each(|x| *x -= z.ln());
        }
        let cfg = BeamConfig { width: 64, lm_weight: 0.0, strip_silence: true };
        let greedy = greedy_decode(&scores, &inv, true).unwrap();
        assert_eq!(beam_decode(&scores, &lm, &cfg).unwrap(), greedy);
    }
}

#[test]
fn beam_lm_breaks_acoustic_ambiguity() {
    let inv = UnitInventory::numbered(3);
    // the LM only ever sees u1 followed by u2
    let corpus = vec![seq(&[1, 2]); 20];
    let lm = NgramLm::train(&corpus, &inv, 2, 0.1).unwrap();
    let l = |p: [f64; 4]| p.map(f64::ln).to_vec();
    let rows = [l([0.1, 0.7, 0.1, 0.1]), l([0.1, 0.1, 0.41, 0.39])];
    let scores = Array::from_rows(&rows).unwrap();
    let cfg = BeamConfig { width: 8, lm_weight: 1.0, strip_silence: true };
    assert_eq!(beam_decode(&scores, &lm, &cfg).unwrap(), seq(&[1, 2]));
    let swapped = [l([0.1, 0.7, 0.1, 0.1]), l([0.1, 0.1, 0.39, 0.41])];
    let scores = Array::from_rows(&swapped).unwrap();
    assert_eq!(beam_decode(&scores, &lm, &cfg).unwrap(), seq(&[1, 2]));
    assert_eq!(greedy_decode(&scores, &inv, true).unwrap(), seq(&[1, 3]));
}
