use std::collections::HashSet;

use super::*;
use crate::quantizer::{fit_kmeans, KmeansOptions};

fn small(seed: u64) -> SynthSpec {
    SynthSpec { n_train_utts: 60, n_dev_utts: 10, n_text_sents: 100, seed, ..SynthSpec::default() }
}

#[test]
fn same_seed_same_corpus() {
    assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
    assert_ne!(generate(&small(3)).unwrap().text, generate(&small(4)).unwrap().text);
}

#[test]
fn rejects_tiny_inventory() {
    let spec = SynthSpec { n_units: 1, ..small(0) };
    assert!(matches!(generate(&spec), Err(Error::Contract(_))));
}

#[test]
fn means_are_separated() {
    let spec = SynthSpec { n_units: 20, dim: 8, ..small(1) };
    let c = generate(&spec).unwrap();
    let (v, d) = (20, 8);
    let mut closest = f64::INFINITY;
    for i in 0..v {
        for j in i + 1..v {
            let dist: f64 = (0..d).map(|k| (c.means[i * d + k] - c.means[j * d + k]).powi(2)).sum();
            closest = closest.min(dist.sqrt());
        }
    }
    assert!(closest >= spec.delta_min * (1.0 - 1e-12));
}

#[test]
fn transcripts_match_frame_labels() {
    let c = generate(&small(2)).unwrap();
    for u in c.train.iter().chain(&c.dev) {
        assert_eq!(UnitSequence(u.frame_labels.clone()).collapsed(), u.transcript);
        assert_eq!(u.transcript.collapsed(), u.transcript);
        assert_eq!(u.features.len(), u.frame_labels.len());
        assert_eq!(u.transcript.as_slice().first(), Some(&0));
        assert_eq!(u.transcript.as_slice().last(), Some(&0));
    }
}

#[test]
fn text_is_disjoint_from_audio() {
    let c = generate(&small(5)).unwrap();
    let audio: HashSet<_> = c.train.iter().chain(&c.dev).map(|u| &u.transcript).collect();
    assert!(c.text.iter().all(|s| !audio.contains(s)));
}

#[test]
fn noiseless_clusters_are_pure() {
    let spec = SynthSpec { noise: Some(0.0), ..small(6) };
    let c = generate(&spec).unwrap();
    let feats: Vec<_> = c.train.iter().map(|u| u.features.clone()).collect();
    let cb = fit_kmeans(&feats, &KmeansOptions { k: spec.n_units, seed: 1, ..Default::default() }).unwrap();
    // purity: every cluster holds frames of a single unit
    let mut owner = vec![None; spec.n_units];
    let mut majority = 0;
    let mut total = 0;
    for u in &c.train {
        for (l, &truth) in cb.assign(&u.features).unwrap().labels.iter().zip(&u.frame_labels) {
            total += 1;
            match owner[*l] {
                None => {
                    owner[*l] = Some(truth);
                    majority += 1;
                }
                Some(o) if o == truth => majority += 1,
                Some(_) => {}
            }
        }
    }
    assert_eq!(majority, total);
}

#[test]
fn nearest_mean_accuracy() {
    let spec = SynthSpec { n_train_utts: 300, ..SynthSpec::default() };
    let c = generate(&spec).unwrap();
    let d = spec.dim;
    let (mut hit, mut n) = (0, 0);
    for u in &c.train {
        for (t, &truth) in u.frame_labels.iter().enumerate() {
            let x = u.features.frame(t);
            let mut best = (0, f64::INFINITY);
            for k in 0..spec.n_units {
                let dist: f64 = (0..d).map(|j| (x[j] as f64 - c.means[k * d + j]).powi(2)).sum();
                if dist < best.1 {
                    best = (k, dist);
                }
            }
            hit += usize::from(best.0 == truth);
            n += 1;
        }
    }
    assert!(hit as f64 / n as f64 >= 0.99, "accuracy {}", hit as f64 / n as f64);
}

#[test]
fn text_frequencies_follow_stationary_distribution() {
    let spec = SynthSpec { n_train_utts: 20, n_dev_utts: 5, n_text_sents: 5000, ..SynthSpec::default() };
    let c = generate(&spec).unwrap();
    let v = spec.n_units;
    let mut pi = vec![1.0 / v as f64; v];
    for _ in 0..2000 {
        let mut next = vec![0.0; v];
        for i in 0..v {
            for j in 0..v {
                next[j] += pi[i] * c.transitions[i * v + j];
            }
        }
        pi = next;
    }
    // drop the leading silence so sentences chain into one trajectory
    let mut counts = vec![0usize; v];
    for s in &c.text {
        for &u in &s.as_slice()[1..] {
            counts[u] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let chi2: f64 = (0..v)
        .map(|k| {
            let e = pi[k] * n as f64;
            (counts[k] as f64 - e).powi(2) / e
        })
        .sum();
    assert!(chi2 <= 100.0, "chi-square {chi2}");
}

#[test]
fn writes_corpus_files() {
    let c = generate(&small(9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    c.write(dir.path()).unwrap();
    let inv = UnitInventory::read(&dir.path().join("units.txt")).unwrap();
    assert_eq!(inv, c.inventory);
    let refs = crate::textproc::read_unit_lines(&dir.path().join("dev/transcripts.txt"), &inv).unwrap();
    assert_eq!(refs.len(), c.dev.len());
    assert_eq!(refs[0], c.dev[0].transcript);
    let feats = crate::dsp::read_feature_dir(&dir.path().join("train/feats")).unwrap();
    assert_eq!(feats.len(), c.train.len());
    assert_eq!(feats[7].1, c.train[7].features);
}
