use super::*;
use crate::model::Checkpoint;
use crate::synthbench::{generate, SynthSpec};

fn corpus() -> crate::synthbench::SynthCorpus {
    let spec = SynthSpec { n_train_utts: 24, n_dev_utts: 6, n_text_sents: 30, seed: 3, ..SynthSpec::default() };
    generate(&spec).unwrap()
}

fn data(c: &crate::synthbench::SynthCorpus) -> TrainData {
    TrainData {
        audio: c.train.iter().map(|u| u.features.clone()).collect(),
        pseudo: c
            .train
            .iter()
            .map(|u| PseudoLabelSequence { labels: u.frame_labels.clone(), num_classes: c.inventory.len(), frame_rate: 50.0 })
            .collect(),
        text: c.text.clone(),
        inventory: c.inventory.clone(),
    }
}

fn small_cfg() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.batch_audio = 5;
    cfg.batch_text = 4;
    cfg.model.hidden = 16;
    cfg.model.disc_hidden = 8;
    cfg.seed = 11;
    cfg
}

#[test]
fn steps_alternate_between_players() {
    let c = corpus();
    let d = data(&c);
    let cfg = small_cfg();
    let arch = d.architecture(&cfg);
    let mut st: ModelState<f32> = ModelState::init(&arch, cfg.seed);
    for step in 1..=4u64 {
        let (g0, d0) = (st.gen.clone(), st.disc.clone());
        let rec = train_step(&mut st, &arch, &cfg, &d).unwrap();
        assert_eq!(rec.step, step);
        if step % 2 == 1 {
            assert_eq!(st.gen, g0);
            assert_ne!(st.disc, d0);
        } else {
            assert_ne!(st.gen, g0);
            assert_eq!(st.disc, d0);
        }
    }
    assert_eq!((st.disc_opt.t, st.gen_opt.t), (2, 2));
}

#[test]
fn same_seed_same_trajectory() {
    let c = corpus();
    let d = data(&c);
    let mut cfg = small_cfg();
    cfg.total_steps = 6;
    let a = train(&cfg, &d, None, None, None, None).unwrap();
    let b = train(&cfg, &d, None, None, None, None).unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.losses, b.losses);
    cfg.seed += 1;
    let e = train(&cfg, &d, None, None, None, None).unwrap();
    assert_ne!(a.state.gen, e.state.gen);
}

#[test]
fn resume_is_bit_exact() {
    let c = corpus();
    let d = data(&c);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_cfg();
    // epochs of 24 utterances in batches of 5 force a reshuffle mid-run
    cfg.total_steps = 14;
    let straight = train(&cfg, &d, None, None, None, None).unwrap();

    cfg.total_steps = 7;
    let first = train(&cfg, &d, None, None, Some(dir.path()), None).unwrap();
    let ckpt = Checkpoint::read(&dir.path().join("final.ckpt")).unwrap();
    let (restored, arch, saved_cfg) = ModelState::from_checkpoint(&ckpt).unwrap();
    assert_eq!(restored, first.state);
    assert_eq!(arch, first.arch);
    assert_eq!(saved_cfg.as_ref(), Some(&cfg));

    cfg.total_steps = 14;
    let resumed = train(&cfg, &d, None, None, None, Some(restored)).unwrap();
    assert_eq!(resumed.state, straight.state);
    assert_eq!(&straight.losses[7..], &resumed.losses[..]);
}

#[test]
fn checkpoint_rejects_other_headers() {
    let ckpt = Checkpoint { header: serde_json::json!({"kind": "other"}), arrays: vec![] };
    assert!(matches!(ModelState::from_checkpoint(&ckpt), Err(Error::Format(_))));
}

#[test]
fn nan_parameters_abort_with_step() {
    let c = corpus();
    let d = data(&c);
    let cfg = small_cfg();
    let arch = d.architecture(&cfg);
    let mut st: ModelState<f32> = ModelState::init(&arch, 0);
    st.gen.conv2_b.data_mut()[0] = f32::NAN;
    match train_step(&mut st, &arch, &cfg, &d) {
        Err(Error::NonFinite { step, .. }) => assert_eq!(step, 1),
        other => panic!("expected NonFinite, got {:?}", other.map(|r| r.step)),
    }
}

#[test]
fn first_adam_step_moves_by_learning_rate() {
    let arch = Architecture::desk(3, 4, 2);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut p: GeneratorParams<f64> = GeneratorParams::init(&arch, &mut rng);
    let before = p.clone();
    let grads: Vec<_> = p.arrays().iter().map(|a| a.map(|_| -0.25)).collect();
    let mut opt = Adam::new(&p);
    opt.update(p.arrays_mut(), &grads, 1e-3, &AdamConfig::default());
    for (a, b) in p.arrays().iter().zip(before.arrays()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε)
            let expect = y + 1e-3 * 0.25 / (0.25 + 1e-8);
            assert!((x - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn selection_score_matches_direct_computation() {
    let inv = UnitInventory::numbered(3);
    let text: Vec<UnitSequence> = vec![vec![0, 1, 2, 0].into(), vec![0, 3, 1, 0].into()];
    let lm = NgramLm::train(&text, &inv, 2, 0.5).unwrap();
    let s = selection_score(&text, &lm, 0.7).unwrap();
    let nll = -(lm.log_prob(&text[0]).unwrap() + lm.log_prob(&text[1]).unwrap()) / 8.0;
    // usage: sil 4, u1 2, u2 1, u3 1
    let h: f64 = -[4.0, 2.0, 1.0, 1.0].iter().map(|c: &f64| c / 8.0 * (c / 8.0).ln()).sum::<f64>();
    assert!((s.lm_nll - nll).abs() < 1e-12);
    assert!((s.usage_entropy - h).abs() < 1e-12);
    assert!((s.score - (nll - 0.7 * h)).abs() < 1e-12);

    let empty = vec![UnitSequence::from(vec![]); 3];
    assert_eq!(selection_score(&empty, &lm, 0.7).unwrap().score, f64::INFINITY);
}

#[test]
fn probe_learns_true_labels_and_not_shuffled_ones() {
    let c = corpus();
    let feats: Vec<_> = c.train.iter().map(|u| u.features.clone()).collect();
    let labels: Vec<_> = c.train.iter().map(|u| u.frame_labels.clone()).collect();
    let dev: Vec<_> = c.dev.iter().map(|u| u.features.clone()).collect();
    let dev_labels: Vec<_> = c.dev.iter().map(|u| u.frame_labels.clone()).collect();
    let mut cfg = ProbeConfig { steps: 150, batch: 8, lr: 1e-2, ..ProbeConfig::default() };
    cfg.model.hidden = 32;
    let k = c.inventory.len();
    let r = supervised_probe(&cfg, (&feats, &labels), (&dev, &dev_labels), k).unwrap();
    assert!(r.accuracy > 0.9, "{r:?}");
    cfg.shuffle_labels = true;
    let s = supervised_probe(&cfg, (&feats, &labels), (&dev, &dev_labels), k).unwrap();
    assert!(s.accuracy <= s.majority_rate + 0.05, "{s:?}");
}

#[test]
fn config_round_trips_through_json() {
    let cfg = TrainConfig::desk();
    let s = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), cfg);
    let partial: TrainConfig = serde_json::from_str(r#"{"total_steps": 7}"#).unwrap();
    assert_eq!(partial.total_steps, 7);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
}
