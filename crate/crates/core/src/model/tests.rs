use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn arch(padding: Padding) -> Architecture {
    Architecture { padding, ..Architecture::desk(16, 12, 64) }
}

fn logits_len(arch: &Architecture, t: usize, stride: Option<usize>) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gen = GeneratorParams::<f64>::init(arch, &mut rng);
    let tape = Tape::new();
    let b = Bound::new(&tape, &gen, false);
    let x = tape.constant(crate::autodiff::gradcheck::random_array(&mut rng, &[t, arch.feature_dim]));
    let out = generator_forward(arch, &b, x, stride).unwrap();
    assert_eq!(out.aux_logits.shape(), vec![out.logits.shape()[0], arch.aux_classes]);
    out.logits.shape()[0]
}

#[test]
fn output_rate_from_fifty_hertz() {
    let valid = arch(Padding::Valid);
    assert_eq!(logits_len(&valid, 50, None), 16);
    assert_eq!(logits_len(&valid, 50, Some(2)), 24);
    let same = arch(Padding::Same);
    assert_eq!(logits_len(&same, 50, None), 17);
    assert_eq!(logits_len(&same, 50, Some(2)), 25);
}

#[test]
fn output_length_follows_conv_arithmetic() {
    for padding in [Padding::Same, Padding::Valid] {
        let a = arch(padding);
        let pad = if padding == Padding::Same { a.gen_kernel - 1 } else { 0 };
        for stride in [1, 2, 3] {
            for t in (a.gen_kernel..=500).step_by(37) {
                let want = (t + pad - a.gen_kernel) / stride + 1;
                assert_eq!(logits_len(&a, t, Some(stride)), want);
            }
        }
    }
}

#[test]
fn generator_rejects_wrong_dimension() {
    let a = arch(Padding::Same);
    let gen = GeneratorParams::<f64>::zeros(&a);
    let tape = Tape::new();
    let b = Bound::new(&tape, &gen, false);
    let x = tape.constant(Array::zeros(&[20, 15]));
    assert!(matches!(generator_forward(&a, &b, x, None), Err(Error::Contract(_))));
}

#[test]
fn zero_generator_gives_uniform_outputs() {
    let a = arch(Padding::Same);
    let gen = GeneratorParams::<f64>::zeros(&a);
    let tape = Tape::new();
    let b = Bound::new(&tape, &gen, false);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = tape.constant(crate::autodiff::gradcheck::random_array(&mut rng, &[30, 16]));
    let out = generator_forward(&a, &b, x, None).unwrap();
    let d = DistributionSequence::from_logits(out.logits.value());
    for t in 0..d.len() {
        for &p in d.probs.row(t) {
            assert!((p - 1.0 / 12.0).abs() < 1e-15);
        }
    }
}

fn run_logits(labels: &[usize], v: usize) -> Array<f64> {
    let mut a = Array::zeros(&[labels.len(), v]);
    for (t, &l) in labels.iter().enumerate() {
        a.data_mut()[t * v + l] = 1.0 + t as f64 * 0.01;
    }
    a
}

#[test]
fn merge_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = merge_consecutive(&run_logits(&[0, 0, 1, 1, 1, 2], 3), &mut rng);
    assert_eq!(d.segments, vec![(0, 2), (2, 5), (5, 6)]);
    assert_eq!(d.len(), 3);
    let d = merge_consecutive(&run_logits(&[0, 1, 2, 0], 3), &mut rng);
    assert_eq!(d.segments, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    assert_eq!(d.logits, run_logits(&[0, 1, 2, 0], 3));
    let empty = merge_consecutive(&Array::<f64>::zeros(&[0, 3]), &mut rng);
    assert!(empty.is_empty() && empty.segments.is_empty());
}

#[test]
fn merge_selects_uniformly() {
    let logits = run_logits(&[1, 1, 1], 2);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let trials = 30_000;
    let mut hits = [0usize; 3];
    for _ in 0..trials {
        hits[merge_plan(&logits, &mut rng).selected[0]] += 1;
    }
    for h in hits {
        let f = h as f64 / trials as f64;
        assert!((f - 1.0 / 3.0).abs() <= 0.01, "frequency {f}");
    }
}

#[test]
fn constant_discriminator() {
    let a = arch(Padding::Same);
    let mut disc = DiscriminatorParams::<f64>::zeros(&a);
    disc.conv2_b = Array::from_vec(&[1], vec![0.7]).unwrap();
    let tape = Tape::new();
    let b = Bound::new(&tape, &disc, false);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = tape.constant(crate::autodiff::gradcheck::random_array(&mut rng, &[9, 12]));
    let p = discriminator_forward(&a, &b, x).unwrap().item();
    assert!((p - 1.0 / (1.0 + (-0.7f64).exp())).abs() < 1e-15);
    let empty = tape.constant(Array::zeros(&[0, 12]));
    assert!(matches!(discriminator_forward(&a, &b, empty), Err(Error::Contract(_))));
}

#[test]
fn discriminator_output_in_open_interval() {
    let a = arch(Padding::Same);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let disc = DiscriminatorParams::<f64>::init(&a, &mut rng);
    let tape = Tape::new();
    let b = Bound::new(&tape, &disc, false);
    for len in [1, 2, 7, 40] {
        let x = crate::autodiff::gradcheck::random_array(&mut rng, &[len, 12]).map(|v| v * 5.0);
        let p = discriminator_forward(&a, &b, tape.constant(x)).unwrap().item();
        assert!(p > 0.0 && p < 1.0);
        let x = tape.constant(crate::autodiff::gradcheck::random_array(&mut rng, &[len, 12]));
        let p = discriminator_forward(&a, &b, x).unwrap().item();
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn constant_input_mean_pool_ignores_repetition() {
    let a = arch(Padding::Same);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut disc = DiscriminatorParams::<f64>::init(&a, &mut rng);
    disc.conv1_b = crate::autodiff::gradcheck::random_array(&mut rng, &[a.disc_hidden]);
    let tape = Tape::new();
    let b = Bound::new(&tape, &disc, false);
    let row: Vec<f64> = (0..12).map(|i| i as f64 / 66.0).collect();
    let seq = |n: usize| Array::from_rows(&vec![row.clone(); n]).unwrap();
    let once = discriminator_forward(&a, &b, tape.constant(seq(10))).unwrap().item();
    let twice = discriminator_forward(&a, &b, tape.constant(seq(20))).unwrap().item();
    // only the padded edge frames differ from the interior
    let n_edge = (a.disc_kernel - 1) as f64;
    assert!((once - twice).abs() < 1e-2 * n_edge);
    let interior_a = discriminator_forward(&a, &b, tape.constant(seq(200))).unwrap().item();
    let interior_b = discriminator_forward(&a, &b, tape.constant(seq(400))).unwrap().item();
    assert!((interior_a - interior_b).abs() < (once - twice).abs().max(1e-12));
}

#[test]
fn label_pooling() {
    let g = ConvGeom::valid(4, 3);
    // spans [0,4), [3,7)
    let labels = [1, 1, 2, 2, 2, 5, 5];
    assert_eq!(pool_labels(&labels, g, 2), vec![1, 2]);
    let labels = [3, 3, 4, 4, 4, 4, 9];
    assert_eq!(pool_labels(&labels, g, 2), vec![3, 4]);
    let same = ConvGeom::same(4, 3);
    // span of frame 0 is clipped to [0, 3)
    assert_eq!(pool_labels(&[7, 8, 8, 1], same, 1), vec![8]);
}

#[test]
fn checkpoint_round_trip() {
    let a = arch(Padding::Same);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gen = GeneratorParams::<f32>::init(&a, &mut rng);
    let ck = Checkpoint {
        header: serde_json::json!({"architecture": a, "step": 12}),
        arrays: gen.names().iter().map(|n| n.to_string()).zip(gen.arrays().into_iter().cloned()).collect(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    ck.write(&path).unwrap();
    let back = Checkpoint::read(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.get("gen.conv2_w").unwrap(), &gen.conv2_w);
    assert!(back.get("nope").is_err());
}
