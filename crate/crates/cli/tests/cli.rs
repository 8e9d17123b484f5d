use std::f32::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use uasr::dsp::{write_wav, AudioSignal};

fn uasr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uasr"))
        .args(args)
        .env("UASR_LOG", "error")
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let last = text.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(last).expect("last line is JSON")
}

fn ok(args: &[&str]) -> Value {
    let out = uasr(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["ok"], true);
    s
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(uasr(&[]).status.code(), Some(64));
    assert_eq!(uasr(&["nonsense"]).status.code(), Some(64));
    assert_eq!(uasr(&["eval", "--refs", "a.txt"]).status.code(), Some(64));
    assert_eq!(uasr(&["decode", "--ckpt", "x", "--features", "y", "--units", "z", "--beam", "4"]).status.code(), Some(64));
    assert_eq!(uasr(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.txt");
    let out = uasr(&["eval", "--refs", s(&missing), "--hyps", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    let sm = summary(&out);
    assert_eq!(sm["ok"], false);
    assert_eq!(sm["exit_code"], 2);
}

#[test]
fn eval_of_identical_files_is_zero() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.txt");
    fs::write(&refs, "sil a b c sil\nb b a\nc\n").unwrap();
    let sm = ok(&["eval", "--refs", s(&refs), "--hyps", s(&refs)]);
    assert_eq!(sm["per"], 0.0);
    assert_eq!(sm["ref_tokens"], 7);
}

#[test]
fn eval_counts_edits() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.txt");
    let hyps = dir.path().join("hyps.txt");
    fs::write(&refs, "a b c d\n").unwrap();
    fs::write(&hyps, "a x c\n").unwrap();
    let sm = ok(&["eval", "--refs", s(&refs), "--hyps", s(&hyps)]);
    assert_eq!(sm["sub"], 1);
    assert_eq!(sm["del"], 1);
    assert_eq!(sm["per"], 0.5);
}

#[test]
fn selftest_grad_passes() {
    let sm = ok(&["selftest", "grad", "--max-coords", "6", "--seed", "3"]);
    let checks = sm["checks"].as_array().unwrap();
    assert!(checks.len() >= 6);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn synth_and_cluster_repeat_under_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, r#"{"n_train_utts": 30, "n_dev_utts": 5, "n_text_sents": 50}"#).unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["synth", "--config", s(&cfg), "--seed", "11", "--out", s(&out)]);
        let cl = out.join("cl");
        ok(&["cluster", "--features", s(&out.join("train/feats")), "--k", "8", "--seed", "4", "--out", s(&cl)]);
        runs.push((
            fs::read(out.join("text.txt")).unwrap(),
            fs::read(out.join("train/transcripts.txt")).unwrap(),
            fs::read(cl.join("codebook.bin")).unwrap(),
            fs::read(cl.join("labels.txt")).unwrap(),
        ));
    }
    assert_eq!(runs[0], runs[1]);

    let other = dir.path().join("c");
    ok(&["synth", "--config", s(&cfg), "--seed", "12", "--out", s(&other)]);
    assert_ne!(fs::read(other.join("text.txt")).unwrap(), runs[0].0);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("spec.json");
    fs::write(&cfg, r#"{"n_units": 6, "colour": "blue"}"#).unwrap();
    let out = uasr(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
    assert!(!out.status.success());
    assert_eq!(summary(&out)["ok"], false);
}

#[test]
fn featurize_reads_generated_wavs() {
    let dir = TempDir::new().unwrap();
    let wavs = dir.path().join("wavs");
    fs::create_dir_all(&wavs).unwrap();
    let sr = 16_000;
    for (i, f0) in [220.0f32, 440.0, 660.0].into_iter().enumerate() {
        let n = sr as usize / 2 + i * 1600;
        let x: Vec<f32> = (0..n).map(|t| 0.3 * (2.0 * PI * f0 * t as f32 / sr as f32).sin()).collect();
        write_wav(&wavs.join(format!("utt{i}.wav")), &AudioSignal::new(x, sr).unwrap()).unwrap();
    }
    let out = dir.path().join("feats");
    let sm = ok(&["featurize", "--audio-dir", s(&wavs), "--out", s(&out)]);
    assert_eq!(sm["utterances"], 3);
    assert_eq!(sm["frame_rate"], 100.0);
    // 25 ms windows every 10 ms over 0.5 s, 0.6 s and 0.7 s of audio
    assert_eq!(sm["frames"], 48 + 58 + 68);
    let names = fs::read_to_string(out.join("utterances.txt")).unwrap();
    assert_eq!(names.lines().collect::<Vec<_>>(), ["utt0", "utt1", "utt2"]);

    let cl = dir.path().join("cl");
    let c = ok(&["cluster", "--features", s(&out), "--k", "4", "--out", s(&cl)]);
    assert_eq!(c["frames"], 48 + 58 + 68);
}

#[test]
fn phonemize_then_lm() {
    let dir = TempDir::new().unwrap();
    let text = dir.path().join("words.txt");
    let lex = dir.path().join("lex.tsv");
    fs::write(&text, "the cat\nthe dog sat\n").unwrap();
    fs::write(&lex, "the\tdh ah\ncat\tk ae t\ndog\td ao g\nsat\ts ae t\n").unwrap();
    let p = dir.path().join("ph");
    ok(&["phonemize", "--text", s(&text), "--lexicon", s(&lex), "--p-sil", "0", "--out", s(&p)]);
    let lines = fs::read_to_string(p.join("text.txt")).unwrap();
    assert_eq!(lines.lines().next().unwrap(), "sil dh ah k ae t sil");
    let lm = ok(&["lm", "--text", s(&p.join("text.txt")), "--units", s(&p.join("units.txt")), "--out", s(&dir.path().join("lm"))]);
    assert!(lm["train_nll"].as_f64().unwrap() > 0.0);

    fs::write(&text, "the cow\n").unwrap();
    let out = uasr(&["phonemize", "--text", s(&text), "--lexicon", s(&lex), "--out", s(&p)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(summary(&out)["error"].as_str().unwrap().contains("cow"));
}

#[test]
fn pipeline_decode_matches_logged_dev_per() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let spec = d.join("spec.json");
    fs::write(&spec, r#"{"n_train_utts": 80, "n_dev_utts": 20, "n_text_sents": 300}"#).unwrap();
    let corpus = d.join("corpus");
    ok(&["synth", "--config", s(&spec), "--seed", "2", "--out", s(&corpus)]);
    let cl = d.join("cl");
    ok(&["cluster", "--features", s(&corpus.join("train/feats")), "--k", "16", "--seed", "2", "--out", s(&cl)]);
    let units = corpus.join("units.txt");
    let lm_dir = d.join("lm");
    ok(&["lm", "--text", s(&corpus.join("text.txt")), "--units", s(&units), "--out", s(&lm_dir)]);
    let lm = lm_dir.join("lm.bin");

    let tcfg = d.join("train.json");
    fs::write(
        &tcfg,
        r#"{"total_steps": 30, "eval_every": 10, "checkpoint_every": 10, "batch_audio": 8, "batch_text": 8,
            "lr_generator": 1e-3, "lr_discriminator": 1e-3}"#,
    )
    .unwrap();
    let run = d.join("run");
    let dev_refs = corpus.join("dev/transcripts.txt");
    let t = ok(&[
        "train", "--features", s(&corpus.join("train/feats")), "--labels", s(&cl.join("labels.txt")),
        "--codebook", s(&cl.join("codebook.bin")), "--text", s(&corpus.join("text.txt")), "--units", s(&units),
        "--dev-features", s(&corpus.join("dev/feats")), "--dev-refs", s(&dev_refs), "--lm", s(&lm),
        "--config", s(&tcfg), "--seed", "5", "--out", s(&run),
    ]);
    assert_eq!(t["steps"], 30);
    let evals = t["evals"].as_array().unwrap().clone();
    assert_eq!(evals.len(), 3);
    let logged = fs::read_to_string(run.join("eval.jsonl")).unwrap();
    assert_eq!(logged.lines().count(), 3);

    let sel = ok(&["select", "--ckpt-dir", s(&run), "--features", s(&corpus.join("dev/feats")), "--lm", s(&lm)]);
    let ranking = sel["ranking"].as_array().unwrap();
    assert_eq!(ranking.len(), 3);
    let scores: Vec<f64> = ranking.iter().map(|r| r["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    let chosen = Path::new(sel["selected"].as_str().unwrap()).file_name().unwrap().to_str().unwrap().to_string();
    let record = evals.iter().find(|e| e["checkpoint"] == chosen.as_str()).expect("selected checkpoint was evaluated");
    let score = record["selection"]["score"].as_f64().unwrap();
    assert!((score - scores[0]).abs() <= 1e-12);

    let dec = d.join("dec");
    ok(&["decode", "--ckpt", s(&run.join(&chosen)), "--features", s(&corpus.join("dev/feats")), "--units", s(&units), "--out", s(&dec)]);
    let ev = ok(&["eval", "--refs", s(&dev_refs), "--hyps", s(&dec.join("hyps.txt")), "--units", s(&units)]);
    let logged_per = record["per"].as_f64().unwrap();
    assert!((ev["per"].as_f64().unwrap() - logged_per).abs() <= 1e-12, "{} vs {logged_per}", ev["per"]);

    // resuming from the second checkpoint reproduces the final state
    let run2 = d.join("run2");
    ok(&[
        "train", "--features", s(&corpus.join("train/feats")), "--labels", s(&cl.join("labels.txt")),
        "--codebook", s(&cl.join("codebook.bin")), "--text", s(&corpus.join("text.txt")), "--units", s(&units),
        "--config", s(&tcfg), "--seed", "5", "--resume", s(&run.join("step_0000020.ckpt")), "--out", s(&run2),
    ]);
    assert_eq!(fs::read(run.join("final.ckpt")).unwrap(), fs::read(run2.join("final.ckpt")).unwrap());
}
