use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use uasr::dsp::{mfcc, read_feature_dir, read_wav, remove_silence, write_feature_dir, FeatureSequence, MfccConfig};
use uasr::evalkit::{beam_decode, per, BeamConfig, PerReport};
use uasr::model::Checkpoint;
use uasr::quantizer::{fit_kmeans_traced, read_labels, write_labels, Codebook, KmeansOptions};
use uasr::synthbench::{generate, SynthSpec};
use uasr::textproc::{
    phonemize as to_units, read_unit_lines, write_unit_lines, Lexicon, NgramLm, UnitInventory, UnitSequence,
};
use uasr::trainer::{self, selection_metric, DevData, ModelState, TrainConfig, TrainData};
use uasr::{Error, Result};

use crate::{Global, Outcome};

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Contract(format!("--{what} is required for this command")))
}

/// `base` overlaid with the fields present in the `--config` file.
fn configured<T: Serialize + DeserializeOwned>(g: &Global, base: T) -> Result<T> {
    let Some(path) = &g.config else { return Ok(base) };
    let text = fs::read_to_string(path)?;
    let over: Value = serde_json::from_str(&text)?;
    let Value::Object(over) = over else {
        return Err(Error::Contract(format!("{} must hold a JSON object", path.display())));
    };
    let mut v = serde_json::to_value(base)?;
    for (k, x) in over {
        v[k] = x;
    }
    Ok(serde_json::from_value(v)?)
}

fn features_only(dir: &Path) -> Result<Vec<FeatureSequence>> {
    let seqs: Vec<_> = read_feature_dir(dir)?.into_iter().map(|(_, f)| f).collect();
    if seqs.is_empty() {
        return Err(Error::InsufficientData(format!("no .feat files in {}", dir.display())));
    }
    Ok(seqs)
}

fn print_table(rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        println!("{}", line.join("  "));
    }
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// Directory of 16-bit mono PCM WAV files
    #[arg(long, value_name = "DIR")]
    audio_dir: PathBuf,
    /// Drop frames quieter than this many dB below the peak before featurizing
    #[arg(long, value_name = "DB")]
    vad_db: Option<f64>,
    #[arg(long, default_value_t = 30.0, value_name = "MS")]
    vad_frame_ms: f64,
}

pub fn featurize(a: &FeaturizeArgs, g: &Global) -> Result<Outcome> {
    let out = required(&g.out, "out")?;
    let cfg: MfccConfig = configured(g, MfccConfig::default())?;
    cfg.validate()?;
    let mut wavs: Vec<PathBuf> = fs::read_dir(&a.audio_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    wavs.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")));
    wavs.sort();
    if wavs.is_empty() {
        return Err(Error::InsufficientData(format!("no .wav files in {}", a.audio_dir.display())));
    }
    let mut seqs = Vec::with_capacity(wavs.len());
    let mut names = String::new();
    for p in &wavs {
        let mut sig = read_wav(p)?;
        if let Some(db) = a.vad_db {
            sig = remove_silence(&sig, a.vad_frame_ms, db)?;
        }
        seqs.push(mfcc(&sig, &cfg)?);
        names.push_str(&p.file_stem().unwrap_or_default().to_string_lossy());
        names.push('\n');
    }
    write_feature_dir(out, &seqs)?;
    fs::write(out.join("utterances.txt"), names)?;
    Ok(json!({
        "utterances": seqs.len(),
        "frames": seqs.iter().map(FeatureSequence::len).sum::<usize>(),
        "dim": cfg.dim(),
        "frame_rate": seqs[0].frame_rate(),
        "out": out,
    })
    .into())
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    /// Directory of .feat files
    #[arg(long, value_name = "DIR")]
    features: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
}

pub fn cluster(a: &ClusterArgs, g: &Global) -> Result<Outcome> {
    let out = required(&g.out, "out")?;
    let mut opts: KmeansOptions = configured(g, KmeansOptions::default())?;
    opts.k = a.k.unwrap_or(opts.k);
    opts.max_iters = a.max_iters.unwrap_or(opts.max_iters);
    opts.seed = g.seed.unwrap_or(opts.seed);
    let feats = features_only(&a.features)?;
    let (cb, trace) = fit_kmeans_traced(&feats, &opts)?;
    let labels = feats.iter().map(|f| cb.assign(f)).collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(out)?;
    cb.write(&out.join("codebook.bin"))?;
    write_labels(&out.join("labels.txt"), &labels)?;
    Ok(json!({
        "k": cb.k(),
        "dim": cb.dim(),
        "seed": opts.seed,
        "frames": feats.iter().map(FeatureSequence::len).sum::<usize>(),
        "iterations": trace.len(),
        "sse": trace.last(),
        "out": out,
    })
    .into())
}

#[derive(Args, Debug)]
pub struct SynthArgs {}

pub fn synth(_: &SynthArgs, g: &Global) -> Result<Outcome> {
    let out = required(&g.out, "out")?;
    let mut spec: SynthSpec = configured(g, SynthSpec::default())?;
    spec.seed = g.seed.unwrap_or(spec.seed);
    let c = generate(&spec)?;
    c.write(out)?;
    let frames = |u: &[uasr::synthbench::SynthUtterance]| u.iter().map(|u| u.features.len()).sum::<usize>();
    Ok(json!({
        "seed": spec.seed,
        "units": c.inventory.len(),
        "dim": spec.dim,
        "train_utterances": c.train.len(),
        "train_frames": frames(&c.train),
        "dev_utterances": c.dev.len(),
        "dev_frames": frames(&c.dev),
        "text_sentences": c.text.len(),
        "out": out,
    })
    .into())
}

#[derive(Args, Debug)]
pub struct PhonemizeArgs {
    /// Word text, one sentence per line
    #[arg(long, value_name = "FILE")]
    text: PathBuf,
    /// Tab-separated `word<TAB>unit unit ...` lexicon
    #[arg(long, value_name = "FILE", conflicts_with = "letters", required_unless_present = "letters")]
    lexicon: Option<PathBuf>,
    /// Spell words into letters instead of using a lexicon
    #[arg(long)]
    letters: bool,
    /// Probability of silence at each word boundary
    #[arg(long, default_value_t = 0.5)]
    p_sil: f64,
}

pub fn phonemize(a: &PhonemizeArgs, g: &Global) -> Result<Outcome> {
    let out = required(&g.out, "out")?;
    let text = fs::read_to_string(&a.text)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::read(p)?,
        None => Lexicon::spelling(lines.iter().flat_map(|l| l.split_whitespace())),
    };
    let inv = lexicon.inventory()?;
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed.unwrap_or(0));
    let mut seqs = Vec::with_capacity(lines.len());
    let mut oov = Vec::new();
    for l in &lines {
        let words: Vec<&str> = l.split_whitespace().collect();
        match to_units(&words, &lexicon, &inv, a.p_sil, &mut rng) {
            Ok(s) => seqs.push(s),
            Err(Error::OutOfVocabulary(w)) => oov.extend(w),
            Err(e) => return Err(e),
        }
    }
    if !oov.is_empty() {
        oov.sort();
        oov.dedup();
        return Err(Error::OutOfVocabulary(oov));
    }
    fs::create_dir_all(out)?;
    inv.write(&out.join("units.txt"))?;
    write_unit_lines(&out.join("text.txt"), &inv, &seqs)?;
    Ok(json!({
        "sentences": seqs.len(),
        "units": inv.len(),
        "tokens": seqs.iter().map(UnitSequence::len).sum::<usize>(),
        "p_sil": a.p_sil,
        "out": out,
    })
    .into())
}

#[derive(Args, Debug)]
pub struct LmArgs {
    /// Unit text, one space-separated sequence per line
    #[arg(long, value_name = "FILE")]
    text: PathBuf,
    /// Unit inventory, one unit per line, silence first
    #[arg(long, value_name = "FILE")]
    units: PathBuf,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
}

pub fn lm(a: &LmArgs, g: &Global) -> Result<Outcome> {
    let out = required(&g.out, "out")?;
    let inv = UnitInventory::read(&a.units)?;
    let text = read_unit_lines(&a.text, &inv)?;
    let lm = NgramLm::train(&text, &inv, a.order, a.alpha)?;
    let tokens: usize = text.iter().map(UnitSequence::len).sum();
    let mut log_prob = 0.0;
    for s in &text {
        log_prob += lm.log_prob(s)?;
    }
    let nll = -log_prob / tokens.max(1) as f64;
    fs::create_dir_all(out)?;
    lm.write(&out.join("lm.bin"))?;
    Ok(json!({
        "order": a.order,
        "alpha": a.alpha,
        "sentences": text.len(),
        "tokens": tokens,
        "train_nll": nll,
        "train_perplexity": nll.exp(),
        "out": out,
    })
    .into())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// 5000 steps, batches of 32, narrow layers
    Desk,
    /// 100k steps, batches of 160, full widths
    Full,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training audio features (.feat directory)
    #[arg(long, value_name = "DIR")]
    features: PathBuf,
    /// Pseudo-labels aligned with --features
    #[arg(long, value_name = "FILE")]
    labels: PathBuf,
    /// Codebook the labels came from
    #[arg(long, value_name = "FILE")]
    codebook: PathBuf,
    /// Unpaired unit text
    #[arg(long, value_name = "FILE")]
    text: PathBuf,
    #[arg(long, value_name = "FILE")]
    units: PathBuf,
    #[arg(long, value_name = "DIR", requires = "dev_refs")]
    dev_features: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "dev_features")]
    dev_refs: Option<PathBuf>,
    /// Unit LM for the selection metric logged at each evaluation
    #[arg(long, value_name = "FILE")]
    lm: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    steps: Option<u64>,
    /// Continue from a training-state checkpoint
    #[arg(long, value_name = "FILE")]
    resume: Option<PathBuf>,
}

pub fn train(a: &TrainArgs, g: &Global) -> Result<Outcome> {
    let out = required(&g.out, "out")?;
    let base = match a.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Full => TrainConfig::default(),
    };
    let mut cfg: TrainConfig = configured(g, base)?;
    cfg.seed = g.seed.unwrap_or(cfg.seed);
    cfg.total_steps = a.steps.unwrap_or(cfg.total_steps);

    let inv = UnitInventory::read(&a.units)?;
    let audio = features_only(&a.features)?;
    let cb = Codebook::read(&a.codebook)?;
    let pseudo = read_labels(&a.labels, cb.k(), audio[0].frame_rate())?;
    let text = read_unit_lines(&a.text, &inv)?;
    let data = TrainData { audio, pseudo, text, inventory: inv.clone() };
    let dev = match (&a.dev_features, &a.dev_refs) {
        (Some(f), Some(r)) => Some(DevData { audio: features_only(f)?, refs: read_unit_lines(r, &inv)? }),
        _ => None,
    };
    let lm = a.lm.as_deref().map(NgramLm::read).transpose()?;
    let resume = match &a.resume {
        Some(p) => {
            let (state, arch, _) = ModelState::from_checkpoint(&Checkpoint::read(p)?)?;
            if arch != data.architecture(&cfg) {
                return Err(Error::Contract("resumed checkpoint does not match the configured architecture".into()));
            }
            Some(state)
        }
        None => None,
    };
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let r = trainer::train(&cfg, &data, dev.as_ref(), lm.as_ref(), Some(out), resume)?;
    if g.pretty {
        let mut rows = vec![vec!["step".into(), "per".into(), "score".into(), "checkpoint".into()]];
        for e in &r.evals {
            rows.push(vec![
                e.step.to_string(),
                e.per.map_or("-".into(), |p| format!("{:.4}", p)),
                e.selection.map_or("-".into(), |s| format!("{:.4}", s.score)),
                e.checkpoint.clone().unwrap_or_default(),
            ]);
        }
        print_table(&rows);
    }
    Ok(json!({
        "seed": cfg.seed,
        "steps": r.state.step,
        "last_loss": r.losses.last(),
        "evals": r.evals,
        "out": out,
    })
    .into())
}

fn load_generator(path: &Path) -> Result<(uasr::model::Architecture, uasr::model::GeneratorParams<f32>, Option<TrainConfig>)> {
    let (state, arch, cfg) = ModelState::from_checkpoint(&Checkpoint::read(path)?)?;
    Ok((arch, state.gen, cfg))
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    #[arg(long, value_name = "FILE")]
    ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    features: PathBuf,
    #[arg(long, value_name = "FILE")]
    units: PathBuf,
    /// Generator stride at decode time; defaults to the training setting
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    keep_silence: bool,
    /// Beam width; greedy decoding when absent
    #[arg(long, requires = "lm")]
    beam: Option<usize>,
    #[arg(long, value_name = "FILE")]
    lm: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    lm_weight: f64,
}

fn log_softmax_rows(a: &uasr::autodiff::Array<f32>) -> uasr::autodiff::Array<f32> {
    let mut out = a.clone();
    let cols = a.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f32>().ln();
        row.iter_mut().for_each(|x| *x -= lse);
    }
    out
}

pub fn decode(a: &DecodeArgs, g: &Global) -> Result<Outcome> {
    let out = required(&g.out, "out")?;
    let (arch, gen, cfg) = load_generator(&a.ckpt)?;
    let inv = UnitInventory::read(&a.units)?;
    if inv.len() != arch.num_units {
        return Err(Error::Contract(format!("{} units in inventory, generator emits {}", inv.len(), arch.num_units)));
    }
    let stride = a.stride.or(cfg.as_ref().and_then(|c| c.decode_stride));
    let strip = !a.keep_silence && cfg.as_ref().is_none_or(|c| c.strip_silence);
    let feats = features_only(&a.features)?;
    let hyps = match a.beam {
        None => trainer::decode_corpus(&arch, &gen, &feats, stride, &inv, strip)?,
        Some(width) => {
            let lm = NgramLm::read(required(&a.lm, "lm")?)?;
            let bc = BeamConfig { width, lm_weight: a.lm_weight, strip_silence: strip };
            feats
                .iter()
                .map(|f| beam_decode(&log_softmax_rows(&trainer::generator_logits(&arch, &gen, f, stride)?), &lm, &bc))
                .collect::<Result<Vec<_>>>()?
        }
    };
    fs::create_dir_all(out)?;
    write_unit_lines(&out.join("hyps.txt"), &inv, &hyps)?;
    Ok(json!({
        "utterances": hyps.len(),
        "tokens": hyps.iter().map(UnitSequence::len).sum::<usize>(),
        "stride": stride.unwrap_or(arch.stride),
        "strip_silence": strip,
        "beam": a.beam,
        "out": out.join("hyps.txt"),
    })
    .into())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    refs: PathBuf,
    #[arg(long, value_name = "FILE")]
    hyps: PathBuf,
    /// Unit inventory; built from the two files when absent
    #[arg(long, value_name = "FILE")]
    units: Option<PathBuf>,
    #[arg(long)]
    keep_silence: bool,
}

fn inventory_from_files(paths: &[&Path]) -> Result<UnitInventory> {
    let mut units = std::collections::BTreeSet::new();
    for p in paths {
        for tok in fs::read_to_string(p)?.split_whitespace() {
            if tok != uasr::textproc::SILENCE {
                units.insert(tok.to_string());
            }
        }
    }
    UnitInventory::new(&units.into_iter().collect::<Vec<_>>())
}

pub fn per_report(refs: &[UnitSequence], hyps: &[UnitSequence], inv: &UnitInventory, keep_silence: bool) -> Result<PerReport> {
    if keep_silence {
        per(refs, hyps)
    } else {
        let strip = |s: &[UnitSequence]| s.iter().map(|x| x.without(inv.silence())).collect::<Vec<_>>();
        per(&strip(refs), &strip(hyps))
    }
}

pub fn eval(a: &EvalArgs, g: &Global) -> Result<Outcome> {
    let inv = match &a.units {
        Some(p) => UnitInventory::read(p)?,
        None => inventory_from_files(&[&a.refs, &a.hyps])?,
    };
    let refs = read_unit_lines(&a.refs, &inv)?;
    let hyps = read_unit_lines(&a.hyps, &inv)?;
    let r = per_report(&refs, &hyps, &inv, a.keep_silence)?;
    if g.pretty {
        print_table(&[
            vec!["per".into(), "sub".into(), "del".into(), "ins".into(), "ref_tokens".into()],
            vec![format!("{:.4}", r.per), r.sub.to_string(), r.del.to_string(), r.ins.to_string(), r.ref_tokens.to_string()],
        ]);
    }
    Ok(json!({
        "per": r.per,
        "sub": r.sub,
        "del": r.del,
        "ins": r.ins,
        "ref_tokens": r.ref_tokens,
        "utterances": refs.len(),
    })
    .into())
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Directory holding training checkpoints (*.ckpt)
    #[arg(long, value_name = "DIR")]
    ckpt_dir: PathBuf,
    /// Unlabeled dev features
    #[arg(long, value_name = "DIR")]
    features: PathBuf,
    #[arg(long, value_name = "FILE")]
    lm: PathBuf,
    /// Weight of the usage-entropy bonus; defaults to the training setting
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Reference transcripts, to report PER next to each score
    #[arg(long, value_name = "FILE")]
    refs: Option<PathBuf>,
}

pub fn select(a: &SelectArgs, g: &Global) -> Result<Outcome> {
    let lm = NgramLm::read(&a.lm)?;
    let feats = features_only(&a.features)?;
    let refs = a.refs.as_deref().map(|p| read_unit_lines(p, lm.inventory())).transpose()?;
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.ckpt_dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "ckpt"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InsufficientData(format!("no checkpoints in {}", a.ckpt_dir.display())));
    }
    let mut rows = Vec::with_capacity(paths.len());
    for p in &paths {
        let (arch, gen, cfg) = load_generator(p)?;
        let mu = a.mu.or(cfg.as_ref().map(|c| c.selection_mu)).unwrap_or(1.0);
        let stride = a.stride.or(cfg.as_ref().and_then(|c| c.decode_stride));
        let s = selection_metric(&arch, &gen, &feats, &lm, mu, stride)?;
        let per = match &refs {
            Some(r) => {
                let strip = cfg.as_ref().is_none_or(|c| c.strip_silence);
                let hyps = trainer::decode_corpus(&arch, &gen, &feats, stride, lm.inventory(), strip)?;
                Some(per_report(r, &hyps, lm.inventory(), !strip)?.per)
            }
            None => None,
        };
        rows.push((p.clone(), s, per));
    }
    // stable: ties keep directory order
    rows.sort_by(|x, y| x.1.score.total_cmp(&y.1.score));
    let ranking: Vec<Value> = rows
        .iter()
        .enumerate()
        .map(|(i, (p, s, per))| {
            json!({"rank": i + 1, "checkpoint": p, "score": s.score, "lm_nll": s.lm_nll,
                   "usage_entropy": s.usage_entropy, "per": per})
        })
        .collect();
    if g.pretty {
        let mut t = vec![vec!["rank".into(), "score".into(), "lm_nll".into(), "entropy".into(), "per".into(), "checkpoint".into()]];
        for (i, (p, s, per)) in rows.iter().enumerate() {
            t.push(vec![
                (i + 1).to_string(),
                format!("{:.4}", s.score),
                format!("{:.4}", s.lm_nll),
                format!("{:.4}", s.usage_entropy),
                per.map_or("-".into(), |x| format!("{x:.4}")),
                p.display().to_string(),
            ]);
        }
        print_table(&t);
    }
    Ok(json!({"selected": rows[0].0, "ranking": ranking}).into())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    /// Loss-term gradients against central finite differences
    Grad,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(value_enum)]
    suite: Suite,
    /// Coordinates checked per parameter array
    #[arg(long, default_value_t = 24)]
    max_coords: usize,
}

pub fn selftest(a: &SelftestArgs, g: &Global) -> Result<Outcome> {
    match a.suite {
        Suite::Grad => {
            let checks = uasr::objectives::gradient_suite(g.seed.unwrap_or(0), a.max_coords)?;
            let ok = checks.iter().all(|c| c.passed());
            if g.pretty {
                let mut t = vec![vec!["term".into(), "rel_err".into(), "tol".into(), "coords".into(), "ok".into()]];
                for c in &checks {
                    t.push(vec![c.name.clone(), format!("{:.3e}", c.rel_err), format!("{:.0e}", c.tol), c.coords.to_string(), c.passed().to_string()]);
                }
                print_table(&t);
            }
            let list: Vec<Value> = checks
                .iter()
                .map(|c| json!({"term": c.name, "rel_err": c.rel_err, "tol": c.tol, "coords": c.coords, "passed": c.passed()}))
                .collect();
            Ok(Outcome { summary: json!({"suite": "grad", "checks": list}), ok })
        }
    }
}
