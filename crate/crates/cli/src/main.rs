//! `uasr`: one binary for the whole pipeline. Every run ends with a single
//! JSON summary line on stdout.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "uasr", version, about = "Unsupervised phoneme recognition by adversarial training")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Global {
    /// JSON configuration for the subcommand
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Also print human-readable tables
    #[arg(long, global = true)]
    pub pretty: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// WAV directory to MFCC feature files
    Featurize(commands::FeaturizeArgs),
    /// Fit a k-means codebook and write frame pseudo-labels
    Cluster(commands::ClusterArgs),
    /// Generate a synthetic corpus
    Synth(commands::SynthArgs),
    /// Words to unit sequences through a lexicon
    Phonemize(commands::PhonemizeArgs),
    /// Train an n-gram unit language model
    Lm(commands::LmArgs),
    /// Adversarial training
    Train(commands::TrainArgs),
    /// Transcribe features with a trained generator
    Decode(commands::DecodeArgs),
    /// Unit error rate of hypotheses against references
    Eval(commands::EvalArgs),
    /// Rank checkpoints by the unsupervised selection metric
    Select(commands::SelectArgs),
    /// Built-in consistency checks
    Selftest(commands::SelftestArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Featurize(_) => "featurize",
            Command::Cluster(_) => "cluster",
            Command::Synth(_) => "synth",
            Command::Phonemize(_) => "phonemize",
            Command::Lm(_) => "lm",
            Command::Train(_) => "train",
            Command::Decode(_) => "decode",
            Command::Eval(_) => "eval",
            Command::Select(_) => "select",
            Command::Selftest(_) => "selftest",
        }
    }
}

const EXIT_CONTRACT: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 64;

fn exit_code(e: &uasr::Error) -> u8 {
    use uasr::Error::*;
    match e {
        Io(_) | Format(_) | UnsupportedFormat(_) => EXIT_IO,
        _ => EXIT_CONTRACT,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UASR_LOG", "warn")).init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }

    let name = cli.command.name();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Featurize(a) => commands::featurize(a, g),
        Command::Cluster(a) => commands::cluster(a, g),
        Command::Synth(a) => commands::synth(a, g),
        Command::Phonemize(a) => commands::phonemize(a, g),
        Command::Lm(a) => commands::lm(a, g),
        Command::Train(a) => commands::train(a, g),
        Command::Decode(a) => commands::decode(a, g),
        Command::Eval(a) => commands::eval(a, g),
        Command::Select(a) => commands::select(a, g),
        Command::Selftest(a) => commands::selftest(a, g),
    };
    match result {
        Ok(Outcome { mut summary, ok }) => {
            summary["command"] = json!(name);
            summary["ok"] = json!(ok);
            println!("{summary}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_CONTRACT)
            }
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            println!("{}", json!({"command": name, "ok": false, "error": e.to_string(), "exit_code": code}));
            ExitCode::from(code)
        }
    }
}

/// Summary of a finished subcommand; `ok = false` maps to exit code 1.
pub struct Outcome {
    pub summary: Value,
    pub ok: bool,
}

impl From<Value> for Outcome {
    fn from(summary: Value) -> Self {
        Self { summary, ok: true }
    }
}
