mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Overrides;

#[derive(Parser, Debug)]
#[command(name = "stylevc", version, about = "Style-transferable non-parallel voice conversion toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options accepted by every subcommand.
#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file (TOML); overrides built-in defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice (initialization, batching, corpora).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model size preset: full, toy or micro.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Override one config value, e.g. `--set features.n_mels=40`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// Optimizer steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Utterances per step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Peak learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum RefPolicy {
    /// Each utterance is its own style reference.
    Source,
    /// One reference utterance (`--reference`) for all.
    Fixed,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic multi-speaker corpus (WAVs, manifest, alignments, inventory).
    SynthCorpus {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of utterances.
        #[arg(long)]
        utterances: Option<usize>,
        /// Number of speakers.
        #[arg(long)]
        speakers: Option<usize>,
    },
    /// Compute log-mel spectrograms and F0 contours for every manifest entry.
    ExtractFeatures {
        /// Manifest (id, audio path, speaker, phonemes; tab separated).
        #[arg(long)]
        manifest: PathBuf,
        /// Phoneme inventory file [default: inventory.txt beside the manifest].
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Output directory for `<id>.mel` and `<id>.f0.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Force-align manifest transcripts with a recognizer and write an alignment file.
    Align {
        #[arg(long)]
        manifest: PathBuf,
        /// Recognizer checkpoint directory.
        #[arg(long)]
        asr: PathBuf,
        /// Alignment file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the phoneme recognizer.
    TrainAsr {
        #[arg(long)]
        manifest: PathBuf,
        /// Phoneme inventory file [default: inventory.txt beside the manifest].
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train the speech generator on aligned utterances.
    TrainTts {
        #[arg(long)]
        manifest: PathBuf,
        /// Alignment file [default: alignments.txt beside the manifest].
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// Phoneme inventory file [default: inventory.txt beside the manifest].
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Adapt a trained generator to a (possibly new) speaker.
    Adapt {
        /// Generator checkpoint to start from.
        #[arg(long)]
        gen: PathBuf,
        /// Adaptation utterances; all attributed to `--speaker`.
        #[arg(long)]
        manifest: PathBuf,
        /// Alignment file [default: alignments.txt beside the manifest].
        #[arg(long)]
        alignments: Option<PathBuf>,
        /// Speaker name.
        #[arg(long)]
        speaker: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Convert one utterance; pass the source as `--reference` to keep its style.
    Convert {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Target speaker, by name or table index.
        #[arg(long)]
        speaker: String,
        #[arg(long)]
        asr: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Recognition beam width.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Convert every manifest entry to one target speaker.
    BatchConvert {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "source")]
        reference_policy: RefPolicy,
        /// Reference WAV for `--reference-policy fixed`.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Target speaker, by name or table index.
        #[arg(long)]
        speaker: String,
        #[arg(long)]
        asr: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phone error rate with substitution/deletion/insertion breakdown.
    EvalPer {
        /// Hypotheses CSV (`id,phonemes`). Alternatively use `--asr` with `--manifest`.
        #[arg(long, conflicts_with = "asr")]
        hyp: Option<PathBuf>,
        /// References CSV (`id,phonemes`). Alternatively use `--manifest`.
        #[arg(long, conflicts_with = "manifest")]
        r#ref: Option<PathBuf>,
        /// Recognize the manifest audio with this recognizer to obtain hypotheses.
        #[arg(long, requires = "manifest")]
        asr: Option<PathBuf>,
        /// Manifest whose transcripts are the references.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Per-utterance rows CSV to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlay interpolated F0 contours of several WAVs (SVG plus CSV).
    PlotF0 {
        /// `label=path.wav`; repeat for each contour.
        #[arg(long = "contour", required = true, value_name = "LABEL=WAV")]
        contours: Vec<String>,
        /// SVG file to write; the CSV goes beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the AB/ABX listening-test HTTP service.
    ServeTests {
        /// Directory holding test definitions and response logs.
        #[arg(long)]
        store: PathBuf,
        /// Address to bind.
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let train = match &cli.command {
        Command::TrainAsr { train, .. } | Command::TrainTts { train, .. } | Command::Adapt { train, .. } => {
            Some(train.clone())
        }
        _ => None,
    };
    let ov = Overrides {
        preset: cli.common.preset.clone(),
        seed: cli.common.seed,
        set: cli.common.set.clone(),
        steps: train.as_ref().and_then(|t| t.steps),
        batch_size: train.as_ref().and_then(|t| t.batch_size),
        lr: train.as_ref().and_then(|t| t.lr),
    };
    let result = config::resolve(cli.common.config.as_deref(), &ov).and_then(|cfg| commands::run(cli.command, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
