//! Command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::inspect::{evaluate, export_attention_map, export_kernel_weights, KernelKind};
use crate::model::Checkpoint;
use crate::tasks::{generate, SyntheticTaskSpec, TaskKind};
use crate::train::{train, RunConfig, CHECKPOINT_FILE, METRICS_FILE};

/// Exit code for bad invocations and missing inputs named on the command line.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Parser, Debug)]
#[command(name = "convattn", version, about = "Train and inspect convolution-augmented attention encoders")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// RNG seed (overrides the run config's seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for `train`, output file for everything else (stdout when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes checkpoint.bin and metrics.tsv into --out.
    Train {
        /// Corpus path, overriding the config's.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Masked-token accuracy and loss of a checkpoint on a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.15)]
        mask_prob: f64,
    },
    /// Generate a synthetic neighbour-copy corpus.
    GenSynthetic {
        #[arg(long, value_parser = parse_kind)]
        kind: TaskKind,
        /// Number of sequences.
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        #[arg(long, default_value_t = 16)]
        len: usize,
    },
    /// Export a layer's fixed (per head) or depthwise (per channel) kernel as CSV.
    ExportKernels {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value = "fixed", value_parser = parse_kernel)]
        kind: KernelKind,
        /// Row range `start..end` over heads or channels.
        #[arg(long, value_parser = parse_range)]
        rows: Option<Range<usize>>,
        #[arg(long)]
        sort_by_argmax: bool,
    },
    /// Export one head's attention map for a sentence as CSV.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sentence: String,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
        /// Wrap the sentence in [CLS] ... [SEP].
        #[arg(long)]
        specials: bool,
    },
}

fn parse_kind(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_range(s: &str) -> Result<Range<usize>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected start..end, got `{s}`"))?;
    let a = a.parse().map_err(|e| format!("bad range start: {e}"))?;
    let b = b.parse().map_err(|e| format!("bad range end: {e}"))?;
    Ok(a..b)
}

/// A failure with its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: EXIT_FAILURE,
            message: e.to_string(),
        }
    }
}

fn usage(message: String) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message,
    }
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.exists() {
        return Err(usage(format!("checkpoint not found: {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let Common { seed, config, out } = cli.common;
    match cli.command {
        Command::Train { corpus } => {
            let path = config.ok_or_else(|| usage("train requires --config <FILE>".into()))?;
            if !path.is_file() {
                return Err(usage(format!("config file not found: {}", path.display())));
            }
            let out = out.ok_or_else(|| usage("train requires --out <DIR>".into()))?;
            let mut cfg = RunConfig::load(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            let report = train(&cfg, Some(&out))?;
            let last = report.log.last().map(String::as_str).unwrap_or("no logged steps");
            println!(
                "trained {} steps; wrote {} and {} ({last})",
                cfg.steps,
                out.join(CHECKPOINT_FILE).display(),
                out.join(METRICS_FILE).display()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            mask_prob,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let text = fs::read_to_string(&data).map_err(|e| Error::io(&data, e))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let report = evaluate(&ckpt, &lines, mask_prob, seed.unwrap_or(0))?;
            let mut w = open_out(out.as_deref())?;
            writeln!(
                w,
                "accuracy\t{}\nloss\t{}\npositions\t{}",
                report.accuracy, report.mean_loss, report.positions
            )
            .and_then(|_| w.flush())
            .map_err(|e| Error::Input(e.to_string()))?;
        }
        Command::GenSynthetic { kind, n, vocab, len } => {
            let spec = SyntheticTaskSpec {
                kind,
                vocab_size: vocab,
                seq_len: len,
                count: n,
                seed: seed.unwrap_or(0),
            };
            let lines = generate(&spec)?;
            let mut w = open_out(out.as_deref())?;
            for l in lines {
                writeln!(w, "{l}").map_err(|e| Error::Input(e.to_string()))?;
            }
            w.flush().map_err(|e| Error::Input(e.to_string()))?;
        }
        Command::ExportKernels {
            checkpoint,
            layer,
            kind,
            rows,
            sort_by_argmax,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let m = export_kernel_weights(&ckpt, layer, kind, rows, sort_by_argmax)?;
            m.write_csv(open_out(out.as_deref())?)?;
        }
        Command::ExportAttention {
            checkpoint,
            sentence,
            layer,
            head,
            specials,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let m = export_attention_map(&ckpt, &sentence, layer, head, specials)?;
            m.write_csv(open_out(out.as_deref())?)?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand. Returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
