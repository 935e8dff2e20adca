use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use o1_core::corpus::{generate_corpus, read_corpus, write_corpus, CorpusSpec, Utterance};
use o1_core::decoder::BeamConfig;
use o1_core::model::load_checkpoint;
use o1_harness::config::{ExperimentConfig, Mode};
use o1_harness::eval::evaluate;
use o1_harness::gradcheck::{grad_check, GradCheckConfig};
use o1_harness::sweep::{sweep, sweep_csv};
use o1_harness::train::{metrics_csv, train};
use o1_harness::HarnessError;

#[derive(Parser)]
#[command(name = "o1", version, about = "Transducer sequence-training experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (text index plus `.feats` sidecar).
    GenData(GenData),
    /// Train with the mode named in the config (mle, embr, o1).
    Train(TrainArgs),
    /// Distill a student from a frozen teacher (mode o1_distill).
    Distill(TrainArgs),
    /// Decode a corpus and report 1-best / oracle WER.
    Evaluate(EvalArgs),
    /// Evaluate over several beam sizes with the top-k loss analysis.
    SweepBeam(SweepArgs),
    /// Run the finite-difference and brute-force oracle suites.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 16)]
    vocab: usize,
    #[arg(long, default_value_t = 4)]
    min_len: usize,
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    min_frames: usize,
    #[arg(long, default_value_t = 3)]
    max_frames: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0.2)]
    confusion: f64,
    #[arg(long, default_value_t = 0.0)]
    unlabeled_fraction: f64,
    #[arg(long, default_value_t = 1)]
    prototype_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Override a config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 8)]
    beam: usize,
    #[arg(long, default_value_t = 3)]
    max_symbols_per_frame: usize,
    /// Also print one line per utterance.
    #[arg(long)]
    records: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    beams: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    max_symbols_per_frame: usize,
    /// Evaluate at most this many utterances (0 = all).
    #[arg(long, default_value_t = 0)]
    max_utterances: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long)]
    config: PathBuf,
}

fn load_config(args: &TrainArgs, mode: Option<Mode>) -> Result<ExperimentConfig, HarnessError> {
    let (mut cfg, _) = ExperimentConfig::load(&args.config)?;
    cfg.apply_overrides(&args.overrides)?;
    cfg.seed = Some(args.seed);
    if let Some(m) = mode {
        cfg.mode = m;
    } else if cfg.mode == Mode::O1Distill {
        return Err(HarnessError::Usage("use `o1 distill` for mode o1_distill".into()));
    }
    Ok(cfg)
}

fn run_training(cfg: ExperimentConfig) -> Result<(), HarnessError> {
    let outcome = train(&cfg)?;
    if cfg.output_dir.is_none() {
        print!("{}", metrics_csv(&outcome.rows));
    }
    if let Some(last) = outcome.rows.last() {
        eprintln!(
            "step {}: one_best_wer={:.4} oracle_wer={:.4} gap={:.4}",
            last.step, last.one_best_wer, last.oracle_wer, last.gap
        );
    }
    Ok(())
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenData(a) => {
            let spec = CorpusSpec {
                seed: a.seed,
                utterance_count: a.count,
                vocab: a.vocab,
                label_len: (a.min_len, a.max_len),
                frames_per_symbol: (a.min_frames, a.max_frames),
                feature_dim: a.dim,
                noise_sigma: a.noise,
                confusion_rate: a.confusion,
                unlabeled_fraction: a.unlabeled_fraction,
                prototype_seed: a.prototype_seed,
            };
            let corpus = generate_corpus(&spec)?;
            write_corpus(&corpus, &a.out)?;
            eprintln!("wrote {} utterances to {}", corpus.len(), a.out.display());
        }
        Command::Train(a) => run_training(load_config(&a, None)?)?,
        Command::Distill(a) => run_training(load_config(&a, Some(Mode::O1Distill))?)?,
        Command::Evaluate(a) => {
            let params = load_checkpoint(&a.checkpoint)?.params;
            let corpus = read_corpus(&a.corpus)?;
            let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
            let beam = BeamConfig {
                beam_size: a.beam,
                max_symbols_per_frame: a.max_symbols_per_frame,
                max_label_len: None,
            };
            if a.beam == 0 {
                return Err(HarnessError::Usage("beam must be >= 1".into()));
            }
            let report = evaluate(&params, &utts, beam, 0)?;
            if a.records {
                for r in &report.records {
                    println!(
                        "{} ref_len={} one_best_errors={} oracle_errors={} oracle_rank={}",
                        r.id,
                        r.reference.len(),
                        r.one_best_errors.total(),
                        r.oracle_errors.total(),
                        r.oracle_rank
                    );
                }
            }
            println!(
                "one_best_wer={} oracle_wer={} gap={} examples_per_sec={:.1}",
                report.one_best_wer, report.oracle_wer, report.gap, report.examples_per_sec
            );
        }
        Command::SweepBeam(a) => {
            let params = load_checkpoint(&a.checkpoint)?.params;
            let corpus = read_corpus(&a.corpus)?;
            let mut utts: Vec<&Utterance> = corpus.utterances.iter().collect();
            if a.max_utterances > 0 {
                utts.truncate(a.max_utterances);
            }
            let rows = sweep(&params, &utts, &a.beams, a.max_symbols_per_frame)?;
            write_or_print(a.out.as_deref(), &sweep_csv(&rows))?;
        }
        Command::GradCheck(a) => {
            let cfg = GradCheckConfig::load(&a.config)?;
            let report = grad_check(&cfg)?;
            print!("{report}");
            report.into_result()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
