//! Training loops: MLE pretraining, EMBR / O-1 fine-tuning and O-1
//! distillation from a frozen teacher.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use o1_core::corpus::{read_corpus, Corpus, Split, Utterance};
use o1_core::decoder::BeamConfig;
use o1_core::model::{adam_step, load_checkpoint, save_checkpoint, AdamConfig, AdamState, Checkpoint, ModelConfig, ModelParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Mode};
use crate::eval::evaluate;
use crate::step::{batch_step, decode, Objective, Sample};
use crate::{io_error, HarnessError};

pub const METRICS_HEADER: &str =
    "step,mode,one_best_wer,oracle_wer,gap,loss_total,loss_obj,loss_rnnt,examples_per_sec";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub mode: Mode,
    pub one_best_wer: f64,
    pub oracle_wer: f64,
    pub gap: f64,
    /// Mean training losses since the previous row; NaN on the step-0 row.
    pub loss_total: f64,
    pub loss_obj: f64,
    pub loss_rnnt: f64,
    pub examples_per_sec: f64,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.mode,
            self.one_best_wer,
            self.oracle_wer,
            self.gap,
            self.loss_total,
            self.loss_obj,
            self.loss_rnnt,
            self.examples_per_sec
        )
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

/// Everything a run reads from disk, loaded up front.
#[derive(Debug, Clone)]
pub struct TrainInputs {
    pub train: Corpus,
    pub eval: Corpus,
    pub unlabeled: Option<Corpus>,
    pub baseline: Option<Checkpoint>,
    pub teacher: Option<Checkpoint>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub rows: Vec<MetricsRow>,
    /// Hypothesis lattices evaluated by the sequence objective over the run.
    pub objective_lattices: usize,
    pub aux_lattices: usize,
    pub utterances_seen: usize,
}

fn required<'a, T>(value: &'a Option<T>, what: &str, mode: Mode) -> Result<&'a T, HarnessError> {
    value
        .as_ref()
        .ok_or_else(|| HarnessError::Usage(format!("mode {mode} requires {what}")))
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<TrainInputs, HarnessError> {
    cfg.validate()?;
    let train = read_corpus(required(&cfg.train_corpus, "train_corpus", cfg.mode)?)?;
    let eval = read_corpus(required(&cfg.eval_corpus, "eval_corpus", cfg.mode)?)?;
    let unlabeled = cfg.unlabeled_corpus.as_deref().map(read_corpus).transpose()?;
    if matches!(cfg.mode, Mode::Embr | Mode::O1) {
        required(&cfg.baseline_checkpoint, "baseline_checkpoint", cfg.mode)?;
    }
    let baseline = cfg.baseline_checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let teacher = cfg.teacher_checkpoint.as_deref().map(load_checkpoint).transpose()?;
    Ok(TrainInputs {
        train,
        eval,
        unlabeled,
        baseline,
        teacher,
    })
}

fn check_dims(params: &ModelParams, corpus: &Corpus, what: &str) -> Result<(), HarnessError> {
    let c = params.config();
    if c.feature_dim != corpus.feature_dim || c.vocab != corpus.vocab {
        return Err(HarnessError::Usage(format!(
            "{what}: model expects dim={} vocab={}, corpus has dim={} vocab={}",
            c.feature_dim, c.vocab, corpus.feature_dim, corpus.vocab
        )));
    }
    Ok(())
}

/// Endless epoch-shuffled index stream.
struct Sampler {
    order: Vec<usize>,
    at: usize,
}

impl Sampler {
    fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            at: n,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.at == self.order.len() {
            self.order.shuffle(rng);
            self.at = 0;
        }
        self.at += 1;
        self.order[self.at - 1]
    }
}

fn sample_of<'a>(u: &'a Utterance, reference: &'a [usize]) -> Sample<'a> {
    Sample {
        features: &u.features,
        frames: u.frames,
        reference,
    }
}

/// Runs the configured mode on in-memory inputs.
pub fn run(cfg: &ExperimentConfig, inputs: &TrainInputs) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let seed = cfg
        .seed
        .ok_or_else(|| HarnessError::Usage("a seed is required for training".into()))?;
    let labeled = inputs.train.split(Split::Labeled);
    if labeled.is_empty() {
        return Err(HarnessError::Usage("training corpus has no labeled utterances".into()));
    }
    let mut eval_set: Vec<&Utterance> = inputs.eval.utterances.iter().collect();
    if cfg.eval_max_utterances > 0 {
        eval_set.truncate(cfg.eval_max_utterances);
    }

    let (start, objective) = match cfg.mode {
        Mode::Mle => {
            let ckpt = inputs.baseline.clone().unwrap_or_else(|| {
                let config = ModelConfig {
                    feature_dim: inputs.train.feature_dim,
                    vocab: inputs.train.vocab,
                    hidden: cfg.hidden,
                    embed: cfg.embed,
                };
                Checkpoint::new(ModelParams::init(config, seed))
            });
            (ckpt, Objective::Mle)
        }
        Mode::Embr => (
            required(&inputs.baseline, "baseline_checkpoint", cfg.mode)?.clone(),
            Objective::Embr { gamma: cfg.gamma },
        ),
        Mode::O1 => (
            required(&inputs.baseline, "baseline_checkpoint", cfg.mode)?.clone(),
            Objective::O1 { lambda: cfg.lambda },
        ),
        Mode::O1Distill => {
            let teacher = required(&inputs.teacher, "teacher_checkpoint", cfg.mode)?;
            let student = inputs.baseline.as_ref().unwrap_or(teacher).clone();
            (student, Objective::O1Distill { lambda: cfg.lambda })
        }
    };
    let mut params = start.params;
    check_dims(&params, &inputs.train, "train_corpus")?;
    check_dims(&params, &inputs.eval, "eval_corpus")?;
    let mut adam = match cfg.mode {
        Mode::Mle => start.optimizer,
        _ => AdamState::new(params.param_count()),
    };
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let train_beam = BeamConfig {
        beam_size: cfg.train_beam_size,
        max_symbols_per_frame: cfg.max_symbols_per_frame,
        max_label_len: None,
    };
    let eval_beam = BeamConfig {
        beam_size: cfg.eval_beam_size,
        ..train_beam
    };

    // the teacher is frozen, so its pseudo-labels are fixed for the whole run
    let (unlabeled, pseudo): (Vec<&Utterance>, Vec<Vec<usize>>) = match (cfg.mode, &inputs.teacher) {
        (Mode::O1Distill, Some(teacher)) => {
            let corpus = required(&inputs.unlabeled, "unlabeled_corpus", cfg.mode)?;
            check_dims(&teacher.params, corpus, "unlabeled_corpus")?;
            let utts = corpus.utterances.iter().collect::<Vec<_>>();
            if utts.is_empty() {
                return Err(HarnessError::Usage("unlabeled corpus is empty".into()));
            }
            let labels = utts
                .par_iter()
                .map(|u| Ok(decode(&teacher.params, &sample_of(u, &[]), train_beam)?.best().labels.clone()))
                .collect::<Result<Vec<_>, HarnessError>>()?;
            (utts, labels)
        }
        _ => (Vec::new(), Vec::new()),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled_sampler = Sampler::new(labeled.len());
    let mut unlabeled_sampler = Sampler::new(unlabeled.len());
    let steps = cfg.steps();
    let row = |params: &ModelParams, step: usize, losses: (f64, f64, f64), rate: f64| -> Result<MetricsRow, HarnessError> {
        let report = evaluate(params, &eval_set, eval_beam, step)?;
        Ok(MetricsRow {
            step,
            mode: cfg.mode,
            one_best_wer: report.one_best_wer,
            oracle_wer: report.oracle_wer,
            gap: report.gap,
            loss_total: losses.0,
            loss_obj: losses.1,
            loss_rnnt: losses.2,
            examples_per_sec: if cfg.log_throughput { rate } else { 0.0 },
        })
    };

    let mut rows = vec![row(&params, 0, (f64::NAN, f64::NAN, f64::NAN), 0.0)?];
    let mut outcome_counts = (0usize, 0usize, 0usize);
    let (mut sum, mut n_batches, mut examples) = ((0.0, 0.0, 0.0), 0usize, 0usize);
    let mut clock = Instant::now();
    for step in 1..=steps {
        let samples: Vec<Sample> = (0..cfg.batch_size)
            .map(|i| {
                if !unlabeled.is_empty() && i % 2 == 1 {
                    let j = unlabeled_sampler.next(&mut rng);
                    sample_of(unlabeled[j], &pseudo[j])
                } else {
                    let u = labeled[labeled_sampler.next(&mut rng)];
                    sample_of(u, &u.labels)
                }
            })
            .collect();
        let out = batch_step(&params, &samples, objective, train_beam)?;
        adam_step(params.flat_mut(), &out.grad, &mut adam, adam_cfg)?;

        sum = (sum.0 + out.total, sum.1 + out.objective, sum.2 + out.rnnt);
        n_batches += 1;
        examples += out.utterances;
        outcome_counts.0 += out.objective_lattices;
        outcome_counts.1 += out.aux_lattices;
        outcome_counts.2 += out.utterances;

        if step % cfg.eval_interval == 0 || step == steps {
            let rate = examples as f64 / clock.elapsed().as_secs_f64().max(1e-9);
            let k = n_batches as f64;
            rows.push(row(&params, step, (sum.0 / k, sum.1 / k, sum.2 / k), rate)?);
            sum = (0.0, 0.0, 0.0);
            n_batches = 0;
            examples = 0;
            clock = Instant::now();
        }
    }

    let checkpoint = Checkpoint {
        params,
        step: start.step + steps as u64,
        optimizer: adam,
        fingerprint: cfg.fingerprint(),
    };
    Ok(TrainOutcome {
        checkpoint,
        rows,
        objective_lattices: outcome_counts.0,
        aux_lattices: outcome_counts.1,
        utterances_seen: outcome_counts.2,
    })
}

/// Writes `config.txt`, `metrics.csv` and `final.ckpt` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, outcome: &TrainOutcome, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let config = dir.join("config.txt");
    std::fs::write(&config, cfg.dump()).map_err(|e| io_error(&config, e))?;
    let metrics = dir.join("metrics.csv");
    std::fs::write(&metrics, metrics_csv(&outcome.rows)).map_err(|e| io_error(&metrics, e))?;
    save_checkpoint(&outcome.checkpoint, &dir.join("final.ckpt"))?;
    Ok(())
}

/// Loads inputs, trains, and writes outputs when `output_dir` is set.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome, HarnessError> {
    let inputs = load_inputs(cfg)?;
    let outcome = run(cfg, &inputs)?;
    if let Some(dir) = &cfg.output_dir {
        write_outputs(cfg, &outcome, dir)?;
    }
    Ok(outcome)
}
