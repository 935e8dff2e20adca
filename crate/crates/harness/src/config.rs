//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is typed and
//! validated; unknown or repeated keys are errors. [`ExperimentConfig::dump`]
//! writes the canonical form (all keys, fixed order) that the trainer stores
//! next to its outputs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Mle,
    Embr,
    O1,
    O1Distill,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mle => "mle",
            Mode::Embr => "embr",
            Mode::O1 => "o1",
            Mode::O1Distill => "o1_distill",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mle" => Ok(Mode::Mle),
            "embr" => Ok(Mode::Embr),
            "o1" => Ok(Mode::O1),
            "o1_distill" => Ok(Mode::O1Distill),
            other => Err(format!("unknown mode {other:?} (mle, embr, o1, o1_distill)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: Option<u64>,
    /// Weight of the auxiliary transducer loss next to O-1.
    pub lambda: f64,
    /// Weight of the auxiliary transducer loss next to EMBR.
    pub gamma: f64,
    pub train_beam_size: usize,
    pub eval_beam_size: usize,
    pub max_symbols_per_frame: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub eval_interval: usize,
    /// Evaluate on at most this many utterances (0 = all).
    pub eval_max_utterances: usize,
    pub hidden: usize,
    pub embed: usize,
    pub train_corpus: Option<PathBuf>,
    pub eval_corpus: Option<PathBuf>,
    pub unlabeled_corpus: Option<PathBuf>,
    pub baseline_checkpoint: Option<PathBuf>,
    pub teacher_checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Write wall-clock throughput to the metrics log (otherwise 0).
    pub log_throughput: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mle,
            seed: None,
            lambda: 0.1,
            gamma: 0.1,
            train_beam_size: 8,
            eval_beam_size: 8,
            max_symbols_per_frame: 3,
            learning_rate: 1e-3,
            batch_size: 16,
            pretrain_steps: 3000,
            finetune_steps: 1000,
            eval_interval: 100,
            eval_max_utterances: 0,
            hidden: 64,
            embed: 32,
            train_corpus: None,
            eval_corpus: None,
            unlabeled_corpus: None,
            baseline_checkpoint: None,
            teacher_checkpoint: None,
            output_dir: None,
            log_throughput: true,
        }
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments. Returns
/// `(line number, key, value)`; repeated keys are an error.
pub fn key_values(text: &str) -> Result<Vec<(usize, String, String)>, HarnessError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Usage(format!("line {}: expected key = value", i + 1)))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(HarnessError::Usage(format!("line {}: duplicate key {key:?}", i + 1)));
        }
        out.push((i + 1, key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError> {
    value
        .parse()
        .map_err(|_| HarnessError::Usage(format!("{key}: cannot parse {value:?}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key {
            "mode" => self.mode = value.parse().map_err(HarnessError::Usage)?,
            "seed" => self.seed = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "lambda" => self.lambda = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "train_beam_size" => self.train_beam_size = parse(key, value)?,
            "eval_beam_size" => self.eval_beam_size = parse(key, value)?,
            "max_symbols_per_frame" => self.max_symbols_per_frame = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "pretrain_steps" => self.pretrain_steps = parse(key, value)?,
            "finetune_steps" => self.finetune_steps = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "eval_max_utterances" => self.eval_max_utterances = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "embed" => self.embed = parse(key, value)?,
            "train_corpus" => self.train_corpus = path(value),
            "eval_corpus" => self.eval_corpus = path(value),
            "unlabeled_corpus" => self.unlabeled_corpus = path(value),
            "baseline_checkpoint" => self.baseline_checkpoint = path(value),
            "teacher_checkpoint" => self.teacher_checkpoint = path(value),
            "output_dir" => self.output_dir = path(value),
            "log_throughput" => self.log_throughput = parse(key, value)?,
            other => return Err(HarnessError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses config text; returns the config and the number of keys it set.
    pub fn parse_str(text: &str) -> Result<(Self, usize), HarnessError> {
        let mut cfg = Self::default();
        let pairs = key_values(text)?;
        for (line, key, value) in &pairs {
            cfg.set(key, value)
                .map_err(|e| HarnessError::Usage(format!("line {line}: {e}")))?;
        }
        Ok((cfg, pairs.len()))
    }

    pub fn load(path: &Path) -> Result<(Self, usize), HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Applies `key=value` overrides on top of the current values.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<(), HarnessError> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Usage(m.to_string()));
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return fail("lambda and gamma must be >= 0");
        }
        if self.train_beam_size == 0 || self.eval_beam_size == 0 {
            return fail("beam sizes must be >= 1");
        }
        if self.max_symbols_per_frame == 0 {
            return fail("max_symbols_per_frame must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0");
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return fail("batch_size and eval_interval must be >= 1");
        }
        if self.hidden == 0 || self.embed == 0 {
            return fail("hidden and embed must be >= 1");
        }
        match self.mode {
            Mode::O1Distill => {
                if self.teacher_checkpoint.is_none() {
                    return fail("mode o1_distill requires teacher_checkpoint");
                }
                if self.unlabeled_corpus.is_none() {
                    return fail("mode o1_distill requires unlabeled_corpus");
                }
            }
            _ if self.teacher_checkpoint.is_some() => {
                return fail("teacher_checkpoint is only valid in mode o1_distill");
            }
            _ => {}
        }
        Ok(())
    }

    /// Number of optimizer steps the configured mode runs.
    pub fn steps(&self) -> usize {
        match self.mode {
            Mode::Mle => self.pretrain_steps,
            _ => self.finetune_steps,
        }
    }

    pub fn dump(&self) -> String {
        let rows: Vec<(&str, String)> = vec![
            ("mode", self.mode.to_string()),
            ("seed", self.seed.map(|s| s.to_string()).unwrap_or_default()),
            ("lambda", self.lambda.to_string()),
            ("gamma", self.gamma.to_string()),
            ("train_beam_size", self.train_beam_size.to_string()),
            ("eval_beam_size", self.eval_beam_size.to_string()),
            ("max_symbols_per_frame", self.max_symbols_per_frame.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("pretrain_steps", self.pretrain_steps.to_string()),
            ("finetune_steps", self.finetune_steps.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("eval_max_utterances", self.eval_max_utterances.to_string()),
            ("hidden", self.hidden.to_string()),
            ("embed", self.embed.to_string()),
            ("train_corpus", show_path(&self.train_corpus)),
            ("eval_corpus", show_path(&self.eval_corpus)),
            ("unlabeled_corpus", show_path(&self.unlabeled_corpus)),
            ("baseline_checkpoint", show_path(&self.baseline_checkpoint)),
            ("teacher_checkpoint", show_path(&self.teacher_checkpoint)),
            ("output_dir", show_path(&self.output_dir)),
            ("log_throughput", self.log_throughput.to_string()),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical dump.
    pub fn fingerprint(&self) -> Vec<u8> {
        Sha256::digest(self.dump().as_bytes()).to_vec()
    }
}
