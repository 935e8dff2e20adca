//! Synthetic transduction corpora and their on-disk format.
//!
//! Each label is rendered as one or more frames of a per-symbol prototype
//! vector plus Gaussian noise. Symbols come in confusable pairs `(1,2)`,
//! `(3,4)`, …; with probability `confusion_rate` a frame shows the partner's
//! prototype instead, which leaves genuinely competing hypotheses in the beam.
//!
//! On disk a corpus is a text index plus a sidecar of little-endian `f32`
//! features (`<path>.feats`):
//!
//! ```text
//! #o1corpus v1 dim=<D> vocab=<V>
//! <id> <split> <T> <U> <label_1> … <label_U> <byte offset into sidecar>
//! ```

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Unlabeled,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "labeled" => Ok(Split::Labeled),
            "unlabeled" => Ok(Split::Unlabeled),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub frames: usize,
    /// Row-major `[frames][feature_dim]`.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub feature_dim: usize,
    pub vocab: usize,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub utterance_count: usize,
    pub vocab: usize,
    /// Inclusive range of label-sequence lengths.
    pub label_len: (usize, usize),
    /// Inclusive range of frames rendered per label.
    pub frames_per_symbol: (usize, usize),
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub confusion_rate: f64,
    /// Trailing fraction of utterances tagged unlabeled.
    pub unlabeled_fraction: f64,
    /// Seed of the symbol prototypes; corpora sharing it share one "acoustic" space.
    pub prototype_seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            utterance_count: 2000,
            vocab: 16,
            label_len: (4, 10),
            frames_per_symbol: (1, 3),
            feature_dim: 8,
            noise_sigma: 0.5,
            confusion_rate: 0.2,
            unlabeled_fraction: 0.0,
            prototype_seed: 1,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let (l0, l1) = self.label_len;
        let (f0, f1) = self.frames_per_symbol;
        let problems = [
            (self.vocab < 2, "vocab must be at least 2"),
            (l0 == 0 || l0 > l1, "label_len range must be non-empty with a minimum of 1"),
            (f0 == 0 || f0 > f1, "frames_per_symbol range must be non-empty with a minimum of 1"),
            (self.feature_dim == 0, "feature_dim must be positive"),
            (!(self.noise_sigma >= 0.0), "noise_sigma must be >= 0"),
            (!(0.0..=1.0).contains(&self.confusion_rate), "confusion_rate must lie in [0, 1]"),
            (
                !(0.0..=1.0).contains(&self.unlabeled_fraction),
                "unlabeled_fraction must lie in [0, 1]",
            ),
        ];
        match problems.iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::contract(*msg)),
            None => Ok(()),
        }
    }
}

/// The partner symbol of `s` in the pairing `(1,2)`, `(3,4)`, …; an unpaired
/// last symbol of an odd vocabulary is confusable with its predecessor.
pub fn confusable(s: usize, vocab: usize) -> usize {
    if s % 2 == 1 {
        if s < vocab {
            s + 1
        } else {
            s - 1
        }
    } else {
        s - 1
    }
}

/// Per-symbol prototype vectors, indexed `[symbol][dim]` (row 0 unused).
pub fn prototypes(spec: &CorpusSpec) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.prototype_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..=spec.vocab)
        .map(|_| (0..spec.feature_dim).map(|_| normal.sample(&mut rng)).collect())
        .collect()
}

/// Deterministic corpus for `spec`. Consecutive labels never repeat, so that
/// the frame rendering of a label sequence is unambiguous without noise.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let protos = prototypes(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::contract(e.to_string()))?;
    let labeled = spec.utterance_count
        - (spec.utterance_count as f64 * spec.unlabeled_fraction).round() as usize;

    let mut utterances = Vec::with_capacity(spec.utterance_count);
    for i in 0..spec.utterance_count {
        let len = rng.random_range(spec.label_len.0..=spec.label_len.1);
        let mut labels: Vec<usize> = Vec::with_capacity(len);
        while labels.len() < len {
            let s = rng.random_range(1..=spec.vocab);
            if labels.last() != Some(&s) {
                labels.push(s);
            }
        }
        let mut features = Vec::new();
        let mut frames = 0;
        for &y in &labels {
            let n = rng.random_range(spec.frames_per_symbol.0..=spec.frames_per_symbol.1);
            for _ in 0..n {
                let shown = if rng.random::<f64>() < spec.confusion_rate {
                    confusable(y, spec.vocab)
                } else {
                    y
                };
                features.extend(protos[shown].iter().map(|p| p + noise.sample(&mut rng)));
                frames += 1;
            }
        }
        utterances.push(Utterance {
            id: format!("s{}-{:05}", spec.seed, i),
            frames,
            features,
            labels,
            split: if i < labeled { Split::Labeled } else { Split::Unlabeled },
        });
    }
    Ok(Corpus {
        feature_dim: spec.feature_dim,
        vocab: spec.vocab,
        utterances,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".feats");
    PathBuf::from(s)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let feats_path = sidecar_path(path);
    let mut index = String::new();
    index.push_str(&format!(
        "#o1corpus v1 dim={} vocab={}\n",
        corpus.feature_dim, corpus.vocab
    ));
    let mut blob: Vec<u8> = Vec::new();
    for u in &corpus.utterances {
        if u.id.is_empty() || u.id.contains(char::is_whitespace) {
            return Err(Error::contract(format!("utterance id {:?} must be a non-empty token", u.id)));
        }
        index.push_str(&format!("{} {} {} {}", u.id, u.split, u.frames, u.labels.len()));
        for y in &u.labels {
            index.push_str(&format!(" {y}"));
        }
        index.push_str(&format!(" {}\n", blob.len()));
        blob.extend(u.features.iter().flat_map(|&v| (v as f32).to_le_bytes()));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(index.as_bytes()))
        .map_err(|e| Error::io(path, e))?;
    std::fs::write(&feats_path, blob).map_err(|e| Error::io(&feats_path, e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let feats_path = sidecar_path(path);
    let blob = std::fs::read(&feats_path).map_err(|e| Error::io(&feats_path, e))?;
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {line}"),
        message,
    };

    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty corpus index".into()))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some("#o1corpus") || fields.next() != Some("v1") {
        return Err(err(1, format!("bad header {header:?}")));
    }
    let mut header_value = |key: &str| -> Result<usize> {
        fields
            .next()
            .and_then(|f| f.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(1, format!("header lacks {key}<n>")))
    };
    let feature_dim = header_value("dim=")?;
    let vocab = header_value("vocab=")?;

    let mut utterances = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 5 {
            return Err(err(lineno, "record needs id, split, T, U, labels, offset".into()));
        }
        let num = |s: &str, what: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| err(lineno, format!("{what} {s:?} is not a non-negative integer")))
        };
        let split: Split = tok[1].parse().map_err(|m| err(lineno, m))?;
        let frames = num(tok[2], "frame count")?;
        let u = num(tok[3], "label count")?;
        if tok.len() != 5 + u {
            return Err(err(lineno, format!("expected {u} labels, found {}", tok.len() - 5)));
        }
        let labels = tok[4..4 + u]
            .iter()
            .map(|s| num(s, "label"))
            .collect::<Result<Vec<_>>>()?;
        if let Some(bad) = labels.iter().find(|&&y| y == 0 || y > vocab) {
            return Err(err(lineno, format!("label {bad} outside 1..={vocab}")));
        }
        let offset = num(tok[4 + u], "byte offset")?;
        let len = frames * feature_dim * 4;
        let bytes = offset
            .checked_add(len)
            .and_then(|end| blob.get(offset..end))
            .ok_or_else(|| {
                err(
                    lineno,
                    format!("feature range {offset}..{} outside sidecar of {} bytes", offset + len, blob.len()),
                )
            })?;
        let features = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        utterances.push(Utterance {
            id: tok[0].to_string(),
            frames,
            features,
            labels,
            split,
        });
    }
    Ok(Corpus {
        feature_dim,
        vocab,
        utterances,
    })
}
