//! N-best decoding for transducers: breadth-first beam search with prefix
//! merging, plus an exhaustive reference search for tiny vocabularies.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::lattice::{rnnt_log_prob, JointLogits};
use crate::logmath::log_add_exp;
use crate::{Error, Result, BLANK};

/// Step-wise access to a transducer: normalized output distributions for a
/// frame and a label-history state. Encoder states live inside the scorer.
pub trait StepScorer {
    type State: Clone;

    /// Number of encoder frames `T`.
    fn frames(&self) -> usize;

    /// Vocabulary size `V`, excluding blank.
    fn vocab(&self) -> usize;

    /// Prediction state for the empty label history.
    fn start(&self) -> Self::State;

    fn extend(&self, state: &Self::State, symbol: usize) -> Self::State;

    /// Log-probabilities over `V + 1` symbols (blank first) at frame `t`.
    fn log_probs(&self, t: usize, state: &Self::State) -> Vec<f64>;
}

/// Builds the full joint lattice of `labels` by querying the scorer at every node.
pub fn lattice_for<S: StepScorer>(scorer: &S, labels: &[usize]) -> Result<JointLogits> {
    let frames = scorer.frames();
    let vocab = scorer.vocab();
    let mut states = Vec::with_capacity(labels.len() + 1);
    states.push(scorer.start());
    for &y in labels {
        let next = scorer.extend(states.last().expect("non-empty"), y);
        states.push(next);
    }
    let mut scores = Vec::with_capacity(frames * states.len() * (vocab + 1));
    for t in 0..frames {
        for s in &states {
            scores.extend(scorer.log_probs(t, s));
        }
    }
    JointLogits::new(frames, labels.len(), vocab, scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Ranking order: higher score first, then shorter, then lexicographically smaller.
fn rank(a_score: f64, a_labels: &[usize], b_score: f64, b_labels: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_labels.len().cmp(&b_labels.len()))
        .then_with(|| a_labels.cmp(b_labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub hypotheses: Vec<Hypothesis>,
    pub beam_size: usize,
}

impl NBestList {
    /// Sorts, merges label-identical entries and keeps at most `beam_size`.
    pub fn from_hypotheses(hyps: Vec<Hypothesis>, beam_size: usize) -> Self {
        let mut merged: HashMap<Vec<usize>, f64> = HashMap::new();
        for h in hyps {
            let e = merged.entry(h.labels).or_insert(f64::NEG_INFINITY);
            *e = log_add_exp(*e, h.log_prob);
        }
        let mut hypotheses: Vec<Hypothesis> = merged
            .into_iter()
            .map(|(labels, log_prob)| Hypothesis { labels, log_prob })
            .collect();
        hypotheses.sort_by(|a, b| rank(a.log_prob, &a.labels, b.log_prob, &b.labels));
        hypotheses.truncate(beam_size);
        Self {
            hypotheses,
            beam_size,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }

    /// The top `k` entries, as a list whose requested width is `k`.
    pub fn truncated(&self, k: usize) -> NBestList {
        NBestList {
            hypotheses: self.hypotheses.iter().take(k).cloned().collect(),
            beam_size: k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub max_symbols_per_frame: usize,
    /// Hypotheses are never extended past this many labels.
    pub max_label_len: Option<usize>,
}

impl BeamConfig {
    pub fn new(beam_size: usize) -> Self {
        Self {
            beam_size,
            ..Self::default()
        }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 8,
            max_symbols_per_frame: 3,
            max_label_len: None,
        }
    }
}

struct Partial<St> {
    labels: Vec<usize>,
    state: St,
    score: f64,
}

/// Extension candidate whose prediction state is computed only if it survives pruning.
struct Pending {
    parent: usize,
    symbol: usize,
    labels: Vec<usize>,
    score: f64,
}

/// Beam search over frames; within a frame, hypotheses may emit up to
/// `max_symbols_per_frame` labels before the blank that closes the frame.
///
/// At every emission step the blank-closed hypotheses of the current frame and
/// the fresh extensions compete for the `beam_size` slots, so `beam_size = 1`
/// is exactly greedy decoding. Label-identical hypotheses are merged with
/// log-sum-exp, so with an unpruned beam each score is the full alignment sum.
pub fn beam_search<S: StepScorer>(scorer: &S, config: BeamConfig) -> Result<NBestList> {
    if config.beam_size == 0 {
        return Err(Error::contract("beam_size must be at least 1"));
    }
    if config.max_symbols_per_frame == 0 {
        return Err(Error::contract("max_symbols_per_frame must be at least 1"));
    }
    let frames = scorer.frames();
    if frames == 0 {
        return Err(Error::contract("cannot decode a zero-length encoder sequence"));
    }
    let max_len = config.max_label_len.unwrap_or(usize::MAX);

    let mut ready: Vec<Partial<S::State>> = vec![Partial {
        labels: Vec::new(),
        state: scorer.start(),
        score: 0.0,
    }];

    for t in 0..frames {
        let mut closed: Vec<Partial<S::State>> = Vec::new();
        let mut closed_index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut frontier = std::mem::take(&mut ready);

        for level in 0..=config.max_symbols_per_frame {
            if frontier.is_empty() {
                break;
            }
            let mut pending: Vec<Pending> = Vec::new();
            let mut pending_index: HashMap<Vec<usize>, usize> = HashMap::new();
            for (i, h) in frontier.iter().enumerate() {
                let lp = scorer.log_probs(t, &h.state);
                let blank_score = h.score + lp[BLANK];
                match closed_index.get(&h.labels) {
                    Some(&j) => closed[j].score = log_add_exp(closed[j].score, blank_score),
                    None => {
                        closed_index.insert(h.labels.clone(), closed.len());
                        closed.push(Partial {
                            labels: h.labels.clone(),
                            state: h.state.clone(),
                            score: blank_score,
                        });
                    }
                }
                if level == config.max_symbols_per_frame || h.labels.len() >= max_len {
                    continue;
                }
                for (symbol, &s) in lp.iter().enumerate().skip(1) {
                    let mut labels = h.labels.clone();
                    labels.push(symbol);
                    let score = h.score + s;
                    match pending_index.get(&labels) {
                        Some(&j) => pending[j].score = log_add_exp(pending[j].score, score),
                        None => {
                            pending_index.insert(labels.clone(), pending.len());
                            pending.push(Pending {
                                parent: i,
                                symbol,
                                labels,
                                score,
                            });
                        }
                    }
                }
            }

            // joint pruning of closed hypotheses and open extensions, by label
            // sequence: a closed and an open entry spelling the same labels
            // share one slot with their scores merged
            let mut groups: HashMap<&[usize], f64> = HashMap::new();
            for (labels, score) in closed
                .iter()
                .map(|c| (c.labels.as_slice(), c.score))
                .chain(pending.iter().map(|p| (p.labels.as_slice(), p.score)))
            {
                let g = groups.entry(labels).or_insert(f64::NEG_INFINITY);
                *g = log_add_exp(*g, score);
            }
            let mut ranked: Vec<(&[usize], f64)> = groups.into_iter().collect();
            ranked.sort_by(|a, b| rank(a.1, a.0, b.1, b.0));
            ranked.truncate(config.beam_size);
            let survivors: std::collections::HashSet<Vec<usize>> =
                ranked.into_iter().map(|(l, _)| l.to_vec()).collect();
            let keep_closed: Vec<bool> = closed.iter().map(|c| survivors.contains(&c.labels)).collect();
            let keep_open: Vec<bool> = pending.iter().map(|p| survivors.contains(&p.labels)).collect();

            let mut kept = Vec::new();
            for (c, keep) in closed.drain(..).zip(keep_closed) {
                if keep {
                    kept.push(c);
                }
            }
            closed = kept;
            closed_index = closed
                .iter()
                .enumerate()
                .map(|(i, c)| (c.labels.clone(), i))
                .collect();

            let next: Vec<Partial<S::State>> = pending
                .into_iter()
                .zip(keep_open)
                .filter(|(_, keep)| *keep)
                .map(|(p, _)| Partial {
                    state: scorer.extend(&frontier[p.parent].state, p.symbol),
                    labels: p.labels,
                    score: p.score,
                })
                .collect();
            frontier = next;
        }
        ready = closed;
    }

    let hyps = ready
        .into_iter()
        .map(|p| Hypothesis {
            labels: p.labels,
            log_prob: p.score,
        })
        .collect();
    Ok(NBestList::from_hypotheses(hyps, config.beam_size))
}

/// Largest number of label sequences the exhaustive search will score.
pub const EXHAUSTIVE_LIMIT: usize = 4096;

/// Scores every label sequence of length `<= max_label_len` with the full-sum
/// lattice probability and ranks all of them.
pub fn exhaustive_search<S: StepScorer>(scorer: &S, max_label_len: usize) -> Result<NBestList> {
    let vocab = scorer.vocab();
    let guard = (vocab as u128).checked_pow(max_label_len as u32);
    if guard.is_none_or(|g| g > EXHAUSTIVE_LIMIT as u128) {
        return Err(Error::GuardExceeded(format!(
            "V^L = {vocab}^{max_label_len} exceeds {EXHAUSTIVE_LIMIT}"
        )));
    }
    let mut sequences: Vec<Vec<usize>> = vec![Vec::new()];
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_label_len {
        layer = layer
            .iter()
            .flat_map(|p| {
                (1..=vocab).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
        sequences.extend(layer.iter().cloned());
    }
    let mut hyps = Vec::with_capacity(sequences.len());
    for labels in sequences {
        let lattice = lattice_for(scorer, &labels)?;
        let log_prob = rnnt_log_prob(&lattice, &labels)?.log_prob;
        hyps.push(Hypothesis { labels, log_prob });
    }
    let n = hyps.len();
    Ok(NBestList::from_hypotheses(hyps, n))
}

/// Slot-table scorer: log-probabilities depend on the frame and on the full
/// label history through a seeded hash. Useful as a tiny random "model".
#[derive(Debug, Clone)]
pub struct HashedScorer {
    pub frames: usize,
    pub vocab: usize,
    pub seed: u64,
    /// Additive bias on the blank logit.
    pub blank_bias: f64,
    pub scale: f64,
}

impl HashedScorer {
    fn logit(&self, t: usize, history: &[usize], k: usize) -> f64 {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        let mut mix = |x: u64| {
            h ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
            h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
            h ^= h >> 31;
        };
        mix(t as u64);
        mix(history.len() as u64);
        for &y in history {
            mix(y as u64);
        }
        mix(k as u64 + 1000);
        let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
        let bias = if k == BLANK { self.blank_bias } else { 0.0 };
        self.scale * (2.0 * unit - 1.0) + bias
    }
}

impl StepScorer for HashedScorer {
    type State = Vec<usize>;

    fn frames(&self) -> usize {
        self.frames
    }

    fn vocab(&self) -> usize {
        self.vocab
    }

    fn start(&self) -> Vec<usize> {
        Vec::new()
    }

    fn extend(&self, state: &Vec<usize>, symbol: usize) -> Vec<usize> {
        let mut s = state.clone();
        s.push(symbol);
        s
    }

    fn log_probs(&self, t: usize, state: &Vec<usize>) -> Vec<f64> {
        let logits: Vec<f64> = (0..=self.vocab).map(|k| self.logit(t, state, k)).collect();
        crate::logmath::log_softmax(&logits)
    }
}
