//! Transducer alignment lattice: marginal log-probability of a label sequence,
//! its gradient with respect to the joint logits, and an enumeration oracle.
//!
//! Node `(t, u)` means "at frame `t`, `u` labels emitted". From a node a blank
//! advances `t` and a label advances `u`; the final blank out of `(T-1, U)`
//! terminates the path. Every reduction is done in the log domain.

use crate::logmath::{log_add_exp, log_softmax, log_sum_exp};
use crate::{Error, Result, BLANK};

/// Unnormalized joint scores indexed `[t][u][k]`, `k = 0` being blank.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLogits {
    frames: usize,
    label_len: usize,
    vocab: usize,
    scores: Vec<f64>,
}

impl JointLogits {
    /// `scores` is row-major over `frames × (label_len + 1) × (vocab + 1)`.
    pub fn new(frames: usize, label_len: usize, vocab: usize, scores: Vec<f64>) -> Result<Self> {
        if frames == 0 {
            return Err(Error::contract("lattice needs at least one frame"));
        }
        if vocab == 0 {
            return Err(Error::contract("vocabulary must contain at least one symbol"));
        }
        let expected = frames * (label_len + 1) * (vocab + 1);
        if scores.len() != expected {
            return Err(Error::contract(format!(
                "expected {expected} joint scores for T={frames} U={label_len} V={vocab}, got {}",
                scores.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::contract(format!("non-finite joint score at flat index {i}")));
        }
        Ok(Self {
            frames,
            label_len,
            vocab,
            scores,
        })
    }

    pub fn zeros(frames: usize, label_len: usize, vocab: usize) -> Self {
        Self {
            frames,
            label_len,
            vocab,
            scores: vec![0.0; frames * (label_len + 1) * (vocab + 1)],
        }
    }

    /// Frame count `T`.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Reference label length `U`.
    pub fn label_len(&self) -> usize {
        self.label_len
    }

    /// Vocabulary size `V`, excluding blank.
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn symbols(&self) -> usize {
        self.vocab + 1
    }

    fn offset(&self, t: usize, u: usize) -> usize {
        debug_assert!(t < self.frames && u <= self.label_len);
        (t * (self.label_len + 1) + u) * self.symbols()
    }

    pub fn slot(&self, t: usize, u: usize) -> &[f64] {
        let o = self.offset(t, u);
        &self.scores[o..o + self.symbols()]
    }

    pub fn slot_mut(&mut self, t: usize, u: usize) -> &mut [f64] {
        let o = self.offset(t, u);
        let n = self.symbols();
        &mut self.scores[o..o + n]
    }

    pub fn get(&self, t: usize, u: usize, k: usize) -> f64 {
        self.scores[self.offset(t, u) + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.scores
    }

    /// Elementwise `self += scale * other`.
    pub fn add_scaled(&mut self, other: &JointLogits, scale: f64) -> Result<()> {
        if (self.frames, self.label_len, self.vocab) != (other.frames, other.label_len, other.vocab) {
            return Err(Error::contract("lattice shapes differ"));
        }
        for (a, b) in self.scores.iter_mut().zip(&other.scores) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.scores.iter_mut().for_each(|s| *s *= factor);
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if labels.len() != self.label_len {
            return Err(Error::contract(format!(
                "label sequence has length {} but lattice hosts U={}",
                labels.len(),
                self.label_len
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y == BLANK || y > self.vocab) {
            return Err(Error::contract(format!(
                "label {bad} outside 1..={}",
                self.vocab
            )));
        }
        Ok(())
    }

    fn log_softmax_table(&self) -> Vec<f64> {
        let n = self.symbols();
        let mut out = Vec::with_capacity(self.scores.len());
        for slot in self.scores.chunks_exact(n) {
            out.extend(log_softmax(slot));
        }
        out
    }
}

/// One transition of an alignment path, taken out of node `(t, u)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub t: usize,
    pub u: usize,
    pub symbol: usize,
}

/// A monotone path through the lattice whose non-blank emissions spell the labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub steps: Vec<Step>,
    /// Set once the final blank out of `(T-1, U)` has been taken.
    pub terminal: bool,
}

impl AlignmentPath {
    /// The emitted labels with blanks removed.
    pub fn collapse(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.symbol != BLANK)
            .map(|s| s.symbol)
            .collect()
    }

    /// Sum of per-step log-softmax scores, computed slot by slot.
    pub fn log_prob(&self, lattice: &JointLogits) -> f64 {
        self.steps
            .iter()
            .map(|s| {
                let slot = lattice.slot(s.t, s.u);
                let max = slot.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z = max + slot.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                slot[s.symbol] - z
            })
            .sum()
    }
}

/// Forward and backward log-sums over lattice nodes, both `[T][U+1]` row-major.
///
/// `alpha[t][u]` is the log-probability of reaching node `(t, u)`; `beta[t][u]`
/// the log-probability of completing the labels from it, final blank included.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePosterior {
    pub frames: usize,
    pub label_len: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_prob: f64,
}

impl LatticePosterior {
    pub fn alpha(&self, t: usize, u: usize) -> f64 {
        self.alpha[t * (self.label_len + 1) + u]
    }

    pub fn beta(&self, t: usize, u: usize) -> f64 {
        self.beta[t * (self.label_len + 1) + u]
    }

    /// Posterior probability that the alignment passes through node `(t, u)`.
    pub fn node_occupancy(&self, t: usize, u: usize) -> f64 {
        (self.alpha(t, u) + self.beta(t, u) - self.log_prob).exp()
    }
}

fn forward_backward(lattice: &JointLogits, labels: &[usize], lsm: &[f64]) -> LatticePosterior {
    let (frames, label_len) = (lattice.frames, lattice.label_len);
    let width = label_len + 1;
    let symbols = lattice.symbols();
    let at = |t: usize, u: usize, k: usize| lsm[(t * width + u) * symbols + k];

    let mut alpha = vec![f64::NEG_INFINITY; frames * width];
    alpha[0] = 0.0;
    for t in 0..frames {
        for u in 0..width {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t > 0 {
                acc = log_add_exp(acc, alpha[(t - 1) * width + u] + at(t - 1, u, BLANK));
            }
            if u > 0 {
                acc = log_add_exp(acc, alpha[t * width + u - 1] + at(t, u - 1, labels[u - 1]));
            }
            alpha[t * width + u] = acc;
        }
    }

    let mut beta = vec![f64::NEG_INFINITY; frames * width];
    for t in (0..frames).rev() {
        for u in (0..width).rev() {
            let value = if t == frames - 1 && u == label_len {
                at(t, u, BLANK)
            } else {
                let mut acc = f64::NEG_INFINITY;
                if t + 1 < frames {
                    acc = log_add_exp(acc, beta[(t + 1) * width + u] + at(t, u, BLANK));
                }
                if u < label_len {
                    acc = log_add_exp(acc, beta[t * width + u + 1] + at(t, u, labels[u]));
                }
                acc
            };
            beta[t * width + u] = value;
        }
    }

    let log_prob = alpha[(frames - 1) * width + label_len] + at(frames - 1, label_len, BLANK);
    LatticePosterior {
        frames,
        label_len,
        alpha,
        beta,
        log_prob,
    }
}

/// `log p(labels | lattice)` summed over every alignment, via forward–backward.
pub fn rnnt_log_prob(lattice: &JointLogits, labels: &[usize]) -> Result<LatticePosterior> {
    lattice.check_labels(labels)?;
    let lsm = lattice.log_softmax_table();
    Ok(forward_backward(lattice, labels, &lsm))
}

/// `∂(−log p(labels | lattice)) / ∂logits`.
pub fn rnnt_grad(lattice: &JointLogits, labels: &[usize]) -> Result<JointLogits> {
    rnnt_loss_grad(lattice, labels).map(|(_, g)| g)
}

/// Posterior and gradient of `−log p` from a single forward–backward pass.
///
/// At slot `(t, u)` the gradient is `softmax_k · γ(t,u) − occ(t,u,k)`, where
/// `γ` is the node occupancy and `occ` the occupancy of the arc leaving the
/// node with symbol `k`. Nodes off every path get zero gradient.
pub fn rnnt_loss_grad(
    lattice: &JointLogits,
    labels: &[usize],
) -> Result<(LatticePosterior, JointLogits)> {
    lattice.check_labels(labels)?;
    let lsm = lattice.log_softmax_table();
    let post = forward_backward(lattice, labels, &lsm);
    let (frames, label_len) = (lattice.frames, lattice.label_len);
    let width = label_len + 1;
    let symbols = lattice.symbols();
    let log_p = post.log_prob;

    let mut grad = JointLogits::zeros(frames, label_len, lattice.vocab);
    for t in 0..frames {
        for u in 0..width {
            let base = (t * width + u) * symbols;
            let a = post.alpha[t * width + u];
            let node = (a + post.beta[t * width + u] - log_p).exp();
            let slot = grad.slot_mut(t, u);
            for (k, g) in slot.iter_mut().enumerate() {
                *g = lsm[base + k].exp() * node;
            }
            if node == 0.0 {
                continue;
            }
            let blank_next = if t + 1 < frames {
                post.beta[(t + 1) * width + u]
            } else if u == label_len {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            slot[BLANK] -= (a + lsm[base + BLANK] + blank_next - log_p).exp();
            if u < label_len {
                let y = labels[u];
                slot[y] -= (a + lsm[base + y] + post.beta[t * width + u + 1] - log_p).exp();
            }
        }
    }
    Ok((post, grad))
}

/// Largest `T + U` the enumeration oracle accepts.
pub const ENUMERATION_LIMIT: usize = 16;

/// Every alignment of `labels` through a `frames`-frame lattice, in lexicographic
/// order of (blank first) choices.
pub fn enumerate_alignments(frames: usize, labels: &[usize]) -> Result<Vec<AlignmentPath>> {
    if frames + labels.len() > ENUMERATION_LIMIT {
        return Err(Error::GuardExceeded(format!(
            "T+U = {} exceeds {ENUMERATION_LIMIT}",
            frames + labels.len()
        )));
    }
    fn walk(
        t: usize,
        u: usize,
        frames: usize,
        labels: &[usize],
        prefix: &mut Vec<Step>,
        out: &mut Vec<AlignmentPath>,
    ) {
        if t == frames - 1 && u == labels.len() {
            prefix.push(Step { t, u, symbol: BLANK });
            out.push(AlignmentPath {
                steps: prefix.clone(),
                terminal: true,
            });
            prefix.pop();
            return;
        }
        if t + 1 < frames {
            prefix.push(Step { t, u, symbol: BLANK });
            walk(t + 1, u, frames, labels, prefix, out);
            prefix.pop();
        }
        if u < labels.len() {
            prefix.push(Step {
                t,
                u,
                symbol: labels[u],
            });
            walk(t, u + 1, frames, labels, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if frames > 0 {
        walk(0, 0, frames, labels, &mut Vec::new(), &mut out);
    }
    Ok(out)
}

/// Reference `log p(labels | lattice)` by summing every alignment explicitly.
pub fn brute_force_log_prob(lattice: &JointLogits, labels: &[usize]) -> Result<f64> {
    lattice.check_labels(labels)?;
    let paths = enumerate_alignments(lattice.frames, labels)?;
    let scores: Vec<f64> = paths.iter().map(|p| p.log_prob(lattice)).collect();
    Ok(log_sum_exp(&scores))
}

/// `log p / max(1, U)`: the per-label score O-1 consumes.
pub fn normalized_log_prob(posterior: &LatticePosterior, labels: &[usize]) -> f64 {
    posterior.log_prob / labels.len().max(1) as f64
}
