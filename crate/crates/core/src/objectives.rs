//! Sequence-level objectives over an n-best list.
//!
//! Every objective is a function of per-hypothesis log-probabilities
//! `log p(Y_i | X)`. Alongside the loss value each returns coefficients
//! `c_i = ∂L / ∂log p(Y_i | X)`; multiplying `−c_i` into the lattice gradient of
//! hypothesis `i` chains the loss back to the joint logits.

use crate::decoder::NBestList;
use crate::logmath::softmax;
use crate::metrics::{edit_distance, select_by_wer};
use crate::{Error, Result};

/// Per-hypothesis inputs to the sequence objectives, as parallel lists.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisScores {
    pub log_probs: Vec<f64>,
    pub error_counts: Vec<usize>,
    /// Raw (unclamped) rates.
    pub wers: Vec<f64>,
    pub label_lens: Vec<usize>,
    pub oracle_index: usize,
    pub one_best_index: usize,
}

impl HypothesisScores {
    /// Scores the list against `reference`; `log_probs[i]` belongs to hypothesis `i`.
    pub fn new(nbest: &NBestList, reference: &[usize], log_probs: Vec<f64>) -> Result<Self> {
        if nbest.is_empty() {
            return Err(Error::contract("objectives need at least one hypothesis"));
        }
        if log_probs.len() != nbest.len() {
            return Err(Error::contract(format!(
                "{} log-probabilities for {} hypotheses",
                log_probs.len(),
                nbest.len()
            )));
        }
        let counts: Vec<_> = nbest
            .hypotheses
            .iter()
            .map(|h| edit_distance(reference, &h.labels))
            .collect();
        let wers: Vec<f64> = counts.iter().map(|c| c.wer()).collect();
        let sel = select_by_wer(&wers, &log_probs);
        Ok(Self {
            error_counts: counts.iter().map(|c| c.total()).collect(),
            wers,
            label_lens: nbest.hypotheses.iter().map(|h| h.len()).collect(),
            oracle_index: sel.oracle_index,
            one_best_index: sel.one_best_index,
            log_probs,
        })
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    /// `∂loss / ∂log p(Y_i | X)` for every hypothesis in the list.
    pub coeffs: Vec<f64>,
    /// Weight on the auxiliary `−log p(reference)` term (0 when absent).
    pub rnnt_weight: f64,
    pub components: Vec<(&'static str, f64)>,
}

impl LossResult {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }
}

/// Expected error count under the n-best softmax, with the variance-reduced
/// gradient `c_i = p̂_i (W_i − W̄)`.
pub fn embr_loss(scores: &HypothesisScores) -> Result<LossResult> {
    if scores.is_empty() {
        return Err(Error::contract("EMBR needs at least one hypothesis"));
    }
    let posterior = softmax(&scores.log_probs);
    let errors: Vec<f64> = scores.error_counts.iter().map(|&w| w as f64).collect();
    let expected: f64 = posterior.iter().zip(&errors).map(|(p, w)| p * w).sum();
    let coeffs = posterior
        .iter()
        .zip(&errors)
        .map(|(p, w)| p * (w - expected))
        .collect();
    Ok(LossResult {
        loss: expected,
        coeffs,
        rnnt_weight: 0.0,
        components: vec![("embr", expected)],
    })
}

/// Length-normalized log-probabilities of the oracle and 1-best hypotheses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedPair {
    pub oracle: f64,
    pub one_best: f64,
}

impl NormalizedPair {
    /// Normalizes raw full-sum log-probabilities by `max(1, label length)`.
    pub fn from_raw(scores: &HypothesisScores, oracle_raw: f64, one_best_raw: f64) -> Self {
        let norm = |i: usize| scores.label_lens[i].max(1) as f64;
        Self {
            oracle: oracle_raw / norm(scores.oracle_index),
            one_best: one_best_raw / norm(scores.one_best_index),
        }
    }
}

/// Boosts the oracle by `(1 − WER_o)` and suppresses the 1-best by `WER_b`.
///
/// WERs are clamped to `[0, 1]`. Only the oracle and 1-best receive non-zero
/// coefficients; when they are the same hypothesis both terms land on it.
pub fn o1_loss(scores: &HypothesisScores, normalized: NormalizedPair) -> Result<LossResult> {
    let (o, b) = (scores.oracle_index, scores.one_best_index);
    if o >= scores.len() || b >= scores.len() {
        return Err(Error::contract("oracle or 1-best index out of range"));
    }
    let w_o = scores.wers[o].clamp(0.0, 1.0);
    let w_b = scores.wers[b].clamp(0.0, 1.0);
    let loss = -normalized.oracle * (1.0 - w_o) + normalized.one_best * w_b;
    let mut coeffs = vec![0.0; scores.len()];
    coeffs[o] += -(1.0 - w_o) / scores.label_lens[o].max(1) as f64;
    coeffs[b] += w_b / scores.label_lens[b].max(1) as f64;
    Ok(LossResult {
        loss,
        coeffs,
        rnnt_weight: 0.0,
        components: vec![("o1", loss)],
    })
}

fn with_rnnt(base: &LossResult, rnnt_loss: f64, weight: f64, name: &'static str) -> Result<LossResult> {
    if !(weight >= 0.0) {
        return Err(Error::contract(format!("auxiliary weight must be >= 0, got {weight}")));
    }
    let mut components = base.components.clone();
    components.push((name, rnnt_loss));
    Ok(LossResult {
        loss: base.loss + weight * rnnt_loss,
        coeffs: base.coeffs.clone(),
        rnnt_weight: base.rnnt_weight + weight,
        components,
    })
}

/// `L_embr + γ · L_rnnt`.
pub fn multitask_embr(embr: &LossResult, rnnt_loss: f64, gamma: f64) -> Result<LossResult> {
    with_rnnt(embr, rnnt_loss, gamma, "rnnt")
}

/// `L_O1 + λ · L_rnnt`.
pub fn multitask_o1(o1: &LossResult, rnnt_loss: f64, lambda: f64) -> Result<LossResult> {
    with_rnnt(o1, rnnt_loss, lambda, "rnnt")
}

/// O-1 against a teacher pseudo-label plus `λ · L_rnnt(X, Y′)`.
///
/// `scores` must already be computed against the pseudo-label.
pub fn o1_distill_loss(
    scores: &HypothesisScores,
    normalized: NormalizedPair,
    rnnt_loss_on_pseudo: f64,
    lambda: f64,
) -> Result<LossResult> {
    let o1 = o1_loss(scores, normalized)?;
    with_rnnt(&o1, rnnt_loss_on_pseudo, lambda, "distill")
}
