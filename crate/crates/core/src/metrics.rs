//! Edit distance, token error rate, and oracle / 1-best selection.

use crate::decoder::NBestList;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_len: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Raw rate `total / max(1, ref_len)`; may exceed 1.
    pub fn wer(&self) -> f64 {
        self.total() as f64 / self.ref_len.max(1) as f64
    }

    pub fn wer_clamped(&self) -> f64 {
        self.wer().min(1.0)
    }
}

impl std::ops::AddAssign for ErrorCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.insertions += rhs.insertions;
        self.deletions += rhs.deletions;
        self.ref_len += rhs.ref_len;
    }
}

/// Unit-cost Levenshtein alignment of `hypothesis` against `reference`.
///
/// When several alignments reach the minimum, the backtrace prefers a
/// substitution (or match), then an insertion, then a deletion.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> ErrorCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }

    let mut counts = ErrorCounts {
        ref_len: n,
        ..ErrorCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = reference[i - 1] != hypothesis[j - 1];
            if d[(i - 1) * w + j - 1] + usize::from(mismatch) == here {
                counts.substitutions += usize::from(mismatch);
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    counts
}

pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> f64 {
    edit_distance(reference, hypothesis).wer()
}

pub fn wer_clamped<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> f64 {
    edit_distance(reference, hypothesis).wer_clamped()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSelection {
    pub oracle_index: usize,
    pub one_best_index: usize,
    pub oracle_wer: f64,
    pub one_best_wer: f64,
}

/// Picks the lowest-WER hypothesis as oracle; ties go to the higher
/// log-probability, then the lower index. The 1-best is always rank 0.
pub fn select_oracle(nbest: &NBestList, reference: &[usize]) -> Result<OracleSelection> {
    if nbest.is_empty() {
        return Err(Error::contract("cannot select an oracle from an empty n-best list"));
    }
    let wers: Vec<f64> = nbest
        .hypotheses
        .iter()
        .map(|h| wer(reference, &h.labels))
        .collect();
    Ok(select_by_wer(
        &wers,
        &nbest.hypotheses.iter().map(|h| h.log_prob).collect::<Vec<_>>(),
    ))
}

pub(crate) fn select_by_wer(wers: &[f64], log_probs: &[f64]) -> OracleSelection {
    let mut oracle = 0;
    for i in 1..wers.len() {
        let better = wers[i] < wers[oracle]
            || (wers[i] == wers[oracle] && log_probs[i] > log_probs[oracle]);
        if better {
            oracle = i;
        }
    }
    OracleSelection {
        oracle_index: oracle,
        one_best_index: 0,
        oracle_wer: wers[oracle],
        one_best_wer: wers[0],
    }
}

/// Expected error count `Σ_j probs[j] · W(Y_j, Y*)` under normalized weights.
pub fn expected_errors(nbest: &NBestList, reference: &[usize], probs: &[f64]) -> Result<f64> {
    if probs.len() != nbest.len() {
        return Err(Error::contract(format!(
            "{} weights for {} hypotheses",
            probs.len(),
            nbest.len()
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("weights sum to {sum}, not 1")));
    }
    Ok(nbest
        .hypotheses
        .iter()
        .zip(probs)
        .map(|(h, p)| p * edit_distance(reference, &h.labels).total() as f64)
        .sum())
}

/// Unweighted mean error count over the list (the Monte-Carlo form of `W̄`).
pub fn mean_errors(nbest: &NBestList, reference: &[usize]) -> f64 {
    if nbest.is_empty() {
        return 0.0;
    }
    let total: usize = nbest
        .hypotheses
        .iter()
        .map(|h| edit_distance(reference, &h.labels).total())
        .sum();
    total as f64 / nbest.len() as f64
}
