//! Corpus-level decoding metrics.

use std::time::Instant;

use o1_core::corpus::Utterance;
use o1_core::decoder::{beam_search, BeamConfig, NBestList};
use o1_core::metrics::{edit_distance, select_oracle, ErrorCounts};
use o1_core::model::ModelParams;
use rayon::prelude::*;

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub reference: Vec<usize>,
    pub one_best: Vec<usize>,
    pub one_best_errors: ErrorCounts,
    pub oracle_errors: ErrorCounts,
    /// Rank of the oracle in the n-best list.
    pub oracle_rank: usize,
    pub nbest_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub step: usize,
    /// Total 1-best errors over total reference length.
    pub one_best_wer: f64,
    /// Same for the per-utterance oracle.
    pub oracle_wer: f64,
    pub gap: f64,
    pub examples_per_sec: f64,
    pub records: Vec<UtteranceRecord>,
}

/// Summarises already-decoded lists against their references.
pub fn summarize(
    utterances: &[&Utterance],
    lists: &[NBestList],
    step: usize,
    examples_per_sec: f64,
) -> Result<EvalReport, HarnessError> {
    let mut records = Vec::with_capacity(lists.len());
    let (mut ref_len, mut best_err, mut oracle_err) = (0usize, 0usize, 0usize);
    for (u, nb) in utterances.iter().zip(lists) {
        let sel = select_oracle(nb, &u.labels)?;
        let one_best_errors = edit_distance(&u.labels, &nb.hypotheses[0].labels);
        let oracle_errors = edit_distance(&u.labels, &nb.hypotheses[sel.oracle_index].labels);
        ref_len += u.labels.len();
        best_err += one_best_errors.total();
        oracle_err += oracle_errors.total();
        records.push(UtteranceRecord {
            id: u.id.clone(),
            reference: u.labels.clone(),
            one_best: nb.hypotheses[0].labels.clone(),
            one_best_errors,
            oracle_errors,
            oracle_rank: sel.oracle_index,
            nbest_len: nb.len(),
        });
    }
    let denom = ref_len.max(1) as f64;
    let one_best_wer = best_err as f64 / denom;
    let oracle_wer = oracle_err as f64 / denom;
    Ok(EvalReport {
        step,
        one_best_wer,
        oracle_wer,
        gap: one_best_wer - oracle_wer,
        examples_per_sec,
        records,
    })
}

pub fn decode_all(
    params: &ModelParams,
    utterances: &[&Utterance],
    beam: BeamConfig,
) -> Result<Vec<NBestList>, HarnessError> {
    utterances
        .par_iter()
        .map(|u| {
            let scorer = params.scorer(&u.features, u.frames)?;
            Ok(beam_search(&scorer, beam)?)
        })
        .collect()
}

pub fn evaluate(
    params: &ModelParams,
    utterances: &[&Utterance],
    beam: BeamConfig,
    step: usize,
) -> Result<EvalReport, HarnessError> {
    if utterances.is_empty() {
        return Err(HarnessError::Usage("evaluation set is empty".into()));
    }
    let start = Instant::now();
    let lists = decode_all(params, utterances, beam)?;
    let rate = utterances.len() as f64 / start.elapsed().as_secs_f64().max(1e-9);
    summarize(utterances, &lists, step, rate)
}
