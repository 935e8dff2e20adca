//! Beam-size sweep: 1-best / oracle WER and both sequence losses computed on
//! the top-k of each decoded list.

use std::fmt::Write as _;

use o1_core::corpus::Utterance;
use o1_core::decoder::{BeamConfig, NBestList};
use o1_core::lattice::rnnt_log_prob;
use o1_core::model::ModelParams;
use o1_core::objectives::{embr_loss, o1_loss, HypothesisScores, NormalizedPair};
use rayon::prelude::*;

use crate::eval::{decode_all, summarize};
use crate::HarnessError;

pub const SWEEP_HEADER: &str = "beam,one_best_wer,oracle_wer,gap,truncated_k,loss_o1_topk,loss_embr_topk";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beam: usize,
    pub one_best_wer: f64,
    /// Oracle over the top `truncated_k` hypotheses.
    pub oracle_wer: f64,
    pub gap: f64,
    pub truncated_k: usize,
    pub loss_o1_topk: f64,
    pub loss_embr_topk: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.beam, r.one_best_wer, r.oracle_wer, r.gap, r.truncated_k, r.loss_o1_topk, r.loss_embr_topk
        );
    }
    out
}

/// Sequence losses of one utterance's top-k list. Hypothesis probabilities
/// are full lattice sums; oracle selection uses the beam scores.
fn topk_losses(nbest: &NBestList, full_sums: &[f64], reference: &[usize]) -> Result<(f64, f64), HarnessError> {
    let embr = embr_loss(&HypothesisScores::new(nbest, reference, full_sums.to_vec())?)?.loss;
    let beam_scores = nbest.hypotheses.iter().map(|h| h.log_prob).collect();
    let scores = HypothesisScores::new(nbest, reference, beam_scores)?;
    let pair = NormalizedPair::from_raw(
        &scores,
        full_sums[scores.oracle_index],
        full_sums[scores.one_best_index],
    );
    Ok((o1_loss(&scores, pair)?.loss, embr))
}

/// One row per `(beam, k)` with `k = 1..=beam`.
pub fn sweep(
    params: &ModelParams,
    utterances: &[&Utterance],
    beams: &[usize],
    max_symbols_per_frame: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    if utterances.is_empty() || beams.is_empty() || beams.contains(&0) {
        return Err(HarnessError::Usage("sweep needs utterances and beam sizes >= 1".into()));
    }
    let mut rows = Vec::new();
    for &beam in beams {
        let cfg = BeamConfig {
            beam_size: beam,
            max_symbols_per_frame,
            max_label_len: None,
        };
        let lists = decode_all(params, utterances, cfg)?;
        let sums: Vec<Vec<f64>> = utterances
            .par_iter()
            .zip(&lists)
            .map(|(u, nb)| {
                nb.hypotheses
                    .iter()
                    .map(|h| {
                        let (lattice, _) = params.forward_lattice(&u.features, u.frames, &h.labels)?;
                        Ok(rnnt_log_prob(&lattice, &h.labels)?.log_prob)
                    })
                    .collect::<Result<Vec<_>, HarnessError>>()
            })
            .collect::<Result<_, _>>()?;
        for k in 1..=beam {
            let truncated: Vec<NBestList> = lists.iter().map(|nb| nb.truncated(k)).collect();
            let report = summarize(utterances, &truncated, 0, 0.0)?;
            let (mut o1, mut embr) = (0.0, 0.0);
            for ((u, nb), s) in utterances.iter().zip(&truncated).zip(&sums) {
                let (a, b) = topk_losses(nb, &s[..nb.len()], &u.labels)?;
                o1 += a;
                embr += b;
            }
            let n = utterances.len() as f64;
            rows.push(SweepRow {
                beam,
                one_best_wer: report.one_best_wer,
                oracle_wer: report.oracle_wer,
                gap: report.gap,
                truncated_k: k,
                loss_o1_topk: o1 / n,
                loss_embr_topk: embr / n,
            });
        }
    }
    Ok(rows)
}
