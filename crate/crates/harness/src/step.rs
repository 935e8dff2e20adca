//! One objective evaluation: loss and flat parameter gradient for a single
//! utterance, and the fixed-order batch reduction over many.

use o1_core::decoder::{beam_search, BeamConfig, NBestList};
use o1_core::lattice::{rnnt_loss_grad, JointLogits, LatticePosterior};
use o1_core::model::{ForwardCache, ModelParams};
use o1_core::objectives::{
    embr_loss, multitask_embr, multitask_o1, o1_distill_loss, o1_loss, HypothesisScores, LossResult,
    NormalizedPair,
};
use rayon::prelude::*;

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `−log p(Y* | X)`.
    Mle,
    Embr { gamma: f64 },
    O1 { lambda: f64 },
    /// O-1 against a pseudo-label; identical arithmetic, separate bookkeeping.
    O1Distill { lambda: f64 },
}

impl Objective {
    pub fn needs_nbest(&self) -> bool {
        !matches!(self, Objective::Mle)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a [f64],
    pub frames: usize,
    /// Ground truth, or the teacher's pseudo-label in distillation.
    pub reference: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub total: f64,
    /// EMBR or O-1 term (0 for MLE).
    pub objective: f64,
    /// Transducer loss of the reference.
    pub rnnt: f64,
    /// Flat `∂total / ∂params`; empty when not requested.
    pub grad: Vec<f64>,
    /// Hypothesis lattices the sequence objective evaluated.
    pub objective_lattices: usize,
    /// Reference lattices evaluated for the transducer term.
    pub aux_lattices: usize,
}

pub fn decode(params: &ModelParams, sample: &Sample, beam: BeamConfig) -> Result<NBestList, HarnessError> {
    let scorer = params.scorer(sample.features, sample.frames)?;
    Ok(beam_search(&scorer, beam)?)
}

struct Evaluated {
    posterior: LatticePosterior,
    lattice_grad: JointLogits,
    cache: ForwardCache,
}

fn evaluate_lattice(params: &ModelParams, sample: &Sample, labels: &[usize]) -> Result<Evaluated, HarnessError> {
    let (lattice, cache) = params.forward_lattice(sample.features, sample.frames, labels)?;
    let (posterior, lattice_grad) = rnnt_loss_grad(&lattice, labels)?;
    Ok(Evaluated {
        posterior,
        lattice_grad,
        cache,
    })
}

/// Accumulates `weight · ∂(−log p)/∂params` of an evaluated lattice into `grad`.
fn accumulate(params: &ModelParams, ev: &Evaluated, weight: f64, grad: &mut [f64]) -> Result<(), HarnessError> {
    if weight == 0.0 {
        return Ok(());
    }
    let mut g = ev.lattice_grad.clone();
    g.scale(weight);
    params.backward_into(&ev.cache, &g, grad)?;
    Ok(())
}

/// Loss of one utterance under `objective`, with the n-best list held fixed.
///
/// Hypothesis coefficients `c_i = ∂L/∂log p(Y_i)` enter the gradient as
/// `−c_i · ∂(−log p(Y_i))/∂params`; the auxiliary transducer term adds
/// `weight · ∂(−log p(Y*))/∂params`.
pub fn objective_step(
    params: &ModelParams,
    sample: &Sample,
    objective: Objective,
    nbest: Option<&NBestList>,
    with_grad: bool,
) -> Result<StepOutput, HarnessError> {
    let mut grad = if with_grad {
        vec![0.0; params.param_count()]
    } else {
        Vec::new()
    };
    let reference = evaluate_lattice(params, sample, sample.reference)?;
    let rnnt = -reference.posterior.log_prob;

    let nbest = match (objective, nbest) {
        (Objective::Mle, _) => {
            if with_grad {
                accumulate(params, &reference, 1.0, &mut grad)?;
            }
            return Ok(StepOutput {
                total: rnnt,
                objective: 0.0,
                rnnt,
                grad,
                objective_lattices: 0,
                aux_lattices: 1,
            });
        }
        (_, Some(nb)) if !nb.is_empty() => nb,
        _ => return Err(HarnessError::Usage("sequence objectives need a non-empty n-best list".into())),
    };

    let (result, hyp_lattices): (LossResult, Vec<(usize, Evaluated)>) = match objective {
        Objective::Embr { gamma } => {
            let evaluated = nbest
                .hypotheses
                .iter()
                .map(|h| evaluate_lattice(params, sample, &h.labels))
                .collect::<Result<Vec<_>, _>>()?;
            let log_probs = evaluated.iter().map(|e| e.posterior.log_prob).collect();
            let scores = HypothesisScores::new(nbest, sample.reference, log_probs)?;
            let result = multitask_embr(&embr_loss(&scores)?, rnnt, gamma)?;
            (result, evaluated.into_iter().enumerate().collect())
        }
        Objective::O1 { lambda } | Objective::O1Distill { lambda } => {
            let beam_scores = nbest.hypotheses.iter().map(|h| h.log_prob).collect();
            let scores = HypothesisScores::new(nbest, sample.reference, beam_scores)?;
            let (o, b) = (scores.oracle_index, scores.one_best_index);
            let oracle = evaluate_lattice(params, sample, &nbest.hypotheses[o].labels)?;
            let one_best = evaluate_lattice(params, sample, &nbest.hypotheses[b].labels)?;
            let pair = NormalizedPair::from_raw(&scores, oracle.posterior.log_prob, one_best.posterior.log_prob);
            let result = if matches!(objective, Objective::O1Distill { .. }) {
                o1_distill_loss(&scores, pair, rnnt, lambda)?
            } else {
                multitask_o1(&o1_loss(&scores, pair)?, rnnt, lambda)?
            };
            (result, vec![(o, oracle), (b, one_best)])
        }
        Objective::Mle => unreachable!("handled above"),
    };

    let objective_lattices = hyp_lattices.len();
    if with_grad {
        if objective_lattices == 2 && hyp_lattices[0].0 == hyp_lattices[1].0 {
            // oracle and 1-best coincide: the coefficient already holds both terms
            accumulate(params, &hyp_lattices[0].1, -result.coeffs[hyp_lattices[0].0], &mut grad)?;
        } else {
            for (i, ev) in &hyp_lattices {
                accumulate(params, ev, -result.coeffs[*i], &mut grad)?;
            }
        }
        accumulate(params, &reference, result.rnnt_weight, &mut grad)?;
    }
    Ok(StepOutput {
        total: result.loss,
        objective: result.loss - result.rnnt_weight * rnnt,
        rnnt,
        grad,
        objective_lattices,
        aux_lattices: 1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub total: f64,
    pub objective: f64,
    pub rnnt: f64,
    /// Mean gradient over the batch.
    pub grad: Vec<f64>,
    pub objective_lattices: usize,
    pub aux_lattices: usize,
    pub utterances: usize,
}

/// Decodes (when the objective needs it) and evaluates every sample in
/// parallel, then reduces in sample order so results do not depend on the
/// worker count. Losses and gradient are batch means.
pub fn batch_step(
    params: &ModelParams,
    samples: &[Sample],
    objective: Objective,
    beam: BeamConfig,
) -> Result<BatchOutput, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::Usage("empty batch".into()));
    }
    let outputs: Vec<StepOutput> = samples
        .par_iter()
        .map(|s| {
            let nbest = if objective.needs_nbest() {
                Some(decode(params, s, beam)?)
            } else {
                None
            };
            objective_step(params, s, objective, nbest.as_ref(), true)
        })
        .collect::<Result<_, _>>()?;

    let n = outputs.len() as f64;
    let mut out = BatchOutput {
        total: 0.0,
        objective: 0.0,
        rnnt: 0.0,
        grad: vec![0.0; params.param_count()],
        objective_lattices: 0,
        aux_lattices: 0,
        utterances: outputs.len(),
    };
    for o in &outputs {
        out.total += o.total;
        out.objective += o.objective;
        out.rnnt += o.rnnt;
        out.objective_lattices += o.objective_lattices;
        out.aux_lattices += o.aux_lattices;
        for (a, g) in out.grad.iter_mut().zip(&o.grad) {
            *a += g;
        }
    }
    out.total /= n;
    out.objective /= n;
    out.rnnt /= n;
    out.grad.iter_mut().for_each(|g| *g /= n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use o1_core::decoder::Hypothesis;
    use o1_core::model::ModelConfig;

    fn model() -> ModelParams {
        let mut p = ModelParams::init(
            ModelConfig {
                feature_dim: 2,
                vocab: 3,
                hidden: 5,
                embed: 3,
            },
            4,
        );
        p.flat_mut().iter_mut().for_each(|w| *w *= 10.0);
        p
    }

    #[test]
    fn lattice_counts() {
        let p = model();
        let x = [0.1, -0.4, 0.3, 0.9, -1.0, 0.2];
        let s = Sample {
            features: &x,
            frames: 3,
            reference: &[1, 2],
        };
        let nb = decode(&p, &s, BeamConfig::new(4)).unwrap();
        assert_eq!(nb.len(), 4);
        let e = objective_step(&p, &s, Objective::Embr { gamma: 0.1 }, Some(&nb), true).unwrap();
        assert_eq!((e.objective_lattices, e.aux_lattices), (4, 1));
        let o = objective_step(&p, &s, Objective::O1 { lambda: 0.1 }, Some(&nb), true).unwrap();
        assert_eq!((o.objective_lattices, o.aux_lattices), (2, 1));
        assert!((o.total - (o.objective + 0.1 * o.rnnt)).abs() < 1e-12);
        let m = objective_step(&p, &s, Objective::Mle, None, true).unwrap();
        assert_eq!(m.total, m.rnnt);
    }

    #[test]
    fn o1_on_a_perfect_single_hypothesis_leaves_only_the_transducer_term() {
        let p = model();
        let x = [0.1, -0.4, 0.3, 0.9];
        let s = Sample {
            features: &x,
            frames: 2,
            reference: &[2],
        };
        let nb = NBestList {
            hypotheses: vec![Hypothesis {
                labels: vec![2],
                log_prob: -0.3,
            }],
            beam_size: 1,
        };
        let o = objective_step(&p, &s, Objective::O1 { lambda: 0.1 }, Some(&nb), false).unwrap();
        // WER 0: only −ℓ·(1 − 0) survives
        assert!((o.objective - o.rnnt).abs() < 1e-12);
        assert!((o.total - 1.1 * o.rnnt).abs() < 1e-12);
    }

    #[test]
    fn batch_reduction_is_deterministic() {
        let p = model();
        let xs: Vec<Vec<f64>> = (0..6).map(|i| (0..8).map(|j| ((i * 8 + j) as f64).sin()).collect()).collect();
        let refs = [vec![1], vec![2, 3], vec![3], vec![1, 1], vec![], vec![2]];
        let samples: Vec<Sample> = xs
            .iter()
            .zip(&refs)
            .map(|(x, r)| Sample {
                features: x,
                frames: 4,
                reference: r,
            })
            .collect();
        let a = batch_step(&p, &samples, Objective::O1 { lambda: 0.1 }, BeamConfig::new(3)).unwrap();
        let b = batch_step(&p, &samples, Objective::O1 { lambda: 0.1 }, BeamConfig::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objective_lattices, 12);
    }
}
