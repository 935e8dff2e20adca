//! Finite-difference and brute-force oracle suites behind `o1 grad-check`.
//!
//! Relative error is `|analytic − numeric| / max(|analytic|, 1)`. Kernel
//! suites (lattice gradient, objective coefficients, model backward) use a
//! 1e-6 tolerance; end-to-end parameter gradients 1e-5; the lattice sum is
//! compared with alignment enumeration at 1e-10 absolute.

use std::fmt;
use std::path::Path;

use o1_core::decoder::{BeamConfig, Hypothesis, NBestList};
use o1_core::lattice::{brute_force_log_prob, rnnt_loss_grad, JointLogits};
use o1_core::model::{ModelConfig, ModelParams};
use o1_core::objectives::{embr_loss, o1_loss, HypothesisScores, NormalizedPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{key_values, parse};
use crate::step::{decode, objective_step, Objective, Sample};
use crate::{io_error, HarnessError};

pub const BRUTE_FORCE_TOL: f64 = 1e-10;
pub const KERNEL_TOL: f64 = 1e-6;
pub const END_TO_END_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Random cases per suite.
    pub cases: usize,
    /// Added to every analytic value before comparison; a fault-injection hook.
    pub perturb: f64,
}

impl GradCheckConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            cases: 50,
            perturb: 0.0,
        }
    }

    /// Keys: `seed` (required), `cases`, `perturb`.
    pub fn parse_str(text: &str) -> Result<Self, HarnessError> {
        let pairs = key_values(text)?;
        if pairs.is_empty() {
            return Err(HarnessError::Usage("grad-check config is empty".into()));
        }
        let mut seed = None;
        let mut cfg = Self::new(0);
        for (line, key, value) in &pairs {
            let at = |e: HarnessError| HarnessError::Usage(format!("line {line}: {e}"));
            match key.as_str() {
                "seed" => seed = Some(parse(key, value).map_err(at)?),
                "cases" => cfg.cases = parse(key, value).map_err(at)?,
                "perturb" => cfg.perturb = parse(key, value).map_err(at)?,
                other => return Err(HarnessError::Usage(format!("line {line}: unknown key {other:?}"))),
            }
        }
        cfg.seed = seed.ok_or_else(|| HarnessError::Usage("grad-check config needs a seed".into()))?;
        if cfg.cases == 0 {
            return Err(HarnessError::Usage("cases must be >= 1".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse_str(&std::fs::read_to_string(path).map_err(|e| io_error(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub suites: Vec<SuiteResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    /// `Err(Verification)` naming the failed suites.
    pub fn into_result(self) -> Result<Self, HarnessError> {
        let failed: Vec<&str> = self.suites.iter().filter(|s| !s.passed()).map(|s| s.name).collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(HarnessError::Verification(format!("tolerance breached in {}", failed.join(", "))))
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            writeln!(
                f,
                "{:<20} cases={:<4} max_err={:.3e} tol={:.0e} {}",
                s.name,
                s.cases,
                s.max_error,
                s.tolerance,
                if s.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn central<F: FnMut(f64) -> Result<f64, HarnessError>>(x: f64, h: f64, mut f: F) -> Result<f64, HarnessError> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

fn random_lattice(rng: &mut ChaCha8Rng, max_t: usize, max_u: usize, max_v: usize) -> (JointLogits, Vec<usize>) {
    let frames = rng.random_range(1..=max_t);
    let vocab = rng.random_range(1..=max_v);
    let labels: Vec<usize> = (0..rng.random_range(0..=max_u)).map(|_| rng.random_range(1..=vocab)).collect();
    let n = frames * (labels.len() + 1) * (vocab + 1);
    let scores = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    (
        JointLogits::new(frames, labels.len(), vocab, scores).expect("valid shape"),
        labels,
    )
}

fn lattice_brute_force(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult, HarnessError> {
    let cases = cfg.cases.max(200);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (lattice, labels) = random_lattice(rng, 4, 3, 4);
        let (posterior, _) = rnnt_loss_grad(&lattice, &labels)?;
        let brute = brute_force_log_prob(&lattice, &labels)?;
        worst = worst.max((posterior.log_prob + cfg.perturb - brute).abs());
    }
    Ok(SuiteResult {
        name: "lattice_brute_force",
        cases,
        max_error: worst,
        tolerance: BRUTE_FORCE_TOL,
    })
}

fn rnnt_grad_suite(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult, HarnessError> {
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let (lattice, labels) = random_lattice(rng, 4, 3, 3);
        let (_, grad) = rnnt_loss_grad(&lattice, &labels)?;
        for i in 0..lattice.as_slice().len() {
            let fd = central(lattice.as_slice()[i], 1e-5, |v| {
                let mut l = lattice.clone();
                l.as_mut_slice()[i] = v;
                Ok(-rnnt_loss_grad(&l, &labels)?.0.log_prob)
            })?;
            worst = worst.max(rel(grad.as_slice()[i] + cfg.perturb, fd));
        }
    }
    Ok(SuiteResult {
        name: "rnnt_grad",
        cases: cfg.cases,
        max_error: worst,
        tolerance: KERNEL_TOL,
    })
}

fn random_nbest(rng: &mut ChaCha8Rng) -> (NBestList, Vec<usize>, Vec<f64>) {
    let n = rng.random_range(1..=8);
    let reference: Vec<usize> = (0..rng.random_range(0..6)).map(|_| rng.random_range(1..=4)).collect();
    let hypotheses = (0..n)
        .map(|_| Hypothesis {
            labels: (0..rng.random_range(0..7)).map(|_| rng.random_range(1..=4)).collect(),
            log_prob: 0.0,
        })
        .collect();
    let log_probs = (0..n).map(|_| rng.random_range(-12.0..-0.1)).collect();
    (NBestList { hypotheses, beam_size: n }, reference, log_probs)
}

fn embr_suite(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult, HarnessError> {
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let (nbest, reference, log_probs) = random_nbest(rng);
        let scores = HypothesisScores::new(&nbest, &reference, log_probs.clone())?;
        let coeffs = embr_loss(&scores)?.coeffs;
        for i in 0..log_probs.len() {
            let fd = central(log_probs[i], 1e-6, |v| {
                let mut s = scores.clone();
                s.log_probs[i] = v;
                Ok(embr_loss(&s)?.loss)
            })?;
            worst = worst.max(rel(coeffs[i] + cfg.perturb, fd));
        }
    }
    Ok(SuiteResult {
        name: "embr_coeffs",
        cases: cfg.cases,
        max_error: worst,
        tolerance: KERNEL_TOL,
    })
}

fn o1_suite(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult, HarnessError> {
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let (nbest, reference, raw) = random_nbest(rng);
        let scores = HypothesisScores::new(&nbest, &reference, raw.clone())?;
        let loss = |raw: &[f64]| -> Result<f64, HarnessError> {
            let pair = NormalizedPair::from_raw(&scores, raw[scores.oracle_index], raw[scores.one_best_index]);
            Ok(o1_loss(&scores, pair)?.loss)
        };
        let pair = NormalizedPair::from_raw(&scores, raw[scores.oracle_index], raw[scores.one_best_index]);
        let coeffs = o1_loss(&scores, pair)?.coeffs;
        for i in 0..raw.len() {
            let fd = central(raw[i], 1e-6, |v| {
                let mut r = raw.clone();
                r[i] = v;
                loss(&r)
            })?;
            worst = worst.max(rel(coeffs[i] + cfg.perturb, fd));
        }
    }
    Ok(SuiteResult {
        name: "o1_coeffs",
        cases: cfg.cases,
        max_error: worst,
        tolerance: KERNEL_TOL,
    })
}

struct ModelCase {
    params: ModelParams,
    features: Vec<f64>,
    frames: usize,
    reference: Vec<usize>,
}

fn model_case(rng: &mut ChaCha8Rng) -> ModelCase {
    let config = ModelConfig {
        feature_dim: 3,
        vocab: 3,
        hidden: 6,
        embed: 3,
    };
    let mut params = ModelParams::init(config, rng.random());
    // widen the tiny init so outputs are far from uniform
    params.flat_mut().iter_mut().for_each(|w| *w *= 10.0);
    let frames = rng.random_range(1..=5);
    ModelCase {
        params,
        features: (0..frames * 3).map(|_| rng.random_range(-1.5..1.5)).collect(),
        frames,
        reference: (0..rng.random_range(0..=3)).map(|_| rng.random_range(1..=3)).collect(),
    }
}

const COORDS_PER_CASE: usize = 24;

fn model_backward_suite(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<SuiteResult, HarnessError> {
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let case = model_case(rng);
        let (lattice, cache) = case.params.forward_lattice(&case.features, case.frames, &case.reference)?;
        let weights: Vec<f64> = (0..lattice.as_slice().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let upstream = JointLogits::new(lattice.frames(), lattice.label_len(), lattice.vocab(), weights.clone())?;
        let grad = case.params.backward(&cache, &upstream)?;
        for _ in 0..COORDS_PER_CASE {
            let i = rng.random_range(0..grad.len());
            let fd = central(case.params.flat()[i], 1e-5, |v| {
                let mut p = case.params.clone();
                p.flat_mut()[i] = v;
                let (l, _) = p.forward_lattice(&case.features, case.frames, &case.reference)?;
                Ok(l.as_slice().iter().zip(&weights).map(|(a, b)| a * b).sum())
            })?;
            worst = worst.max(rel(grad[i] + cfg.perturb, fd));
        }
    }
    Ok(SuiteResult {
        name: "model_backward",
        cases: cfg.cases,
        max_error: worst,
        tolerance: KERNEL_TOL,
    })
}

fn end_to_end_suite(
    cfg: &GradCheckConfig,
    rng: &mut ChaCha8Rng,
    name: &'static str,
    objective: Objective,
) -> Result<SuiteResult, HarnessError> {
    let mut worst = 0.0f64;
    for _ in 0..cfg.cases {
        let case = model_case(rng);
        let sample = Sample {
            features: &case.features,
            frames: case.frames,
            reference: &case.reference,
        };
        let nbest = if objective.needs_nbest() {
            Some(decode(&case.params, &sample, BeamConfig::new(4))?)
        } else {
            None
        };
        let out = objective_step(&case.params, &sample, objective, nbest.as_ref(), true)?;
        for _ in 0..COORDS_PER_CASE {
            let i = rng.random_range(0..out.grad.len());
            let fd = central(case.params.flat()[i], 1e-5, |v| {
                let mut p = case.params.clone();
                p.flat_mut()[i] = v;
                Ok(objective_step(&p, &sample, objective, nbest.as_ref(), false)?.total)
            })?;
            worst = worst.max(rel(out.grad[i] + cfg.perturb, fd));
        }
    }
    Ok(SuiteResult {
        name,
        cases: cfg.cases,
        max_error: worst,
        tolerance: END_TO_END_TOL,
    })
}

/// Runs every suite with its own RNG stream derived from `cfg.seed`.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport, HarnessError> {
    let rng = |k: u64| ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k));
    let suites = vec![
        lattice_brute_force(cfg, &mut rng(1))?,
        rnnt_grad_suite(cfg, &mut rng(2))?,
        embr_suite(cfg, &mut rng(3))?,
        o1_suite(cfg, &mut rng(4))?,
        model_backward_suite(cfg, &mut rng(5))?,
        end_to_end_suite(cfg, &mut rng(6), "end_to_end_mle", Objective::Mle)?,
        end_to_end_suite(cfg, &mut rng(7), "end_to_end_embr", Objective::Embr { gamma: 0.1 })?,
        end_to_end_suite(cfg, &mut rng(8), "end_to_end_o1", Objective::O1 { lambda: 0.1 })?,
        end_to_end_suite(cfg, &mut rng(9), "end_to_end_distill", Objective::O1Distill { lambda: 0.1 })?,
    ];
    Ok(GradCheckReport { suites })
}
