//! Acceptance suite. Every test prints one `ACCEPTANCE <n> PASS|FAIL` line
//! with the measured quantities, then asserts the verdict.
//!
//! Run with `cargo test -p o1-harness --test acceptance -- --nocapture` to
//! see the lines; they also appear in failure output.

use std::time::{Duration, Instant};

use o1_core::corpus::{generate_corpus, Corpus, CorpusSpec, Split};
use o1_core::decoder::{beam_search, exhaustive_search, BeamConfig, Hypothesis, NBestList};
use o1_core::lattice::{brute_force_log_prob, rnnt_log_prob, JointLogits};
use o1_core::logmath::softmax;
use o1_core::metrics::{edit_distance, select_oracle};
use o1_core::model::{Checkpoint, ModelConfig, ModelParams};
use o1_core::objectives::{embr_loss, o1_loss, HypothesisScores, NormalizedPair};
use o1_harness::config::{ExperimentConfig, Mode};
use o1_harness::gradcheck::{grad_check, GradCheckConfig};
use o1_harness::step::{decode, objective_step, Objective, Sample};
use o1_harness::train::{metrics_csv, run, TrainInputs, TrainOutcome};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {n} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

#[test]
fn criterion_1_lattice_matches_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let frames = rng.random_range(1..=4);
        let vocab = rng.random_range(1..=4);
        let labels: Vec<usize> = (0..rng.random_range(0..=3)).map(|_| rng.random_range(1..=vocab)).collect();
        let n = frames * (labels.len() + 1) * (vocab + 1);
        let scores = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let lattice = JointLogits::new(frames, labels.len(), vocab, scores).unwrap();
        let dp = rnnt_log_prob(&lattice, &labels).unwrap().log_prob;
        worst = worst.max((dp - brute_force_log_prob(&lattice, &labels).unwrap()).abs());
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "lattice correctness",
        worst <= 1e-10 && within(elapsed, 5),
        &format!("200 lattices, max |dp - brute| = {worst:.2e} (tol 1e-10), {elapsed:.2?} (limit 5s)"),
    );
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let start = Instant::now();
    let report = grad_check(&GradCheckConfig::new(0xA2)).unwrap();
    let elapsed = start.elapsed();
    let enough = report.suites.iter().all(|s| s.cases >= 50);
    let detail: Vec<String> = report
        .suites
        .iter()
        .map(|s| format!("{}={:.1e}/{:.0e}", s.name, s.max_error, s.tolerance))
        .collect();
    verdict(
        2,
        "gradient correctness",
        report.passed() && enough && within(elapsed, 60),
        &format!("{} ({elapsed:.2?}, limit 60s)", detail.join(" ")),
    );
}

#[test]
fn criterion_3_saturating_beam_equals_exhaustive() {
    let start = Instant::now();
    let mut mismatches = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA3);
        let vocab = rng.random_range(1..=3);
        let config = ModelConfig {
            feature_dim: 3,
            vocab,
            hidden: 6,
            embed: 4,
        };
        let mut params = ModelParams::init(config, seed);
        params.flat_mut().iter_mut().for_each(|w| *w *= 20.0);
        let frames = rng.random_range(1..=3);
        let x: Vec<f64> = (0..frames * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scorer = params.scorer(&x, frames).unwrap();
        let exhaustive = exhaustive_search(&scorer, 3).unwrap();
        let beam = beam_search(
            &scorer,
            BeamConfig {
                beam_size: exhaustive.len(),
                max_symbols_per_frame: 3,
                max_label_len: Some(3),
            },
        )
        .unwrap();
        let same = beam.len() == exhaustive.len()
            && beam
                .hypotheses
                .iter()
                .zip(&exhaustive.hypotheses)
                .all(|(b, e)| b.labels == e.labels && (b.log_prob - e.log_prob).abs() <= 1e-10);
        mismatches += usize::from(!same);
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "decoder correctness",
        mismatches == 0 && within(elapsed, 30),
        &format!("50 tiny models, {mismatches} mismatches, {elapsed:.2?} (limit 30s)"),
    );
}

#[test]
fn criterion_4_edit_distance_is_exhaustively_correct() {
    let start = Instant::now();
    let mut seqs: Vec<Vec<u8>> = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..6 {
        layer = layer
            .iter()
            .flat_map(|p: &Vec<u8>| {
                (0..3u8).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
        seqs.extend(layer.iter().cloned());
    }
    let mut wrong = 0usize;
    let mut pairs = 0usize;
    for a in &seqs {
        for b in &seqs {
            wrong += usize::from(edit_distance(a, b).total() != memo_distance(a, b));
            pairs += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        4,
        "metric correctness",
        wrong == 0 && within(elapsed, 30),
        &format!("{pairs} pairs (lengths <= 6, 3 symbols), {wrong} disagreements, {elapsed:.2?} (limit 30s)"),
    );
}

/// Top-down recursion over suffix positions with a memo table.
fn memo_distance(a: &[u8], b: &[u8]) -> usize {
    fn go(i: usize, j: usize, a: &[u8], b: &[u8], memo: &mut [Option<usize>]) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        let key = i * (b.len() + 1) + j;
        if let Some(v) = memo[key] {
            return v;
        }
        let v = (go(i + 1, j + 1, a, b, memo) + usize::from(a[i] != b[j]))
            .min(go(i + 1, j, a, b, memo) + 1)
            .min(go(i, j + 1, a, b, memo) + 1);
        memo[key] = Some(v);
        v
    }
    go(0, 0, a, b, &mut vec![None; (a.len() + 1) * (b.len() + 1)])
}

// Shared settings for the empirical criteria. The toy model is the smaller
// 32-unit variant so that every run fits a single desktop core.
fn experiment_config(mode: Mode, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        seed: Some(seed),
        hidden: 32,
        embed: 16,
        learning_rate: if mode == Mode::Mle { 3e-3 } else { 1e-3 },
        pretrain_steps: 3000,
        finetune_steps: 500,
        eval_interval: 500,
        log_throughput: false,
        ..ExperimentConfig::default()
    }
}

fn final_row(o: &TrainOutcome) -> (f64, f64, f64) {
    let r = o.rows.last().unwrap();
    (r.one_best_wer, r.oracle_wer, r.gap)
}

#[test]
fn criterion_5_gap_closure() {
    let start = Instant::now();
    let train = generate_corpus(&CorpusSpec {
        seed: 501,
        utterance_count: 2000,
        ..CorpusSpec::default()
    })
    .unwrap();
    let eval = generate_corpus(&CorpusSpec {
        seed: 502,
        utterance_count: 300,
        ..CorpusSpec::default()
    })
    .unwrap();
    let mut inputs = TrainInputs {
        train,
        eval,
        unlabeled: None,
        baseline: None,
        teacher: None,
    };
    let base = run(&experiment_config(Mode::Mle, 1), &inputs).unwrap();
    let (b1, bo, base_gap) = final_row(&base);
    inputs.baseline = Some(base.checkpoint);

    let mut o1_closures = Vec::new();
    let mut embr_closures = Vec::new();
    let mut lines = vec![format!("baseline 1best={b1:.4} oracle={bo:.4} gap={base_gap:.4}")];
    for seed in 1..=3 {
        for (mode, out) in [(Mode::O1, &mut o1_closures), (Mode::Embr, &mut embr_closures)] {
            let o = run(&experiment_config(mode, seed), &inputs).unwrap();
            let (one, oracle, gap) = final_row(&o);
            let closure = (base_gap - gap) / base_gap;
            lines.push(format!("{mode} seed {seed}: 1best={one:.4} oracle={oracle:.4} gap={gap:.4} closure={closure:.3}"));
            out.push(closure);
        }
    }
    let elapsed = start.elapsed();
    let mean_o1 = o1_closures.iter().sum::<f64>() / 3.0;
    let wins = o1_closures.iter().zip(&embr_closures).filter(|(o, e)| o >= e).count();
    let pass = base_gap >= 0.02 && mean_o1 >= 0.4 && wins >= 2 && within(elapsed, 900);
    verdict(
        5,
        "gap closure",
        pass,
        &format!(
            "{}; mean O-1 closure {mean_o1:.3} (need >= 0.4), O-1 >= EMBR in {wins}/3 seeds (need 2), {elapsed:.1?} (limit 15m)",
            lines.join("; ")
        ),
    );
}

#[test]
fn criterion_6_o1_objective_is_cheaper_than_embr() {
    let start = Instant::now();
    let corpus = generate_corpus(&CorpusSpec {
        seed: 601,
        utterance_count: 64,
        ..CorpusSpec::default()
    })
    .unwrap();
    let params = ModelParams::init(ModelConfig::new(corpus.feature_dim, corpus.vocab), 6);
    let samples: Vec<Sample> = corpus
        .utterances
        .iter()
        .map(|u| Sample {
            features: &u.features,
            frames: u.frames,
            reference: &u.labels,
        })
        .collect();
    let lists: Vec<NBestList> = samples.iter().map(|s| decode(&params, s, BeamConfig::new(8)).unwrap()).collect();

    let mut counts_ok = true;
    let mut timings = Vec::new();
    for objective in [Objective::O1 { lambda: 0.1 }, Objective::Embr { gamma: 0.1 }] {
        let t = Instant::now();
        for (s, nb) in samples.iter().zip(&lists) {
            let out = objective_step(&params, s, objective, Some(nb), true).unwrap();
            let expected = if matches!(objective, Objective::O1 { .. }) { 2 } else { 8 };
            counts_ok &= nb.len() == 8 && out.objective_lattices == expected;
        }
        timings.push(t.elapsed());
    }
    let elapsed = start.elapsed();
    verdict(
        6,
        "compute advantage",
        counts_ok && timings[0] < timings[1] && within(elapsed, 300),
        &format!(
            "64 utterances at beam 8: O-1 {:.2?} vs EMBR {:.2?}, lattices per utterance 2 vs 8: {}",
            timings[0],
            timings[1],
            if counts_ok { "exact" } else { "MISMATCH" }
        ),
    );
}

#[test]
fn criterion_7_distillation_helps() {
    let start = Instant::now();
    let full = generate_corpus(&CorpusSpec {
        seed: 701,
        utterance_count: 2000,
        unlabeled_fraction: 0.5,
        ..CorpusSpec::default()
    })
    .unwrap();
    let unlabeled = Corpus {
        utterances: full.split(Split::Unlabeled).into_iter().cloned().collect(),
        ..full.clone()
    };
    let eval = generate_corpus(&CorpusSpec {
        seed: 702,
        utterance_count: 300,
        ..CorpusSpec::default()
    })
    .unwrap();
    let mut inputs = TrainInputs {
        train: full,
        eval,
        unlabeled: None,
        baseline: None,
        teacher: None,
    };
    let teacher = run(&experiment_config(Mode::Mle, 1), &inputs).unwrap();
    let (t1, _, _) = final_row(&teacher);
    let teacher = teacher.checkpoint;

    let mut wins = 0;
    let mut lines = vec![format!("teacher 1best={t1:.4}")];
    for seed in 1..=3 {
        inputs.baseline = Some(teacher.clone());
        inputs.teacher = None;
        inputs.unlabeled = None;
        let labeled_only = final_row(&run(&experiment_config(Mode::O1, seed), &inputs).unwrap()).0;

        inputs.baseline = None;
        inputs.teacher = Some(teacher.clone());
        inputs.unlabeled = Some(unlabeled.clone());
        let mut cfg = experiment_config(Mode::O1Distill, seed);
        cfg.teacher_checkpoint = Some("in-memory".into());
        cfg.unlabeled_corpus = Some("in-memory".into());
        let distilled = final_row(&run(&cfg, &inputs).unwrap()).0;
        wins += usize::from(distilled <= labeled_only);
        lines.push(format!("seed {seed}: distilled {distilled:.4} vs labeled-only {labeled_only:.4}"));
    }
    let elapsed = start.elapsed();
    verdict(
        7,
        "distillation sanity",
        wins >= 2 && within(elapsed, 1200),
        &format!("{}; distilled <= labeled-only in {wins}/3 seeds (need 2), {elapsed:.1?} (limit 20m)", lines.join("; ")),
    );
}

fn nbest_case() -> impl Strategy<Value = (NBestList, Vec<usize>, Vec<f64>)> {
    let seq = || prop::collection::vec(1usize..=4, 0..7);
    (prop::collection::vec((seq(), -20.0f64..0.0), 1..9), seq()).prop_map(|(hyps, reference)| {
        let lps: Vec<f64> = hyps.iter().map(|(_, lp)| *lp).collect();
        let hypotheses = hyps
            .into_iter()
            .map(|(labels, log_prob)| Hypothesis { labels, log_prob })
            .collect::<Vec<_>>();
        let n = hypotheses.len();
        (NBestList { hypotheses, beam_size: n }, reference, lps)
    })
}

fn tiny_run(seed: u64, mode: Mode) -> String {
    let spec = CorpusSpec {
        seed,
        utterance_count: 8,
        vocab: 3,
        label_len: (1, 3),
        feature_dim: 2,
        ..CorpusSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let config = ModelConfig {
        feature_dim: 2,
        vocab: 3,
        hidden: 4,
        embed: 2,
    };
    let inputs = TrainInputs {
        eval: corpus.clone(),
        train: corpus,
        unlabeled: None,
        baseline: (mode != Mode::Mle).then(|| Checkpoint::new(ModelParams::init(config, seed))),
        teacher: None,
    };
    let cfg = ExperimentConfig {
        mode,
        seed: Some(seed),
        hidden: 4,
        embed: 2,
        batch_size: 3,
        train_beam_size: 3,
        eval_beam_size: 3,
        pretrain_steps: 3,
        finetune_steps: 3,
        eval_interval: 2,
        log_throughput: false,
        ..ExperimentConfig::default()
    };
    metrics_csv(&run(&cfg, &inputs).unwrap().rows)
}

#[test]
fn criterion_8_invariant_suites() {
    let start = Instant::now();
    let cases = 100;
    let mut results: Vec<(&str, Result<(), String>)> = Vec::new();
    let mut check = |name: &'static str, r: Result<(), String>| results.push((name, r));
    let runner = || {
        TestRunner::new(Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        })
    };

    check(
        "embr zero-sum",
        runner()
            .run(&nbest_case(), |(nb, reference, lps)| {
                let s = HypothesisScores::new(&nb, &reference, lps).unwrap();
                let sum: f64 = embr_loss(&s).unwrap().coeffs.iter().sum();
                prop_assert!(sum.abs() <= 1e-12, "sum {}", sum);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "softmax shift invariance",
        runner()
            .run(
                &(prop::collection::vec(-50.0f64..50.0, 1..12), -500.0f64..500.0),
                |(xs, c)| {
                    let a = softmax(&xs);
                    let b = softmax(&xs.iter().map(|x| x + c).collect::<Vec<_>>());
                    for (p, q) in a.iter().zip(&b) {
                        prop_assert!((p - q).abs() <= 1e-12);
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );
    check(
        "oracle <= 1-best",
        runner()
            .run(&nbest_case(), |(nb, reference, _)| {
                let sel = select_oracle(&nb, &reference).unwrap();
                prop_assert!(sel.oracle_wer <= sel.one_best_wer);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "o1 sign structure",
        runner()
            .run(&nbest_case(), |(nb, reference, lps)| {
                let s = HypothesisScores::new(&nb, &reference, lps.clone()).unwrap();
                let (o, b) = (s.oracle_index, s.one_best_index);
                let pair = NormalizedPair::from_raw(&s, lps[o], lps[b]);
                let r = o1_loss(&s, pair).unwrap();
                if o != b {
                    prop_assert!(r.coeffs[o] <= 0.0);
                    prop_assert!(r.coeffs[b] >= 0.0);
                }
                for (i, c) in r.coeffs.iter().enumerate() {
                    if i != o && i != b {
                        prop_assert_eq!(*c, 0.0);
                    }
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    check(
        "checkpoint round-trip",
        runner()
            .run(&(any::<u64>(), 1usize..4, 1usize..5, 1usize..6, 1usize..4), |(seed, d, v, h, e)| {
                let config = ModelConfig {
                    feature_dim: d,
                    vocab: v,
                    hidden: h,
                    embed: e,
                };
                let mut c = Checkpoint::new(ModelParams::init(config, seed));
                c.step = seed % 1000;
                c.fingerprint = seed.to_le_bytes().to_vec();
                let bytes = c.to_bytes();
                let back = Checkpoint::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
                prop_assert_eq!(back.to_bytes(), bytes);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );
    let mut repro = Ok(());
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    for i in 0..cases as usize {
        let seed = rng.random::<u64>() % 1_000_000;
        let mode = [Mode::Mle, Mode::Embr, Mode::O1][i % 3];
        if tiny_run(seed, mode) != tiny_run(seed, mode) {
            repro = Err(format!("seed {seed} mode {mode} produced different CSVs"));
            break;
        }
    }
    check("metrics CSV reproducibility", repro);

    let elapsed = start.elapsed();
    let failed: Vec<String> = results
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    let names: Vec<&str> = results.iter().map(|(n, _)| *n).collect();
    verdict(
        8,
        "invariant suites",
        failed.is_empty(),
        &if failed.is_empty() {
            format!("{} suites x {cases} instances ({}), {elapsed:.2?}", names.len(), names.join(", "))
        } else {
            failed.join("; ")
        },
    );
}
