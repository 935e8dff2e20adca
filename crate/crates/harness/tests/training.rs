use o1_core::corpus::{generate_corpus, write_corpus, Corpus, CorpusSpec, Split, Utterance};
use o1_core::decoder::BeamConfig;
use o1_core::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, ModelParams};
use o1_core::objectives::HypothesisScores;
use o1_harness::config::{ExperimentConfig, Mode};
use o1_harness::eval::evaluate;
use o1_harness::step::{decode, objective_step, Objective, Sample};
use o1_harness::sweep::sweep;
use o1_harness::train::{load_inputs, run, train, TrainInputs, METRICS_HEADER};
use o1_harness::HarnessError;

fn noiseless() -> Corpus {
    generate_corpus(&CorpusSpec {
        seed: 3,
        utterance_count: 120,
        vocab: 4,
        label_len: (1, 4),
        feature_dim: 4,
        noise_sigma: 0.0,
        confusion_rate: 0.0,
        ..CorpusSpec::default()
    })
    .unwrap()
}

fn small(mode: Mode, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        seed: Some(seed),
        hidden: 12,
        embed: 6,
        batch_size: 8,
        learning_rate: 1e-2,
        pretrain_steps: 400,
        finetune_steps: 4,
        eval_interval: 200,
        train_beam_size: 4,
        eval_beam_size: 4,
        log_throughput: false,
        ..ExperimentConfig::default()
    }
}

fn inputs(train: Corpus) -> TrainInputs {
    TrainInputs {
        eval: train.clone(),
        train,
        unlabeled: None,
        baseline: None,
        teacher: None,
    }
}

/// MLE on a separable corpus, reused by several tests.
fn converged() -> (Checkpoint, Corpus) {
    let corpus = noiseless();
    let mut cfg = small(Mode::Mle, 1);
    cfg.pretrain_steps = 800;
    let out = run(&cfg, &inputs(corpus.clone())).unwrap();
    (out.checkpoint, corpus)
}

#[test]
fn mle_solves_a_noiseless_corpus_and_o1_then_reduces_to_the_transducer_term() {
    let (ckpt, corpus) = converged();
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();
    let report = evaluate(&ckpt.params, &utts, BeamConfig::new(4), 0).unwrap();
    assert_eq!(report.one_best_wer, 0.0);
    assert_eq!(report.oracle_wer, 0.0);

    // every 1-best is exact, so only −ℓ_o survives, and ℓ_o → 0 for a confident model
    for u in utts.iter().take(20) {
        let s = Sample {
            features: &u.features,
            frames: u.frames,
            reference: &u.labels,
        };
        let nb = decode(&ckpt.params, &s, BeamConfig::new(4)).unwrap();
        let out = objective_step(&ckpt.params, &s, Objective::O1 { lambda: 0.1 }, Some(&nb), false).unwrap();
        assert!(out.objective.abs() < 0.05, "{}", out.objective);
        assert!((out.total - 0.1 * out.rnnt - out.objective).abs() < 1e-12);
        assert!((out.total - 0.1 * out.rnnt).abs() < 0.05);
    }
}

#[test]
fn fine_tuning_modes_require_a_baseline() {
    let corpus = noiseless();
    for mode in [Mode::Embr, Mode::O1] {
        let err = run(&small(mode, 1), &inputs(corpus.clone())).unwrap_err();
        assert!(matches!(err, HarnessError::Usage(ref m) if m.contains("baseline")), "{err}");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    write_corpus(&corpus, &path).unwrap();
    let mut cfg = small(Mode::O1, 1);
    cfg.train_corpus = Some(path.clone());
    cfg.eval_corpus = Some(path);
    cfg.baseline_checkpoint = Some(dir.path().join("missing.ckpt"));
    assert_eq!(load_inputs(&cfg).unwrap_err().exit_code(), 3);
}

#[test]
fn distillation_requires_a_teacher() {
    let mut cfg = small(Mode::O1Distill, 1);
    cfg.unlabeled_corpus = Some("u.txt".into());
    assert!(matches!(run(&cfg, &inputs(noiseless())), Err(HarnessError::Usage(_))));
}

#[test]
fn self_distillation_starts_from_the_degenerate_form() {
    let corpus = generate_corpus(&CorpusSpec {
        seed: 8,
        utterance_count: 10,
        vocab: 4,
        label_len: (1, 3),
        feature_dim: 3,
        ..CorpusSpec::default()
    })
    .unwrap();
    let student = ModelParams::init(
        ModelConfig {
            feature_dim: 3,
            vocab: 4,
            hidden: 5,
            embed: 3,
        },
        2,
    );
    for u in &corpus.utterances {
        let s = Sample {
            features: &u.features,
            frames: u.frames,
            reference: &[],
        };
        let nb = decode(&student, &s, BeamConfig::new(4)).unwrap();
        let pseudo = nb.best().labels.clone();
        let scores = HypothesisScores::new(&nb, &pseudo, nb.hypotheses.iter().map(|h| h.log_prob).collect()).unwrap();
        assert_eq!((scores.oracle_index, scores.one_best_index), (0, 0));
        assert_eq!(scores.wers[0], 0.0);
    }
}

#[test]
fn distillation_log_decomposes_and_counts_lattices() {
    let (teacher, _) = converged();
    let labeled = noiseless();
    let unlabeled = generate_corpus(&CorpusSpec {
        seed: 4,
        utterance_count: 30,
        vocab: 4,
        label_len: (1, 4),
        feature_dim: 4,
        noise_sigma: 0.3,
        confusion_rate: 0.1,
        unlabeled_fraction: 1.0,
        ..CorpusSpec::default()
    })
    .unwrap();
    assert!(unlabeled.utterances.iter().all(|u| u.split == Split::Unlabeled));
    let mut cfg = small(Mode::O1Distill, 5);
    cfg.lambda = 0.3;
    cfg.eval_interval = 2;
    cfg.teacher_checkpoint = Some("t".into());
    cfg.unlabeled_corpus = Some("u".into());
    let inputs = TrainInputs {
        teacher: Some(teacher),
        unlabeled: Some(unlabeled),
        ..inputs(labeled)
    };
    let out = run(&cfg, &inputs).unwrap();
    assert_eq!(out.utterances_seen, 4 * 8);
    assert_eq!(out.objective_lattices, 2 * out.utterances_seen);
    for r in &out.rows[1..] {
        assert!((r.loss_total - (r.loss_obj + 0.3 * r.loss_rnnt)).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn runs_write_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate_corpus(&CorpusSpec {
        seed: 9,
        utterance_count: 24,
        vocab: 4,
        label_len: (1, 4),
        feature_dim: 3,
        ..CorpusSpec::default()
    })
    .unwrap();
    let data = dir.path().join("train.txt");
    write_corpus(&corpus, &data).unwrap();
    let base = dir.path().join("base.ckpt");
    save_checkpoint(
        &Checkpoint::new(ModelParams::init(
            ModelConfig {
                feature_dim: 3,
                vocab: 4,
                hidden: 6,
                embed: 3,
            },
            1,
        )),
        &base,
    )
    .unwrap();

    let mut outputs = Vec::new();
    // same output directory both times, so the config fingerprints match too
    for i in 0..2 {
        let mut cfg = small(Mode::O1, 13);
        cfg.finetune_steps = 5;
        cfg.eval_interval = 2;
        cfg.train_corpus = Some(data.clone());
        cfg.eval_corpus = Some(data.clone());
        cfg.baseline_checkpoint = Some(base.clone());
        cfg.output_dir = Some(dir.path().join("out"));
        train(&cfg).unwrap();
        let d = dir.path().join("out");
        let csv = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
        let ckpt = load_checkpoint(&d.join("final.ckpt")).unwrap();
        assert_eq!(ckpt.fingerprint, cfg.fingerprint());
        let (back, _) = ExperimentConfig::load(&d.join("config.txt")).unwrap();
        assert_eq!(back, cfg, "run {i}");
        outputs.push((csv, std::fs::read(d.join("final.ckpt")).unwrap()));
    }
    assert_eq!(outputs[0].0, outputs[1].0);
    assert_eq!(outputs[0].1, outputs[1].1);

    let csv = &outputs[0].0;
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(METRICS_HEADER));
    let steps: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, vec![0, 2, 4, 5]);
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert!(f[1] <= f[0] && f[2] >= 0.0, "{line}");
    }
}

#[test]
fn beam_width_and_truncation_behave_on_a_partly_trained_model() {
    let corpus = generate_corpus(&CorpusSpec {
        seed: 12,
        utterance_count: 80,
        vocab: 6,
        label_len: (2, 5),
        feature_dim: 4,
        ..CorpusSpec::default()
    })
    .unwrap();
    let mut cfg = small(Mode::Mle, 2);
    cfg.pretrain_steps = 60;
    let ckpt = run(&cfg, &inputs(corpus.clone())).unwrap().checkpoint;
    let utts: Vec<&Utterance> = corpus.utterances.iter().collect();

    let one = evaluate(&ckpt.params, &utts, BeamConfig::new(1), 0).unwrap();
    assert_eq!(one.gap, 0.0);
    let four = evaluate(&ckpt.params, &utts, BeamConfig::new(4), 0).unwrap();
    let eight = evaluate(&ckpt.params, &utts, BeamConfig::new(8), 0).unwrap();
    assert!(eight.oracle_wer <= four.oracle_wer);
    assert!(four.gap >= 0.0 && eight.gap >= 0.0);

    let rows = sweep(&ckpt.params, &utts, &[1, 2, 4, 8], 3).unwrap();
    assert!(rows.iter().filter(|r| r.beam == 1).all(|r| r.gap == 0.0));
    let full: Vec<_> = rows.iter().filter(|r| r.truncated_k == r.beam).collect();
    for w in full.windows(2) {
        assert!(w[1].oracle_wer <= w[0].oracle_wer, "{:?}", w);
    }
    for r in &rows {
        if r.truncated_k == 1 {
            assert_eq!(r.oracle_wer, r.one_best_wer);
        } else {
            let k1 = rows.iter().find(|q| q.beam == r.beam && q.truncated_k == 1).unwrap();
            assert!(r.oracle_wer <= k1.oracle_wer);
        }
    }
}
