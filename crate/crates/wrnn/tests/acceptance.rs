//! Acceptance gate: one test per criterion, each printing a pass/fail
//! line (visible with `--nocapture`; a failed assert names the
//! criterion either way).

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;

use wrnn::config::{ExperimentConfig, Preset};
use wrnn::corpus::{
    build_vocabulary, encode_all, load_dataset_dir, select_sequence_length, split_dataset,
    Document,
};
use wrnn::embeddings::{train_skipgram, EmbeddingMatrix, SkipGramConfig};
use wrnn::evaluation::{confusion, metrics, ConfusionMatrix};
use wrnn::gradcheck::{run_suite, TOLERANCE};
use wrnn::lstm::CandidateAct;
use wrnn::matrix::{seeded_rng, softmax, sub_seed, DenseMatrix, Rng};
use wrnn::models::{forward, ModelKind, ModelParams, ModelSpec};
use wrnn::synthetic::{marker_corpus, write_order_dataset};
use wrnn::training::{evaluate, train, Example, TrainConfig};

fn pass(line: &str) {
    println!("criterion {line}");
}

// -------------------------------------------------------------------------
// 1. every analytic gradient matches central finite differences
// -------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let results = run_suite(None).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    for r in &results {
        assert!(
            r.pass,
            "criterion 1 FAIL: {} worst relative error {:.3e} >= {TOLERANCE:e}",
            r.component, r.worst_rel_error
        );
    }
    assert!(elapsed < 60.0, "criterion 1 FAIL: suite took {elapsed:.1}s");
    let worst = results
        .iter()
        .map(|r| r.worst_rel_error)
        .fold(0.0f64, f64::max);
    pass(&format!(
        "1: PASS — {} gradient components all < {TOLERANCE:e} relative error \
         (worst {worst:.2e}, {elapsed:.1}s)",
        results.len()
    ));
}

// -------------------------------------------------------------------------
// 2. oracle equivalences
// -------------------------------------------------------------------------

fn oracle_sl(lengths: &[usize], theta: f64) -> usize {
    let n = lengths.len() as f64;
    let mut best: Option<usize> = None;
    for &cand in lengths {
        let frac = lengths.iter().filter(|&&l| l <= cand).count() as f64 / n;
        if frac >= theta && best.map_or(true, |b| cand < b) {
            best = Some(cand);
        }
    }
    best.unwrap_or_else(|| *lengths.iter().max().unwrap())
}

fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut c = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for k in 0..a.cols() {
                acc += a.at(i, k) * b.at(k, j);
            }
            *c.at_mut(i, j) = acc;
        }
    }
    c
}

fn shared_parameter_pair(seed: u64) -> (ModelParams, ModelParams) {
    let mut rng = seeded_rng(seed);
    let emb = EmbeddingMatrix::random(9, 3, &mut rng);
    let spec = ModelSpec {
        kind: ModelKind::Wrnn,
        seq_len: 6,
        embed_dim: 3,
        lstm_hidden: 4,
        classifier_hidden: 4,
        num_classes: 3,
        candidate_act: CandidateAct::Tanh,
        freeze_embeddings: false,
        normalize_pool: false,
    };
    let mut wrnn = ModelParams::init(spec.clone(), emb, &mut rng).unwrap();
    // one-hot on the final position
    let w = wrnn.pos_weights.as_mut().unwrap();
    w.data_mut().fill(0.0);
    *w.at_mut(spec.seq_len - 1, 0) = 1.0;

    let mut last_spec = spec;
    last_spec.kind = ModelKind::RnnLast;
    let mut last =
        ModelParams::init(last_spec, wrnn.embeddings.clone(), &mut seeded_rng(seed + 1)).unwrap();
    last.lstm_fwd = wrnn.lstm_fwd.clone();
    last.head = wrnn.head.clone();
    (wrnn, last)
}

#[test]
fn criterion_2_oracle_equivalences() {
    // (a) sequence-length selection vs exhaustive scan, 1000 multisets
    let mut rng = seeded_rng(2024);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=300);
        let lengths: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=2000)).collect();
        let theta = rng.gen_range(0.01..0.99);
        assert_eq!(
            select_sequence_length(&lengths, theta).unwrap(),
            oracle_sl(&lengths, theta),
            "criterion 2a FAIL at theta {theta}"
        );
    }

    // (b) one-hot-last pooling reproduces the last-state baseline exactly
    for seed in 0..5u64 {
        let (wrnn, last) = shared_parameter_pair(100 + seed);
        let mut idrng = seeded_rng(seed);
        let ids: Vec<usize> = (0..6).map(|_| idrng.gen_range(0..9)).collect();
        let (p_wrnn, _) = forward(&wrnn, &ids).unwrap();
        let (p_last, _) = forward(&last, &ids).unwrap();
        assert_eq!(p_wrnn, p_last, "criterion 2b FAIL: probabilities differ");
    }

    // (c) matmul vs the naive triple loop on 100 random shape triples
    let mut rng = seeded_rng(7);
    for _ in 0..100 {
        let (m, k, n) = (
            rng.gen_range(1..12),
            rng.gen_range(1..12),
            rng.gen_range(1..12),
        );
        let mut a = DenseMatrix::zeros(m, k);
        let mut b = DenseMatrix::zeros(k, n);
        for v in a.data_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        for v in b.data_mut() {
            *v = rng.gen_range(-3.0..3.0);
        }
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12, "criterion 2c FAIL: {x} vs {y}");
        }
    }
    pass("2: PASS — length-selection, one-hot-last and matmul oracles all agree");
}

// -------------------------------------------------------------------------
// 3. synthetic separability within 50 epochs
// -------------------------------------------------------------------------

#[test]
fn criterion_3_marker_separability() {
    let start = Instant::now();
    // 200 documents total, sequences of length 20
    let (train_set, test_set, vocab_size) = marker_corpus(80, 20, 1);
    assert_eq!(train_set.len() + test_set.len(), 200);
    for kind in [ModelKind::Wrnn, ModelKind::RnnLast, ModelKind::Dnn] {
        let mut rng = seeded_rng(1);
        let emb = EmbeddingMatrix::random(vocab_size, 8, &mut rng);
        let spec = ModelSpec {
            kind,
            seq_len: 20,
            embed_dim: 8,
            lstm_hidden: 16,
            classifier_hidden: 16,
            num_classes: 2,
            candidate_act: CandidateAct::Tanh,
            freeze_embeddings: false,
            normalize_pool: false,
        };
        let params = ModelParams::init(spec, emb, &mut rng).unwrap();
        // light decay: the full-scale rate stalls the last-state model
        // on this tiny corpus (see the desk-scale preset)
        let cfg = TrainConfig {
            epochs: 50,
            minibatch: 16,
            seed: 1,
            lambda: 1e-4,
            ..Default::default()
        };
        let out = train(params, &train_set, &test_set, &cfg).unwrap();
        let best = out
            .history
            .epochs
            .iter()
            .map(|e| e.train_accuracy)
            .fold(0.0f64, f64::max);
        assert!(
            best >= 0.99,
            "criterion 3 FAIL: {kind} best train accuracy {best:.3} < 0.99"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 3 FAIL: took {elapsed:.1}s");
    pass(&format!(
        "3: PASS — wrnn, rnn_last and dnn all reach >= 99% train accuracy ({elapsed:.1}s)"
    ));
}

// -------------------------------------------------------------------------
// 4. independent hand-computed forward trace
// -------------------------------------------------------------------------

/// Scalar re-implementation of the W-RNN forward pass, written with
/// plain loops and no shared code beyond raw tensor reads.
fn hand_forward(p: &ModelParams, ids: &[usize]) -> Vec<f64> {
    let spec = &p.spec;
    let hidden = spec.lstm_hidden;
    let dim = spec.embed_dim;
    let lstm = p.lstm_fwd.as_ref().unwrap();
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let cand = |x: f64| match spec.candidate_act {
        CandidateAct::Tanh => x.tanh(),
        CandidateAct::Sigmoid => sig(x),
    };

    let mut h = vec![0.0; hidden];
    let mut s = vec![0.0; hidden];
    let mut states: Vec<Vec<f64>> = Vec::new();
    for &id in ids {
        let mut z = h.clone();
        for j in 0..dim {
            z.push(p.embeddings.table.at(id, j));
        }
        let pre = |w: &DenseMatrix, b: &DenseMatrix, i: usize| -> f64 {
            let mut a = 0.0;
            for (j, zj) in z.iter().enumerate() {
                a += w.at(i, j) * zj;
            }
            a + b.at(i, 0)
        };
        let mut h_new = vec![0.0; hidden];
        let mut s_new = vec![0.0; hidden];
        for i in 0..hidden {
            let f = sig(pre(&lstm.w_f, &lstm.b_f, i));
            let g = sig(pre(&lstm.w_g, &lstm.b_g, i));
            let c = cand(pre(&lstm.w_c, &lstm.b_c, i));
            let o = sig(pre(&lstm.w_o, &lstm.b_o, i));
            s_new[i] = f * s[i] + g * c;
            h_new[i] = o * s_new[i].tanh();
        }
        h = h_new;
        s = s_new;
        states.push(h.clone());
    }

    let pw = p.pos_weights.as_ref().unwrap();
    let mut pooled = vec![0.0; hidden];
    for (t, ht) in states.iter().enumerate() {
        for i in 0..hidden {
            pooled[i] += pw.at(t, 0) * ht[i];
        }
    }

    let dense = |w: &DenseMatrix, b: &DenseMatrix, x: &[f64]| -> Vec<f64> {
        (0..w.rows())
            .map(|i| {
                let mut a = 0.0;
                for (j, xj) in x.iter().enumerate() {
                    a += w.at(i, j) * xj;
                }
                a + b.at(i, 0)
            })
            .collect()
    };
    let a1: Vec<f64> = dense(&p.head.hidden.w, &p.head.hidden.b, &pooled)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let logits = dense(&p.head.out.w, &p.head.out.b, &a1);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[test]
fn criterion_4_hand_trace_forward() {
    for act in [CandidateAct::Tanh, CandidateAct::Sigmoid] {
        let mut rng = seeded_rng(404);
        let emb = EmbeddingMatrix::random(7, 2, &mut rng);
        let spec = ModelSpec {
            kind: ModelKind::Wrnn,
            seq_len: 3,
            embed_dim: 2,
            lstm_hidden: 2,
            classifier_hidden: 3,
            num_classes: 2,
            candidate_act: act,
            freeze_embeddings: false,
            normalize_pool: false,
        };
        let mut params = ModelParams::init(spec, emb, &mut rng).unwrap();
        // non-uniform pooling so every position matters differently
        let w = params.pos_weights.as_mut().unwrap();
        w.data_mut().copy_from_slice(&[0.2, 0.5, 0.3]);

        for ids in [[2usize, 5, 3], [4, 4, 0], [6, 2, 1]] {
            let (probs, _) = forward(&params, &ids).unwrap();
            let by_hand = hand_forward(&params, &ids);
            for (a, b) in probs.iter().zip(by_hand.iter()) {
                assert!(
                    (a - b).abs() < 1e-10,
                    "criterion 4 FAIL ({act:?}): {a} vs {b}"
                );
            }
        }
    }
    pass("4: PASS — three-word forward trace matches the independent scalar evaluator");
}

// -------------------------------------------------------------------------
// 5. desk-scale trend under the small preset
// -------------------------------------------------------------------------

struct SeedResult {
    accuracy: f64,
    f1: f64,
}

fn run_small_preset(
    root: &Path,
    kind: ModelKind,
    seed: u64,
    cfg: &ExperimentConfig,
) -> SeedResult {
    let (mut docs, classes) = load_dataset_dir(root).unwrap();
    let vocab = build_vocabulary(&docs, cfg.min_count).unwrap();
    let sl = cfg.seq_len.unwrap();
    encode_all(&mut docs, &vocab, sl);
    let (train_docs, test_docs) =
        split_dataset(&docs, cfg.test_fraction, sub_seed(seed, "split")).unwrap();
    let to_ex = |v: Vec<Document>| -> Vec<Example> {
        v.into_iter()
            .map(|d| Example { ids: d.ids.unwrap(), label: d.label })
            .collect()
    };
    let train_set = to_ex(train_docs);
    let test_set = to_ex(test_docs);

    let sequences: Vec<Vec<usize>> = train_set.iter().map(|e| e.ids.clone()).collect();
    let sg = SkipGramConfig {
        dim: cfg.embed_dim,
        window: cfg.sg_window,
        negatives: cfg.sg_negatives,
        epochs: cfg.sg_epochs,
        lr: cfg.sg_lr,
        seed: sub_seed(seed, "skip-gram"),
    };
    let (emb, _) = train_skipgram(&sequences, vocab.size(), &sg).unwrap();

    let spec = ModelSpec {
        kind,
        seq_len: sl,
        embed_dim: cfg.embed_dim,
        lstm_hidden: cfg.lstm_hidden,
        classifier_hidden: cfg.classifier_hidden,
        num_classes: classes.len(),
        candidate_act: cfg.candidate_act,
        freeze_embeddings: cfg.freeze_embeddings,
        normalize_pool: cfg.normalize_pool,
    };
    let mut rng = seeded_rng(sub_seed(seed, "model-init"));
    let params = ModelParams::init(spec, emb, &mut rng).unwrap();
    let tc = TrainConfig {
        lr: cfg.lr,
        minibatch: cfg.minibatch,
        epochs: cfg.epochs,
        lambda: cfg.lambda,
        clip_norm: cfg.clip_norm,
        seed,
        deterministic: true,
        ..Default::default()
    };
    let out = train(params, &train_set, &test_set, &tc).unwrap();
    let ev = evaluate(&out.best, &test_set).unwrap();
    let labels: Vec<usize> = test_set.iter().map(|e| e.label).collect();
    let m = confusion(&ev.predictions, &labels, classes.len()).unwrap();
    let rep = metrics(&m, &ev.losses).unwrap();
    SeedResult { accuracy: ev.accuracy, f1: rep.f1_macro }
}

#[test]
fn criterion_5_desk_scale_trend() {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.apply_preset(Preset::Small);

    // prefer a locally supplied 4-category dataset; otherwise use the
    // synthetic order-separable corpus, which reproduces the same
    // mechanism (sequence order carries the class, unigrams do not)
    let tmp;
    let root = match std::env::var("WRNN_DATASET_DIR") {
        Ok(dir) if Path::new(&dir).is_dir() => std::path::PathBuf::from(dir),
        _ => {
            tmp = tempfile::tempdir().unwrap();
            write_order_dataset(tmp.path(), 150, 777).unwrap();
            tmp.path().to_path_buf()
        }
    };

    let seeds = [1u64, 2, 3];
    let mean = |kind: ModelKind| -> (f64, f64) {
        let mut acc = 0.0;
        let mut f1 = 0.0;
        for &seed in &seeds {
            let r = run_small_preset(&root, kind, seed, &cfg);
            acc += r.accuracy;
            f1 += r.f1;
        }
        (acc / seeds.len() as f64, f1 / seeds.len() as f64)
    };
    let (wrnn_acc, wrnn_f1) = mean(ModelKind::Wrnn);
    let (_, last_f1) = mean(ModelKind::RnnLast);
    let (_, dnn_f1) = mean(ModelKind::Dnn);

    assert!(
        wrnn_acc >= 0.80,
        "criterion 5 FAIL: mean wrnn test accuracy {wrnn_acc:.3} < 0.80"
    );
    assert!(
        wrnn_f1 >= dnn_f1 + 0.08,
        "criterion 5 FAIL: wrnn F1 {wrnn_f1:.3} not >= dnn F1 {dnn_f1:.3} + 0.08"
    );
    assert!(
        wrnn_f1 >= last_f1 - 0.02,
        "criterion 5 FAIL: wrnn F1 {wrnn_f1:.3} < rnn_last F1 {last_f1:.3} - 0.02"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1200.0, "criterion 5 FAIL: took {elapsed:.0}s");
    pass(&format!(
        "5: PASS — mean over 3 seeds: wrnn acc {wrnn_acc:.3} / F1 {wrnn_f1:.3}, \
         rnn_last F1 {last_f1:.3}, dnn F1 {dnn_f1:.3} ({elapsed:.0}s)"
    ));
}

// -------------------------------------------------------------------------
// 6. full-scale reference documented
// -------------------------------------------------------------------------

#[test]
fn criterion_6_full_scale_reference_documented() {
    let readme = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .expect("criterion 6 FAIL: README.md missing");
    assert!(
        readme.contains("85.55"),
        "criterion 6 FAIL: README does not state the full-scale reference accuracy"
    );
    assert!(
        readme.to_lowercase().contains("paper"),
        "criterion 6 FAIL: README does not describe the full-scale preset run"
    );
    pass("6: PASS — full-scale reference target and gap are documented in the README");
}

// -------------------------------------------------------------------------
// 7. determinism of training artifacts
// -------------------------------------------------------------------------

#[test]
fn criterion_7_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    wrnn::synthetic::write_marker_dataset(&data, 25, 3).unwrap();
    let bin = env!("CARGO_BIN_EXE_wrnn");

    let run_all = |out: &Path| {
        let common = [
            "--dataset_dir",
            data.to_str().unwrap(),
            "--out_dir",
            out.to_str().unwrap(),
            "--deterministic",
            "--seed",
            "7",
            "--min_count",
            "1",
            "--embed_dim",
            "8",
            "--lstm_hidden",
            "8",
            "--classifier_hidden",
            "8",
            "--sg_epochs",
            "1",
            "--epochs",
            "3",
            "--minibatch",
            "8",
        ];
        for sub in ["prepare", "embed", "train"] {
            let status = Command::new(bin)
                .arg(sub)
                .args(common)
                .status()
                .expect("binary should run");
            assert!(status.success(), "criterion 7 FAIL: {sub} exited nonzero");
        }
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_all(&out_a);
    run_all(&out_b);

    for f in ["wrnn.ckpt", "history-wrnn.csv"] {
        let a = fs::read(out_a.join(f)).unwrap();
        let b = fs::read(out_b.join(f)).unwrap();
        assert_eq!(a, b, "criterion 7 FAIL: {f} differs between identical runs");
    }
    pass("7: PASS — identical seeds reproduce checkpoint and history byte for byte");
}

// -------------------------------------------------------------------------
// 8. metric identities on random confusion matrices
// -------------------------------------------------------------------------

fn random_confusion(rng: &mut Rng) -> ConfusionMatrix {
    let classes = rng.gen_range(1..7);
    let mut m = ConfusionMatrix::new(classes);
    let n = rng.gen_range(1..80);
    for _ in 0..n {
        m.add(rng.gen_range(0..classes), rng.gen_range(0..classes));
    }
    m
}

#[test]
fn criterion_8_metric_identities() {
    let mut rng = seeded_rng(808);
    for trial in 0..500 {
        let m = random_confusion(&mut rng);
        let r = metrics(&m, &[]).unwrap();
        let classes = m.classes();

        // perfect predictions give 1.0 everywhere
        let mut perfect = ConfusionMatrix::new(classes);
        for c in 0..classes {
            perfect.add(c, c);
        }
        let pr = metrics(&perfect, &[]).unwrap();
        assert_eq!(pr.accuracy, 1.0, "criterion 8 FAIL trial {trial}");
        assert_eq!(pr.f1_macro, 1.0, "criterion 8 FAIL trial {trial}");

        // F1 lies between min and max of precision and recall
        for c in &r.per_class {
            if c.precision + c.recall > 0.0 {
                assert!(
                    c.f1 >= c.precision.min(c.recall) - 1e-12
                        && c.f1 <= c.precision.max(c.recall) + 1e-12,
                    "criterion 8 FAIL trial {trial}"
                );
            }
        }

        // duplicating every count leaves all metrics unchanged
        let mut doubled = ConfusionMatrix::new(classes);
        for t in 0..classes {
            for p in 0..classes {
                for _ in 0..(2 * m.count(t, p)) {
                    doubled.add(t, p);
                }
            }
        }
        let r2 = metrics(&doubled, &[]).unwrap();
        assert!(
            (r.f1_macro - r2.f1_macro).abs() < 1e-12
                && (r.accuracy - r2.accuracy).abs() < 1e-12
                && (r.precision_macro - r2.precision_macro).abs() < 1e-12
                && (r.recall_macro - r2.recall_macro).abs() < 1e-12,
            "criterion 8 FAIL trial {trial}: duplication changed a metric"
        );
    }
    // softmax sanity used throughout the stack: probabilities sum to 1
    let p = softmax(&[0.3, -1.2, 2.0]);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    pass("8: PASS — metric identities hold over 500 random confusion matrices");
}
