//! Acceptance suite: one test per acceptance criterion, each printing a
//! single PASS line with its measured figures. Criteria 1-4 check the
//! numeric kernels against independent oracles; criteria 5-8 drive the
//! `goldforge` binary (or the library pipeline) on the synthetic benchmark.
//!
//! Run with `cargo test --test acceptance` (add `-- --nocapture` to see the
//! per-criterion lines).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use goldforge_core::corpus::{
    sample_seed, synth_corpus, synth_source, DatasetRole, DatasetSplit, Dialogue, Label, Speaker,
    SynthSpec, Utterance,
};
use goldforge_core::detectors::{
    fit_geometry, score_centroid, score_mahalanobis, score_maxprob, score_odin, DetectorStack,
    InsGeometry,
};
use goldforge_core::election::{
    aggregate, no_election_augment, swap_augment, tune_voters, AugmentParams, EnsembleConfig,
};
use goldforge_core::embedding::{BackendTag, EmbedMode, EmbeddingBackend, FeatureConfig};
use goldforge_core::generator::SwapStrategy;
use goldforge_core::intent_model::{self, SoftmaxClassifier, TrainConfig};
use goldforge_core::matcher::{build_index, cosine_distance, nearest};
use goldforge_core::metrics::{self, oracle, ScoredExample};
use goldforge_core::oos_model::{train_direct, train_oracle};
use goldforge_core::util::SplitMix64;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_goldforge")
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

// ---------------------------------------------------------------------------
// Criterion 1: metric oracle equivalence
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_metric_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0xACCE97);
    let mut fixtures = 0usize;
    while fixtures < 500 {
        let n = 3 + rng.next_below(10) as usize;
        let mut scored = Vec::with_capacity(n);
        let mut n_oos = 0usize;
        for i in 0..n {
            // Scores from a 6-value grid inject plenty of exact ties.
            let score = (rng.next_below(6) as f64) / 5.0;
            let is_oos = rng.next_f64() < 0.5;
            n_oos += usize::from(is_oos);
            scored.push(ScoredExample {
                id: format!("e{i}"),
                score,
                is_oos,
            });
        }
        if n_oos == 0 || n_oos == n {
            continue;
        }
        fixtures += 1;

        let auroc = metrics::auroc(&scored).unwrap();
        assert!(
            (auroc - oracle::auroc(&scored)).abs() < 1e-12,
            "auroc mismatch on fixture {fixtures}"
        );
        let aupr = metrics::aupr(&scored).unwrap();
        assert!(
            (aupr - oracle::aupr(&scored)).abs() < 1e-12,
            "aupr mismatch on fixture {fixtures}"
        );
        for target in [0.25, 0.5, 0.75, 0.9, 0.95, 1.0] {
            let fpr = metrics::fpr_at_recall(&scored, target).unwrap();
            assert!(
                (fpr - oracle::fpr_at_recall(&scored, target)).abs() < 1e-12,
                "fpr@{target} mismatch on fixture {fixtures}"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!(
        "ACCEPTANCE 1 metric-oracle-equivalence: PASS (500 fixtures, {} ms)",
        elapsed.as_millis()
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient correctness
// ---------------------------------------------------------------------------

fn random_model(rng: &mut SplitMix64, k: usize, dim: usize) -> SoftmaxClassifier {
    SoftmaxClassifier {
        intent_names: (0..k).map(|i| format!("i{i}")).collect(),
        dim,
        weights: (0..k * dim).map(|_| rng.next_gaussian()).collect(),
        bias: (0..k).map(|_| rng.next_gaussian() * 0.3).collect(),
        feature_config: FeatureConfig {
            backend: BackendTag::Tfidf,
            mode: EmbedMode::FinalUser,
            normalize: false,
        },
    }
}

#[test]
fn criterion_2_gradient_matches_finite_differences() {
    let mut rng = SplitMix64::new(0xACCE98);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let k = 2 + rng.next_below(5) as usize;
        let dim = 1 + rng.next_below(8) as usize;
        let model = random_model(&mut rng, k, dim);
        let phi: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
        let target = rng.next_below(k as u64) as usize;
        let grad = model.input_gradient(&phi, target).unwrap();

        let loss = |phi: &[f64]| -model.predict_proba(phi).unwrap()[target].ln();
        let h = 1e-5;
        let mut fd = vec![0.0; dim];
        for j in 0..dim {
            let mut plus = phi.clone();
            let mut minus = phi.clone();
            plus[j] += h;
            minus[j] -= h;
            fd[j] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        let diff: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / (norm + 1e-12);
        worst = worst.max(rel);
        assert!(rel < 1e-4, "trial {trial}: relative error {rel}");
    }
    println!("ACCEPTANCE 2 gradient-correctness: PASS (100 pairs, worst rel err {worst:.2e})");
}

// ---------------------------------------------------------------------------
// Criterion 3: detector reductions
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_detector_reductions() {
    let mut rng = SplitMix64::new(0xACCE99);
    let mut worst_odin: f64 = 0.0;
    let mut worst_mahalanobis: f64 = 0.0;
    for _ in 0..1000 {
        let k = 2 + rng.next_below(4) as usize;
        let dim = 2 + rng.next_below(5) as usize;
        let model = random_model(&mut rng, k, dim);
        let phi: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();

        let odin = score_odin(&model, &phi, 1.0, 0.0).unwrap();
        let maxprob = score_maxprob(&model, &phi).unwrap();
        worst_odin = worst_odin.max((odin - maxprob).abs());
        assert!((odin - maxprob).abs() < 1e-9);

        let mut sigma = vec![0.0; dim * dim];
        for i in 0..dim {
            sigma[i * dim + i] = 1.0;
        }
        let mu: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| rng.next_gaussian()).collect())
            .collect();
        let geometry = InsGeometry::from_parts(
            model.intent_names.clone(),
            dim,
            mu.clone(),
            sigma,
            0.0,
            mu,
        )
        .unwrap();
        let mahalanobis = score_mahalanobis(&geometry, &phi).unwrap();
        let centroid = score_centroid(&geometry, &phi).unwrap();
        let gap = (mahalanobis - centroid * centroid).abs();
        worst_mahalanobis = worst_mahalanobis.max(gap);
        assert!(gap < 1e-9);
    }
    println!(
        "ACCEPTANCE 3 detector-reductions: PASS (1000 inputs, worst odin gap {worst_odin:.2e}, worst mahalanobis gap {worst_mahalanobis:.2e})"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: matcher exactness
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_matcher_exactness() {
    let mut rng = SplitMix64::new(0xACCE9A);
    for trial in 0..200 {
        let n = 1 + rng.next_below(2000) as usize;
        let k = 1 + rng.next_below(50) as usize;
        // Texts drawn from a small pool force duplicate vectors, hence
        // exact distance ties.
        let pool = 1 + n as u64 / 3;
        let records: Vec<Dialogue> = (0..n)
            .map(|i| Dialogue {
                id: format!("s{i:04}"),
                turns: vec![Utterance {
                    speaker: Speaker::User,
                    text: format!("text {}", rng.next_below(pool)),
                }],
                label: None,
            })
            .collect();
        let backend = EmbeddingBackend::Random {
            dim: 8,
            rng_seed: trial,
        };
        let source = DatasetSplit {
            role: DatasetRole::Source,
            train: records,
            dev: Vec::new(),
            test: Vec::new(),
        };
        let index = build_index(&source, &backend).unwrap();
        let seed = Dialogue {
            id: "seed".into(),
            turns: vec![Utterance {
                speaker: Speaker::User,
                text: format!("text {}", rng.next_below(pool)),
            }],
            label: Some(Label::Oos),
        };
        let got = nearest(&seed, &index, k, &backend).unwrap();

        // Exhaustive-scan oracle: full sort by (distance, id).
        let query = backend
            .embed_utterance("seed#0", &seed.turns[0].text)
            .unwrap();
        let mut all: Vec<(String, f64)> = index
            .entries
            .iter()
            .map(|e| {
                (
                    e.id.clone(),
                    cosine_distance(&query.values, &e.vector.values).unwrap(),
                )
            })
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        assert_eq!(got.matches, all, "trial {trial} (n={n}, k={k})");
    }
    println!("ACCEPTANCE 4 matcher-exactness: PASS (200 trials, exact match incl. ties)");
}

// ---------------------------------------------------------------------------
// Criteria 5-8: synthetic benchmark
// ---------------------------------------------------------------------------

/// The shared synthetic benchmark: 2500 INS over 4 intents (2000 train =
/// 4 x 500), 1000 OOS (100 in test), overlap 0.3; seed budget
/// ceil(0.01 x 2000) = 20; 5000-utterance companion source.
fn benchmark_config(rng_seed: u64, ins_like_fraction: f64, output_dir: &Path) -> serde_json::Value {
    serde_json::json!({
        "target": {"synth": {
            "n_ins": 2500,
            "n_intents": 4,
            "n_oos": 1000,
            "vocab_overlap": 0.3,
            "rng_seed": rng_seed,
        }},
        "sources": [{"synth_source": {
            "n_utterances": 5000,
            "ins_like_fraction": ins_like_fraction,
        }}],
        "matches": 24,
        "seed_fraction": 0.01,
        "rng_seed": rng_seed,
        "methods": ["direct"],
        "output_dir": output_dir,
    })
}

fn run_cli(args: &[&str], threads: &str) -> serde_json::Value {
    let output = Command::new(binary())
        .args(args)
        .env("GOLD_FORGE_THREADS", threads)
        .output()
        .expect("spawn goldforge");
    assert!(
        output.status.success(),
        "goldforge {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("JSON output")
}

#[test]
fn criterion_5_end_to_end_match_trend() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut d0 = Vec::new();
    let mut d24 = Vec::new();
    for rng_seed in 1..=5u64 {
        let cfg_path = dir.path().join(format!("cfg{rng_seed}.json"));
        let cfg = benchmark_config(rng_seed, 0.0, &dir.path().join("runs"));
        std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();

        let run_dir = dir.path().join(format!("run{rng_seed}"));
        let run_dir = run_dir.to_str().unwrap();
        let cfg = cfg_path.to_str().unwrap();
        for stage in ["fit-embed", "train-intent", "tune"] {
            run_cli(&[stage, "--config", cfg, "--run-dir", run_dir, "--json"], "1");
        }
        let sweep = run_cli(
            &[
                "evaluate",
                "--config",
                cfg,
                "--run-dir",
                run_dir,
                "--method",
                "direct",
                "--sweep-matches",
                "0,24",
                "--json",
            ],
            "1",
        );
        for point in sweep["points"].as_array().unwrap() {
            let auroc = point["report"]["auroc"].as_f64().unwrap();
            match point["matches"].as_u64().unwrap() {
                0 => d0.push(auroc),
                24 => d24.push(auroc),
                other => panic!("unexpected sweep point {other}"),
            }
        }
    }
    let elapsed = started.elapsed();
    let median_d0 = median(&mut d0);
    let median_d24 = median(&mut d24);
    assert!(
        median_d24 >= median_d0 + 0.02,
        "median AUROC d=24 ({median_d24:.4}) must beat d=0 ({median_d0:.4}) by 0.02"
    );
    assert!(median_d24 >= 0.85, "median AUROC d=24 {median_d24:.4} < 0.85");
    assert!(
        elapsed.as_secs_f64() < 120.0,
        "took {elapsed:?}, budget 2 min single-threaded"
    );
    println!(
        "ACCEPTANCE 5 end-to-end-trend: PASS (median d0 {median_d0:.4}, d24 {median_d24:.4}, {} s single-threaded)",
        elapsed.as_secs()
    );
}

/// Library-side benchmark pieces shared by criteria 6 and 7.
struct Bench {
    target: DatasetSplit,
    source: DatasetSplit,
    backend: EmbeddingBackend,
    feature_config: FeatureConfig,
    train_config: TrainConfig,
}

fn bench(rng_seed: u64, ins_like_fraction: f64) -> Bench {
    let spec = SynthSpec {
        n_ins: 2500,
        n_intents: 4,
        n_oos: 1000,
        vocab_overlap: 0.3,
        rng_seed,
    };
    let target = synth_corpus(&spec).unwrap();
    let source = synth_source(&spec, 5000, ins_like_fraction).unwrap();
    let mut corpus: Vec<String> = target
        .train
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.text.clone()))
        .collect();
    corpus.extend(
        source
            .all()
            .flat_map(|d| d.turns.iter().map(|t| t.text.clone())),
    );
    let backend =
        EmbeddingBackend::Tfidf(goldforge_core::embedding::fit_tfidf(&corpus, 7000).unwrap());
    let feature_config = FeatureConfig {
        backend: BackendTag::Tfidf,
        mode: EmbedMode::ContextMeanPlusFinal,
        normalize: false,
    };
    let train_config = TrainConfig {
        rng_seed,
        ..TrainConfig::default()
    };
    Bench {
        target,
        source,
        backend,
        feature_config,
        train_config,
    }
}

fn test_auroc(
    bench: &Bench,
    model: &goldforge_core::oos_model::BinaryDetector,
) -> f64 {
    let scored: Vec<ScoredExample> = bench
        .target
        .test
        .iter()
        .map(|d| ScoredExample {
            id: d.id.clone(),
            score: model.score_oos(&bench.backend, d).unwrap(),
            is_oos: d.is_oos(),
        })
        .collect();
    metrics::auroc(&scored).unwrap()
}

/// Train the direct model from an augmentation run (elected or accept-all).
fn direct_auroc_for_run(
    bench: &Bench,
    run: &goldforge_core::election::AugmentationRun,
    seed_set: &goldforge_core::corpus::SeedSet,
) -> f64 {
    let ins_train = bench.target.ins_train();
    let training_set = aggregate(&ins_train, seed_set, run);
    let (model, _) = train_direct(
        &training_set.examples,
        &bench.target.dev,
        &bench.train_config,
        &bench.backend,
        bench.feature_config,
        None,
        1.0,
    )
    .unwrap();
    test_auroc(bench, &model)
}

#[test]
fn criterion_6_election_beats_no_election_under_contamination() {
    let mut wins = 0usize;
    let mut rows = Vec::new();
    for rng_seed in 1..=10u64 {
        let bench = bench(rng_seed, 0.2);
        let ins_train: Vec<Dialogue> =
            bench.target.ins_train().into_iter().cloned().collect();
        let oos_pool: Vec<Dialogue> = bench.target.oos_train().into_iter().cloned().collect();
        let seed_set = sample_seed(&oos_pool, ins_train.len(), 0.01, rng_seed).unwrap();
        let index = build_index(&bench.source, &bench.backend).unwrap();

        let (model, _) = intent_model::train(
            &ins_train,
            &bench.target.dev,
            &bench.train_config,
            &bench.backend,
            bench.feature_config,
        )
        .unwrap();
        let geometry = fit_geometry(&model, &ins_train, &bench.backend).unwrap();
        let stack = DetectorStack {
            model: &model,
            geometry: &geometry,
            backend: &bench.backend,
            params: goldforge_core::detectors::DetectorParams {
                dropout_rng_seed: rng_seed,
                ..Default::default()
            },
        };
        let ensemble = tune_voters(
            &EnsembleConfig::default_voters(),
            &stack,
            &bench.target.dev,
            goldforge_core::detectors::ThresholdObjective::F1,
        )
        .unwrap();

        let params = AugmentParams::new(24, SwapStrategy::RandomUserTurn, rng_seed);
        let elected_run = swap_augment(&seed_set, &index, &params, &bench.backend, &ensemble, &stack).unwrap();
        let no_election_run =
            no_election_augment(&seed_set, &index, &params, &bench.backend).unwrap();

        let elected_auroc = direct_auroc_for_run(&bench, &elected_run, &seed_set);
        let no_election_auroc = direct_auroc_for_run(&bench, &no_election_run, &seed_set);
        if elected_auroc >= no_election_auroc {
            wins += 1;
        }
        rows.push(format!(
            "seed {rng_seed}: elected {elected_auroc:.4} vs no-election {no_election_auroc:.4}"
        ));
    }
    assert!(wins >= 7, "elections won only {wins}/10:\n{}", rows.join("\n"));
    println!("ACCEPTANCE 6 election-ablation: PASS (elections >= no-election in {wins}/10 seeds)");
}

#[test]
fn criterion_7_oracle_upper_bound() {
    let mut gold = Vec::new();
    let mut oracle_scores = Vec::new();
    for rng_seed in 1..=10u64 {
        let bench = bench(rng_seed, 0.0);
        let ins_train: Vec<Dialogue> =
            bench.target.ins_train().into_iter().cloned().collect();
        let oos_pool: Vec<Dialogue> = bench.target.oos_train().into_iter().cloned().collect();
        let seed_set = sample_seed(&oos_pool, ins_train.len(), 0.01, rng_seed).unwrap();
        let index = build_index(&bench.source, &bench.backend).unwrap();

        let (model, _) = intent_model::train(
            &ins_train,
            &bench.target.dev,
            &bench.train_config,
            &bench.backend,
            bench.feature_config,
        )
        .unwrap();
        let geometry = fit_geometry(&model, &ins_train, &bench.backend).unwrap();
        let stack = DetectorStack {
            model: &model,
            geometry: &geometry,
            backend: &bench.backend,
            params: goldforge_core::detectors::DetectorParams {
                dropout_rng_seed: rng_seed,
                ..Default::default()
            },
        };
        let ensemble = tune_voters(
            &EnsembleConfig::default_voters(),
            &stack,
            &bench.target.dev,
            goldforge_core::detectors::ThresholdObjective::F1,
        )
        .unwrap();
        let params = AugmentParams::new(24, SwapStrategy::RandomUserTurn, rng_seed);
        let run = swap_augment(&seed_set, &index, &params, &bench.backend, &ensemble, &stack).unwrap();
        gold.push(direct_auroc_for_run(&bench, &run, &seed_set));

        let (oracle_model, _) = train_oracle(
            &bench.target,
            &bench.train_config,
            &bench.backend,
            bench.feature_config,
            None,
        )
        .unwrap();
        oracle_scores.push(test_auroc(&bench, &oracle_model));
    }
    let gold_median = median(&mut gold);
    let oracle_median = median(&mut oracle_scores);
    assert!(
        oracle_median >= gold_median,
        "oracle median {oracle_median:.4} < GOLD median {gold_median:.4}"
    );
    println!(
        "ACCEPTANCE 7 oracle-bound: PASS (oracle median {oracle_median:.4} >= GOLD median {gold_median:.4} over 10 seeds)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism
// ---------------------------------------------------------------------------

/// Recursively collect relative paths and bytes of every file under a dir.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                out.push((
                    path.strip_prefix(base).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn criterion_8_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    // Smaller corpus: determinism does not need the full benchmark size.
    let make_cfg = |out: &Path| {
        serde_json::json!({
            "target": {"synth": {
                "n_ins": 400, "n_intents": 3, "n_oos": 200,
                "vocab_overlap": 0.3, "rng_seed": 7,
            }},
            "sources": [{"synth_source": {"n_utterances": 800, "ins_like_fraction": 0.1}}],
            "matches": 8,
            "seed_fraction": 0.05,
            "rng_seed": 7,
            "methods": ["direct", "oracle", "entropy", "mahalanobis", "dropout"],
            "output_dir": out,
        })
    };
    let mut snapshots = Vec::new();
    for (label, threads) in [("a", "1"), ("b", "4"), ("c", "2")] {
        let out = dir.path().join(label);
        let cfg_path = dir.path().join(format!("cfg_{label}.json"));
        std::fs::write(
            &cfg_path,
            serde_json::to_string_pretty(&make_cfg(&out)).unwrap(),
        )
        .unwrap();
        let summary = run_cli(
            &["pipeline", "--config", cfg_path.to_str().unwrap(), "--json"],
            threads,
        );
        let run_dir = PathBuf::from(summary["run_dir"].as_str().unwrap());
        snapshots.push(snapshot(&run_dir));
    }
    let names: Vec<&PathBuf> = snapshots[0].iter().map(|(p, _)| p).collect();
    assert!(
        names.iter().any(|p| p.ends_with("direct_model.json")),
        "run dir is missing expected artifacts: {names:?}"
    );
    for other in &snapshots[1..] {
        assert_eq!(snapshots[0].len(), other.len(), "file sets differ");
        for ((path_a, bytes_a), (path_b, bytes_b)) in snapshots[0].iter().zip(other) {
            assert_eq!(path_a, path_b, "file names differ");
            assert_eq!(
                bytes_a, bytes_b,
                "bytes differ in {} ({} vs {} bytes)",
                path_a.display(),
                bytes_a.len(),
                bytes_b.len()
            );
        }
    }
    println!(
        "ACCEPTANCE 8 determinism: PASS ({} files byte-identical across 3 invocations and thread counts 1/4/2)",
        snapshots[0].len()
    );
}
