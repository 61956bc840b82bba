//! Pipeline stages. Each stage reads its inputs from the run directory (or
//! the configured dataset paths), writes its artifacts back, and is callable
//! both standalone and from `pipeline`. Everything is deterministic for a
//! fixed config digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use goldforge_core::corpus::{
    ingest, sample_seed, synth_corpus, synth_source, write_jsonl, DatasetRole, DatasetSplit,
    Dialogue, SeedSet,
};
use goldforge_core::detectors::{fit_geometry, DetectorStack, InsGeometry};
use goldforge_core::election::{
    aggregate, no_election_augment, read_training_set, swap_augment, tune_voters, write_training_set,
    AugmentParams, AugmentationRun, EnsembleConfig, VoterConfig,
};
use goldforge_core::embedding::{EmbeddingBackend, FeatureConfig};
use goldforge_core::error::{Error, Result};
use goldforge_core::intent_model::{self, SoftmaxClassifier};
use goldforge_core::matcher::{build_index, nearest, write_matches, MatchResult, SourceIndex};
use goldforge_core::metrics::{evaluate as evaluate_scores, EvalReport, ScoredExample};
use goldforge_core::oos_model::{train_direct, train_oracle, BinaryDetector};
use goldforge_core::persist::{load_json, save_json, ArtifactMeta};
use goldforge_core::util::par_map;

use crate::artifacts::{
    fit_backend, load_embedding, names, save_embedding, write_candidates, write_score_dump,
    AugmentManifest, EmbeddingArtifact, ScoreDumpRow, ThresholdsArtifact,
};
use crate::config::{DataSpec, Method, RunConfig, SourceSpec};

pub fn meta(cfg: &RunConfig) -> ArtifactMeta {
    ArtifactMeta::new(cfg.rng_seed, cfg.digest())
}

fn path_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| p.display().to_string())
}

/// Load (or synthesize) the target dataset. Synthetic data is also written
/// under `<run>/data/` for inspection and re-use by later stages.
pub fn target_data(cfg: &RunConfig, run_dir: &Path) -> Result<DatasetSplit> {
    match cfg
        .target
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no target dataset".into()))?
    {
        DataSpec::Path(p) => ingest(p, DatasetRole::Target),
        DataSpec::Synth { synth } => {
            let split = synth_corpus(synth)?;
            let data_dir = run_dir.join(names::DATA_DIR);
            std::fs::create_dir_all(&data_dir)
                .map_err(|e| Error::io(data_dir.display().to_string(), e))?;
            split.save(&data_dir, "target")?;
            Ok(split)
        }
    }
}

/// Load every configured source pool and merge them into the MIX source.
/// Ids must stay unique across pools.
pub fn source_data(cfg: &RunConfig, run_dir: &Path) -> Result<(DatasetSplit, Vec<String>)> {
    let mut names_out = Vec::new();
    let mut merged: Vec<Dialogue> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (i, source) in cfg.sources.iter().enumerate() {
        let (split, name) = match source {
            SourceSpec::Path(p) => (ingest(p, DatasetRole::Source)?, path_name(p)),
            SourceSpec::Synth { synth_source: params } => {
                let Some(DataSpec::Synth { synth }) = &cfg.target else {
                    return Err(Error::InvalidConfig(
                        "a synthetic source needs a synthetic target".into(),
                    ));
                };
                let split =
                    synth_source(synth, params.n_utterances, params.ins_like_fraction)?;
                let data_dir = run_dir.join(names::DATA_DIR);
                std::fs::create_dir_all(&data_dir)
                    .map_err(|e| Error::io(data_dir.display().to_string(), e))?;
                split.save(&data_dir, &format!("source-{i}"))?;
                (split, format!("source-{i}"))
            }
        };
        for d in split.all() {
            if !seen.insert(d.id.clone()) {
                return Err(Error::DuplicateId(d.id.clone()));
            }
            merged.push(d.clone());
        }
        names_out.push(name);
    }
    Ok((
        DatasetSplit {
            role: DatasetRole::Source,
            train: merged,
            dev: Vec::new(),
            test: Vec::new(),
        },
        names_out,
    ))
}

fn feature_config(cfg: &RunConfig, backend: &EmbeddingBackend) -> FeatureConfig {
    FeatureConfig {
        backend: backend.tag(),
        mode: cfg.embed_mode,
        normalize: cfg.normalize_features,
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub target_train: usize,
    pub target_dev: usize,
    pub target_test: usize,
    pub source_utterances: usize,
    pub files: Vec<PathBuf>,
}

/// Generate the synthetic target corpus and companion sources into
/// `<run>/data/`.
pub fn stage_synth(cfg: &RunConfig, run_dir: &Path) -> Result<SynthSummary> {
    if !matches!(cfg.target, Some(DataSpec::Synth { .. })) {
        return Err(Error::InvalidConfig(
            "synth requires a synthetic target in the config".into(),
        ));
    }
    let target = target_data(cfg, run_dir)?;
    let (source, _) = source_data(cfg, run_dir)?;
    let data_dir = run_dir.join(names::DATA_DIR);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&data_dir)
        .map_err(|e| Error::io(data_dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    files.sort();
    Ok(SynthSummary {
        target_train: target.train.len(),
        target_dev: target.dev.len(),
        target_test: target.test.len(),
        source_utterances: source.len(),
        files,
    })
}

/// Fit both embedding backends (match extraction and model features) and
/// persist them. Returns `(extraction, features)`.
pub fn stage_fit_embed(
    cfg: &RunConfig,
    run_dir: &Path,
) -> Result<(EmbeddingBackend, EmbeddingBackend)> {
    let target = target_data(cfg, run_dir)?;
    let (source, _) = source_data(cfg, run_dir)?;
    let train_texts: Vec<String> = target
        .train
        .iter()
        .flat_map(|d| d.turns.iter().map(|t| t.text.clone()))
        .collect();
    let extraction = fit_backend(
        &cfg.extractor,
        &train_texts,
        std::slice::from_ref(&source),
        cfg.rng_seed,
    )?;
    let features = if cfg.model_backend == cfg.extractor {
        extraction.clone()
    } else {
        fit_backend(&cfg.model_backend, &train_texts, &[source], cfg.rng_seed)?
    };
    let artifact = EmbeddingArtifact {
        meta: meta(cfg),
        extraction,
        features,
    };
    save_embedding(&run_dir.join(names::EMBEDDING), &artifact)?;
    Ok((
        crate::artifacts::open_backend(&artifact.extraction)?,
        crate::artifacts::open_backend(&artifact.features)?,
    ))
}

fn load_backends(run_dir: &Path) -> Result<(EmbeddingBackend, EmbeddingBackend)> {
    load_embedding(&run_dir.join(names::EMBEDDING))
}

/// The model-feature backend only.
fn load_feature_backend(run_dir: &Path) -> Result<EmbeddingBackend> {
    load_backends(run_dir).map(|(_, features)| features)
}

fn load_model(run_dir: &Path) -> Result<SoftmaxClassifier> {
    SoftmaxClassifier::load(&run_dir.join(names::INTENT_MODEL)).map(|(m, _)| m)
}

fn load_geometry(run_dir: &Path) -> Result<InsGeometry> {
    InsGeometry::load(&run_dir.join(names::GEOMETRY)).map(|(g, _)| g)
}

fn load_thresholds(run_dir: &Path) -> Result<EnsembleConfig> {
    let artifact: ThresholdsArtifact = load_json(&run_dir.join(names::THRESHOLDS))?;
    Ok(artifact.ensemble)
}

/// Train the supporting intent classifier on the INS train split.
pub fn stage_train_intent(
    cfg: &RunConfig,
    run_dir: &Path,
) -> Result<(SoftmaxClassifier, intent_model::TrainStats)> {
    let target = target_data(cfg, run_dir)?;
    let backend = load_feature_backend(run_dir)?;
    let ins_train: Vec<Dialogue> = target.ins_train().into_iter().cloned().collect();
    let (model, stats) = intent_model::train(
        &ins_train,
        &target.dev,
        &cfg.train,
        &backend,
        feature_config(cfg, &backend),
    )?;
    model.save(
        &run_dir.join(names::INTENT_MODEL),
        &meta(cfg),
        &cfg.train.digest(),
    )?;
    Ok((model, stats))
}

/// Fit in-scope geometry and tune per-voter thresholds on the dev split.
pub fn stage_tune(cfg: &RunConfig, run_dir: &Path) -> Result<EnsembleConfig> {
    let target = target_data(cfg, run_dir)?;
    let backend = load_feature_backend(run_dir)?;
    let model = load_model(run_dir)?;
    let ins_train: Vec<Dialogue> = target.ins_train().into_iter().cloned().collect();
    let geometry = fit_geometry(&model, &ins_train, &backend)?;
    geometry.save(&run_dir.join(names::GEOMETRY), &meta(cfg))?;

    let stack = DetectorStack {
        model: &model,
        geometry: &geometry,
        backend: &backend,
        params: cfg.detector_params(),
    };
    let ensemble = tune_voters(&cfg.voters, &stack, &target.dev, cfg.threshold_objective)?;
    save_json(
        &run_dir.join(names::THRESHOLDS),
        &ThresholdsArtifact {
            meta: meta(cfg),
            objective: cfg.threshold_objective,
            ensemble: ensemble.clone(),
        },
    )?;
    Ok(ensemble)
}

fn augment_params(cfg: &RunConfig) -> AugmentParams {
    AugmentParams {
        d: cfg.matches,
        m: cfg.batch,
        cap_factor: cfg.cap_factor,
        strategy: cfg.strategy,
        rng_seed: cfg.rng_seed,
    }
}

/// Make sure embedding, intent model, geometry, and thresholds exist,
/// training them on the fly when `train_missing` is set.
pub fn ensure_artifacts(cfg: &RunConfig, run_dir: &Path, train_missing: bool) -> Result<()> {
    let need = |name: &str| !run_dir.join(name).exists();
    if need(names::EMBEDDING) {
        if !train_missing {
            return Err(Error::MissingArtifact(names::EMBEDDING.into()));
        }
        stage_fit_embed(cfg, run_dir)?;
    }
    if need(names::INTENT_MODEL) {
        if !train_missing {
            return Err(Error::MissingArtifact(names::INTENT_MODEL.into()));
        }
        stage_train_intent(cfg, run_dir)?;
    }
    if need(names::GEOMETRY) || need(names::THRESHOLDS) {
        if !train_missing {
            return Err(Error::MissingArtifact(names::THRESHOLDS.into()));
        }
        stage_tune(cfg, run_dir)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct AugmentSummary {
    pub seed_budget: usize,
    pub elected_total: usize,
    pub pool_after_dedupe: usize,
    pub shortfall_count: usize,
    pub training_set: goldforge_core::election::TrainingSetCounts,
    pub wall_time_ms: u128,
}

/// The full augmentation stage: sample seeds, match, generate, elect,
/// aggregate. Writes seeds, the match cache, all candidates, the aggregated
/// training set, and the manifest.
pub fn stage_augment(cfg: &RunConfig, run_dir: &Path) -> Result<AugmentSummary> {
    let started = std::time::Instant::now();
    let target = target_data(cfg, run_dir)?;
    let (source, source_names) = source_data(cfg, run_dir)?;
    let (match_backend, feature_backend) = load_backends(run_dir)?;

    let oos_pool: Vec<Dialogue> = target.oos_train().into_iter().cloned().collect();
    let ins_train = target.ins_train();
    let seed_set = sample_seed(&oos_pool, ins_train.len(), cfg.seed_fraction, cfg.rng_seed)?;
    write_jsonl(&run_dir.join(names::SEEDS), &seed_set.examples)?;

    let index = build_index(&source, &match_backend)?;
    let params = augment_params(cfg);
    let cap = params.cap().min(index.len());
    let match_results: Result<Vec<MatchResult>> =
        par_map(seed_set.examples.len(), |i| {
            nearest(&seed_set.examples[i], &index, cap, &match_backend)
        })
        .into_iter()
        .collect();
    write_matches(&run_dir.join(names::MATCHES), &match_results?)?;

    let (run, ensemble) =
        run_augmentation(cfg, run_dir, &seed_set, &index, &match_backend, &feature_backend)?;
    write_candidates(&run_dir.join(names::CANDIDATES), &run)?;

    let training_set = aggregate(&ins_train, &seed_set, &run);
    write_training_set(&run_dir.join(names::AUGMENTED), &training_set)?;

    let manifest = AugmentManifest::from_run(
        meta(cfg),
        &run,
        &ensemble,
        match_backend.tag().to_string(),
        source_names,
        seed_set.budget,
    );
    save_json(&run_dir.join(names::AUGMENT_MANIFEST), &manifest)?;

    Ok(AugmentSummary {
        seed_budget: seed_set.budget,
        elected_total: run.elected_total(),
        pool_after_dedupe: run.pool.len(),
        shortfall_count: run.shortfall_count(),
        training_set: training_set.counts,
        wall_time_ms: started.elapsed().as_millis(),
    })
}

/// Run the election (or the accept-all ablation) against prepared inputs.
fn run_augmentation(
    cfg: &RunConfig,
    run_dir: &Path,
    seed_set: &SeedSet,
    index: &SourceIndex,
    match_backend: &EmbeddingBackend,
    feature_backend: &EmbeddingBackend,
) -> Result<(AugmentationRun, EnsembleConfig)> {
    let params = augment_params(cfg);
    if cfg.no_election {
        let ensemble = EnsembleConfig {
            voters: cfg
                .voters
                .iter()
                .map(|&detector| VoterConfig {
                    detector,
                    threshold: None,
                })
                .collect(),
        };
        let run = no_election_augment(seed_set, index, &params, match_backend)?;
        return Ok((run, ensemble));
    }
    let model = load_model(run_dir)?;
    let geometry = load_geometry(run_dir)?;
    let ensemble = load_thresholds(run_dir)?;
    let stack = DetectorStack {
        model: &model,
        geometry: &geometry,
        backend: feature_backend,
        params: cfg.detector_params(),
    };
    let run = swap_augment(seed_set, index, &params, match_backend, &ensemble, &stack)?;
    Ok((run, ensemble))
}

/// Train the direct detector on the aggregated training set.
pub fn stage_train_direct(
    cfg: &RunConfig,
    run_dir: &Path,
) -> Result<(BinaryDetector, intent_model::TrainStats)> {
    let target = target_data(cfg, run_dir)?;
    let backend = load_feature_backend(run_dir)?;
    let training_set = read_training_set(&run_dir.join(names::AUGMENTED))?;
    let (model, stats) = train_direct(
        &training_set.examples,
        &target.dev,
        &cfg.train,
        &backend,
        feature_config(cfg, &backend),
        cfg.class_weighting,
        cfg.pseudo_discount,
    )?;
    model.save(
        &run_dir.join(names::DIRECT_MODEL),
        &meta(cfg),
        &cfg.train.digest(),
    )?;
    Ok((model, stats))
}

/// Train the oracle on every true train label.
pub fn stage_train_oracle(
    cfg: &RunConfig,
    run_dir: &Path,
) -> Result<(BinaryDetector, intent_model::TrainStats)> {
    let target = target_data(cfg, run_dir)?;
    let backend = load_feature_backend(run_dir)?;
    let (model, stats) = train_oracle(
        &target,
        &cfg.train,
        &backend,
        feature_config(cfg, &backend),
        cfg.class_weighting,
    )?;
    model.save(
        &run_dir.join(names::ORACLE_MODEL),
        &meta(cfg),
        &cfg.train.digest(),
    )?;
    Ok((model, stats))
}

fn score_test_set(
    cfg: &RunConfig,
    run_dir: &Path,
    method: Method,
    test: &[Dialogue],
) -> Result<Vec<ScoredExample>> {
    let backend = load_feature_backend(run_dir)?;
    match method {
        Method::Direct | Method::Oracle => {
            let file = if method == Method::Direct {
                names::DIRECT_MODEL
            } else {
                names::ORACLE_MODEL
            };
            let (model, _) = BinaryDetector::load(&run_dir.join(file))?;
            par_map(test.len(), |i| -> Result<ScoredExample> {
                Ok(ScoredExample {
                    id: test[i].id.clone(),
                    score: model.score_oos(&backend, &test[i])?,
                    is_oos: test[i].is_oos(),
                })
            })
            .into_iter()
            .collect()
        }
        _ => {
            let kind = method.as_detector().expect("baseline method");
            let model = load_model(run_dir)?;
            let geometry = load_geometry(run_dir)?;
            let stack = DetectorStack {
                model: &model,
                geometry: &geometry,
                backend: &backend,
                params: cfg.detector_params(),
            };
            par_map(test.len(), |i| -> Result<ScoredExample> {
                Ok(ScoredExample {
                    id: test[i].id.clone(),
                    score: stack.score(kind, &test[i])?,
                    is_oos: test[i].is_oos(),
                })
            })
            .into_iter()
            .collect()
        }
    }
}

/// Score the test split with one method and write its report.
pub fn stage_evaluate(
    cfg: &RunConfig,
    run_dir: &Path,
    method: Method,
    dump_scores: bool,
) -> Result<EvalReport> {
    let target = target_data(cfg, run_dir)?;
    let scored = score_test_set(cfg, run_dir, method, &target.test)?;
    let report = evaluate_scores(&scored, &cfg.digest())?;
    let reports_dir = run_dir.join(names::REPORTS_DIR);
    std::fs::create_dir_all(&reports_dir)
        .map_err(|e| Error::io(reports_dir.display().to_string(), e))?;
    save_json(&reports_dir.join(format!("{}.json", method.name())), &report)?;

    if dump_scores {
        let vote_threshold = dump_threshold(cfg, run_dir, method)?;
        let rows: Vec<ScoreDumpRow> = scored
            .iter()
            .map(|s| ScoreDumpRow {
                id: s.id.clone(),
                detector: method.name().into(),
                score: s.score,
                vote: s.score > vote_threshold,
            })
            .collect();
        write_score_dump(
            &reports_dir.join(format!("{}.scores.jsonl", method.name())),
            &rows,
        )?;
    }
    Ok(report)
}

/// Threshold used for the binary `vote` column of score dumps: 0.5 for the
/// probability-valued direct models, the tuned threshold for baselines when
/// available, otherwise the score median surrogate 0.0.
fn dump_threshold(cfg: &RunConfig, run_dir: &Path, method: Method) -> Result<f64> {
    match method {
        Method::Direct | Method::Oracle => Ok(0.5),
        _ => {
            let kind = method.as_detector().expect("baseline");
            if let Ok(ensemble) = load_thresholds(run_dir) {
                if let Some(v) = ensemble.voters.iter().find(|v| v.detector == kind) {
                    if let Some(t) = v.threshold {
                        return Ok(t);
                    }
                }
            }
            let _ = cfg;
            Ok(0.0)
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub matches: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepArtifact {
    #[serde(flatten)]
    pub meta: ArtifactMeta,
    pub method: String,
    pub points: Vec<SweepPoint>,
}

/// Match-count sweep: retrain and evaluate the direct model at each `d`,
/// with `d = 0` meaning seed-only training. Emits the AUROC-vs-matches
/// curve data.
pub fn stage_sweep(cfg: &RunConfig, run_dir: &Path, ds: &[usize]) -> Result<SweepArtifact> {
    let target = target_data(cfg, run_dir)?;
    let (source, _) = source_data(cfg, run_dir)?;
    let (match_backend, backend) = load_backends(run_dir)?;
    let fc = feature_config(cfg, &backend);

    let oos_pool: Vec<Dialogue> = target.oos_train().into_iter().cloned().collect();
    let ins_train = target.ins_train();
    let seed_set = sample_seed(&oos_pool, ins_train.len(), cfg.seed_fraction, cfg.rng_seed)?;
    let index = build_index(&source, &match_backend)?;

    let mut points = Vec::with_capacity(ds.len());
    for &d in ds {
        let training_set = if d == 0 {
            let empty = AugmentationRun {
                params: AugmentParams {
                    d: 0,
                    m: None,
                    cap_factor: cfg.cap_factor,
                    strategy: cfg.strategy,
                    rng_seed: cfg.rng_seed,
                },
                no_election: cfg.no_election,
                per_seed: Vec::new(),
                pool: Vec::new(),
            };
            aggregate(&ins_train, &seed_set, &empty)
        } else {
            let mut point_cfg = cfg.clone();
            point_cfg.matches = d;
            let (run, _) = run_augmentation(
                &point_cfg,
                run_dir,
                &seed_set,
                &index,
                &match_backend,
                &backend,
            )?;
            aggregate(&ins_train, &seed_set, &run)
        };
        let (model, _) = train_direct(
            &training_set.examples,
            &target.dev,
            &cfg.train,
            &backend,
            fc,
            cfg.class_weighting,
            cfg.pseudo_discount,
        )?;
        let scored: Result<Vec<ScoredExample>> = par_map(target.test.len(), |i| {
            Ok(ScoredExample {
                id: target.test[i].id.clone(),
                score: model.score_oos(&backend, &target.test[i])?,
                is_oos: target.test[i].is_oos(),
            })
        })
        .into_iter()
        .collect();
        points.push(SweepPoint {
            matches: d,
            report: evaluate_scores(&scored?, &cfg.digest())?,
        });
    }
    let artifact = SweepArtifact {
        meta: meta(cfg),
        method: Method::Direct.name().into(),
        points,
    };
    save_json(&run_dir.join(names::SWEEP), &artifact)?;
    Ok(artifact)
}

