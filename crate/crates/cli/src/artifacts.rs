//! On-disk artifacts tying pipeline stages together: the fitted embedding
//! backend, tuned voter thresholds, the augmentation manifest, and score
//! dumps. Every artifact embeds the shared meta header.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use goldforge_core::corpus::DatasetSplit;

use goldforge_core::election::{AugmentParams, AugmentationRun, EnsembleConfig};
use goldforge_core::embedding::{
    fit_tfidf, EmbeddingBackend, ExternalStore, Vocabulary, WordVectorTable,
};
use goldforge_core::error::{Error, Result};
use goldforge_core::persist::{load_json, save_json, ArtifactMeta};

use crate::config::BackendSpec;

/// Serialized embedding backend. TF-IDF inlines its vocabulary; file-backed
/// backends record an absolute path and are re-opened on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendState {
    Tfidf { vocab: Vocabulary },
    WordvecAvg { path: PathBuf, dim: usize },
    External { path: PathBuf, dim: usize },
    Random { dim: usize, rng_seed: u64 },
}

/// The fitted embedding state: one backend for match extraction, one for
/// model features. They are often the same TF-IDF vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingArtifact {
    #[serde(flatten)]
    pub meta: ArtifactMeta,
    pub extraction: BackendState,
    pub features: BackendState,
}

/// Fit (or open) the embedding backend. The TF-IDF vocabulary is fitted on
/// every turn of the target train split plus all source utterances — test
/// text never enters the vocabulary.
pub fn fit_backend(
    spec: &BackendSpec,
    target_train_texts: &[String],
    sources: &[DatasetSplit],
    rng_seed: u64,
) -> Result<BackendState> {
    Ok(match spec {
        BackendSpec::Tfidf { max_features } => {
            let mut corpus: Vec<String> = target_train_texts.to_vec();
            for source in sources {
                for d in source.all() {
                    for t in &d.turns {
                        corpus.push(t.text.clone());
                    }
                }
            }
            BackendState::Tfidf {
                vocab: fit_tfidf(&corpus, *max_features)?,
            }
        }
        BackendSpec::WordvecAvg { path } => {
            let table = WordVectorTable::load(path)?;
            BackendState::WordvecAvg {
                path: absolute(path)?,
                dim: table.dim,
            }
        }
        BackendSpec::External { path } => {
            let store = ExternalStore::load(path)?;
            BackendState::External {
                path: absolute(path)?,
                dim: store.dim,
            }
        }
        BackendSpec::Random { dim } => BackendState::Random {
            dim: *dim,
            rng_seed,
        },
    })
}

fn absolute(path: &Path) -> Result<PathBuf> {
    path.canonicalize()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Materialize a usable backend from its persisted state.
pub fn open_backend(state: &BackendState) -> Result<EmbeddingBackend> {
    Ok(match state {
        BackendState::Tfidf { vocab } => EmbeddingBackend::Tfidf(vocab.clone()),
        BackendState::WordvecAvg { path, .. } => {
            EmbeddingBackend::WordvecAvg(WordVectorTable::load(path)?)
        }
        BackendState::External { path, .. } => {
            EmbeddingBackend::External(ExternalStore::load(path)?)
        }
        BackendState::Random { dim, rng_seed } => EmbeddingBackend::Random {
            dim: *dim,
            rng_seed: *rng_seed,
        },
    })
}

pub fn save_embedding(path: &Path, artifact: &EmbeddingArtifact) -> Result<()> {
    save_json(path, artifact)
}

/// Load both backends: `(extraction, features)`.
pub fn load_embedding(path: &Path) -> Result<(EmbeddingBackend, EmbeddingBackend)> {
    let artifact: EmbeddingArtifact = load_json(path)?;
    Ok((
        open_backend(&artifact.extraction)?,
        open_backend(&artifact.features)?,
    ))
}

/// Tuned voter thresholds plus the objective that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdsArtifact {
    #[serde(flatten)]
    pub meta: ArtifactMeta,
    pub objective: goldforge_core::detectors::ThresholdObjective,
    pub ensemble: EnsembleConfig,
}

/// Summary row of one seed's augmentation outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed_id: String,
    pub elected: usize,
    pub examined: usize,
    pub shortfall: bool,
}

/// The augmentation run manifest. Wall time is reported on stdout, not here,
/// so run directories stay byte-identical across invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentManifest {
    #[serde(flatten)]
    pub meta: ArtifactMeta,
    pub parameters: AugmentParams,
    pub no_election: bool,
    pub backend: String,
    pub source_names: Vec<String>,
    pub voters: EnsembleConfig,
    pub quorum: usize,
    pub seed_budget: usize,
    pub per_seed: Vec<SeedSummary>,
    pub elected_total: usize,
    pub pool_after_dedupe: usize,
    pub shortfall_count: usize,
}

impl AugmentManifest {
    pub fn from_run(
        meta: ArtifactMeta,
        run: &AugmentationRun,
        ensemble: &EnsembleConfig,
        backend: String,
        source_names: Vec<String>,
        seed_budget: usize,
    ) -> Self {
        AugmentManifest {
            meta,
            parameters: run.params,
            no_election: run.no_election,
            backend,
            source_names,
            voters: ensemble.clone(),
            quorum: ensemble.quorum(),
            seed_budget,
            per_seed: run
                .per_seed
                .iter()
                .map(|s| SeedSummary {
                    seed_id: s.seed_id.clone(),
                    elected: s.elected_count(),
                    examined: s.examined,
                    shortfall: s.shortfall,
                })
                .collect(),
            elected_total: run.elected_total(),
            pool_after_dedupe: run.pool.len(),
            shortfall_count: run.shortfall_count(),
        }
    }
}

/// One score-dump row: `{"id", "detector", "score", "vote"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreDumpRow {
    pub id: String,
    pub detector: String,
    pub score: f64,
    pub vote: bool,
}

pub fn write_score_dump(path: &Path, rows: &[ScoreDumpRow]) -> Result<()> {
    use std::io::Write;
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Write examined candidates (dialogue record + provenance + elected flag).
pub fn write_candidates(path: &Path, run: &AugmentationRun) -> Result<()> {
    use std::io::Write;
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for seed in &run.per_seed {
        for candidate in &seed.candidates {
            serde_json::to_writer(&mut w, candidate)?;
            w.write_all(b"\n")
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Fixed artifact names inside a run directory.
pub mod names {
    pub const CONFIG: &str = "config.json";
    pub const DATA_DIR: &str = "data";
    pub const EMBEDDING: &str = "embedding.json";
    pub const INTENT_MODEL: &str = "intent_model.json";
    pub const GEOMETRY: &str = "geometry.json";
    pub const THRESHOLDS: &str = "thresholds.json";
    pub const SEEDS: &str = "seeds.jsonl";
    pub const MATCHES: &str = "matches.jsonl";
    pub const CANDIDATES: &str = "candidates.jsonl";
    pub const AUGMENTED: &str = "augmented.train.jsonl";
    pub const AUGMENT_MANIFEST: &str = "augment_manifest.json";
    pub const DIRECT_MODEL: &str = "direct_model.json";
    pub const ORACLE_MODEL: &str = "oracle_model.json";
    pub const REPORTS_DIR: &str = "reports";
    pub const SWEEP: &str = "sweep.json";
}

