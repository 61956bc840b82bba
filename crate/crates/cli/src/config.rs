//! Run configuration: a single JSON document with every knob of the
//! pipeline. Flags override config keys, which override defaults. The
//! content digest of the resolved config (output directory excluded)
//! addresses the run directory and is stamped into every artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use goldforge_core::corpus::SynthSpec;
use goldforge_core::detectors::{DetectorKind, DetectorParams, ThresholdObjective};
use goldforge_core::embedding::EmbedMode;
use goldforge_core::error::{Error, Result};
use goldforge_core::generator::SwapStrategy;
use goldforge_core::intent_model::TrainConfig;
use goldforge_core::util::sha256_hex;

/// Where a dataset comes from: files on disk (a `<dataset>` prefix or one
/// `.jsonl` pool) or a synthetic corpus generated into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSpec {
    Path(PathBuf),
    Synth { synth: SynthSpec },
}

/// Synthetic companion source pool; reuses the target's synthetic
/// vocabulary, so it is only valid when the target is synthetic too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    Path(PathBuf),
    Synth {
        synth_source: SynthSourceParams,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSourceParams {
    pub n_utterances: usize,
    #[serde(default)]
    pub ins_like_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Tfidf {
        #[serde(default = "default_max_features")]
        max_features: usize,
    },
    WordvecAvg {
        path: PathBuf,
    },
    External {
        path: PathBuf,
    },
    Random {
        #[serde(default = "default_random_dim")]
        dim: usize,
    },
}

fn default_max_features() -> usize {
    7000
}

fn default_random_dim() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Direct,
    Oracle,
    MaxProb,
    Odin,
    Entropy,
    Centroid,
    Mahalanobis,
    Gradient,
    Dropout,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::Oracle => "oracle",
            Method::MaxProb => "maxprob",
            Method::Odin => "odin",
            Method::Entropy => "entropy",
            Method::Centroid => "centroid",
            Method::Mahalanobis => "mahalanobis",
            Method::Gradient => "gradient",
            Method::Dropout => "dropout",
        }
    }

    pub fn as_detector(&self) -> Option<DetectorKind> {
        match self {
            Method::Direct | Method::Oracle => None,
            Method::MaxProb => Some(DetectorKind::MaxProb),
            Method::Odin => Some(DetectorKind::Odin),
            Method::Entropy => Some(DetectorKind::Entropy),
            Method::Centroid => Some(DetectorKind::Centroid),
            Method::Mahalanobis => Some(DetectorKind::Mahalanobis),
            Method::Gradient => Some(DetectorKind::Gradient),
            Method::Dropout => Some(DetectorKind::Dropout),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Method::Direct),
            "oracle" => Ok(Method::Oracle),
            "maxprob" => Ok(Method::MaxProb),
            "odin" => Ok(Method::Odin),
            "entropy" => Ok(Method::Entropy),
            "centroid" => Ok(Method::Centroid),
            "mahalanobis" => Ok(Method::Mahalanobis),
            "gradient" => Ok(Method::Gradient),
            "dropout" => Ok(Method::Dropout),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

/// The full resolved configuration. Serializing this struct (with
/// `output_dir` cleared) defines the run digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub target: Option<DataSpec>,
    pub sources: Vec<SourceSpec>,
    /// Backend for match extraction (the seed-to-source search space).
    pub extractor: BackendSpec,
    /// Backend for the supporting and direct models' features. File-backed
    /// extractors cannot embed freshly generated candidates, so models
    /// default to TF-IDF regardless of the extractor.
    pub model_backend: BackendSpec,
    pub embed_mode: EmbedMode,
    pub normalize_features: bool,
    /// Desired matches per seed (d).
    pub matches: usize,
    /// Neighbor batch size (m); null means equal to `matches`.
    pub batch: Option<usize>,
    pub cap_factor: usize,
    pub strategy: SwapStrategy,
    pub voters: Vec<DetectorKind>,
    pub no_election: bool,
    pub threshold_objective: ThresholdObjective,
    pub seed_fraction: f64,
    pub rng_seed: u64,
    pub train: TrainConfig,
    /// OOS example weight; null means |INS|/|OOS| of the training set.
    pub class_weighting: Option<f64>,
    pub pseudo_discount: f64,
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub dropout_rate: f64,
    pub dropout_passes: usize,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            target: None,
            sources: Vec::new(),
            extractor: BackendSpec::Tfidf {
                max_features: default_max_features(),
            },
            model_backend: BackendSpec::Tfidf {
                max_features: default_max_features(),
            },
            embed_mode: EmbedMode::ContextMeanPlusFinal,
            normalize_features: false,
            matches: 24,
            batch: None,
            cap_factor: 10,
            strategy: SwapStrategy::RandomUserTurn,
            voters: goldforge_core::election::EnsembleConfig::default_voters().to_vec(),
            no_election: false,
            threshold_objective: ThresholdObjective::F1,
            seed_fraction: 0.01,
            rng_seed: 0,
            train: TrainConfig::default(),
            class_weighting: None,
            pseudo_discount: 1.0,
            odin_temperature: 1000.0,
            odin_epsilon: 0.001,
            dropout_rate: 0.3,
            dropout_passes: 10,
            methods: vec![Method::Direct],
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Flag-level overrides; every field beats the config file when set.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub rng_seed: Option<u64>,
    pub matches: Option<usize>,
    pub batch: Option<usize>,
    pub strategy: Option<SwapStrategy>,
    pub no_election: bool,
    pub seed_fraction: Option<f64>,
    pub extractor: Option<String>,
    pub vectors: Option<PathBuf>,
    pub sources: Vec<PathBuf>,
    pub voters: Option<Vec<DetectorKind>>,
    pub output_dir: Option<PathBuf>,
    pub methods: Option<Vec<Method>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = o.rng_seed {
            self.rng_seed = v;
            self.train.rng_seed = v;
        }
        if let Some(v) = o.matches {
            self.matches = v;
        }
        if let Some(v) = o.batch {
            self.batch = Some(v);
        }
        if let Some(v) = o.strategy {
            self.strategy = v;
        }
        if o.no_election {
            self.no_election = true;
        }
        if let Some(v) = o.seed_fraction {
            self.seed_fraction = v;
        }
        if let Some(extractor) = &o.extractor {
            self.extractor = match extractor.as_str() {
                "tfidf" => BackendSpec::Tfidf {
                    max_features: match self.extractor {
                        BackendSpec::Tfidf { max_features } => max_features,
                        _ => default_max_features(),
                    },
                },
                "glove" | "wordvec" | "wordvec_avg" => BackendSpec::WordvecAvg {
                    path: o.vectors.clone().or_else(|| match &self.extractor {
                        BackendSpec::WordvecAvg { path } => Some(path.clone()),
                        _ => None,
                    }).ok_or_else(|| {
                        Error::InvalidConfig(
                            "--extractor glove needs --vectors <word-vector file>".into(),
                        )
                    })?,
                },
                "external" => BackendSpec::External {
                    path: o.vectors.clone().or_else(|| match &self.extractor {
                        BackendSpec::External { path } => Some(path.clone()),
                        _ => None,
                    }).ok_or_else(|| {
                        Error::InvalidConfig(
                            "--extractor external needs --vectors <vector store>".into(),
                        )
                    })?,
                },
                "random" => BackendSpec::Random {
                    dim: match self.extractor {
                        BackendSpec::Random { dim } => dim,
                        _ => default_random_dim(),
                    },
                },
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown extractor {other:?} (use tfidf, glove, external, or random)"
                    )))
                }
            };
        }
        if !o.sources.is_empty() {
            self.sources = o.sources.iter().cloned().map(SourceSpec::Path).collect();
        }
        if let Some(v) = &o.voters {
            self.voters = v.clone();
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.methods {
            self.methods = v.clone();
        }
        Ok(())
    }

    /// Check invariants and path existence before any work.
    pub fn validate(&self) -> Result<()> {
        if self.matches == 0 {
            return Err(Error::InvalidConfig("matches (d) must be >= 1".into()));
        }
        if self.cap_factor == 0 {
            return Err(Error::InvalidConfig("cap_factor must be >= 1".into()));
        }
        if !(self.seed_fraction > 0.0 && self.seed_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "seed_fraction must be in (0, 1], got {}",
                self.seed_fraction
            )));
        }
        if self.voters.is_empty() || self.voters.len().is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "voters must be an odd-sized list, got {}",
                self.voters.len()
            )));
        }
        self.train.validate()?;
        if let Some(DataSpec::Path(p)) = &self.target {
            check_dataset_path(p)?;
        }
        if self.sources.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one source dataset is required".into(),
            ));
        }
        for source in &self.sources {
            match source {
                SourceSpec::Path(p) => check_dataset_path(p)?,
                SourceSpec::Synth { .. } => {
                    if !matches!(self.target, Some(DataSpec::Synth { .. })) {
                        return Err(Error::InvalidConfig(
                            "a synthetic source needs a synthetic target (shared vocabulary)"
                                .into(),
                        ));
                    }
                }
            }
        }
        for backend in [&self.extractor, &self.model_backend] {
            match backend {
                BackendSpec::WordvecAvg { path } | BackendSpec::External { path }
                    if !path.exists() =>
                {
                    return Err(Error::MissingArtifact(path.display().to_string()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn detector_params(&self) -> DetectorParams {
        DetectorParams {
            odin_temperature: self.odin_temperature,
            odin_epsilon: self.odin_epsilon,
            dropout_rate: self.dropout_rate,
            dropout_passes: self.dropout_passes,
            dropout_rng_seed: self.rng_seed,
        }
    }

    /// Content digest over everything that can change results: the resolved
    /// config with `output_dir` cleared.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&canonical).unwrap().as_bytes())
    }
}

fn check_dataset_path(p: &Path) -> Result<()> {
    let exists = if p.extension().is_some_and(|e| e == "jsonl") {
        p.exists()
    } else {
        ["train", "dev", "test"]
            .iter()
            .any(|s| PathBuf::from(format!("{}.{s}.jsonl", p.display())).exists())
    };
    if exists {
        Ok(())
    } else {
        Err(Error::MissingArtifact(format!(
            "dataset not found at {}",
            p.display()
        )))
    }
}
