//! Augmentation orchestration: per seed, walk the nearest source matches in
//! rank order, generate swap candidates, and hold ensemble elections until
//! the per-seed quota is met or the examined-neighbor cap runs out. Elected
//! candidates aggregate with the seed set and the in-scope training data
//! into the direct detector's training set.

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, SeedSet};
use crate::detectors::{
    threshold_serde, tune_threshold, DetectorKind, DetectorStack, DetectorVerdict,
    ThresholdObjective,
};
use crate::embedding::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::generator::{dedupe, generate, Candidate, SwapStrategy};
use crate::matcher::{nearest, SourceIndex};
use crate::oos_model::TrainExample;
use crate::util::par_map;

/// One voter: a detector plus its tuned threshold (Dropout needs none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoterConfig {
    pub detector: DetectorKind,
    #[serde(with = "threshold_serde", default)]
    pub threshold: Option<f64>,
}

/// The voting ensemble: an odd number of detectors; a candidate is elected
/// when at least `quorum()` of them vote OOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub voters: Vec<VoterConfig>,
}

impl EnsembleConfig {
    /// Default ensemble: the top detector of each indirect family —
    /// Entropy (probability threshold), Mahalanobis (outlier distance),
    /// Dropout (Bayesian ensemble).
    pub fn default_voters() -> [DetectorKind; 3] {
        [
            DetectorKind::Entropy,
            DetectorKind::Mahalanobis,
            DetectorKind::Dropout,
        ]
    }

    pub fn quorum(&self) -> usize {
        self.voters.len() / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.voters.is_empty() || self.voters.len().is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "ensemble needs an odd number of voters, got {}",
                self.voters.len()
            )));
        }
        Ok(())
    }
}

/// Tune per-voter thresholds on a labeled dev set (its OOS part is the
/// "modest number of OOS samples" allowed for hyper-parameter tuning).
pub fn tune_voters(
    kinds: &[DetectorKind],
    stack: &DetectorStack,
    dev: &[Dialogue],
    objective: ThresholdObjective,
) -> Result<EnsembleConfig> {
    let mut sorted: Vec<&Dialogue> = dev.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let features: Result<Vec<Vec<f64>>> = par_map(sorted.len(), |i| {
        stack.model.features(stack.backend, sorted[i])
    })
    .into_iter()
    .collect();
    let features = features?;
    let labels: Vec<bool> = sorted.iter().map(|d| d.is_oos()).collect();

    let mut voters = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let threshold = if kind.needs_threshold() {
            let scores: Result<Vec<(f64, bool)>> = features
                .iter()
                .zip(&labels)
                .map(|(f, &y)| stack.score_features(kind, f).map(|s| (s, y)))
                .collect();
            Some(tune_threshold(&scores?, objective)?)
        } else {
            None
        };
        voters.push(VoterConfig {
            detector: kind,
            threshold,
        });
    }
    Ok(EnsembleConfig { voters })
}

/// Put one candidate to the ensemble. Elected when OOS votes reach quorum.
pub fn hold_election(
    candidate: &Candidate,
    cfg: &EnsembleConfig,
    stack: &DetectorStack,
) -> Result<(bool, Vec<DetectorVerdict>)> {
    cfg.validate()?;
    let features = stack.model.features(stack.backend, &candidate.dialogue)?;
    let mut verdicts = Vec::with_capacity(cfg.voters.len());
    for voter in &cfg.voters {
        verdicts.push(stack.verdict_features(voter.detector, voter.threshold, &features)?);
    }
    let votes = verdicts.iter().filter(|v| v.vote).count();
    Ok((votes >= cfg.quorum(), verdicts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Desired number of elected pseudo-OOS examples per seed.
    pub d: usize,
    /// Neighbor batch size; defaults to `d`.
    pub m: Option<usize>,
    /// Examined-neighbor cap per seed, as a multiple of `d`.
    pub cap_factor: usize,
    pub strategy: SwapStrategy,
    pub rng_seed: u64,
}

impl AugmentParams {
    pub fn new(d: usize, strategy: SwapStrategy, rng_seed: u64) -> Self {
        Self {
            d,
            m: None,
            cap_factor: 10,
            strategy,
            rng_seed,
        }
    }

    pub fn batch(&self) -> usize {
        self.m.unwrap_or(self.d).max(1)
    }

    pub fn cap(&self) -> usize {
        self.cap_factor.max(1) * self.d
    }
}

/// Outcome for one seed example. `candidates` holds every examined
/// candidate in neighbor-rank order with its election flag set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAugmentation {
    pub seed_id: String,
    pub candidates: Vec<Candidate>,
    pub examined: usize,
    /// True when the cap ran out before `d` candidates were elected.
    pub shortfall: bool,
}

impl SeedAugmentation {
    pub fn elected(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.elected == Some(true))
    }

    pub fn elected_count(&self) -> usize {
        self.elected().count()
    }
}

/// A complete augmentation pass: per-seed elected sets plus the deduplicated
/// aggregate pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRun {
    pub params: AugmentParams,
    pub no_election: bool,
    pub per_seed: Vec<SeedAugmentation>,
    /// Union of all per-seed elected sets after dedupe, in seed order.
    pub pool: Vec<Candidate>,
}

impl AugmentationRun {
    pub fn elected_total(&self) -> usize {
        self.per_seed.iter().map(|s| s.elected_count()).sum()
    }

    pub fn shortfall_count(&self) -> usize {
        self.per_seed.iter().filter(|s| s.shortfall).count()
    }
}

/// Shared scan: walk neighbors in rank order, electing via `elect`, until
/// `d` wins or the cap is exhausted. `match_backend` must be the backend the
/// index was built with; elections embed candidates through the supporting
/// model's own feature backend. Per-seed pipelines run in parallel; the
/// output order is the seed order.
fn augment_with<F>(
    seed_set: &SeedSet,
    index: &SourceIndex,
    params: &AugmentParams,
    match_backend: &EmbeddingBackend,
    no_election: bool,
    elect: F,
) -> Result<AugmentationRun>
where
    F: Fn(&Candidate) -> Result<bool> + Sync,
{
    if params.d == 0 {
        return Err(Error::InvalidConfig("d must be >= 1".into()));
    }
    if match_backend.tag() != index.backend {
        return Err(Error::InvalidConfig(format!(
            "index was built with {} but the match backend is {}",
            index.backend,
            match_backend.tag()
        )));
    }
    if index.len() < params.d {
        return Err(Error::ExhaustedSourcePool {
            index: index.len(),
            d: params.d,
        });
    }
    let cap = params.cap().min(index.len());
    let per_seed: Result<Vec<SeedAugmentation>> =
        par_map(seed_set.examples.len(), |i| -> Result<SeedAugmentation> {
            let seed = &seed_set.examples[i];
            let matches = nearest(seed, index, cap, match_backend)?;
            let mut candidates = Vec::new();
            let mut n_elected = 0usize;
            for (source_id, _) in &matches.matches {
                if n_elected >= params.d {
                    break;
                }
                let text = index
                    .text_of(source_id)
                    .ok_or_else(|| Error::MissingId(source_id.clone()))?;
                let mut candidate =
                    generate(seed, source_id, text, params.strategy, params.rng_seed)?;
                let won = elect(&candidate)?;
                candidate.elected = Some(won);
                n_elected += usize::from(won);
                candidates.push(candidate);
            }
            let shortfall = n_elected < params.d;
            Ok(SeedAugmentation {
                seed_id: seed.id.clone(),
                examined: candidates.len(),
                candidates,
                shortfall,
            })
        })
        .into_iter()
        .collect();
    let per_seed = per_seed?;

    let all: Vec<Candidate> = per_seed
        .iter()
        .flat_map(|s| s.elected().cloned())
        .collect();
    let pool = dedupe(all, &seed_set.examples);
    Ok(AugmentationRun {
        params: *params,
        no_election,
        per_seed,
        pool,
    })
}

/// The full augmentation loop with ensemble elections. `match_backend`
/// drives neighbor extraction; candidate scoring goes through `stack`.
pub fn swap_augment(
    seed_set: &SeedSet,
    index: &SourceIndex,
    params: &AugmentParams,
    match_backend: &EmbeddingBackend,
    ensemble: &EnsembleConfig,
    stack: &DetectorStack,
) -> Result<AugmentationRun> {
    ensemble.validate()?;
    for voter in &ensemble.voters {
        if voter.detector.needs_threshold() && voter.threshold.is_none() {
            return Err(Error::UntunedVoter(voter.detector.name().to_string()));
        }
    }
    augment_with(seed_set, index, params, match_backend, false, |candidate| {
        hold_election(candidate, ensemble, stack).map(|(won, _)| won)
    })
}

/// Ablation: accept every generated candidate (no filtering).
pub fn no_election_augment(
    seed_set: &SeedSet,
    index: &SourceIndex,
    params: &AugmentParams,
    match_backend: &EmbeddingBackend,
) -> Result<AugmentationRun> {
    augment_with(seed_set, index, params, match_backend, true, |_| Ok(true))
}

/// Per-stratum sizes of an aggregated training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSetCounts {
    pub n_ins: usize,
    pub n_seed_oos: usize,
    pub n_pseudo_oos: usize,
}

/// The final training set D = INS train + seed OOS + elected pseudo-OOS.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub examples: Vec<TrainExample>,
    pub counts: TrainingSetCounts,
}

/// Aggregate the three strata, preserving order (INS, then seeds, then the
/// deduplicated pool). Pseudo examples keep their provenance.
pub fn aggregate(
    ins_train: &[&Dialogue],
    seed_set: &SeedSet,
    run: &AugmentationRun,
) -> TrainingSet {
    let mut examples =
        Vec::with_capacity(ins_train.len() + seed_set.examples.len() + run.pool.len());
    for &d in ins_train {
        examples.push(TrainExample {
            dialogue: d.clone(),
            provenance: None,
        });
    }
    for d in &seed_set.examples {
        examples.push(TrainExample {
            dialogue: d.clone(),
            provenance: None,
        });
    }
    for c in &run.pool {
        examples.push(TrainExample {
            dialogue: c.dialogue.clone(),
            provenance: Some(c.provenance.clone()),
        });
    }
    TrainingSet {
        counts: TrainingSetCounts {
            n_ins: ins_train.len(),
            n_seed_oos: seed_set.examples.len(),
            n_pseudo_oos: run.pool.len(),
        },
        examples,
    }
}

/// Write the aggregated set as JSON lines (dialogue record plus provenance
/// for pseudo entries).
pub fn write_training_set(path: &std::path::Path, set: &TrainingSet) -> Result<()> {
    use std::io::Write;
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for example in &set.examples {
        serde_json::to_writer(&mut w, &FlatExample::from(example))?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_training_set(path: &std::path::Path) -> Result<TrainingSet> {
    use std::io::BufRead;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut examples = Vec::new();
    let mut counts = TrainingSetCounts {
        n_ins: 0,
        n_seed_oos: 0,
        n_pseudo_oos: 0,
    };
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let flat: FlatExample = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        let example = flat.into_example(path, lineno + 1)?;
        if example.is_pseudo() {
            counts.n_pseudo_oos += 1;
        } else if example.dialogue.is_oos() {
            counts.n_seed_oos += 1;
        } else {
            counts.n_ins += 1;
        }
        examples.push(example);
    }
    Ok(TrainingSet { examples, counts })
}

#[derive(Serialize, Deserialize)]
struct FlatExample {
    id: String,
    turns: Vec<crate::corpus::Utterance>,
    label: Option<crate::corpus::Label>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    provenance: Option<crate::generator::Provenance>,
}

impl From<&TrainExample> for FlatExample {
    fn from(e: &TrainExample) -> Self {
        FlatExample {
            id: e.dialogue.id.clone(),
            turns: e.dialogue.turns.clone(),
            label: e.dialogue.label.clone(),
            provenance: e.provenance.clone(),
        }
    }
}

impl FlatExample {
    fn into_example(self, path: &std::path::Path, line: usize) -> Result<TrainExample> {
        let dialogue = Dialogue {
            id: self.id,
            turns: self.turns,
            label: self.label,
        }
        .validated()
        .map_err(|reason| Error::MalformedRecord {
            path: path.display().to_string(),
            line,
            reason,
        })?;
        Ok(TrainExample {
            dialogue,
            provenance: self.provenance,
        })
    }
}
