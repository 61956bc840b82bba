//! Fixed-dimension utterance vectors under four interchangeable backends:
//! TF-IDF, averaged pretrained word vectors, precomputed external vectors,
//! and deterministic random vectors.
//!
//! All backends map equal inputs to bit-identical outputs given fixed fitted
//! state. Degenerate inputs (all tokens out of vocabulary) embed to the zero
//! vector; the matcher treats a zero vector as maximally distant.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, Dialogue};
use crate::error::{Error, Result};
use crate::util::{fnv1a, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendTag {
    Tfidf,
    WordvecAvg,
    External,
    Random,
}

impl std::fmt::Display for BackendTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BackendTag::Tfidf => "tfidf",
            BackendTag::WordvecAvg => "wordvec_avg",
            BackendTag::External => "external",
            BackendTag::Random => "random",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub backend: BackendTag,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// True when every component is zero (an all-OOV degenerate embedding).
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Whitespace tokenization over normalized text.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize_text(text)
        .split_whitespace()
        .map(|s| s.to_string())
        .collect()
}

/// Fitted TF-IDF vocabulary: the `max_features` most document-frequent
/// tokens, indexed contiguously in token-sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub index: BTreeMap<String, usize>,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
}

impl Vocabulary {
    pub fn dim(&self) -> usize {
        self.index.len()
    }

    /// Smoothed inverse document frequency: `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self, token_index: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[token_index] as f64)).ln() + 1.0
    }
}

/// Fit a vocabulary of at most `max_features` tokens, keeping the most
/// document-frequent ones with ties broken lexicographically.
pub fn fit_tfidf<S: AsRef<str>>(corpus: &[S], max_features: usize) -> Result<Vocabulary> {
    if corpus.is_empty() || max_features == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let mut seen = BTreeSet::new();
        for token in tokenize(doc.as_ref()) {
            if seen.insert(token.clone()) {
                *df.entry(token).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = df.into_iter().collect();
    // Most frequent first; the BTreeMap order already breaks ties by token.
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_features);
    ranked.sort_by(|a, b| a.0.cmp(&b.0));

    let mut index = BTreeMap::new();
    let mut doc_freq = Vec::with_capacity(ranked.len());
    for (i, (token, freq)) in ranked.into_iter().enumerate() {
        index.insert(token, i);
        doc_freq.push(freq);
    }
    Ok(Vocabulary {
        index,
        doc_freq,
        n_docs: corpus.len(),
    })
}

/// Term-count times IDF per vocabulary slot. Out-of-vocabulary tokens
/// contribute nothing; an all-OOV text yields the zero vector.
pub fn embed_tfidf(text: &str, vocab: &Vocabulary) -> EmbeddingVector {
    let mut values = vec![0.0; vocab.dim()];
    for token in tokenize(text) {
        if let Some(&i) = vocab.index.get(&token) {
            values[i] += vocab.idf(i);
        }
    }
    EmbeddingVector {
        values,
        backend: BackendTag::Tfidf,
    }
}

/// Pretrained word vectors in the standard text layout:
/// `token v1 v2 ... v_dim` per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordVectorTable {
    pub vectors: BTreeMap<String, Vec<f64>>,
    pub dim: usize,
}

impl WordVectorTable {
    pub fn load(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = BufReader::new(file);
        let mut vectors = BTreeMap::new();
        let mut dim = 0usize;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap().to_lowercase();
            let values: std::result::Result<Vec<f64>, _> =
                parts.map(|p| p.parse::<f64>()).collect();
            let values = values.map_err(|e| Error::MalformedRecord {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: format!("bad vector component: {e}"),
            })?;
            if values.is_empty() {
                return Err(Error::MalformedRecord {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: "token with no vector components".into(),
                });
            }
            if dim == 0 {
                dim = values.len();
            } else if values.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: values.len(),
                });
            }
            vectors.insert(token, values);
        }
        if vectors.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(WordVectorTable { vectors, dim })
    }
}

/// Unweighted mean of the vectors of in-table tokens; all-OOV yields zero.
pub fn embed_wordvec(text: &str, table: &WordVectorTable) -> EmbeddingVector {
    let mut values = vec![0.0; table.dim];
    let mut hits = 0usize;
    for token in tokenize(text) {
        if let Some(v) = table.vectors.get(&token) {
            for (acc, x) in values.iter_mut().zip(v) {
                *acc += x;
            }
            hits += 1;
        }
    }
    if hits > 0 {
        for v in &mut values {
            *v /= hits as f64;
        }
    }
    EmbeddingVector {
        values,
        backend: BackendTag::WordvecAvg,
    }
}

/// Precomputed vectors keyed by utterance id, loaded from JSON lines with a
/// `{"dim": <int>}` header. Utterance keys are `<dialogue-id>#<turn-index>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalStore {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct ExternalHeader {
    dim: usize,
}

#[derive(Deserialize)]
struct ExternalRecord {
    id: String,
    vector: Vec<f64>,
}

impl ExternalStore {
    pub fn load(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((lineno, line)) => {
                    let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str::<ExternalHeader>(&line).map_err(|e| {
                        Error::MalformedRecord {
                            path: path.display().to_string(),
                            line: lineno + 1,
                            reason: format!("expected {{\"dim\": <int>}} header: {e}"),
                        }
                    })?;
                }
                None => return Err(Error::EmptySplit),
            }
        };
        let mut vectors = BTreeMap::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ExternalRecord =
                serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    reason: e.to_string(),
                })?;
            if record.vector.len() != header.dim {
                return Err(Error::DimMismatch {
                    expected: header.dim,
                    got: record.vector.len(),
                });
            }
            if record.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteScore(record.id));
            }
            vectors.insert(record.id, record.vector);
        }
        Ok(ExternalStore {
            dim: header.dim,
            vectors,
        })
    }

    pub fn get(&self, id: &str) -> Result<EmbeddingVector> {
        let values = self
            .vectors
            .get(id)
            .ok_or_else(|| Error::MissingId(id.to_string()))?
            .clone();
        Ok(EmbeddingVector {
            values,
            backend: BackendTag::External,
        })
    }
}

/// Deterministic random embedding: a standard-normal vector seeded by a hash
/// of `(text, rng_seed)`. Identical inputs map to identical vectors, so
/// nearest-neighbor order under this backend is random but reproducible.
pub fn embed_random(text: &str, rng_seed: u64, dim: usize) -> EmbeddingVector {
    let normalized = normalize_text(text);
    let mut rng = SplitMix64::new(fnv1a(normalized.as_bytes()) ^ rng_seed.rotate_left(17));
    let values = (0..dim).map(|_| rng.next_gaussian()).collect();
    EmbeddingVector {
        values,
        backend: BackendTag::Random,
    }
}

/// A fitted backend: interchangeable behind `embed_utterance`.
#[derive(Debug, Clone)]
pub enum EmbeddingBackend {
    Tfidf(Vocabulary),
    WordvecAvg(WordVectorTable),
    External(ExternalStore),
    Random { dim: usize, rng_seed: u64 },
}

impl EmbeddingBackend {
    pub fn tag(&self) -> BackendTag {
        match self {
            EmbeddingBackend::Tfidf(_) => BackendTag::Tfidf,
            EmbeddingBackend::WordvecAvg(_) => BackendTag::WordvecAvg,
            EmbeddingBackend::External(_) => BackendTag::External,
            EmbeddingBackend::Random { .. } => BackendTag::Random,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingBackend::Tfidf(v) => v.dim(),
            EmbeddingBackend::WordvecAvg(t) => t.dim,
            EmbeddingBackend::External(s) => s.dim,
            EmbeddingBackend::Random { dim, .. } => *dim,
        }
    }

    /// Embed one utterance. `utterance_key` addresses the external store;
    /// the other backends embed the text.
    pub fn embed_utterance(&self, utterance_key: &str, text: &str) -> Result<EmbeddingVector> {
        match self {
            EmbeddingBackend::Tfidf(vocab) => Ok(embed_tfidf(text, vocab)),
            EmbeddingBackend::WordvecAvg(table) => Ok(embed_wordvec(text, table)),
            EmbeddingBackend::External(store) => store.get(utterance_key),
            EmbeddingBackend::Random { dim, rng_seed } => Ok(embed_random(text, *rng_seed, *dim)),
        }
    }
}

/// How a whole dialogue becomes one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// Embed only the final user utterance.
    FinalUser,
    /// Concatenate (mean of all turn embeddings, final-user embedding),
    /// doubling the dimension.
    ContextMeanPlusFinal,
}

impl EmbedMode {
    pub fn dim(&self, base: usize) -> usize {
        match self {
            EmbedMode::FinalUser => base,
            EmbedMode::ContextMeanPlusFinal => 2 * base,
        }
    }
}

/// Embed a dialogue under the given mode. Errors with `NoUserTurn` when the
/// dialogue has no user utterance.
pub fn embed_dialogue(
    backend: &EmbeddingBackend,
    dialogue: &Dialogue,
    mode: EmbedMode,
) -> Result<EmbeddingVector> {
    let final_idx = dialogue
        .final_user_index()
        .ok_or_else(|| Error::NoUserTurn(dialogue.id.clone()))?;
    let final_vec = backend.embed_utterance(
        &dialogue.turn_key(final_idx),
        &dialogue.turns[final_idx].text,
    )?;
    match mode {
        EmbedMode::FinalUser => Ok(final_vec),
        EmbedMode::ContextMeanPlusFinal => {
            let mut mean = vec![0.0; backend.dim()];
            for (i, turn) in dialogue.turns.iter().enumerate() {
                let v = backend.embed_utterance(&dialogue.turn_key(i), &turn.text)?;
                for (acc, x) in mean.iter_mut().zip(&v.values) {
                    *acc += x;
                }
            }
            let n = dialogue.turns.len() as f64;
            for v in &mut mean {
                *v /= n;
            }
            mean.extend_from_slice(&final_vec.values);
            Ok(EmbeddingVector {
                values: mean,
                backend: final_vec.backend,
            })
        }
    }
}

/// Feature policy a trained model records: which backend family and dialogue
/// mode produced its inputs, and whether vectors were L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub backend: BackendTag,
    pub mode: EmbedMode,
    #[serde(default)]
    pub normalize: bool,
}

impl FeatureConfig {
    /// Dialogue feature vector under this policy.
    pub fn features(&self, backend: &EmbeddingBackend, dialogue: &Dialogue) -> Result<Vec<f64>> {
        if backend.tag() != self.backend {
            return Err(Error::InvalidConfig(format!(
                "model expects {} features but backend is {}",
                self.backend,
                backend.tag()
            )));
        }
        let mut v = embed_dialogue(backend, dialogue, self.mode)?.values;
        if self.normalize {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in &mut v {
                    *x /= norm;
                }
            }
        }
        Ok(v)
    }
}
