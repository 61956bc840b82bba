//! Exact nearest-neighbor extraction: for each seed dialogue, the closest
//! source utterances in the shared embedding space by cosine distance.
//!
//! Search is an exhaustive scan with a deterministic tie-break by utterance
//! id; no approximate structure may change results.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Dialogue};
use crate::embedding::{BackendTag, EmbeddingBackend, EmbeddingVector};
use crate::error::{Error, Result};
use crate::util::par_map;

/// Cosine distance `1 - v.w / (|v||w|)` in [0, 2]. A zero vector is defined
/// to be at the maximum distance 2 from everything, so degenerate all-OOV
/// embeddings never rank as near matches.
pub fn cosine_distance(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::DimMismatch {
            expected: v.len(),
            got: w.len(),
        });
    }
    let mut dot = 0.0;
    let mut nv = 0.0;
    let mut nw = 0.0;
    for (a, b) in v.iter().zip(w) {
        dot += a * b;
        nv += a * a;
        nw += b * b;
    }
    if nv == 0.0 || nw == 0.0 {
        return Ok(2.0);
    }
    // sqrt of the product keeps d exactly 0 for identical vectors.
    let d = 1.0 - dot / (nv * nw).sqrt();
    // Rounding can push the value a hair outside [0, 2]; clamp, and fold a
    // possible -0.0 into +0.0 so tie-breaks see one zero (f64::clamp keeps
    // the negative zero).
    #[allow(clippy::manual_clamp)]
    Ok(if d <= 0.0 {
        0.0
    } else if d > 2.0 {
        2.0
    } else {
        d
    })
}

/// One indexed source utterance: its stable key, text (kept for candidate
/// generation), and embedding.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

/// Immutable embedding index over every user utterance of a source dataset.
/// Multi-turn source dialogues contribute each user utterance separately.
#[derive(Debug, Clone)]
pub struct SourceIndex {
    pub entries: Vec<IndexEntry>,
    pub dim: usize,
    pub backend: BackendTag,
}

impl SourceIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn text_of(&self, id: &str) -> Option<&str> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| self.entries[i].text.as_str())
    }
}

/// Embed all source user utterances once. Entries are sorted by id.
pub fn build_index(source: &DatasetSplit, backend: &EmbeddingBackend) -> Result<SourceIndex> {
    let mut items: Vec<(String, String)> = Vec::new();
    for dialogue in source.all() {
        for idx in dialogue.user_turn_indices() {
            items.push((dialogue.turn_key(idx), dialogue.turns[idx].text.clone()));
        }
    }
    if items.is_empty() {
        return Err(Error::EmptySource);
    }
    items.sort_by(|a, b| a.0.cmp(&b.0));
    let vectors = par_map(items.len(), |i| {
        backend.embed_utterance(&items[i].0, &items[i].1)
    });
    let mut entries = Vec::with_capacity(items.len());
    for ((id, text), vector) in items.into_iter().zip(vectors) {
        entries.push(IndexEntry {
            id,
            text,
            vector: vector?,
        });
    }
    Ok(SourceIndex {
        dim: entries[0].vector.dim(),
        backend: backend.tag(),
        entries,
    })
}

/// Nearest source utterances for one seed dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub seed_id: String,
    /// `(source_utterance_id, cosine_distance)`, sorted by ascending
    /// distance with ties broken by ascending id.
    pub matches: Vec<(String, f64)>,
    pub requested: usize,
}

/// Exact k-nearest source utterances to the seed's final user utterance.
/// Returns fewer than `k` only when the index is smaller than `k`.
pub fn nearest(
    seed: &Dialogue,
    index: &SourceIndex,
    k: usize,
    backend: &EmbeddingBackend,
) -> Result<MatchResult> {
    let final_idx = seed
        .final_user_index()
        .ok_or_else(|| Error::NoUserTurn(seed.id.clone()))?;
    let query = backend.embed_utterance(&seed.turn_key(final_idx), &seed.turns[final_idx].text)?;
    if query.dim() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            got: query.dim(),
        });
    }
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(index.len());
    for (i, entry) in index.entries.iter().enumerate() {
        scored.push((cosine_distance(&query.values, &entry.vector.values)?, i));
    }
    // Entries are id-sorted, so comparing positions breaks distance ties by id.
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    scored.truncate(k);
    Ok(MatchResult {
        seed_id: seed.id.clone(),
        matches: scored
            .into_iter()
            .map(|(d, i)| (index.entries[i].id.clone(), d))
            .collect(),
        requested: k,
    })
}

/// Write match results as JSON lines so election re-runs are cheap.
pub fn write_matches(path: &Path, results: &[MatchResult]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn read_matches(path: &Path) -> Result<Vec<MatchResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.display().to_string(),
                line: lineno + 1,
                reason: e.to_string(),
            })?,
        );
    }
    Ok(out)
}
