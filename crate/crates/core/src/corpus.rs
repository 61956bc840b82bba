//! Dialogue data model, JSONL ingestion, splits, seed sampling, and
//! synthetic corpora for desk-scale benchmarks.
//!
//! Records are one JSON object per line:
//! `{"id": "...", "turns": [{"speaker": "system"|"user", "text": "..."}],
//!   "label": {"kind": "ins", "intent": "..."} | {"kind": "oos"} | null}`
//! Source-pool records carry `label: null`. Split files are named
//! `<dataset>.<split>.jsonl`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{derive_seed, SplitMix64};

/// Lowercase and collapse internal whitespace. All stored utterance text is
/// kept in this canonical form so the bag-of-words backends tokenize
/// consistently.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::System => write!(f, "system"),
            Speaker::User => write!(f, "user"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Label {
    Ins { intent: String },
    Oos,
}

/// One conversation: ordered system/user turns plus an optional label.
/// Unlabeled dialogues only appear in source pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Utterance>,
    pub label: Option<Label>,
}

impl Dialogue {
    /// Validate invariants and normalize turn text. Returns the reason string
    /// on violation so ingest can wrap it with file/line context.
    pub fn validated(mut self) -> std::result::Result<Self, String> {
        if self.id.trim().is_empty() {
            return Err("empty dialogue id".into());
        }
        if self.turns.is_empty() {
            return Err("turns list is empty".into());
        }
        for turn in &mut self.turns {
            let text = normalize_text(&turn.text);
            if text.is_empty() {
                return Err(format!("turn with empty text in dialogue {:?}", self.id));
            }
            turn.text = text;
        }
        if !self.turns.iter().any(|t| t.speaker == Speaker::User) {
            return Err(format!("dialogue {:?} has no user turn", self.id));
        }
        if let Some(Label::Ins { intent }) = &self.label {
            if intent.trim().is_empty() {
                return Err(format!("dialogue {:?} has an empty intent", self.id));
            }
        }
        Ok(self)
    }

    pub fn new(id: impl Into<String>, turns: Vec<Utterance>, label: Option<Label>) -> Result<Self> {
        Dialogue {
            id: id.into(),
            turns,
            label,
        }
        .validated()
        .map_err(Error::InvalidSpec)
    }

    pub fn is_oos(&self) -> bool {
        matches!(self.label, Some(Label::Oos))
    }

    pub fn intent(&self) -> Option<&str> {
        match &self.label {
            Some(Label::Ins { intent }) => Some(intent),
            _ => None,
        }
    }

    pub fn user_turn_indices(&self) -> Vec<usize> {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.speaker == Speaker::User)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn final_user_index(&self) -> Option<usize> {
        self.turns.iter().rposition(|t| t.speaker == Speaker::User)
    }

    /// Stable id for one turn of this dialogue, used to key per-utterance
    /// vectors and source-index entries.
    pub fn turn_key(&self, turn_index: usize) -> String {
        format!("{}#{}", self.id, turn_index)
    }
}

/// Which corpus a dataset plays: evaluated target, unlabeled target pool, or
/// external source of augmentation text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Target,
    TargetUnlabeled,
    Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub role: DatasetRole,
    pub train: Vec<Dialogue>,
    pub dev: Vec<Dialogue>,
    pub test: Vec<Dialogue>,
}

impl DatasetSplit {
    pub fn all(&self) -> impl Iterator<Item = &Dialogue> {
        self.train.iter().chain(self.dev.iter()).chain(self.test.iter())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ins_train(&self) -> Vec<&Dialogue> {
        self.train.iter().filter(|d| d.intent().is_some()).collect()
    }

    pub fn oos_train(&self) -> Vec<&Dialogue> {
        self.train.iter().filter(|d| d.is_oos()).collect()
    }

    /// Write the three split files as `<dir>/<name>.<split>.jsonl`. Empty
    /// splits are skipped.
    pub fn save(&self, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for (split, records) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)]
        {
            if records.is_empty() {
                continue;
            }
            let path = dir.join(format!("{name}.{split}.jsonl"));
            write_jsonl(&path, records)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Serialize dialogues one JSON object per line.
pub fn write_jsonl(path: &Path, records: &[Dialogue]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Parse and validate one JSONL file of dialogue records. The whole file is
/// rejected on the first malformed record, with its line number.
pub fn read_records(path: &Path) -> Result<Vec<Dialogue>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Dialogue = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        let dialogue = raw.validated().map_err(|reason| Error::MalformedRecord {
            path: path.display().to_string(),
            line: lineno + 1,
            reason,
        })?;
        records.push(dialogue);
    }
    Ok(records)
}

/// Load a dataset. A path ending in `.jsonl` is read as a single pool (all
/// records land in `train`); otherwise it is treated as a `<dataset>` prefix
/// and `<prefix>.{train,dev,test}.jsonl` are read, each optional but at least
/// one required. Ids must be unique across splits; target records must be
/// labeled; source and unlabeled-pool records must not be.
pub fn ingest(path: &Path, role: DatasetRole) -> Result<DatasetSplit> {
    let (train, dev, test) = if path.extension().is_some_and(|e| e == "jsonl") {
        (read_records(path)?, Vec::new(), Vec::new())
    } else {
        let prefix = path.to_string_lossy().to_string();
        let mut parts: Vec<Vec<Dialogue>> = Vec::new();
        for split in ["train", "dev", "test"] {
            let candidate = PathBuf::from(format!("{prefix}.{split}.jsonl"));
            parts.push(if candidate.exists() {
                read_records(&candidate)?
            } else {
                Vec::new()
            });
        }
        let mut it = parts.into_iter();
        (it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
    };

    let split = DatasetSplit {
        role,
        train,
        dev,
        test,
    };
    if split.is_empty() {
        return Err(Error::EmptySplit);
    }

    let mut seen = BTreeSet::new();
    for dialogue in split.all() {
        if !seen.insert(dialogue.id.clone()) {
            return Err(Error::DuplicateId(dialogue.id.clone()));
        }
        match role {
            DatasetRole::Target => {
                if dialogue.label.is_none() {
                    return Err(Error::MalformedRecord {
                        path: path.display().to_string(),
                        line: 0,
                        reason: format!("target record {:?} has no label", dialogue.id),
                    });
                }
            }
            DatasetRole::Source | DatasetRole::TargetUnlabeled => {
                if dialogue.label.is_some() {
                    return Err(Error::MalformedRecord {
                        path: path.display().to_string(),
                        line: 0,
                        reason: format!(
                            "{role:?} record {:?} carries a label; pools must be unlabeled",
                            dialogue.id
                        ),
                    });
                }
            }
        }
    }
    Ok(split)
}

/// The small annotated OOS sample that anchors augmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSet {
    pub examples: Vec<Dialogue>,
    pub budget: usize,
}

/// Seed budget: `ceil(seed_fraction * ins_train_count)`.
pub fn seed_budget(ins_train_count: usize, seed_fraction: f64) -> usize {
    (seed_fraction * ins_train_count as f64).ceil() as usize
}

/// Uniformly sample `ceil(seed_fraction * ins_train_count)` OOS dialogues
/// without replacement. The pool is sorted by id before index selection, so
/// the result is invariant under the pool's storage order.
pub fn sample_seed(
    pool: &[Dialogue],
    ins_train_count: usize,
    seed_fraction: f64,
    rng_seed: u64,
) -> Result<SeedSet> {
    if !(seed_fraction > 0.0 && seed_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "seed_fraction must be in (0, 1], got {seed_fraction}"
        )));
    }
    if let Some(bad) = pool.iter().find(|d| !d.is_oos()) {
        return Err(Error::InvalidConfig(format!(
            "seed pool dialogue {:?} is not labeled oos",
            bad.id
        )));
    }
    let budget = seed_budget(ins_train_count, seed_fraction);
    if pool.len() < budget {
        return Err(Error::InsufficientPool {
            pool: pool.len(),
            budget,
        });
    }
    let mut sorted: Vec<&Dialogue> = pool.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = SplitMix64::new(derive_seed(rng_seed, &["seed-sample"]));
    let mut picks = rng.sample_indices(sorted.len(), budget);
    picks.sort_unstable();
    let examples = picks.into_iter().map(|i| sorted[i].clone()).collect();
    Ok(SeedSet { examples, budget })
}

/// Parameters for the synthetic benchmark corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_ins: usize,
    pub n_intents: usize,
    pub n_oos: usize,
    /// Fraction of OOS user-turn tokens drawn from the in-scope intent
    /// vocabularies instead of the disjoint OOS vocabulary.
    pub vocab_overlap: f64,
    pub rng_seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n_intents < 2 {
            return Err(Error::InvalidSpec(format!(
                "n_intents must be >= 2, got {}",
                self.n_intents
            )));
        }
        if self.n_ins < self.n_intents {
            return Err(Error::InvalidSpec(format!(
                "n_ins ({}) must be >= n_intents ({})",
                self.n_ins, self.n_intents
            )));
        }
        if !(0.0..=1.0).contains(&self.vocab_overlap) {
            return Err(Error::InvalidSpec(format!(
                "vocab_overlap must be in [0, 1], got {}",
                self.vocab_overlap
            )));
        }
        Ok(())
    }
}

const INTENT_VOCAB_SIZE: usize = 24;
const OOS_VOCAB_SIZE: usize = 300;
const SOURCE_VOCAB_SIZE: usize = 120;
const COMMON_VOCAB_SIZE: usize = 60;
const SYSTEM_VOCAB_SIZE: usize = 12;
const UTTERANCE_LEN: (u64, u64) = (4, 9);
/// Fraction of user-turn tokens drawn from the shared common vocabulary in
/// both classes (function-word stand-ins).
const COMMON_FRACTION: f64 = 0.45;

/// Disjoint pseudo-word vocabularies underlying one synthetic benchmark.
/// Derived deterministically from the spec, so the target corpus and its
/// companion source pool share the same token space.
#[derive(Debug, Clone)]
pub struct SynthVocab {
    pub intent_names: Vec<String>,
    pub intent: Vec<Vec<String>>,
    pub oos: Vec<String>,
    pub source_extra: Vec<String>,
    /// Function-word stand-ins shared by every speaker and class.
    pub common: Vec<String>,
    pub system: Vec<String>,
}

impl SynthVocab {
    pub fn build(spec: &SynthSpec) -> Self {
        let mut rng = SplitMix64::new(derive_seed(spec.rng_seed, &["synth-vocab"]));
        let mut seen = BTreeSet::new();
        let mut draw_word = |rng: &mut SplitMix64| loop {
            let word = pseudo_word(rng);
            if seen.insert(word.clone()) {
                return word;
            }
        };
        let mut draw_vocab = |rng: &mut SplitMix64, n: usize| -> Vec<String> {
            (0..n).map(|_| draw_word(rng)).collect()
        };
        let intent = (0..spec.n_intents)
            .map(|_| draw_vocab(&mut rng, INTENT_VOCAB_SIZE))
            .collect();
        let oos = draw_vocab(&mut rng, OOS_VOCAB_SIZE);
        let source_extra = draw_vocab(&mut rng, SOURCE_VOCAB_SIZE);
        let common = draw_vocab(&mut rng, COMMON_VOCAB_SIZE);
        let system = draw_vocab(&mut rng, SYSTEM_VOCAB_SIZE);
        SynthVocab {
            intent_names: (0..spec.n_intents).map(|i| format!("intent_{i}")).collect(),
            intent,
            oos,
            source_extra,
            common,
            system,
        }
    }
}

fn pseudo_word(rng: &mut SplitMix64) -> String {
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables = 2 + rng.next_below(2);
    let mut word = String::new();
    for _ in 0..syllables {
        word.push_str(ONSETS[rng.next_below(ONSETS.len() as u64) as usize]);
        word.push_str(VOWELS[rng.next_below(VOWELS.len() as u64) as usize]);
    }
    word
}

fn pick<'a>(rng: &mut SplitMix64, words: &'a [String]) -> &'a str {
    &words[rng.next_below(words.len() as u64) as usize]
}

fn utterance_text<F: FnMut(&mut SplitMix64) -> String>(
    rng: &mut SplitMix64,
    mut token: F,
) -> String {
    let len = UTTERANCE_LEN.0 + rng.next_below(UTTERANCE_LEN.1 - UTTERANCE_LEN.0 + 1);
    let mut words = Vec::with_capacity(len as usize);
    for _ in 0..len {
        words.push(token(rng));
    }
    words.join(" ")
}

fn system_turn(rng: &mut SplitMix64, vocab: &SynthVocab) -> Utterance {
    let len = 3 + rng.next_below(3);
    let text = (0..len)
        .map(|_| pick(rng, &vocab.system).to_string())
        .collect::<Vec<_>>()
        .join(" ");
    Utterance {
        speaker: Speaker::System,
        text,
    }
}

/// Build one dialogue: 1-3 user turns, each optionally preceded by a system
/// turn, always ending on a user turn.
fn synth_dialogue<F: FnMut(&mut SplitMix64) -> String>(
    rng: &mut SplitMix64,
    vocab: &SynthVocab,
    id: String,
    label: Option<Label>,
    mut user_token: F,
) -> Dialogue {
    let n_user = match rng.next_below(10) {
        0..=3 => 1,
        4..=7 => 2,
        _ => 3,
    };
    let mut turns = Vec::new();
    for _ in 0..n_user {
        if rng.next_f64() < 0.7 {
            turns.push(system_turn(rng, vocab));
        }
        turns.push(Utterance {
            speaker: Speaker::User,
            text: utterance_text(rng, &mut user_token),
        });
    }
    Dialogue { id, turns, label }
}

fn ins_token(rng: &mut SplitMix64, vocab: &SynthVocab, intent: usize) -> String {
    if rng.next_f64() < COMMON_FRACTION {
        pick(rng, &vocab.common).to_string()
    } else {
        pick(rng, &vocab.intent[intent]).to_string()
    }
}

fn oos_token(rng: &mut SplitMix64, vocab: &SynthVocab, overlap: f64) -> String {
    if rng.next_f64() < COMMON_FRACTION {
        pick(rng, &vocab.common).to_string()
    } else if rng.next_f64() < overlap {
        let intent = rng.next_below(vocab.intent.len() as u64) as usize;
        pick(rng, &vocab.intent[intent]).to_string()
    } else {
        pick(rng, &vocab.oos).to_string()
    }
}

/// Split one stratum 80/10/10 by position, keeping order within each part.
fn split_80_10_10(records: Vec<Dialogue>) -> (Vec<Dialogue>, Vec<Dialogue>, Vec<Dialogue>) {
    let n = records.len();
    let train_end = n * 8 / 10;
    let dev_end = n * 9 / 10;
    let mut train = records;
    let test = train.split_off(dev_end);
    let dev = train.split_off(train_end);
    (train, dev, test)
}

/// Generate a labeled synthetic target corpus: `n_ins` in-scope dialogues
/// spread round-robin over `n_intents` intents plus `n_oos` out-of-scope
/// dialogues, split 80/10/10 per stratum. Deterministic for a fixed seed.
pub fn synth_corpus(spec: &SynthSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let vocab = SynthVocab::build(spec);
    let mut rng = SplitMix64::new(derive_seed(spec.rng_seed, &["synth-corpus"]));

    let mut ins = Vec::with_capacity(spec.n_ins);
    for i in 0..spec.n_ins {
        let intent = i % spec.n_intents;
        let label = Label::Ins {
            intent: vocab.intent_names[intent].clone(),
        };
        ins.push(synth_dialogue(
            &mut rng,
            &vocab,
            format!("ins-{i:05}"),
            Some(label),
            |rng| ins_token(rng, &vocab, intent),
        ));
    }
    let mut oos = Vec::with_capacity(spec.n_oos);
    for i in 0..spec.n_oos {
        oos.push(synth_dialogue(
            &mut rng,
            &vocab,
            format!("oos-{i:05}"),
            Some(Label::Oos),
            |rng| oos_token(rng, &vocab, spec.vocab_overlap),
        ));
    }

    let (mut train, mut dev, mut test) = split_80_10_10(ins);
    let (otrain, odev, otest) = split_80_10_10(oos);
    train.extend(otrain);
    dev.extend(odev);
    test.extend(otest);
    Ok(DatasetSplit {
        role: DatasetRole::Target,
        train,
        dev,
        test,
    })
}

/// Generate a companion source pool for a synthetic benchmark: single-turn
/// unlabeled utterances sharing the target's token space. A
/// `ins_like_fraction` of them are borderline in-scope-flavored utterances
/// (contamination the election is expected to filter); the rest mix the OOS
/// vocabulary with source-only words.
pub fn synth_source(
    spec: &SynthSpec,
    n_utterances: usize,
    ins_like_fraction: f64,
) -> Result<DatasetSplit> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&ins_like_fraction) {
        return Err(Error::InvalidSpec(format!(
            "ins_like_fraction must be in [0, 1], got {ins_like_fraction}"
        )));
    }
    let vocab = SynthVocab::build(spec);
    let mut rng = SplitMix64::new(derive_seed(spec.rng_seed, &["synth-source"]));
    let mut train = Vec::with_capacity(n_utterances);
    for i in 0..n_utterances {
        let ins_like = rng.next_f64() < ins_like_fraction;
        let text = if ins_like {
            // Borderline contamination: in-scope-flavored but with enough
            // OOS vocabulary to surface among a seed's nearest matches.
            let intent = rng.next_below(spec.n_intents as u64) as usize;
            utterance_text(&mut rng, |rng| match rng.next_below(20) {
                0..=9 => pick(rng, &vocab.intent[intent]).to_string(),
                10..=13 => pick(rng, &vocab.oos).to_string(),
                14..=17 => pick(rng, &vocab.common).to_string(),
                _ => pick(rng, &vocab.source_extra).to_string(),
            })
        } else {
            utterance_text(&mut rng, |rng| match rng.next_below(20) {
                0..=10 => pick(rng, &vocab.oos).to_string(),
                11..=15 => pick(rng, &vocab.source_extra).to_string(),
                _ => pick(rng, &vocab.common).to_string(),
            })
        };
        train.push(Dialogue {
            id: format!("src-{i:05}"),
            turns: vec![Utterance {
                speaker: Speaker::User,
                text,
            }],
            label: None,
        });
    }
    Ok(DatasetSplit {
        role: DatasetRole::Source,
        train,
        dev: Vec::new(),
        test: Vec::new(),
    })
}
