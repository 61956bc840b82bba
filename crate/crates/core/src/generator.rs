//! Candidate generation: swap one user utterance of a seed dialogue with a
//! matched source utterance. System turns are never touched.

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, Dialogue, Label};
use crate::error::{Error, Result};
use crate::util::{derive_seed, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapStrategy {
    /// Swap a uniformly chosen user turn (the default).
    RandomUserTurn,
    /// Swap only the last user turn (ablation).
    LastUserTurn,
}

impl std::fmt::Display for SwapStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SwapStrategy::RandomUserTurn => write!(f, "random_user_turn"),
            SwapStrategy::LastUserTurn => write!(f, "last_user_turn"),
        }
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_id: String,
    pub source_utterance_id: String,
    pub swapped_turn_index: usize,
    pub strategy: SwapStrategy,
}

/// A pseudo-labeled OOS dialogue: a seed with one user turn replaced.
/// Serializes flat, as a dialogue record plus `provenance` (and `elected`
/// once an election ran).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CandidateRecord", from = "CandidateRecord")]
pub struct Candidate {
    pub dialogue: Dialogue,
    pub provenance: Provenance,
    pub elected: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct CandidateRecord {
    id: String,
    turns: Vec<crate::corpus::Utterance>,
    label: Option<Label>,
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    elected: Option<bool>,
}

impl From<Candidate> for CandidateRecord {
    fn from(c: Candidate) -> Self {
        CandidateRecord {
            id: c.dialogue.id,
            turns: c.dialogue.turns,
            label: c.dialogue.label,
            provenance: c.provenance,
            elected: c.elected,
        }
    }
}

impl From<CandidateRecord> for Candidate {
    fn from(r: CandidateRecord) -> Self {
        Candidate {
            dialogue: Dialogue {
                id: r.id,
                turns: r.turns,
                label: r.label,
            },
            provenance: r.provenance,
            elected: r.elected,
        }
    }
}

/// Build one candidate from a (seed, match) pair. The swapped turn index is
/// uniform over user turns and deterministic for a fixed
/// `(rng_seed, seed id, source utterance id)`.
pub fn generate(
    seed: &Dialogue,
    source_utterance_id: &str,
    match_text: &str,
    strategy: SwapStrategy,
    rng_seed: u64,
) -> Result<Candidate> {
    let text = normalize_text(match_text);
    if text.is_empty() {
        return Err(Error::EmptyMatch);
    }
    let user_turns = seed.user_turn_indices();
    if user_turns.is_empty() {
        return Err(Error::NoUserTurn(seed.id.clone()));
    }
    let swapped_turn_index = match strategy {
        SwapStrategy::LastUserTurn => *user_turns.last().unwrap(),
        SwapStrategy::RandomUserTurn => {
            let mut rng = SplitMix64::new(derive_seed(
                rng_seed,
                &["swap-turn", &seed.id, source_utterance_id],
            ));
            user_turns[rng.next_below(user_turns.len() as u64) as usize]
        }
    };
    let mut dialogue = seed.clone();
    dialogue.id = format!("pseudo::{}::{}", seed.id, source_utterance_id);
    dialogue.turns[swapped_turn_index].text = text;
    dialogue.label = Some(Label::Oos);
    Ok(Candidate {
        dialogue,
        provenance: Provenance {
            seed_id: seed.id.clone(),
            source_utterance_id: source_utterance_id.to_string(),
            swapped_turn_index,
            strategy,
        },
        elected: None,
    })
}

fn turn_signature(dialogue: &Dialogue) -> Vec<(bool, &str)> {
    dialogue
        .turns
        .iter()
        .map(|t| (t.speaker == crate::corpus::Speaker::User, t.text.as_str()))
        .collect()
}

/// Drop candidates whose full turn-text sequence repeats an earlier candidate
/// or echoes a seed example. Order is preserved.
pub fn dedupe(candidates: Vec<Candidate>, seeds: &[Dialogue]) -> Vec<Candidate> {
    let seed_signatures: std::collections::BTreeSet<Vec<(bool, String)>> = seeds
        .iter()
        .map(|d| {
            turn_signature(d)
                .into_iter()
                .map(|(u, t)| (u, t.to_string()))
                .collect()
        })
        .collect();
    let mut seen = seed_signatures;
    let mut out = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let signature: Vec<(bool, String)> = turn_signature(&candidate.dialogue)
            .into_iter()
            .map(|(u, t)| (u, t.to_string()))
            .collect();
        if seen.insert(signature) {
            out.push(candidate);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Speaker, Utterance};

    fn turn(speaker: Speaker, text: &str) -> Utterance {
        Utterance {
            speaker,
            text: text.into(),
        }
    }

    fn seed(id: &str, turns: Vec<Utterance>) -> Dialogue {
        Dialogue {
            id: id.into(),
            turns,
            label: Some(Label::Oos),
        }
    }

    #[test]
    fn single_turn_swap_yields_the_match_text() {
        let s = seed("s1", vec![turn(Speaker::User, "hi")]);
        let c = generate(&s, "src#0", "will it rain", SwapStrategy::RandomUserTurn, 0).unwrap();
        assert_eq!(c.dialogue.turns.len(), 1);
        assert_eq!(c.dialogue.turns[0].text, "will it rain");
        assert_eq!(c.provenance.swapped_turn_index, 0);
        assert!(c.dialogue.is_oos());
    }

    #[test]
    fn last_user_strategy_swaps_final_user_turn_only() {
        let s = seed(
            "s1",
            vec![
                turn(Speaker::System, "hello"),
                turn(Speaker::User, "first"),
                turn(Speaker::User, "second"),
            ],
        );
        let c = generate(&s, "src#0", "match text", SwapStrategy::LastUserTurn, 0).unwrap();
        assert_eq!(c.provenance.swapped_turn_index, 2);
        assert_eq!(c.dialogue.turns[1].text, "first");
        assert_eq!(c.dialogue.turns[2].text, "match text");
        assert_eq!(c.dialogue.turns[0].text, "hello");
    }

    #[test]
    fn system_only_seed_errors() {
        let s = Dialogue {
            id: "s1".into(),
            turns: vec![turn(Speaker::System, "hello")],
            label: Some(Label::Oos),
        };
        assert!(matches!(
            generate(&s, "src#0", "text", SwapStrategy::RandomUserTurn, 0),
            Err(Error::NoUserTurn(_))
        ));
    }

    #[test]
    fn empty_match_errors() {
        let s = seed("s1", vec![turn(Speaker::User, "hi")]);
        assert!(matches!(
            generate(&s, "src#0", "   ", SwapStrategy::RandomUserTurn, 0),
            Err(Error::EmptyMatch)
        ));
    }

    #[test]
    fn swap_is_deterministic_per_pair_and_uniform_over_user_turns() {
        let s = seed(
            "s1",
            vec![
                turn(Speaker::System, "sys"),
                turn(Speaker::User, "u one"),
                turn(Speaker::System, "sys"),
                turn(Speaker::User, "u two"),
                turn(Speaker::User, "u three"),
            ],
        );
        let a = generate(&s, "src#0", "match", SwapStrategy::RandomUserTurn, 5).unwrap();
        let b = generate(&s, "src#0", "match", SwapStrategy::RandomUserTurn, 5).unwrap();
        assert_eq!(a, b);
        // Different source ids spread across user turns; system turns never hit.
        let mut hit = std::collections::BTreeSet::new();
        for i in 0..200 {
            let c = generate(&s, &format!("src#{i}"), "match", SwapStrategy::RandomUserTurn, 5)
                .unwrap();
            assert!(s.user_turn_indices().contains(&c.provenance.swapped_turn_index));
            assert_eq!(c.dialogue.turns[0].text, "sys");
            assert_eq!(c.dialogue.turns[2].text, "sys");
            hit.insert(c.provenance.swapped_turn_index);
        }
        assert_eq!(hit.len(), 3);
    }

    #[test]
    fn exactly_one_turn_differs_from_seed() {
        let s = seed(
            "s1",
            vec![
                turn(Speaker::System, "sys says"),
                turn(Speaker::User, "user one"),
                turn(Speaker::User, "user two"),
            ],
        );
        let c = generate(&s, "src#9", "swapped in", SwapStrategy::RandomUserTurn, 3).unwrap();
        let diffs: Vec<usize> = s
            .turns
            .iter()
            .zip(&c.dialogue.turns)
            .enumerate()
            .filter(|(_, (a, b))| a.text != b.text)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(diffs, vec![c.provenance.swapped_turn_index]);
        assert_eq!(
            c.dialogue.turns[c.provenance.swapped_turn_index].text,
            "swapped in"
        );
    }

    #[test]
    fn dedupe_removes_repeats_and_seed_echoes() {
        let s = seed("s1", vec![turn(Speaker::User, "hi there")]);
        let c1 = generate(&s, "a#0", "dup text", SwapStrategy::RandomUserTurn, 0).unwrap();
        let c2 = generate(&s, "b#0", "dup text", SwapStrategy::RandomUserTurn, 0).unwrap();
        let c3 = generate(&s, "c#0", "hi there", SwapStrategy::RandomUserTurn, 0).unwrap();
        let c4 = generate(&s, "d#0", "fresh text", SwapStrategy::RandomUserTurn, 0).unwrap();
        let kept = dedupe(vec![c1.clone(), c2, c3, c4.clone()], &[s]);
        assert_eq!(kept, vec![c1, c4]);
    }

    #[test]
    fn dedupe_keeps_distinct_inputs_unchanged() {
        let s = seed("s1", vec![turn(Speaker::User, "hi")]);
        let cs: Vec<Candidate> = (0..4)
            .map(|i| {
                generate(&s, &format!("x#{i}"), &format!("text {i}"), SwapStrategy::RandomUserTurn, 0)
                    .unwrap()
            })
            .collect();
        assert_eq!(dedupe(cs.clone(), &[]), cs);
    }
}
