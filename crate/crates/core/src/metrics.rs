//! Threshold-free detection metrics over (score, label) pairs: AUROC, AUPR
//! (average precision), and FPR at a fixed OOS recall. The positive class is
//! OOS throughout and higher scores mean more OOS.
//!
//! Tied scores are always processed as one threshold group; there is no
//! stochastic tie-breaking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: String,
    pub score: f64,
    pub is_oos: bool,
}

/// All four figures for one scored test set. Field names are fixed for
/// downstream tooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_95: f64,
    pub fpr_at_90: f64,
    pub n_ins: usize,
    pub n_oos: usize,
    pub run: String,
}

fn validate(scored: &[ScoredExample]) -> Result<(usize, usize)> {
    for s in scored {
        if !s.score.is_finite() {
            return Err(Error::NonFiniteScore(s.id.clone()));
        }
    }
    let n_oos = scored.iter().filter(|s| s.is_oos).count();
    let n_ins = scored.len() - n_oos;
    if n_oos == 0 || n_ins == 0 {
        return Err(Error::SingleClassScores);
    }
    Ok((n_ins, n_oos))
}

/// Descending threshold groups: for each distinct score, the number of OOS
/// and INS examples carrying exactly that score.
fn score_groups(scored: &[ScoredExample]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<(f64, bool)> = scored.iter().map(|s| (s.score, s.is_oos)).collect();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (score, is_oos) in sorted {
        match groups.last_mut() {
            Some((s, oos, ins)) if *s == score => {
                if is_oos {
                    *oos += 1;
                } else {
                    *ins += 1;
                }
            }
            _ => groups.push((score, usize::from(is_oos), usize::from(!is_oos))),
        }
    }
    groups
}

/// Probability that a random OOS example outscores a random INS example,
/// with half credit for ties. Computed from rank sums; contractually equal
/// to exhaustive pair counting.
pub fn auroc(scored: &[ScoredExample]) -> Result<f64> {
    let (n_ins, n_oos) = validate(scored)?;
    let groups = score_groups(scored);
    // Walk groups from the top. Each OOS in a group beats every INS ranked
    // strictly below and half-ties with INS in its own group.
    let mut ins_below = n_ins;
    let mut wins = 0.0;
    for (_, oos, ins) in groups {
        ins_below -= ins;
        wins += oos as f64 * (ins_below as f64 + 0.5 * ins as f64);
    }
    Ok(wins / (n_oos as f64 * n_ins as f64))
}

/// Average precision: the step integral of the precision-recall curve over
/// descending-score threshold groups.
pub fn aupr(scored: &[ScoredExample]) -> Result<f64> {
    let (_, n_oos) = validate(scored)?;
    let groups = score_groups(scored);
    let mut tp = 0usize;
    let mut total = 0usize;
    let mut ap = 0.0;
    for (_, oos, ins) in groups {
        let prev_recall = tp as f64 / n_oos as f64;
        tp += oos;
        total += oos + ins;
        let recall = tp as f64 / n_oos as f64;
        let precision = tp as f64 / total as f64;
        ap += (recall - prev_recall) * precision;
    }
    Ok(ap)
}

/// False positive rate at the largest threshold catching at least `n` of the
/// OOS examples. Tied scores enter together.
pub fn fpr_at_recall(scored: &[ScoredExample], n: f64) -> Result<f64> {
    if !(n > 0.0 && n <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "recall target must be in (0, 1], got {n}"
        )));
    }
    let (n_ins, n_oos) = validate(scored)?;
    let groups = score_groups(scored);
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (_, oos, ins) in groups {
        tp += oos;
        fp += ins;
        if tp as f64 / n_oos as f64 >= n {
            return Ok(fp as f64 / n_ins as f64);
        }
    }
    // Recall reaches 1.0 on the last group, so this is unreachable for valid n.
    Ok(1.0)
}

/// Assemble the full report for one scored test set. `run` is the config or
/// artifact digest tying the report to its producing run.
pub fn evaluate(scored: &[ScoredExample], run: &str) -> Result<EvalReport> {
    let (n_ins, n_oos) = validate(scored)?;
    Ok(EvalReport {
        auroc: auroc(scored)?,
        aupr: aupr(scored)?,
        fpr_at_95: fpr_at_recall(scored, 0.95)?,
        fpr_at_90: fpr_at_recall(scored, 0.90)?,
        n_ins,
        n_oos,
        run: run.to_string(),
    })
}

/// Brute-force oracles: direct transcriptions of the metric definitions,
/// kept independent of the production implementations above so tests can
/// compare the two routes. Exposed for the acceptance suite.
pub mod oracle {
    use super::ScoredExample;

    /// AUROC by full pair enumeration with half credit for ties.
    pub fn auroc(scored: &[ScoredExample]) -> f64 {
        let oos: Vec<f64> = scored.iter().filter(|s| s.is_oos).map(|s| s.score).collect();
        let ins: Vec<f64> = scored.iter().filter(|s| !s.is_oos).map(|s| s.score).collect();
        let mut wins = 0.0;
        for &o in &oos {
            for &i in &ins {
                if o > i {
                    wins += 1.0;
                } else if o == i {
                    wins += 0.5;
                }
            }
        }
        wins / (oos.len() as f64 * ins.len() as f64)
    }

    /// Precision and recall at one threshold, counting score >= t as a
    /// positive prediction, by full scan.
    fn precision_recall_at(scored: &[ScoredExample], t: f64) -> (f64, f64) {
        let tp = scored.iter().filter(|s| s.is_oos && s.score >= t).count();
        let fp = scored.iter().filter(|s| !s.is_oos && s.score >= t).count();
        let n_oos = scored.iter().filter(|s| s.is_oos).count();
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        (precision, tp as f64 / n_oos as f64)
    }

    /// Average precision over the exhaustive grid of distinct thresholds.
    pub fn aupr(scored: &[ScoredExample]) -> f64 {
        let mut thresholds: Vec<f64> = scored.iter().map(|s| s.score).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in thresholds {
            let (precision, recall) = precision_recall_at(scored, t);
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    /// FPR at the largest threshold with recall >= n, over the exhaustive
    /// threshold grid.
    pub fn fpr_at_recall(scored: &[ScoredExample], n: f64) -> f64 {
        let mut thresholds: Vec<f64> = scored.iter().map(|s| s.score).collect();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let n_ins = scored.iter().filter(|s| !s.is_oos).count();
        for t in thresholds {
            let (_, recall) = precision_recall_at(scored, t);
            if recall >= n {
                let fp = scored.iter().filter(|s| !s.is_oos && s.score >= t).count();
                return fp as f64 / n_ins as f64;
            }
        }
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::SplitMix64;

    fn scored(oos: &[f64], ins: &[f64]) -> Vec<ScoredExample> {
        let mut out = Vec::new();
        for (i, &s) in oos.iter().enumerate() {
            out.push(ScoredExample {
                id: format!("o{i}"),
                score: s,
                is_oos: true,
            });
        }
        for (i, &s) in ins.iter().enumerate() {
            out.push(ScoredExample {
                id: format!("i{i}"),
                score: s,
                is_oos: false,
            });
        }
        out
    }

    #[test]
    fn auroc_perfect_separation() {
        assert_eq!(auroc(&scored(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
    }

    #[test]
    fn auroc_all_ties_is_half() {
        assert_eq!(auroc(&scored(&[0.5, 0.5], &[0.5, 0.5, 0.5])).unwrap(), 0.5);
    }

    #[test]
    fn auroc_mixed_matches_pair_count() {
        // 4 pairs: 0.8 beats both, 0.3 beats 0.1 only -> 3/4.
        let s = scored(&[0.8, 0.3], &[0.5, 0.1]);
        let got = auroc(&s).unwrap();
        assert!((got - 0.75).abs() < 1e-15);
        assert!((got - oracle::auroc(&s)).abs() < 1e-15);
    }

    #[test]
    fn aupr_perfect_separation() {
        assert_eq!(aupr(&scored(&[0.9, 0.8], &[0.1, 0.2])).unwrap(), 1.0);
    }

    #[test]
    fn aupr_hand_trace() {
        // Descending: OOS(0.9), INS(0.5), OOS(0.2):
        // recall steps 0.5 at precision 1, then 1.0 at precision 2/3.
        let s = scored(&[0.9, 0.2], &[0.5]);
        let got = aupr(&s).unwrap();
        let expected = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.8333).abs() < 1e-4);
        assert!((got - oracle::aupr(&s)).abs() < 1e-15);
    }

    #[test]
    fn aupr_single_positive_ranked_last() {
        let s = scored(&[0.1], &[0.9, 0.8, 0.7, 0.6]);
        assert!((aupr(&s).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn fpr_perfect_separation_is_zero() {
        assert_eq!(
            fpr_at_recall(&scored(&[0.9, 0.8], &[0.1, 0.2]), 0.95).unwrap(),
            0.0
        );
    }

    #[test]
    fn fpr_hand_traces() {
        // Catching both OOS requires threshold 0.2, which also admits INS 0.5
        // and 0.4 -> FPR 2/3.
        let s = scored(&[0.9, 0.2], &[0.5, 0.4, 0.1]);
        let got = fpr_at_recall(&s, 0.95).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-15);
        assert!((got - oracle::fpr_at_recall(&s, 0.95)).abs() < 1e-15);

        let s = scored(&[0.9], &[0.5]);
        assert_eq!(fpr_at_recall(&s, 0.90).unwrap(), 0.0);
    }

    #[test]
    fn fpr_is_non_decreasing_in_recall_target() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..50 {
            let oos: Vec<f64> = (0..4).map(|_| (rng.next_below(6) as f64) / 5.0).collect();
            let ins: Vec<f64> = (0..5).map(|_| (rng.next_below(6) as f64) / 5.0).collect();
            let s = scored(&oos, &ins);
            let mut prev = 0.0;
            for n in [0.25, 0.5, 0.75, 0.9, 1.0] {
                let f = fpr_at_recall(&s, n).unwrap();
                assert!(f + 1e-15 >= prev, "fpr decreased: {prev} -> {f}");
                prev = f;
            }
        }
    }

    #[test]
    fn single_class_errors() {
        let only_oos = scored(&[0.5, 0.4], &[]);
        assert!(matches!(auroc(&only_oos), Err(Error::SingleClassScores)));
        assert!(matches!(aupr(&only_oos), Err(Error::SingleClassScores)));
        assert!(matches!(
            fpr_at_recall(&only_oos, 0.9),
            Err(Error::SingleClassScores)
        ));
    }

    #[test]
    fn evaluate_assembles_report() {
        let s = scored(&[0.9, 0.8], &[0.1, 0.2]);
        let report = evaluate(&s, "digest").unwrap();
        assert_eq!(
            report,
            EvalReport {
                auroc: 1.0,
                aupr: 1.0,
                fpr_at_95: 0.0,
                fpr_at_90: 0.0,
                n_ins: 2,
                n_oos: 2,
                run: "digest".into(),
            }
        );
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }

    #[test]
    fn random_scores_give_auroc_near_half() {
        let mut rng = SplitMix64::new(12);
        let mut examples = Vec::new();
        for i in 0..10_000 {
            examples.push(ScoredExample {
                id: format!("e{i}"),
                score: rng.next_f64(),
                is_oos: rng.next_f64() < 0.3,
            });
        }
        let got = auroc(&examples).unwrap();
        assert!((got - 0.5).abs() < 0.05, "auroc {got}");
    }

    #[test]
    fn metrics_match_oracles_on_random_fixtures_with_ties() {
        let mut rng = SplitMix64::new(31);
        for _ in 0..300 {
            let n = 3 + rng.next_below(10) as usize;
            let mut examples = Vec::new();
            let mut n_oos = 0;
            for i in 0..n {
                // Small discrete score set forces ties.
                let score = (rng.next_below(5) as f64) / 4.0;
                let is_oos = rng.next_f64() < 0.5;
                n_oos += usize::from(is_oos);
                examples.push(ScoredExample {
                    id: format!("e{i}"),
                    score,
                    is_oos,
                });
            }
            if n_oos == 0 || n_oos == n {
                continue;
            }
            assert!((auroc(&examples).unwrap() - oracle::auroc(&examples)).abs() < 1e-12);
            assert!((aupr(&examples).unwrap() - oracle::aupr(&examples)).abs() < 1e-12);
            for target in [0.5, 0.9, 0.95, 1.0] {
                assert!(
                    (fpr_at_recall(&examples, target).unwrap()
                        - oracle::fpr_at_recall(&examples, target))
                    .abs()
                        < 1e-12
                );
            }
        }
    }

    #[test]
    fn auroc_complement_under_negation() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..50 {
            // Tie-free scores: distinct by construction.
            let mut examples = Vec::new();
            for i in 0..8 {
                examples.push(ScoredExample {
                    id: format!("e{i}"),
                    score: i as f64 + rng.next_f64() * 0.5,
                    is_oos: rng.next_f64() < 0.5,
                });
            }
            let n_oos = examples.iter().filter(|e| e.is_oos).count();
            if n_oos == 0 || n_oos == examples.len() {
                continue;
            }
            let direct = auroc(&examples).unwrap();
            let mut negated = examples.clone();
            for e in &mut negated {
                e.score = -e.score;
            }
            let flipped = auroc(&negated).unwrap();
            assert!((direct + flipped - 1.0).abs() < 1e-12);
        }
    }
}
