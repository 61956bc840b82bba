//! The direct OOS detector: a weighted binary logistic regression over
//! dialogue features, trained on the aggregated set of in-scope examples,
//! seed OOS, and elected pseudo-OOS. The same trainer consumes all true OOS
//! labels for the Oracle upper bound.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, Dialogue};
use crate::embedding::{EmbeddingBackend, FeatureConfig};
use crate::error::{Error, Result};
use crate::generator::Provenance;
use crate::intent_model::{TrainConfig, TrainStats};
use crate::persist::{load_json, save_json, ArtifactMeta};
use crate::util::{derive_seed, SplitMix64};

/// One record of the aggregated training set. Pseudo-labeled examples carry
/// their provenance; genuine records carry none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainExample {
    pub dialogue: Dialogue,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub provenance: Option<Provenance>,
}

impl TrainExample {
    pub fn is_pseudo(&self) -> bool {
        self.provenance.is_some()
    }
}

/// Trained binary detector: `P(OOS | x) = sigmoid(w . phi(x) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDetector {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_config: FeatureConfig,
    /// Weight multiplier applied to OOS examples during training.
    pub class_weighting: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl BinaryDetector {
    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    pub fn logit(&self, features: &[f64]) -> Result<f64> {
        self.check_dim(features)?;
        Ok(self
            .weights
            .iter()
            .zip(features)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias)
    }

    /// `P(OOS | phi)` in [0, 1]; higher means more out-of-scope.
    pub fn score_features(&self, features: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(features)?))
    }

    pub fn score_oos(&self, backend: &EmbeddingBackend, dialogue: &Dialogue) -> Result<f64> {
        let features = self.feature_config.features(backend, dialogue)?;
        self.score_features(&features)
    }

    pub fn save(&self, path: &Path, meta: &ArtifactMeta, train_config_digest: &str) -> Result<()> {
        save_json(
            path,
            &BinaryDetectorFile {
                meta: meta.clone(),
                kind: "binary_oos".into(),
                dim: self.dim,
                weights: self.weights.clone(),
                bias: self.bias,
                feature_config: self.feature_config,
                class_weighting: self.class_weighting,
                train_config_digest: train_config_digest.into(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<(Self, ArtifactMeta)> {
        let file: BinaryDetectorFile = load_json(path)?;
        if file.kind != "binary_oos" {
            return Err(Error::InvalidConfig(format!(
                "{} is a {:?} artifact, expected binary_oos",
                path.display(),
                file.kind
            )));
        }
        Ok((
            BinaryDetector {
                dim: file.dim,
                weights: file.weights,
                bias: file.bias,
                feature_config: file.feature_config,
                class_weighting: file.class_weighting,
            },
            file.meta,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct BinaryDetectorFile {
    #[serde(flatten)]
    meta: ArtifactMeta,
    kind: String,
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
    feature_config: FeatureConfig,
    class_weighting: f64,
    train_config_digest: String,
}

struct SparseRow {
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseRow {
    fn from_dense(v: &[f64]) -> Self {
        let mut idx = Vec::new();
        let mut val = Vec::new();
        for (i, &x) in v.iter().enumerate() {
            if x != 0.0 {
                idx.push(i as u32);
                val.push(x);
            }
        }
        Self { idx, val }
    }

    fn dot(&self, w: &[f64]) -> f64 {
        self.idx
            .iter()
            .zip(&self.val)
            .map(|(&i, &x)| w[i as usize] * x)
            .sum()
    }
}

fn binary_loss(
    weights: &[f64],
    bias: f64,
    rows: &[SparseRow],
    labels: &[bool],
    example_weights: &[f64],
    l2_penalty: f64,
) -> (f64, f64) {
    let mut loss = 0.0;
    let mut weight_total = 0.0;
    let mut correct = 0usize;
    for ((x, &y), &w) in rows.iter().zip(labels).zip(example_weights) {
        let p = sigmoid(x.dot(weights) + bias);
        let target = if y { p } else { 1.0 - p };
        loss -= w * target.max(1e-300).ln();
        weight_total += w;
        if (p > 0.5) == y {
            correct += 1;
        }
    }
    let l2 = 0.5 * l2_penalty * weights.iter().map(|w| w * w).sum::<f64>();
    (
        loss / weight_total + l2,
        correct as f64 / rows.len() as f64,
    )
}

/// Core weighted logistic-regression trainer over raw feature vectors.
pub fn train_binary(
    features: &[Vec<f64>],
    labels: &[bool],
    example_weights: &[f64],
    dev: Option<(&[Vec<f64>], &[bool])>,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, f64, TrainStats)> {
    cfg.validate()?;
    if !labels.iter().any(|&y| y) || !labels.iter().any(|&y| !y) {
        return Err(Error::SingleClass);
    }
    let dim = features[0].len();
    let rows: Vec<SparseRow> = features.iter().map(|v| SparseRow::from_dense(v)).collect();
    let dev_parts: Option<(Vec<SparseRow>, &[bool], Vec<f64>)> = dev.map(|(f, l)| {
        (
            f.iter().map(|v| SparseRow::from_dense(v)).collect(),
            l,
            vec![1.0; l.len()],
        )
    });

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut rng = SplitMix64::new(derive_seed(cfg.rng_seed, &["sgd-binary"]));
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut best: Option<(f64, Vec<f64>, f64, usize)> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let step = cfg.learning_rate / batch.len() as f64;
            if cfg.l2_penalty > 0.0 {
                let decay = 1.0 - cfg.learning_rate * cfg.l2_penalty;
                weights.iter_mut().for_each(|w| *w *= decay);
            }
            let mut grad_b = 0.0;
            for &i in batch {
                let x = &rows[i];
                let p = sigmoid(x.dot(&weights) + bias);
                let err = example_weights[i] * (p - f64::from(labels[i]));
                grad_b += err;
                let scaled = err * step;
                for (&j, &x_j) in x.idx.iter().zip(&x.val) {
                    weights[j as usize] -= scaled * x_j;
                }
            }
            bias -= step * grad_b;
        }
        epochs_run = epoch + 1;

        let (train_loss, _) = binary_loss(
            &weights,
            bias,
            &rows,
            labels,
            example_weights,
            cfg.l2_penalty,
        );
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epochs_run });
        }
        if let Some((dev_rows, dev_labels, dev_w)) = &dev_parts {
            let (dev_loss, _) = binary_loss(&weights, bias, dev_rows, dev_labels, dev_w, 0.0);
            let improved = best.as_ref().is_none_or(|(b, _, _, _)| dev_loss < *b);
            if improved {
                best = Some((dev_loss, weights.clone(), bias, epochs_run));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }

    if let Some((_, w, b, at)) = best {
        weights = w;
        bias = b;
        epochs_run = at;
    }
    let (train_loss, train_accuracy) = binary_loss(
        &weights,
        bias,
        &rows,
        labels,
        example_weights,
        cfg.l2_penalty,
    );
    let dev_accuracy = dev_parts.as_ref().map(|(dev_rows, dev_labels, dev_w)| {
        binary_loss(&weights, bias, dev_rows, dev_labels, dev_w, 0.0).1
    });
    Ok((
        weights,
        bias,
        TrainStats {
            epochs_run,
            train_loss,
            train_accuracy,
            dev_accuracy,
        },
    ))
}

fn embed_sorted(
    examples: &[(&Dialogue, bool, bool)],
    backend: &EmbeddingBackend,
    feature_config: FeatureConfig,
) -> Result<Vec<Vec<f64>>> {
    let dialogues: Vec<&Dialogue> = examples.iter().map(|(d, _, _)| *d).collect();
    crate::intent_model::embed_all(&dialogues, backend, feature_config)
}

/// Train the direct detector on an aggregated dataset. OOS examples are
/// weighted by `class_weighting` (defaulting to the |INS|/|OOS| ratio) and
/// pseudo-labeled OOS additionally by `pseudo_discount`. Examples are sorted
/// by id before batching, so record order does not matter.
pub fn train_direct(
    data: &[TrainExample],
    dev: &[Dialogue],
    cfg: &TrainConfig,
    backend: &EmbeddingBackend,
    feature_config: FeatureConfig,
    class_weighting: Option<f64>,
    pseudo_discount: f64,
) -> Result<(BinaryDetector, TrainStats)> {
    let mut examples: Vec<(&Dialogue, bool, bool)> = data
        .iter()
        .map(|e| (&e.dialogue, e.dialogue.is_oos(), e.is_pseudo()))
        .collect();
    examples.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    let n_oos = examples.iter().filter(|(_, oos, _)| *oos).count();
    let n_ins = examples.len() - n_oos;
    if n_oos == 0 || n_ins == 0 {
        return Err(Error::SingleClass);
    }
    let class_weighting = class_weighting.unwrap_or(n_ins as f64 / n_oos as f64);
    if !(class_weighting > 0.0 && pseudo_discount > 0.0) {
        return Err(Error::InvalidConfig(
            "class_weighting and pseudo_discount must be > 0".into(),
        ));
    }

    let features = embed_sorted(&examples, backend, feature_config)?;
    let labels: Vec<bool> = examples.iter().map(|(_, oos, _)| *oos).collect();
    let weights: Vec<f64> = examples
        .iter()
        .map(|(_, oos, pseudo)| {
            if !oos {
                1.0
            } else if *pseudo {
                class_weighting * pseudo_discount
            } else {
                class_weighting
            }
        })
        .collect();

    let mut dev_sorted: Vec<&Dialogue> = dev.iter().collect();
    dev_sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let dev_features =
        crate::intent_model::embed_all(&dev_sorted, backend, feature_config)?;
    let dev_labels: Vec<bool> = dev_sorted.iter().map(|d| d.is_oos()).collect();
    let dev_pair = if dev_features.is_empty() || !dev_labels.iter().any(|&y| y) {
        None
    } else {
        Some((dev_features.as_slice(), dev_labels.as_slice()))
    };

    let (weights, bias, stats) = train_binary(&features, &labels, &weights, dev_pair, cfg)?;
    Ok((
        BinaryDetector {
            dim: features[0].len(),
            weights,
            bias,
            feature_config,
            class_weighting,
        },
        stats,
    ))
}

/// The Oracle upper bound: identical training, but consuming every true OOS
/// label in the target train split instead of seed + pseudo data.
pub fn train_oracle(
    full_target: &DatasetSplit,
    cfg: &TrainConfig,
    backend: &EmbeddingBackend,
    feature_config: FeatureConfig,
    class_weighting: Option<f64>,
) -> Result<(BinaryDetector, TrainStats)> {
    let data: Vec<TrainExample> = full_target
        .train
        .iter()
        .map(|d| TrainExample {
            dialogue: d.clone(),
            provenance: None,
        })
        .collect();
    train_direct(
        &data,
        &full_target.dev,
        cfg,
        backend,
        feature_config,
        class_weighting,
        1.0,
    )
}
