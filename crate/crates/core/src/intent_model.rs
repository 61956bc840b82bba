//! The supporting model: a multinomial softmax classifier over dialogue
//! embeddings, trained on in-scope intents only. Its probabilities, input
//! gradients, and dropout ensembles power every indirect detector.
//!
//! Training is plain minibatch gradient descent on L2-regularized
//! cross-entropy, single-threaded with a seeded shuffle, so a fixed
//! `rng_seed` reproduces parameters exactly. Examples are sorted by id
//! before batching, making training invariant to record order.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::embedding::{EmbeddingBackend, FeatureConfig};
use crate::error::{Error, Result};
use crate::persist::{load_json, save_json, ArtifactMeta};
use crate::util::{derive_seed, par_map, SplitMix64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2_penalty: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.15,
            l2_penalty: 1e-4,
            epochs: 60,
            batch_size: 32,
            rng_seed: 0,
            early_stop_patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.l2_penalty < 0.0 {
            return Err(Error::InvalidConfig("l2_penalty must be >= 0".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).unwrap().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs_run: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub dev_accuracy: Option<f64>,
}

/// Trained multinomial classifier: `softmax(W phi + b)` over K intents.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    pub intent_names: Vec<String>,
    pub dim: usize,
    /// K x D row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_config: FeatureConfig,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl SoftmaxClassifier {
    pub fn n_classes(&self) -> usize {
        self.intent_names.len()
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        let k = self.n_classes();
        let mut out = self.bias.clone();
        for (c, slot) in out.iter_mut().enumerate().take(k) {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(features) {
                acc += w * x;
            }
            *slot += acc;
        }
        Ok(out)
    }

    /// `P(y | phi)`: softmax over the class logits.
    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(features)?))
    }

    /// Dialogue feature vector under this model's feature policy.
    pub fn features(&self, backend: &EmbeddingBackend, dialogue: &Dialogue) -> Result<Vec<f64>> {
        let v = self.feature_config.features(backend, dialogue)?;
        self.check_dim(&v)?;
        Ok(v)
    }

    pub fn predict_proba_dialogue(
        &self,
        backend: &EmbeddingBackend,
        dialogue: &Dialogue,
    ) -> Result<Vec<f64>> {
        self.predict_proba(&self.features(backend, dialogue)?)
    }

    /// Gradient of `-ln P(target | phi)` with respect to the feature vector:
    /// `W^T (p - e_target)` for the softmax-linear model.
    pub fn input_gradient(&self, features: &[f64], target: usize) -> Result<Vec<f64>> {
        let p = self.predict_proba(features)?;
        let mut g = vec![0.0; self.dim];
        for (c, &p_c) in p.iter().enumerate() {
            let err = p_c - if c == target { 1.0 } else { 0.0 };
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            for (g_j, w_j) in g.iter_mut().zip(row) {
                *g_j += w_j * err;
            }
        }
        Ok(g)
    }

    /// Monte-Carlo dropout over the feature layer: each pass zeroes a
    /// Bernoulli(rate) mask, rescales survivors by `1/(1-rate)`, and records
    /// the argmax intent. Deterministic for a fixed `rng_seed`.
    pub fn predict_with_dropout(
        &self,
        features: &[f64],
        rate: f64,
        passes: usize,
        rng_seed: u64,
    ) -> Result<Vec<usize>> {
        self.check_dim(features)?;
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must be in (0, 1), got {rate}"
            )));
        }
        let scale = 1.0 / (1.0 - rate);
        let mut rng = SplitMix64::new(derive_seed(rng_seed, &["dropout"]));
        let mut masked = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(passes);
        for _ in 0..passes {
            for (m, &x) in masked.iter_mut().zip(features) {
                *m = if rng.next_f64() < rate { 0.0 } else { x * scale };
            }
            out.push(argmax(&self.logits(&masked)?));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path, meta: &ArtifactMeta, train_config_digest: &str) -> Result<()> {
        save_json(
            path,
            &SoftmaxClassifierFile {
                meta: meta.clone(),
                kind: "softmax_intent".into(),
                intent_names: self.intent_names.clone(),
                dim: self.dim,
                weights: self.weights.clone(),
                bias: self.bias.clone(),
                feature_config: self.feature_config,
                train_config_digest: train_config_digest.into(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<(Self, ArtifactMeta)> {
        let file: SoftmaxClassifierFile = load_json(path)?;
        if file.kind != "softmax_intent" {
            return Err(Error::InvalidConfig(format!(
                "{} is a {:?} artifact, expected softmax_intent",
                path.display(),
                file.kind
            )));
        }
        if file.weights.len() != file.dim * file.intent_names.len() {
            return Err(Error::DimMismatch {
                expected: file.dim * file.intent_names.len(),
                got: file.weights.len(),
            });
        }
        Ok((
            SoftmaxClassifier {
                intent_names: file.intent_names,
                dim: file.dim,
                weights: file.weights,
                bias: file.bias,
                feature_config: file.feature_config,
            },
            file.meta,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct SoftmaxClassifierFile {
    #[serde(flatten)]
    meta: ArtifactMeta,
    kind: String,
    intent_names: Vec<String>,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    feature_config: FeatureConfig,
    train_config_digest: String,
}

/// Nonzero slots of one feature vector; gradient updates touch only these.
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

    fn dot(&self, row: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (&i, &x) in self.idx.iter().zip(&self.val) {
            acc += row[i as usize] * x;
        }
        acc
    }
}

fn forward(weights: &[f64], bias: &[f64], x: &SparseRow, k: usize, dim: usize) -> Vec<f64> {
    let mut logits = bias.to_vec();
    for (c, logit) in logits.iter_mut().enumerate().take(k) {
        *logit += x.dot(&weights[c * dim..(c + 1) * dim]);
    }
    softmax(&logits)
}

fn dataset_loss(
    weights: &[f64],
    bias: &[f64],
    rows: &[SparseRow],
    labels: &[usize],
    k: usize,
    dim: usize,
    l2_penalty: f64,
) -> (f64, f64) {
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in rows.iter().zip(labels) {
        let p = forward(weights, bias, x, k, dim);
        loss -= p[y].max(1e-300).ln();
        if argmax(&p) == y {
            correct += 1;
        }
    }
    let l2 = 0.5 * l2_penalty * weights.iter().map(|w| w * w).sum::<f64>();
    (
        loss / rows.len() as f64 + l2,
        correct as f64 / rows.len() as f64,
    )
}

/// Core trainer over raw feature vectors. Returns `(weights, bias, stats)`.
/// With a dev set, stops early when dev cross-entropy has not improved for
/// `early_stop_patience` epochs and restores the best parameters.
pub fn train_softmax(
    features: &[Vec<f64>],
    labels: &[usize],
    n_classes: usize,
    dev: Option<(&[Vec<f64>], &[usize])>,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<f64>, TrainStats)> {
    cfg.validate()?;
    if n_classes < 2 {
        return Err(Error::SingleClass);
    }
    if features.is_empty() {
        return Err(Error::EmptySplit);
    }
    let dim = features[0].len();
    let rows: Vec<SparseRow> = features.iter().map(|v| SparseRow::from_dense(v)).collect();
    let dev_rows: Option<(Vec<SparseRow>, &[usize])> =
        dev.map(|(f, l)| (f.iter().map(|v| SparseRow::from_dense(v)).collect(), l));

    let mut weights = vec![0.0; n_classes * dim];
    let mut bias = vec![0.0; n_classes];
    let mut rng = SplitMix64::new(derive_seed(cfg.rng_seed, &["sgd"]));
    let mut order: Vec<usize> = (0..rows.len()).collect();

    let mut grad_b = vec![0.0; n_classes];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            // Accumulate the data gradient directly into the weights
            // (scaled by -lr/|B|); sparse rows keep this cheap.
            let step = cfg.learning_rate * inv;
            // Weight decay first so it uses the pre-batch weights once.
            if cfg.l2_penalty > 0.0 {
                let decay = 1.0 - cfg.learning_rate * cfg.l2_penalty;
                weights.iter_mut().for_each(|w| *w *= decay);
            }
            for &i in batch {
                let x = &rows[i];
                let p = forward(&weights, &bias, x, n_classes, dim);
                for (c, &p_c) in p.iter().enumerate() {
                    let err = p_c - if c == labels[i] { 1.0 } else { 0.0 };
                    grad_b[c] += err;
                    let row = &mut weights[c * dim..(c + 1) * dim];
                    let scaled = err * step;
                    for (&j, &x_j) in x.idx.iter().zip(&x.val) {
                        row[j as usize] -= scaled * x_j;
                    }
                }
            }
            for (b, g) in bias.iter_mut().zip(&grad_b) {
                *b -= step * g;
            }
        }
        epochs_run = epoch + 1;

        let (train_loss, _) =
            dataset_loss(&weights, &bias, &rows, labels, n_classes, dim, cfg.l2_penalty);
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: epochs_run });
        }
        if let Some((dev_rows, dev_labels)) = &dev_rows {
            let (dev_loss, _) = dataset_loss(
                &weights, &bias, dev_rows, dev_labels, n_classes, dim, 0.0,
            );
            let improved = best.as_ref().is_none_or(|(b, _, _, _)| dev_loss < *b);
            if improved {
                best = Some((dev_loss, weights.clone(), bias.clone(), epochs_run));
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
    let (train_loss, train_accuracy) =
        dataset_loss(&weights, &bias, &rows, labels, n_classes, dim, cfg.l2_penalty);
    let dev_accuracy = dev_rows.as_ref().map(|(dev_rows, dev_labels)| {
        dataset_loss(&weights, &bias, dev_rows, dev_labels, n_classes, dim, 0.0).1
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

/// Train the supporting model on in-scope dialogues. `dev` may contain OOS
/// records; only its INS part participates in early stopping.
pub fn train(
    data: &[Dialogue],
    dev: &[Dialogue],
    cfg: &TrainConfig,
    backend: &EmbeddingBackend,
    feature_config: FeatureConfig,
) -> Result<(SoftmaxClassifier, TrainStats)> {
    let mut intents = BTreeSet::new();
    for d in data {
        match d.intent() {
            Some(intent) => {
                intents.insert(intent.to_string());
            }
            None => {
                return Err(Error::InvalidConfig(format!(
                    "dialogue {:?} in intent training data is not labeled ins",
                    d.id
                )))
            }
        }
    }
    if intents.len() < 2 {
        return Err(Error::SingleClass);
    }
    let intent_names: Vec<String> = intents.into_iter().collect();
    let class_of = |d: &Dialogue| -> usize {
        intent_names
            .binary_search_by(|n| n.as_str().cmp(d.intent().unwrap()))
            .unwrap()
    };

    let mut sorted: Vec<&Dialogue> = data.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let features = embed_all(&sorted, backend, feature_config)?;
    let labels: Vec<usize> = sorted.iter().map(|d| class_of(d)).collect();

    let dev_ins: Vec<&Dialogue> = {
        let mut v: Vec<&Dialogue> = dev
            .iter()
            .filter(|d| d.intent().is_some_and(|i| intent_names.iter().any(|n| n == i)))
            .collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    let dev_features = embed_all(&dev_ins, backend, feature_config)?;
    let dev_labels: Vec<usize> = dev_ins.iter().map(|d| class_of(d)).collect();
    let dev_pair = if dev_features.is_empty() {
        None
    } else {
        Some((dev_features.as_slice(), dev_labels.as_slice()))
    };

    let (weights, bias, stats) =
        train_softmax(&features, &labels, intent_names.len(), dev_pair, cfg)?;
    Ok((
        SoftmaxClassifier {
            dim: features[0].len(),
            intent_names,
            weights,
            bias,
            feature_config,
        },
        stats,
    ))
}

/// Embed dialogues in parallel, preserving order.
pub fn embed_all(
    dialogues: &[&Dialogue],
    backend: &EmbeddingBackend,
    feature_config: FeatureConfig,
) -> Result<Vec<Vec<f64>>> {
    par_map(dialogues.len(), |i| {
        feature_config.features(backend, dialogues[i])
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{BackendTag, EmbedMode};

    fn raw_feature_config() -> FeatureConfig {
        FeatureConfig {
            backend: BackendTag::Tfidf,
            mode: EmbedMode::FinalUser,
            normalize: false,
        }
    }

    fn toy_model(weights: Vec<f64>, bias: Vec<f64>, dim: usize) -> SoftmaxClassifier {
        let k = bias.len();
        assert_eq!(weights.len(), k * dim);
        SoftmaxClassifier {
            intent_names: (0..k).map(|i| format!("intent_{i}")).collect(),
            dim,
            weights,
            bias,
            feature_config: raw_feature_config(),
        }
    }

    /// Two separable 2-D clusters plus labels.
    fn clusters(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = SplitMix64::new(seed);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per * 2 {
            let class = i % 2;
            let center = if class == 0 { (0.0, 0.0) } else { (5.0, 5.0) };
            features.push(vec![
                center.0 + rng.next_gaussian() * 0.5,
                center.1 + rng.next_gaussian() * 0.5,
            ]);
            labels.push(class);
        }
        (features, labels)
    }

    #[test]
    fn separable_clusters_reach_high_dev_accuracy() {
        let (train_x, train_y) = clusters(60, 1);
        let (dev_x, dev_y) = clusters(20, 2);
        let cfg = TrainConfig::default();
        let (_, _, stats) =
            train_softmax(&train_x, &train_y, 2, Some((&dev_x, &dev_y)), &cfg).unwrap();
        assert!(stats.dev_accuracy.unwrap() >= 0.95, "stats {stats:?}");
    }

    #[test]
    fn single_class_is_rejected() {
        let (x, _) = clusters(10, 3);
        let y = vec![0; x.len()];
        assert!(matches!(
            train_softmax(&x, &y, 1, None, &TrainConfig::default()),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn first_epoch_descends_under_small_learning_rate() {
        let (x, y) = clusters(40, 4);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 1,
            ..TrainConfig::default()
        };
        let (_, _, stats) = train_softmax(&x, &y, 2, None, &cfg).unwrap();
        // Loss at zero-initialized parameters is ln 2.
        assert!(stats.train_loss <= (2.0f64).ln() + 1e-9);
    }

    #[test]
    fn huge_learning_rate_reports_non_finite_loss() {
        let (x, y) = clusters(20, 5);
        let scaled: Vec<Vec<f64>> = x.iter().map(|v| v.iter().map(|a| a * 1e150).collect()).collect();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            l2_penalty: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_softmax(&scaled, &y, 2, None, &cfg),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn zero_parameters_predict_uniform() {
        let m = toy_model(vec![0.0; 8], vec![0.0; 4], 2);
        let p = m.predict_proba(&[1.0, -2.0]).unwrap();
        assert_eq!(p.len(), 4);
        for &v in &p {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_normalize_and_argmax_saturates() {
        let m = toy_model(vec![1.0, 0.0, -1.0, 0.0], vec![0.0, 0.0], 2);
        for scale in [1.0, 5.0, 20.0, 100.0] {
            let p = m.predict_proba(&[scale, 0.0]).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            if scale >= 20.0 {
                assert!(p[0] > 0.999, "p {p:?}");
            }
        }
    }

    #[test]
    fn argmax_invariant_under_constant_logit_shift() {
        let m = toy_model(vec![0.3, -0.2, 0.1, 0.4], vec![0.1, -0.3], 2);
        let mut shifted = m.clone();
        for b in &mut shifted.bias {
            *b += 7.5;
        }
        for x in [[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]] {
            let a = argmax(&m.predict_proba(&x).unwrap());
            let b = argmax(&shifted.predict_proba(&x).unwrap());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn input_gradient_hand_value() {
        // K=2, D=1, W=((1),(-1)), phi=0 -> p=(0.5,0.5); target 0:
        // g = 1*(0.5-1) + (-1)*0.5 = -1.
        let m = toy_model(vec![1.0, -1.0], vec![0.0, 0.0], 1);
        let g = m.input_gradient(&[0.0], 0).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(9);
        for _ in 0..20 {
            let k = 2 + rng.next_below(3) as usize;
            let dim = 2 + rng.next_below(4) as usize;
            let weights: Vec<f64> = (0..k * dim).map(|_| rng.next_gaussian()).collect();
            let bias: Vec<f64> = (0..k).map(|_| rng.next_gaussian() * 0.1).collect();
            let m = toy_model(weights, bias, dim);
            let phi: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
            let target = rng.next_below(k as u64) as usize;
            let g = m.input_gradient(&phi, target).unwrap();

            let loss = |phi: &[f64]| -> f64 {
                -m.predict_proba(phi).unwrap()[target].ln()
            };
            let h = 1e-5;
            let mut fd = vec![0.0; dim];
            for j in 0..dim {
                let mut plus = phi.clone();
                let mut minus = phi.clone();
                plus[j] += h;
                minus[j] -= h;
                fd[j] = (loss(&plus) - loss(&minus)) / (2.0 * h);
            }
            let diff: f64 = g
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff / (norm + 1e-12) < 1e-4, "diff {diff} norm {norm}");
        }
    }

    #[test]
    fn gradient_sign_convention_against_predicted_class() {
        // The gradient of -ln p_c at the predicted class points away from
        // increasing that class's log-probability.
        let m = toy_model(vec![0.8, -0.1, -0.4, 0.3], vec![0.0, 0.0], 2);
        let phi = [1.0, 0.5];
        let p = m.predict_proba(&phi).unwrap();
        let predicted = argmax(&p);
        let g = m.input_gradient(&phi, predicted).unwrap();
        // Ascent direction of ln p_predicted is -g.
        let dot: f64 = g.iter().map(|a| a * -a).sum();
        assert!(dot <= 0.0);
    }

    #[test]
    fn dropout_is_deterministic_with_expected_shape() {
        let m = toy_model(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2);
        let phi = [2.0, 1.0];
        let a = m.predict_with_dropout(&phi, 0.3, 10, 7).unwrap();
        let b = m.predict_with_dropout(&phi, 0.3, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
    }

    #[test]
    fn vanishing_dropout_rate_recovers_plain_argmax() {
        let m = toy_model(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2);
        let phi = [2.0, 1.0];
        let plain = argmax(&m.predict_proba(&phi).unwrap());
        let passes = m.predict_with_dropout(&phi, 1e-12, 50, 3).unwrap();
        assert!(passes.iter().all(|&p| p == plain));
    }

    #[test]
    fn training_is_invariant_to_record_order() {
        use crate::corpus::{Dialogue, Label, Speaker, Utterance};
        use crate::embedding::fit_tfidf;
        let texts = [
            ("a", "red apple fruit"),
            ("b", "green apple pie"),
            ("c", "fast blue car"),
            ("d", "slow red car"),
        ];
        let make = |id: &str, text: &str, intent: &str| Dialogue {
            id: id.into(),
            turns: vec![Utterance {
                speaker: Speaker::User,
                text: text.into(),
            }],
            label: Some(Label::Ins {
                intent: intent.into(),
            }),
        };
        let data = vec![
            make("a", texts[0].1, "fruit"),
            make("b", texts[1].1, "fruit"),
            make("c", texts[2].1, "car"),
            make("d", texts[3].1, "car"),
        ];
        let corpus: Vec<&str> = texts.iter().map(|(_, t)| *t).collect();
        let backend = EmbeddingBackend::Tfidf(fit_tfidf(&corpus, 100).unwrap());
        let fc = raw_feature_config();
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let (m1, _) = train(&data, &[], &cfg, &backend, fc).unwrap();
        let mut reversed = data.clone();
        reversed.reverse();
        let (m2, _) = train(&reversed, &[], &cfg, &backend, fc).unwrap();
        assert_eq!(m1.weights, m2.weights);
        assert_eq!(m1.bias, m2.bias);
    }

    #[test]
    fn stronger_l2_shrinks_weights() {
        let (x, y) = clusters(50, 6);
        let weak = TrainConfig {
            l2_penalty: 1e-3,
            epochs: 40,
            ..TrainConfig::default()
        };
        let strong = TrainConfig {
            l2_penalty: 1e-2,
            epochs: 40,
            ..TrainConfig::default()
        };
        let (w1, _, _) = train_softmax(&x, &y, 2, None, &weak).unwrap();
        let (w2, _, _) = train_softmax(&x, &y, 2, None, &strong).unwrap();
        let norm = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm(&w2) < norm(&w1));
    }

    #[test]
    fn persistence_round_trips_bit_exact() {
        let (x, y) = clusters(20, 8);
        let (weights, bias, _) =
            train_softmax(&x, &y, 2, None, &TrainConfig::default()).unwrap();
        let m = SoftmaxClassifier {
            intent_names: vec!["a".into(), "b".into()],
            dim: 2,
            weights,
            bias,
            feature_config: raw_feature_config(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let meta = ArtifactMeta::new(7, "digest");
        m.save(&path, &meta, "traincfg").unwrap();
        let (back, back_meta) = SoftmaxClassifier::load(&path).unwrap();
        assert_eq!(m, back);
        assert_eq!(meta, back_meta);
    }
}
