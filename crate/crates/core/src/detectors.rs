//! The seven indirect baselines, implemented as scorers over the supporting
//! model plus in-scope feature geometry, with threshold tuning. Scores are
//! oriented so that higher always means more out-of-scope. The same scorers
//! serve as election voters.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::embedding::EmbeddingBackend;
use crate::error::{Error, Result};
use crate::intent_model::SoftmaxClassifier;
use crate::persist::{load_json, save_json, ArtifactMeta};

/// JSON codec for optional thresholds that may legitimately be infinite
/// (degenerate tuning): infinities become the strings "+inf"/"-inf".
pub mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_f64(*x),
            Some(x) if *x == f64::INFINITY => s.serialize_str("+inf"),
            Some(_) => s.serialize_str("-inf"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Num(x)) => Ok(Some(x)),
            Some(Raw::Str(s)) => match s.as_str() {
                "+inf" => Ok(Some(f64::INFINITY)),
                "-inf" => Ok(Some(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "unexpected threshold string {other:?}"
                ))),
            },
        }
    }
}

/// Per-detector outcome for one example. Score-based detectors vote
/// `score > threshold`; Dropout votes directly on the pass counts and its
/// score is the fraction of non-modal passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    pub detector: String,
    pub score: f64,
    #[serde(with = "threshold_serde", default)]
    pub threshold: Option<f64>,
    pub vote: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "maxprob")]
    MaxProb,
    #[serde(rename = "odin")]
    Odin,
    #[serde(rename = "entropy")]
    Entropy,
    #[serde(rename = "centroid")]
    Centroid,
    #[serde(rename = "mahalanobis")]
    Mahalanobis,
    #[serde(rename = "gradient")]
    Gradient,
    #[serde(rename = "dropout")]
    Dropout,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 7] = [
        DetectorKind::MaxProb,
        DetectorKind::Odin,
        DetectorKind::Entropy,
        DetectorKind::Centroid,
        DetectorKind::Mahalanobis,
        DetectorKind::Gradient,
        DetectorKind::Dropout,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::MaxProb => "maxprob",
            DetectorKind::Odin => "odin",
            DetectorKind::Entropy => "entropy",
            DetectorKind::Centroid => "centroid",
            DetectorKind::Mahalanobis => "mahalanobis",
            DetectorKind::Gradient => "gradient",
            DetectorKind::Dropout => "dropout",
        }
    }

    /// Whether this detector votes through a tuned score threshold.
    pub fn needs_threshold(&self) -> bool {
        !matches!(self, DetectorKind::Dropout)
    }

    pub fn needs_geometry(&self) -> bool {
        matches!(
            self,
            DetectorKind::Centroid | DetectorKind::Mahalanobis | DetectorKind::Gradient
        )
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxprob" => Ok(DetectorKind::MaxProb),
            "odin" => Ok(DetectorKind::Odin),
            "entropy" => Ok(DetectorKind::Entropy),
            "centroid" => Ok(DetectorKind::Centroid),
            "mahalanobis" => Ok(DetectorKind::Mahalanobis),
            "gradient" => Ok(DetectorKind::Gradient),
            "dropout" => Ok(DetectorKind::Dropout),
            other => Err(Error::InvalidConfig(format!("unknown detector {other:?}"))),
        }
    }
}

/// Tunable knobs for the two parameterized detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub odin_temperature: f64,
    pub odin_epsilon: f64,
    pub dropout_rate: f64,
    pub dropout_passes: usize,
    pub dropout_rng_seed: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            odin_temperature: 1000.0,
            odin_epsilon: 0.001,
            dropout_rate: 0.3,
            dropout_passes: 10,
            dropout_rng_seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// In-scope feature geometry
// ---------------------------------------------------------------------------

/// Class statistics behind the outlier-distance detectors: per-intent feature
/// centroids, a shared regularized covariance, and per-intent centroids of
/// input gradients taken at the true class.
#[derive(Debug, Clone)]
pub struct InsGeometry {
    pub intent_names: Vec<String>,
    pub dim: usize,
    pub mu: Vec<Vec<f64>>,
    /// Regularized pooled within-class covariance (lambda already added),
    /// D x D row-major.
    pub sigma: Vec<f64>,
    pub lambda: f64,
    pub gamma: Vec<Vec<f64>>,
    inv: Vec<f64>,
    inv_mu: Vec<Vec<f64>>,
    mu_inv_mu: Vec<f64>,
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` when it
/// is not positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Inverse of a symmetric positive definite matrix from its Cholesky factor,
/// by solving one unit column at a time.
fn invert_spd(l: &[f64], d: usize) -> Vec<f64> {
    let mut inv = vec![0.0; d * d];
    let mut y = vec![0.0; d];
    for col in 0..d {
        // Forward solve L y = e_col; rows above `col` stay zero.
        y[..col].fill(0.0);
        for i in col..d {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                sum -= l[i * d + k] * y[k];
            }
            y[i] = sum / l[i * d + i];
        }
        // Back solve L^T x = y.
        for i in (0..d).rev() {
            let mut sum = y[i];
            for k in (i + 1)..d {
                sum -= l[k * d + i] * inv[k * d + col];
            }
            inv[i * d + col] = sum / l[i * d + i];
        }
    }
    inv
}

impl InsGeometry {
    /// Assemble geometry from explicit statistics. `sigma` must already carry
    /// its regularizer; Cholesky failure reports `SingularCovariance`.
    pub fn from_parts(
        intent_names: Vec<String>,
        dim: usize,
        mu: Vec<Vec<f64>>,
        sigma: Vec<f64>,
        lambda: f64,
        gamma: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if sigma.len() != dim * dim {
            return Err(Error::DimMismatch {
                expected: dim * dim,
                got: sigma.len(),
            });
        }
        let l = cholesky(&sigma, dim).ok_or(Error::SingularCovariance)?;
        let inv = invert_spd(&l, dim);
        let inv_mu: Vec<Vec<f64>> = mu
            .iter()
            .map(|m| {
                (0..dim)
                    .map(|i| (0..dim).map(|j| inv[i * dim + j] * m[j]).sum())
                    .collect()
            })
            .collect();
        let mu_inv_mu: Vec<f64> = mu
            .iter()
            .zip(&inv_mu)
            .map(|(m, im)| m.iter().zip(im).map(|(a, b)| a * b).sum())
            .collect();
        Ok(Self {
            intent_names,
            dim,
            mu,
            sigma,
            lambda,
            gamma,
            inv,
            inv_mu,
            mu_inv_mu,
        })
    }

    pub fn save(&self, path: &Path, meta: &ArtifactMeta) -> Result<()> {
        save_json(
            path,
            &GeometryFile {
                meta: meta.clone(),
                kind: "ins_geometry".into(),
                intent_names: self.intent_names.clone(),
                dim: self.dim,
                mu: self.mu.clone(),
                sigma: self.sigma.clone(),
                lambda: self.lambda,
                gamma: self.gamma.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<(Self, ArtifactMeta)> {
        let file: GeometryFile = load_json(path)?;
        if file.kind != "ins_geometry" {
            return Err(Error::InvalidConfig(format!(
                "{} is a {:?} artifact, expected ins_geometry",
                path.display(),
                file.kind
            )));
        }
        let meta = file.meta.clone();
        Ok((
            Self::from_parts(
                file.intent_names,
                file.dim,
                file.mu,
                file.sigma,
                file.lambda,
                file.gamma,
            )?,
            meta,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct GeometryFile {
    #[serde(flatten)]
    meta: ArtifactMeta,
    kind: String,
    intent_names: Vec<String>,
    dim: usize,
    mu: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    lambda: f64,
    gamma: Vec<Vec<f64>>,
}

/// Core geometry fit over raw feature vectors and per-example gradients.
/// The covariance is the pooled within-class MLE (normalized by n), plus
/// `lambda I` with `lambda = 1e-3 * trace / D`, falling back to `1e-3` when
/// the empirical covariance has zero trace.
pub fn fit_geometry_from_features(
    intent_names: Vec<String>,
    features: &[Vec<f64>],
    labels: &[usize],
    gradients: &[Vec<f64>],
) -> Result<InsGeometry> {
    let k = intent_names.len();
    let n = features.len();
    let dim = features.first().map(|f| f.len()).unwrap_or(0);
    let mut counts = vec![0usize; k];
    for &y in labels {
        counts[y] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count < 2 {
            return Err(Error::SingletonIntent(intent_names[c].clone()));
        }
    }

    let mut mu = vec![vec![0.0; dim]; k];
    let mut gamma = vec![vec![0.0; dim]; k];
    for ((x, g), &y) in features.iter().zip(gradients).zip(labels) {
        for j in 0..dim {
            mu[y][j] += x[j];
            gamma[y][j] += g[j];
        }
    }
    for c in 0..k {
        for j in 0..dim {
            mu[c][j] /= counts[c] as f64;
            gamma[c][j] /= counts[c] as f64;
        }
    }

    // Pooled within-class scatter via sum(x x^T) - sum_c n_c mu_c mu_c^T,
    // accumulated over nonzero pairs so sparse features stay cheap.
    let mut sigma = vec![0.0; dim * dim];
    for x in features {
        let nz: Vec<usize> = (0..dim).filter(|&j| x[j] != 0.0).collect();
        for &a in &nz {
            let xa = x[a];
            let row = &mut sigma[a * dim..(a + 1) * dim];
            for &b in &nz {
                row[b] += xa * x[b];
            }
        }
    }
    for c in 0..k {
        let w = counts[c] as f64;
        for a in 0..dim {
            let ma = mu[c][a] * w;
            if ma == 0.0 {
                continue;
            }
            let row = &mut sigma[a * dim..(a + 1) * dim];
            for b in 0..dim {
                row[b] -= ma * mu[c][b];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    sigma.iter_mut().for_each(|v| *v *= inv_n);

    let trace: f64 = (0..dim).map(|i| sigma[i * dim + i]).sum();
    let lambda = if trace > 0.0 { 1e-3 * trace / dim as f64 } else { 1e-3 };
    for i in 0..dim {
        sigma[i * dim + i] += lambda;
    }
    InsGeometry::from_parts(intent_names, dim, mu, sigma, lambda, gamma)
}

/// Fit in-scope geometry under the model's feature policy. Gradient
/// centroids are means of `input_gradient` at each example's true intent.
pub fn fit_geometry(
    model: &SoftmaxClassifier,
    ins_data: &[Dialogue],
    backend: &EmbeddingBackend,
) -> Result<InsGeometry> {
    let mut sorted: Vec<&Dialogue> = ins_data.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut labels = Vec::with_capacity(sorted.len());
    for d in &sorted {
        let intent = d.intent().ok_or_else(|| {
            Error::InvalidConfig(format!("dialogue {:?} is not labeled ins", d.id))
        })?;
        let class = model
            .intent_names
            .binary_search_by(|n| n.as_str().cmp(intent))
            .map_err(|_| {
                Error::InvalidConfig(format!("intent {intent:?} unknown to the supporting model"))
            })?;
        labels.push(class);
    }
    let features = crate::intent_model::embed_all(&sorted, backend, model.feature_config)?;
    let gradients: Result<Vec<Vec<f64>>> = features
        .iter()
        .zip(&labels)
        .map(|(f, &y)| model.input_gradient(f, y))
        .collect();
    fit_geometry_from_features(model.intent_names.clone(), &features, &labels, &gradients?)
}

// ---------------------------------------------------------------------------
// Scorers (higher = more OOS)
// ---------------------------------------------------------------------------

/// `1 - max_j P(y_j | x)`.
pub fn score_maxprob(model: &SoftmaxClassifier, features: &[f64]) -> Result<f64> {
    let p = model.predict_proba(features)?;
    Ok(1.0 - p.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// ODIN: perturb the features against the predicted-class gradient, then
/// temperature-scale the logits. With `T = 1, epsilon = 0` this reduces to
/// `score_maxprob` exactly.
pub fn score_odin(
    model: &SoftmaxClassifier,
    features: &[f64],
    temperature: f64,
    epsilon: f64,
) -> Result<f64> {
    if temperature <= 0.0 || temperature.is_nan() {
        return Err(Error::InvalidConfig(format!(
            "odin temperature must be > 0, got {temperature}"
        )));
    }
    let p = model.predict_proba(features)?;
    let predicted = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let grad = model.input_gradient(features, predicted)?;
    let perturbed: Vec<f64> = features
        .iter()
        .zip(&grad)
        .map(|(x, g)| x - epsilon * sign(*g))
        .collect();
    let logits = model.logits(&perturbed)?;
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(1.0 - exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / total)
}

/// Shannon entropy of the predictive distribution, with `0 ln 0 := 0`.
pub fn score_entropy(model: &SoftmaxClassifier, features: &[f64]) -> Result<f64> {
    let p = model.predict_proba(features)?;
    Ok(-p
        .iter()
        .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
        .sum::<f64>())
}

/// Euclidean distance to the nearest in-scope intent centroid.
pub fn score_centroid(geometry: &InsGeometry, features: &[f64]) -> Result<f64> {
    if features.len() != geometry.dim {
        return Err(Error::DimMismatch {
            expected: geometry.dim,
            got: features.len(),
        });
    }
    let mut best = f64::INFINITY;
    for m in &geometry.mu {
        let d2: f64 = features
            .iter()
            .zip(m)
            .map(|(x, c)| (x - c) * (x - c))
            .sum();
        best = best.min(d2);
    }
    Ok(best.sqrt())
}

/// Squared Mahalanobis distance to the nearest intent centroid under the
/// shared regularized covariance.
pub fn score_mahalanobis(geometry: &InsGeometry, features: &[f64]) -> Result<f64> {
    let dim = geometry.dim;
    if features.len() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: features.len(),
        });
    }
    let nz: Vec<usize> = (0..dim).filter(|&j| features[j] != 0.0).collect();
    let mut quad = 0.0;
    for &a in &nz {
        let xa = features[a];
        let row = &geometry.inv[a * dim..(a + 1) * dim];
        for &b in &nz {
            quad += xa * row[b] * features[b];
        }
    }
    let mut best = f64::INFINITY;
    for (im, &mim) in geometry.inv_mu.iter().zip(&geometry.mu_inv_mu) {
        let cross: f64 = nz.iter().map(|&j| features[j] * im[j]).sum();
        best = best.min(quad - 2.0 * cross + mim);
    }
    Ok(best.max(0.0))
}

/// Distance from the example's input gradient (at its predicted intent) to
/// the nearest per-intent gradient centroid.
pub fn score_gradient(
    model: &SoftmaxClassifier,
    geometry: &InsGeometry,
    features: &[f64],
) -> Result<f64> {
    let p = model.predict_proba(features)?;
    let predicted = p
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    let g = model.input_gradient(features, predicted)?;
    score_gradient_from(&g, geometry)
}

/// Nearest-gradient-centroid distance for an already computed gradient.
pub fn score_gradient_from(gradient: &[f64], geometry: &InsGeometry) -> Result<f64> {
    if gradient.len() != geometry.dim {
        return Err(Error::DimMismatch {
            expected: geometry.dim,
            got: gradient.len(),
        });
    }
    let mut best = f64::INFINITY;
    for c in &geometry.gamma {
        let d2: f64 = gradient
            .iter()
            .zip(c)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        best = best.min(d2);
    }
    Ok(best.sqrt())
}

/// Verdict from a sequence of dropout pass predictions: OOS when no intent
/// wins a strict majority; score is the non-modal fraction.
pub fn dropout_verdict_from_passes(passes: &[usize]) -> (bool, f64) {
    let mut counts = std::collections::BTreeMap::new();
    for &p in passes {
        *counts.entry(p).or_insert(0usize) += 1;
    }
    let modal = counts.values().copied().max().unwrap_or(0);
    let vote = 2 * modal <= passes.len();
    (vote, 1.0 - modal as f64 / passes.len() as f64)
}

/// Run the dropout ensemble and fold the passes into a verdict.
pub fn vote_dropout(
    model: &SoftmaxClassifier,
    features: &[f64],
    rate: f64,
    passes: usize,
    rng_seed: u64,
) -> Result<DetectorVerdict> {
    let outcomes = model.predict_with_dropout(features, rate, passes, rng_seed)?;
    let (vote, score) = dropout_verdict_from_passes(&outcomes);
    Ok(DetectorVerdict {
        detector: DetectorKind::Dropout.name().into(),
        score,
        threshold: None,
        vote,
    })
}

// ---------------------------------------------------------------------------
// Threshold tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdObjective {
    F1,
    Youden,
}

fn objective_at(scores: &[(f64, bool)], threshold: f64, objective: ThresholdObjective) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut n_oos = 0usize;
    let mut n_ins = 0usize;
    for &(score, is_oos) in scores {
        if is_oos {
            n_oos += 1;
            tp += usize::from(score > threshold);
        } else {
            n_ins += 1;
            fp += usize::from(score > threshold);
        }
    }
    match objective {
        ThresholdObjective::F1 => {
            if tp == 0 {
                return 0.0;
            }
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / n_oos as f64;
            2.0 * precision * recall / (precision + recall)
        }
        ThresholdObjective::Youden => tp as f64 / n_oos as f64 - fp as f64 / n_ins as f64,
    }
}

/// Pick the threshold maximizing the objective for the OOS-positive class,
/// scanning the midpoints between adjacent distinct scores plus both
/// infinities. Ties resolve toward the smaller threshold; a fully degenerate
/// score set yields `-inf` (vote everything OOS).
pub fn tune_threshold(scores: &[(f64, bool)], objective: ThresholdObjective) -> Result<f64> {
    if !scores.iter().any(|&(_, o)| o) || !scores.iter().any(|&(_, o)| !o) {
        return Err(Error::SingleClassScores);
    }
    if let Some(&(s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::NonFiniteScore(format!("{s}")));
    }
    let mut distinct: Vec<f64> = scores.iter().map(|&(s, _)| s).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(f64::INFINITY);

    let mut best_threshold = f64::NEG_INFINITY;
    let mut best_value = f64::NEG_INFINITY;
    for &t in &candidates {
        let value = objective_at(scores, t, objective);
        if value > best_value {
            best_value = value;
            best_threshold = t;
        }
    }
    Ok(best_threshold)
}

// ---------------------------------------------------------------------------
// Uniform scoring front end
// ---------------------------------------------------------------------------

/// Everything needed to score dialogues with any detector.
pub struct DetectorStack<'a> {
    pub model: &'a SoftmaxClassifier,
    pub geometry: &'a InsGeometry,
    pub backend: &'a EmbeddingBackend,
    pub params: DetectorParams,
}

impl DetectorStack<'_> {
    pub fn score_features(&self, kind: DetectorKind, features: &[f64]) -> Result<f64> {
        match kind {
            DetectorKind::MaxProb => score_maxprob(self.model, features),
            DetectorKind::Odin => score_odin(
                self.model,
                features,
                self.params.odin_temperature,
                self.params.odin_epsilon,
            ),
            DetectorKind::Entropy => score_entropy(self.model, features),
            DetectorKind::Centroid => score_centroid(self.geometry, features),
            DetectorKind::Mahalanobis => score_mahalanobis(self.geometry, features),
            DetectorKind::Gradient => score_gradient(self.model, self.geometry, features),
            DetectorKind::Dropout => Ok(vote_dropout(
                self.model,
                features,
                self.params.dropout_rate,
                self.params.dropout_passes,
                self.params.dropout_rng_seed,
            )?
            .score),
        }
    }

    pub fn score(&self, kind: DetectorKind, dialogue: &Dialogue) -> Result<f64> {
        let features = self.model.features(self.backend, dialogue)?;
        self.score_features(kind, &features)
    }

    /// Full verdict. Score-based detectors require a threshold; Dropout
    /// ignores it and votes on pass counts.
    pub fn verdict_features(
        &self,
        kind: DetectorKind,
        threshold: Option<f64>,
        features: &[f64],
    ) -> Result<DetectorVerdict> {
        if kind == DetectorKind::Dropout {
            return vote_dropout(
                self.model,
                features,
                self.params.dropout_rate,
                self.params.dropout_passes,
                self.params.dropout_rng_seed,
            );
        }
        let threshold =
            threshold.ok_or_else(|| Error::UntunedVoter(kind.name().to_string()))?;
        let score = self.score_features(kind, features)?;
        Ok(DetectorVerdict {
            detector: kind.name().into(),
            score,
            threshold: Some(threshold),
            vote: score > threshold,
        })
    }

    pub fn verdict(
        &self,
        kind: DetectorKind,
        threshold: Option<f64>,
        dialogue: &Dialogue,
    ) -> Result<DetectorVerdict> {
        let features = self.model.features(self.backend, dialogue)?;
        self.verdict_features(kind, threshold, &features)
    }
}
