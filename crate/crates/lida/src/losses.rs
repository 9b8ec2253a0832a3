//! Training objectives with exact analytic gradients.
//!
//! Three losses are combined during training: a cross-entropy pretext loss
//! for pre-training, a class-center pull-in loss for attribution, and a
//! prototype-similarity loss for real/fake detection. Every function returns
//! both the loss value and its gradient so the caller never has to
//! re-derive anything.

use std::collections::BTreeMap;

use crate::encoder::FeatureVector;
use crate::error::{Error, Result};

/// Label reserved for genuine (non-generated) images.
pub const REAL_LABEL: &str = "real";

/// Mixing weights of the combined adaptation objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the detection term. Zero disables it entirely.
    pub lambda: f64,
    /// Temperature dividing the cosine similarity before the sigmoid.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 0.9, tau: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be finite and > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Breakdown of the combined adaptation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    /// `center + lambda * detection`.
    pub total: f64,
    pub center: f64,
    /// Unweighted detection term (0 when disabled).
    pub detection: f64,
}

/// Sum of per-sample cross-entropies over a batch of logit vectors.
/// Returns the loss and per-sample logit gradients (softmax minus one-hot).
pub fn pretext_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} logit vectors but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let classes = logits[0].len();
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &label) in logits.iter().zip(labels) {
        if row.len() != classes {
            return Err(Error::InvalidArgument("ragged logit batch".into()));
        }
        if label >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        loss += denom.ln() - (row[label] - max);
        let mut g: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        g[label] -= 1.0;
        grads.push(g);
    }
    if !loss.is_finite() {
        return Err(Error::Numerical("pretext loss diverged".into()));
    }
    Ok((loss, grads))
}

/// One learned center per class label, pulled toward its class features
/// during adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    /// Update rate of the running centers.
    pub alpha: f64,
    centers: BTreeMap<String, Vec<f64>>,
}

impl ClassCenters {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, centers: BTreeMap::new() }
    }

    /// Initialize each center to the mean feature of its label.
    pub fn from_features(
        alpha: f64,
        features: &[FeatureVector],
        labels: &[impl AsRef<str>],
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::InvalidArgument("feature/label count mismatch".into()));
        }
        if features.is_empty() {
            return Err(Error::InvalidArgument("no features to initialize centers from".into()));
        }
        let dim = features[0].len();
        let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
        for (f, l) in features.iter().zip(labels) {
            if f.len() != dim {
                return Err(Error::InvalidArgument("ragged feature batch".into()));
            }
            let entry = sums.entry(l.as_ref().to_string()).or_insert_with(|| (vec![0.0; dim], 0));
            for (s, v) in entry.0.iter_mut().zip(&f.values) {
                *s += v;
            }
            entry.1 += 1;
        }
        let centers = sums
            .into_iter()
            .map(|(label, (sum, n))| (label, sum.into_iter().map(|s| s / n as f64).collect()))
            .collect();
        Ok(Self { alpha, centers })
    }

    pub fn insert(&mut self, label: String, values: Vec<f64>) {
        self.centers.insert(label, values);
    }

    pub fn get(&self, label: &str) -> Option<&[f64]> {
        self.centers.get(label).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.centers.iter()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.centers.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Move each center toward the mean of this batch's matching features:
    /// `c_j <- c_j - alpha * sum_i [y_i = j](c_j - x_i) / (1 + count_j)`.
    /// Centers with no matching sample stay put.
    pub fn update(&mut self, features: &[FeatureVector], labels: &[impl AsRef<str>]) -> Result<()> {
        if features.len() != labels.len() {
            return Err(Error::InvalidArgument("feature/label count mismatch".into()));
        }
        let mut deltas: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for (f, l) in features.iter().zip(labels) {
            let label = l.as_ref();
            let center = self
                .centers
                .get(label)
                .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
            if f.len() != center.len() {
                return Err(Error::InvalidArgument(format!(
                    "feature dim {} does not match center dim {}",
                    f.len(),
                    center.len()
                )));
            }
            let entry = deltas
                .entry(self.centers.get_key_value(label).unwrap().0.as_str())
                .or_insert_with(|| (vec![0.0; center.len()], 0));
            for ((d, c), x) in entry.0.iter_mut().zip(center).zip(&f.values) {
                *d += c - x;
            }
            entry.1 += 1;
        }
        let moves: Vec<(String, Vec<f64>, usize)> = deltas
            .into_iter()
            .map(|(label, (delta, n))| (label.to_string(), delta, n))
            .collect();
        for (label, delta, n) in moves {
            let center = self.centers.get_mut(&label).expect("label checked above");
            let scale = self.alpha / (1.0 + n as f64);
            for (c, d) in center.iter_mut().zip(&delta) {
                *c -= scale * d;
            }
        }
        Ok(())
    }
}

/// Sum of squared distances from each feature to its class center.
/// Returns the loss and per-sample feature gradients `2 (x_i - c_{y_i})`.
pub fn center_loss(
    features: &[FeatureVector],
    labels: &[impl AsRef<str>],
    centers: &ClassCenters,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument("feature/label count mismatch".into()));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(features.len());
    for (f, l) in features.iter().zip(labels) {
        let label = l.as_ref();
        let center = centers
            .get(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
        if f.len() != center.len() {
            return Err(Error::InvalidArgument(format!(
                "feature dim {} does not match center dim {}",
                f.len(),
                center.len()
            )));
        }
        let mut g = Vec::with_capacity(f.len());
        for (x, c) in f.values.iter().zip(center) {
            let d = x - c;
            loss += d * d;
            g.push(2.0 * d);
        }
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Unit-norm anchor for genuine images, fixed at the end of pre-training.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPrototype {
    /// Unit-norm feature vector.
    pub values: FeatureVector,
    /// How many features were averaged to build it.
    pub sample_count: u64,
}

impl RealPrototype {
    /// Wrap an already unit-norm vector. The values are stored untouched so
    /// serialization round-trips bit-exactly.
    pub fn from_unit(values: FeatureVector, sample_count: u64) -> Result<Self> {
        let norm = values.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "prototype must be unit norm, got {norm}"
            )));
        }
        Ok(Self { values, sample_count })
    }

    /// Renormalized mean of the given features (each normalized first).
    pub fn from_features(features: &[FeatureVector]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidArgument("no features to build a prototype from".into()));
        }
        let dim = features[0].len();
        let mut mean = vec![0.0; dim];
        for f in features {
            if f.len() != dim {
                return Err(Error::InvalidArgument("ragged feature batch".into()));
            }
            let unit = f.normalize()?;
            for (m, v) in mean.iter_mut().zip(&unit.values) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= features.len() as f64;
        }
        let values = FeatureVector::new(mean).normalize()?;
        Ok(Self { values, sample_count: features.len() as u64 })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Binary real-vs-fake loss on prototype similarity:
/// `-(1/N_r) sum_real ln s(cos/tau) - (1/N_f) sum_fake ln(1 - s(cos/tau))`
/// where `s` is the sigmoid. The gradient flows through the full cosine, so
/// it shrinks feature magnitude as well as rotating direction.
pub fn detection_loss(
    features: &[FeatureVector],
    is_real: &[bool],
    prototype: &RealPrototype,
    tau: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if features.len() != is_real.len() {
        return Err(Error::InvalidArgument("feature/flag count mismatch".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("tau must be finite and > 0, got {tau}")));
    }
    let n_real = is_real.iter().filter(|r| **r).count();
    let n_fake = is_real.len() - n_real;
    if n_real == 0 || n_fake == 0 {
        return Err(Error::InvalidArgument(
            "detection loss needs at least one real and one fake sample".into(),
        ));
    }
    let p = &prototype.values;
    let np = p.norm();
    const SIG_FLOOR: f64 = 1e-12;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(features.len());
    for (f, &real) in features.iter().zip(is_real) {
        if f.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "feature dim {} does not match prototype dim {}",
                f.len(),
                p.len()
            )));
        }
        let nx = f.norm();
        if nx == 0.0 || !nx.is_finite() {
            return Err(Error::DegenerateFeature);
        }
        let sim = f.dot(p) / (nx * np);
        let sigma = (1.0 / (1.0 + (-sim / tau).exp())).clamp(SIG_FLOOR, 1.0 - SIG_FLOOR);
        // dL/dsim, group-averaged.
        let d_sim = if real {
            loss -= sigma.ln() / n_real as f64;
            -(1.0 - sigma) / (n_real as f64 * tau)
        } else {
            loss -= (1.0 - sigma).ln() / n_fake as f64;
            sigma / (n_fake as f64 * tau)
        };
        // dsim/dx = p/(|x||p|) - sim x/|x|^2.
        let g: Vec<f64> = f
            .values
            .iter()
            .zip(&p.values)
            .map(|(x, pv)| d_sim * (pv / (nx * np) - sim * x / (nx * nx)))
            .collect();
        grads.push(g);
    }
    if !loss.is_finite() {
        return Err(Error::Numerical("detection loss diverged".into()));
    }
    Ok((loss, grads))
}

/// Combined adaptation objective: center loss plus `lambda` times the
/// detection loss. Samples labelled [`REAL_LABEL`] count as real for the
/// detection term. With `lambda == 0` the detection term is skipped, so
/// one-sided batches are fine.
pub fn adaptation_loss(
    features: &[FeatureVector],
    labels: &[impl AsRef<str>],
    centers: &ClassCenters,
    prototype: &RealPrototype,
    weights: &LossWeights,
) -> Result<(LossValue, Vec<Vec<f64>>)> {
    weights.validate()?;
    let (center, mut grads) = center_loss(features, labels, centers)?;
    let mut detection = 0.0;
    if weights.lambda != 0.0 {
        let is_real: Vec<bool> = labels.iter().map(|l| l.as_ref() == REAL_LABEL).collect();
        let (d_loss, d_grads) = detection_loss(features, &is_real, prototype, weights.tau)?;
        detection = d_loss;
        for (g, dg) in grads.iter_mut().zip(&d_grads) {
            for (a, b) in g.iter_mut().zip(dg) {
                *a += weights.lambda * b;
            }
        }
    }
    Ok((LossValue { total: center + weights.lambda * detection, center, detection }, grads))
}
