//! The two training stages and the degradation transform.
//!
//! Pre-training runs plain SGD on the pretext cross-entropy over real-image
//! fingerprints and finishes by freezing the real prototype. Adaptation
//! fine-tunes the encoder on registered exemplars plus an equal number of
//! real fingerprints under the combined center/detection objective, updating
//! class centers after every parameter step and re-encoding the registry at
//! the end so queries and database share one feature space.
//!
//! The optimizer is deliberately plain SGD with a fixed rate: every gradient
//! in this crate is analytic and finite-difference-checked, and SGD keeps
//! the update rule auditable.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{EncoderParams, FeatureVector, ForwardPass, Gradients};
use crate::error::{Error, Result};
use crate::fingerprint::{FingerprintImage, RgbImage};
use crate::losses::{
    center_loss, detection_loss, pretext_loss, ClassCenters, LossWeights, RealPrototype,
    REAL_LABEL,
};
use crate::registry::Registry;
use crate::util::mix_seed;

const SHUFFLE_STREAM: u64 = 0x73687566;
const AUX_HEAD_STREAM: u64 = 0x61757868;

/// Which adaptation objective to optimize. The cross-entropy variants exist
/// as ablation comparators: they swap one or both metric-learning terms for
/// plain classification heads that are discarded after training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossVariant {
    /// Center loss for attribution plus prototype-similarity detection.
    #[default]
    Metric,
    /// Cross-entropy label head instead of the center loss.
    CeAttribution,
    /// Cross-entropy real/fake head instead of the detection loss.
    CeDetection,
    /// Both replacements at once.
    CeBoth,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [
        LossVariant::Metric,
        LossVariant::CeAttribution,
        LossVariant::CeDetection,
        LossVariant::CeBoth,
    ];

    fn uses_centers(self) -> bool {
        matches!(self, LossVariant::Metric | LossVariant::CeDetection)
    }

    fn ce_attribution(self) -> bool {
        matches!(self, LossVariant::CeAttribution | LossVariant::CeBoth)
    }

    fn ce_detection(self) -> bool {
        matches!(self, LossVariant::CeDetection | LossVariant::CeBoth)
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LossVariant::Metric => "metric",
            LossVariant::CeAttribution => "ce-attribution",
            LossVariant::CeDetection => "ce-detection",
            LossVariant::CeBoth => "ce-both",
        };
        f.write_str(s)
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metric" => Ok(LossVariant::Metric),
            "ce-attribution" => Ok(LossVariant::CeAttribution),
            "ce-detection" => Ok(LossVariant::CeDetection),
            "ce-both" => Ok(LossVariant::CeBoth),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss variant {other:?} (expected metric, ce-attribution, ce-detection, or ce-both)"
            ))),
        }
    }
}

/// Hyperparameters shared by both training stages.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weights: LossWeights,
    /// Center update rate.
    pub center_rate: f64,
    pub seed: u64,
    pub variant: LossVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            epochs: 100,
            weights: LossWeights::default(),
            center_rate: 0.5,
            seed: 0,
            variant: LossVariant::Metric,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.center_rate > 0.0 && self.center_rate <= 1.0) {
            return Err(Error::Config(format!(
                "center rate must lie in (0, 1], got {}",
                self.center_rate
            )));
        }
        self.weights.validate()
    }
}

/// One epoch's scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Total objective summed over the epoch's batches.
    pub loss: f64,
    /// Attribution term (0 during pre-training).
    pub center_loss: f64,
    /// Detection term (0 during pre-training or with lambda = 0).
    pub detection_loss: f64,
    /// Total distance the centers moved this epoch.
    pub center_drift: f64,
}

/// Full training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Wall-clock seconds; reported on the diagnostic stream only and kept
    /// out of the delimited output so reruns stay byte-identical.
    pub wall_seconds: f64,
}

impl TrainLog {
    /// Delimited per-epoch rows. Deliberately excludes wall time.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tloss\tcenter_loss\tdetection_loss\tcenter_drift\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\n",
                r.epoch, r.loss, r.center_loss, r.detection_loss, r.center_drift
            ));
        }
        out
    }
}

fn shuffled_indices(n: usize, seed: u64, epoch: usize, stream: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        mix_seed(seed, SHUFFLE_STREAM + stream),
        epoch as u64,
    ));
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

fn forward_batch(
    params: &EncoderParams,
    fps: &[&FingerprintImage],
) -> Result<Vec<ForwardPass>> {
    fps.par_iter().map(|fp| params.forward(fp)).collect()
}

/// SGD on the pretext cross-entropy over a labelled corpus of real-image
/// fingerprints. Returns the frozen real prototype (mean feature under the
/// final parameters, renormalized) and the per-epoch log.
pub fn pretrain(
    params: &mut EncoderParams,
    corpus: &[(FingerprintImage, usize)],
    config: &TrainConfig,
) -> Result<(RealPrototype, TrainLog)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty pre-training corpus".into()));
    }
    let classes = params.config.num_pretext_classes;
    let mut seen = std::collections::BTreeSet::new();
    for (_, class_id) in corpus {
        if *class_id >= classes {
            return Err(Error::InvalidArgument(format!(
                "class id {class_id} out of range for a {classes}-way pretext head"
            )));
        }
        seen.insert(*class_id);
    }
    if seen.len() < 2 {
        return Err(Error::InvalidArgument(
            "pre-training needs at least 2 content classes".into(),
        ));
    }

    let started = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = shuffled_indices(corpus.len(), config.seed, epoch, 0);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let fps: Vec<&FingerprintImage> = chunk.iter().map(|i| &corpus[*i].0).collect();
            let labels: Vec<usize> = chunk.iter().map(|i| corpus[*i].1).collect();
            let passes = forward_batch(params, &fps)?;
            let logits: Vec<Vec<f64>> = passes.iter().map(|p| p.logits.clone()).collect();
            let (loss, d_logits) = pretext_loss(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "pretext loss diverged at epoch {epoch}"
                )));
            }
            epoch_loss += loss;
            let zero_feat = vec![0.0; params.config.feature_dim];
            let grads_per: Vec<Gradients> = passes
                .par_iter()
                .zip(&d_logits)
                .map(|(pass, dl)| params.backward(pass, &zero_feat, dl))
                .collect();
            let mut total = Gradients::zeros_like(params);
            for g in &grads_per {
                total.add_assign(g);
            }
            params.apply_step(&total, config.learning_rate);
        }
        records.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            center_loss: 0.0,
            detection_loss: 0.0,
            center_drift: 0.0,
        });
    }

    let fps: Vec<&FingerprintImage> = corpus.iter().map(|(fp, _)| fp).collect();
    let features: Vec<FeatureVector> =
        fps.par_iter().map(|fp| params.forward(fp).map(|p| p.feature)).collect::<Result<_>>()?;
    let prototype = RealPrototype::from_features(&features)?;
    let log = TrainLog { records, wall_seconds: started.elapsed().as_secs_f64() };
    Ok((prototype, log))
}

/// Fraction of corpus samples whose pretext-head argmax matches the label.
pub fn pretext_accuracy(
    params: &EncoderParams,
    corpus: &[(FingerprintImage, usize)],
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let hits: usize = corpus
        .par_iter()
        .map(|(fp, class_id)| {
            let pass = params.forward(fp)?;
            let argmax = pass
                .logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(i, _)| i)
                .unwrap_or(0);
            Ok(usize::from(argmax == *class_id))
        })
        .collect::<Result<Vec<usize>>>()?
        .iter()
        .sum();
    Ok(hits as f64 / corpus.len() as f64)
}

/// Simple trainable linear layer used for the cross-entropy ablation heads.
struct LinearHead {
    in_dim: usize,
    out_dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl LinearHead {
    fn init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            w: (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
            b: (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|o| {
                self.b[o]
                    + self.w[o * self.in_dim..(o + 1) * self.in_dim]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Accumulates weight gradients scaled by `scale` and returns the
    /// gradient with respect to the input, also scaled.
    fn backward(
        &self,
        x: &[f64],
        d_out: &[f64],
        scale: f64,
        d_w: &mut [f64],
        d_b: &mut [f64],
    ) -> Vec<f64> {
        let mut d_x = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = scale * d_out[o];
            d_b[o] += g;
            for i in 0..self.in_dim {
                d_w[o * self.in_dim + i] += g * x[i];
                d_x[i] += g * self.w[o * self.in_dim + i];
            }
        }
        d_x
    }

    fn step(&mut self, d_w: &[f64], d_b: &[f64], rate: f64) {
        for (w, g) in self.w.iter_mut().zip(d_w) {
            *w -= rate * g;
        }
        for (b, g) in self.b.iter_mut().zip(d_b) {
            *b -= rate * g;
        }
    }
}

/// Result of [`adapt`]: the final class centers (for variants that use
/// them) and the per-epoch log.
#[derive(Debug)]
pub struct AdaptOutcome {
    pub centers: Option<ClassCenters>,
    pub log: TrainLog,
}

/// Few-shot adaptation. `exemplar_fingerprints` must hold the fingerprint
/// of every registry record (keyed by record id); real fingerprints must
/// match the fake exemplar count exactly. On success the encoder has been
/// fine-tuned in place and every registry feature re-encoded with it.
pub fn adapt(
    params: &mut EncoderParams,
    registry: &mut Registry,
    exemplar_fingerprints: &BTreeMap<u64, FingerprintImage>,
    real_fingerprints: &[FingerprintImage],
    prototype: &RealPrototype,
    config: &TrainConfig,
) -> Result<AdaptOutcome> {
    config.validate()?;
    if config.batch_size < 2 {
        return Err(Error::Config("adaptation needs a batch size of at least 2".into()));
    }
    if registry.is_empty() {
        return Err(Error::InvalidArgument("registry has no exemplars to adapt on".into()));
    }
    if prototype.dim() != params.config.feature_dim {
        return Err(Error::IncompatibleEncoder(format!(
            "prototype dim {} vs encoder feature dim {}",
            prototype.dim(),
            params.config.feature_dim
        )));
    }

    // Split the training set into fake and real sides.
    let mut fakes: Vec<(&FingerprintImage, &str)> = Vec::new();
    let mut reals: Vec<(&FingerprintImage, &str)> = Vec::new();
    for record in registry.records() {
        let fp = exemplar_fingerprints.get(&record.id).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "no fingerprint supplied for registry record {}",
                record.id
            ))
        })?;
        if record.label == REAL_LABEL {
            reals.push((fp, REAL_LABEL));
        } else {
            fakes.push((fp, record.label.as_str()));
        }
    }
    for fp in real_fingerprints {
        reals.push((fp, REAL_LABEL));
    }
    if fakes.is_empty() {
        return Err(Error::InvalidArgument("no fake-labeled exemplars to adapt on".into()));
    }
    if reals.len() != fakes.len() {
        return Err(Error::InvalidArgument(format!(
            "adaptation needs equal real and fake counts, got {} real vs {} fake",
            reals.len(),
            fakes.len()
        )));
    }

    // Label bookkeeping for the cross-entropy attribution head.
    let mut label_ids: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, label) in fakes.iter().chain(&reals) {
        let next = label_ids.len();
        label_ids.entry(label).or_insert(next);
    }

    // Initialize centers to per-label mean features under current params.
    let all_fps: Vec<&FingerprintImage> =
        fakes.iter().chain(&reals).map(|(fp, _)| *fp).collect();
    let all_labels: Vec<&str> = fakes.iter().chain(&reals).map(|(_, l)| *l).collect();
    let mut centers = if config.variant.uses_centers() {
        let passes = forward_batch(params, &all_fps)?;
        let features: Vec<FeatureVector> = passes.into_iter().map(|p| p.feature).collect();
        Some(ClassCenters::from_features(config.center_rate, &features, &all_labels)?)
    } else {
        None
    };

    let mut aux_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, AUX_HEAD_STREAM));
    let feature_dim = params.config.feature_dim;
    let mut attr_head = config
        .variant
        .ce_attribution()
        .then(|| LinearHead::init(feature_dim, label_ids.len(), &mut aux_rng));
    let mut det_head = config
        .variant
        .ce_detection()
        .then(|| LinearHead::init(feature_dim, 2, &mut aux_rng));

    let half = (config.batch_size / 2).max(1);
    let started = Instant::now();
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let fake_order = shuffled_indices(fakes.len(), config.seed, epoch, 1);
        let real_order = shuffled_indices(reals.len(), config.seed, epoch, 2);
        let mut epoch_total = 0.0;
        let mut epoch_attr = 0.0;
        let mut epoch_det = 0.0;
        let mut epoch_drift = 0.0;
        for (fake_chunk, real_chunk) in fake_order.chunks(half).zip(real_order.chunks(half)) {
            let mut fps: Vec<&FingerprintImage> = Vec::with_capacity(fake_chunk.len() * 2);
            let mut labels: Vec<&str> = Vec::with_capacity(fake_chunk.len() * 2);
            for i in fake_chunk {
                fps.push(fakes[*i].0);
                labels.push(fakes[*i].1);
            }
            for i in real_chunk {
                fps.push(reals[*i].0);
                labels.push(reals[*i].1);
            }
            let passes = forward_batch(params, &fps)?;
            let features: Vec<FeatureVector> =
                passes.iter().map(|p| p.feature.clone()).collect();

            let mut d_features = vec![vec![0.0; feature_dim]; features.len()];
            let mut det_term = 0.0;
            let mut attr_grads: Option<(Vec<f64>, Vec<f64>)> = None;
            let mut det_grads: Option<(Vec<f64>, Vec<f64>)> = None;

            let attr_term = match (&mut attr_head, &mut centers) {
                (Some(head), _) => {
                    let logits: Vec<Vec<f64>> =
                        features.iter().map(|f| head.forward(&f.values)).collect();
                    let targets: Vec<usize> = labels.iter().map(|l| label_ids[l]).collect();
                    let (loss, d_logits) = pretext_loss(&logits, &targets)?;
                    let mut d_w = vec![0.0; head.w.len()];
                    let mut d_b = vec![0.0; head.b.len()];
                    for ((f, dl), df) in
                        features.iter().zip(&d_logits).zip(d_features.iter_mut())
                    {
                        let d_x = head.backward(&f.values, dl, 1.0, &mut d_w, &mut d_b);
                        for (a, b) in df.iter_mut().zip(&d_x) {
                            *a += b;
                        }
                    }
                    attr_grads = Some((d_w, d_b));
                    loss
                }
                (None, Some(centers)) => {
                    let (loss, grads) = center_loss(&features, &labels, centers)?;
                    for (df, g) in d_features.iter_mut().zip(&grads) {
                        for (a, b) in df.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                    loss
                }
                (None, None) => unreachable!("some attribution objective is always active"),
            };

            let lambda = config.weights.lambda;
            if lambda != 0.0 {
                let is_real: Vec<bool> = labels.iter().map(|l| *l == REAL_LABEL).collect();
                if let Some(head) = &mut det_head {
                    let logits: Vec<Vec<f64>> =
                        features.iter().map(|f| head.forward(&f.values)).collect();
                    let targets: Vec<usize> =
                        is_real.iter().map(|r| usize::from(*r)).collect();
                    let (loss, d_logits) = pretext_loss(&logits, &targets)?;
                    det_term = loss;
                    let mut d_w = vec![0.0; head.w.len()];
                    let mut d_b = vec![0.0; head.b.len()];
                    for ((f, dl), df) in
                        features.iter().zip(&d_logits).zip(d_features.iter_mut())
                    {
                        let d_x = head.backward(&f.values, dl, lambda, &mut d_w, &mut d_b);
                        for (a, b) in df.iter_mut().zip(&d_x) {
                            *a += b;
                        }
                    }
                    det_grads = Some((d_w, d_b));
                } else {
                    let (loss, grads) =
                        detection_loss(&features, &is_real, prototype, config.weights.tau)?;
                    det_term = loss;
                    for (df, g) in d_features.iter_mut().zip(&grads) {
                        for (a, b) in df.iter_mut().zip(g) {
                            *a += lambda * b;
                        }
                    }
                }
            }

            let total = attr_term + lambda * det_term;
            if !total.is_finite() {
                return Err(Error::Numerical(format!(
                    "adaptation loss diverged at epoch {epoch}"
                )));
            }
            epoch_total += total;
            epoch_attr += attr_term;
            epoch_det += det_term;

            let zero_logits = vec![0.0; params.config.num_pretext_classes];
            let grads_per: Vec<Gradients> = passes
                .par_iter()
                .zip(&d_features)
                .map(|(pass, df)| params.backward(pass, df, &zero_logits))
                .collect();
            let mut total_grads = Gradients::zeros_like(params);
            for g in &grads_per {
                total_grads.add_assign(g);
            }
            params.apply_step(&total_grads, config.learning_rate);
            if let (Some(head), Some((d_w, d_b))) = (&mut attr_head, attr_grads) {
                head.step(&d_w, &d_b, config.learning_rate);
            }
            if let (Some(head), Some((d_w, d_b))) = (&mut det_head, det_grads) {
                head.step(&d_w, &d_b, config.learning_rate);
            }

            if let Some(centers) = &mut centers {
                let before: Vec<Vec<f64>> =
                    centers.iter().map(|(_, c)| c.clone()).collect();
                centers.update(&features, &labels)?;
                let moved: f64 = centers
                    .iter()
                    .zip(&before)
                    .map(|((_, after), b)| {
                        after.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
                    })
                    .sum();
                epoch_drift += moved.sqrt();
            }
        }
        records.push(EpochRecord {
            epoch,
            loss: epoch_total,
            center_loss: epoch_attr,
            detection_loss: epoch_det,
            center_drift: epoch_drift,
        });
    }

    // Re-encode the registry so stored features live in the adapted space.
    let record_ids: Vec<u64> = registry.records().iter().map(|r| r.id).collect();
    let new_features: Vec<FeatureVector> = record_ids
        .par_iter()
        .map(|id| params.embed(&exemplar_fingerprints[id]))
        .collect::<Result<_>>()?;
    for (id, feature) in record_ids.into_iter().zip(new_features) {
        registry.update_feature(id, feature)?;
    }

    let log = TrainLog { records, wall_seconds: started.elapsed().as_secs_f64() };
    Ok(AdaptOutcome { centers, log })
}

/// Gaussian blur with standard deviation `sigma`; `sigma == 0` is the
/// byte-exact identity. Separable kernel of radius ceil(3 sigma), mirrored
/// boundary (edge pixel not repeated), rounded back to 8 bits at the end.
pub fn degrade(img: &RgbImage, sigma: f64) -> Result<RgbImage> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blur sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let mut kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let (w, h) = (img.width(), img.height());
    // Mirror index without repeating the boundary pixel.
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    };

    let mut out_pixels = vec![0u8; 3 * w * h];
    for c in 0..3 {
        let mut plane = vec![0.0f64; w * h];
        for (idx, v) in plane.iter_mut().enumerate() {
            *v = f64::from(img.as_raw()[idx * 3 + c]);
        }
        // Horizontal pass.
        let mut tmp = vec![0.0f64; w * h];
        for r in 0..h {
            for q in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let x = reflect(q as isize + ki as isize - radius as isize, w);
                    acc += kv * plane[r * w + x];
                }
                tmp[r * w + q] = acc;
            }
        }
        // Vertical pass.
        for r in 0..h {
            for q in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let y = reflect(r as isize + ki as isize - radius as isize, h);
                    acc += kv * tmp[y * w + q];
                }
                out_pixels[(r * w + q) * 3 + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(w, h, out_pixels)
}
