//! Small convolutional feature encoder with hand-derived gradients.
//!
//! The encoder maps a fingerprint to a feature vector used for retrieval and
//! to pretext-task logits used during pre-training. Convolutions keep
//! stride 1 in the lower layers so spatial detail survives to the pooling
//! stage. All arithmetic is f64 and every gradient is analytic; there is no
//! autodiff framework behind this module.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CorruptKind, Error, Result};
use crate::fingerprint::{Channel, FingerprintImage};
use crate::losses::{ClassCenters, RealPrototype};
use crate::util::{atomic_write, put_f64, put_f64_slice, put_string, put_u32, put_u64, ByteReader};

/// Architecture and initialization description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Square input side; larger fingerprints are center-cropped to this.
    pub input_side: usize,
    /// Per layer: (out_channels, kernel_side, stride). Same-padding, tanh.
    pub conv_layers: Vec<(usize, usize, usize)>,
    /// Length of the retrieval feature.
    pub feature_dim: usize,
    /// Width of the pretext classification head.
    pub num_pretext_classes: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_side: 32,
            conv_layers: vec![(8, 3, 1), (16, 3, 1), (32, 3, 1)],
            feature_dim: 64,
            num_pretext_classes: 3,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_side == 0 {
            return Err(Error::Config("input side must be positive".into()));
        }
        if self.conv_layers.is_empty() {
            return Err(Error::Config("at least one conv layer required".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("feature dim must be at least 2".into()));
        }
        if self.num_pretext_classes < 2 {
            return Err(Error::Config("pretext head needs at least 2 classes".into()));
        }
        let lower = self.conv_layers.len().div_ceil(2);
        let mut side = self.input_side;
        for (idx, &(out_ch, kernel, stride)) in self.conv_layers.iter().enumerate() {
            if out_ch == 0 {
                return Err(Error::Config(format!("layer {idx}: zero output channels")));
            }
            if kernel == 0 || kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "layer {idx}: kernel side must be odd and positive, got {kernel}"
                )));
            }
            if stride == 0 {
                return Err(Error::Config(format!("layer {idx}: zero stride")));
            }
            if idx < lower && stride != 1 {
                return Err(Error::Config(format!(
                    "layer {idx}: lower layers must keep stride 1, got {stride}"
                )));
            }
            side = (side - 1) / stride + 1;
            if side == 0 {
                return Err(Error::Config(format!("layer {idx}: spatial size collapsed")));
            }
        }
        Ok(())
    }

    /// Channel count after the last conv layer.
    fn last_channels(&self) -> usize {
        self.conv_layers.last().map(|l| l.0).unwrap_or(0)
    }
}

/// One convolution layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Weights indexed [out][in][kh][kw], flattened.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn weight_index(&self, o: usize, ic: usize, kh: usize, kw: usize) -> usize {
        ((o * self.in_channels + ic) * self.kernel + kh) * self.kernel + kw
    }
}

/// All trainable parameters of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<ConvLayer>,
    /// Projection weights [feature_dim][last_channels], flattened.
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    /// Pretext head weights [classes][feature_dim], flattened.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl EncoderParams {
    /// Initialize from a uniform distribution scaled by fan-in,
    /// bit-reproducible for a given `config.seed`.
    pub fn init(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let mut layers = Vec::with_capacity(config.conv_layers.len());
        let mut in_channels = 3;
        for &(out_channels, kernel, stride) in &config.conv_layers {
            let fan_in = in_channels * kernel * kernel;
            layers.push(ConvLayer {
                in_channels,
                out_channels,
                kernel,
                stride,
                weights: draw(out_channels * fan_in, fan_in),
                bias: draw(out_channels, fan_in),
            });
            in_channels = out_channels;
        }
        let last = config.last_channels();
        let proj_w = draw(config.feature_dim * last, last);
        let proj_b = draw(config.feature_dim, last);
        let head_w = draw(config.num_pretext_classes * config.feature_dim, config.feature_dim);
        let head_b = draw(config.num_pretext_classes, config.feature_dim);
        Ok(Self { config: config.clone(), layers, proj_w, proj_b, head_w, head_b })
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>()
            + self.proj_w.len()
            + self.proj_b.len()
            + self.head_w.len()
            + self.head_b.len()
    }

    /// All parameters in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out.extend_from_slice(&self.proj_w);
        out.extend_from_slice(&self.proj_b);
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
        out
    }

    /// Overwrite all parameters from a flat slice (declaration order).
    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length mismatch");
        let mut pos = 0;
        let take = |dst: &mut [f64], pos: &mut usize| {
            dst.copy_from_slice(&flat[*pos..*pos + dst.len()]);
            *pos += dst.len();
        };
        for layer in &mut self.layers {
            take(&mut layer.weights, &mut pos);
            take(&mut layer.bias, &mut pos);
        }
        take(&mut self.proj_w, &mut pos);
        take(&mut self.proj_b, &mut pos);
        take(&mut self.head_w, &mut pos);
        take(&mut self.head_b, &mut pos);
    }

    /// `p <- p - rate * g` for every parameter.
    pub fn apply_step(&mut self, grads: &Gradients, rate: f64) {
        let step = |p: &mut [f64], g: &[f64]| {
            for (pv, gv) in p.iter_mut().zip(g) {
                *pv -= rate * gv;
            }
        };
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            step(&mut layer.weights, &g.0);
            step(&mut layer.bias, &g.1);
        }
        step(&mut self.proj_w, &grads.proj_w);
        step(&mut self.proj_b, &grads.proj_b);
        step(&mut self.head_w, &grads.head_w);
        step(&mut self.head_b, &grads.head_b);
    }

    /// Run the encoder on a fingerprint. Inputs larger than
    /// `config.input_side` are center-cropped; smaller inputs are rejected.
    /// {0,255} fingerprint values enter the network as {0,1}.
    pub fn forward(&self, fp: &FingerprintImage) -> Result<ForwardPass> {
        let side = self.config.input_side;
        let cropped;
        let fp = if fp.width() == side && fp.height() == side {
            fp
        } else {
            cropped = fp.center_crop(side)?;
            &cropped
        };
        let mut input = Vec::with_capacity(3 * side * side);
        for channel in Channel::ALL {
            input.extend(fp.channel(channel).iter().map(|v| f64::from(*v / 255)));
        }

        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut dims: Vec<(usize, usize)> = Vec::with_capacity(self.layers.len());
        let mut cur = &input;
        let (mut h, mut w) = (side, side);
        for layer in &self.layers {
            let (out, oh, ow) = conv_forward(layer, cur, h, w);
            if layer.stride == 1 {
                assert_eq!((oh, ow), (h, w), "stride-1 layer must preserve spatial size");
            }
            let mut act = out;
            for v in &mut act {
                *v = v.tanh();
            }
            activations.push(act);
            dims.push((oh, ow));
            cur = activations.last().unwrap();
            (h, w) = (oh, ow);
        }

        let last_ch = self.config.last_channels();
        let spatial = h * w;
        let mut pooled = vec![0.0; last_ch];
        let last = activations.last().unwrap();
        for (c, p) in pooled.iter_mut().enumerate() {
            *p = last[c * spatial..(c + 1) * spatial].iter().sum::<f64>() / spatial as f64;
        }

        let fd = self.config.feature_dim;
        let mut feature = self.proj_b.clone();
        for (f, out) in feature.iter_mut().enumerate() {
            let row = &self.proj_w[f * last_ch..(f + 1) * last_ch];
            *out += row.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut logits = self.head_b.clone();
        for (c, out) in logits.iter_mut().enumerate() {
            let row = &self.head_w[c * fd..(c + 1) * fd];
            *out += row.iter().zip(&feature).map(|(a, b)| a * b).sum::<f64>();
        }

        Ok(ForwardPass {
            feature: FeatureVector::new(feature),
            logits,
            trace: Trace { input, activations, dims, pooled },
        })
    }

    /// Exact gradients of `d_feature . feature + d_logits . logits` with
    /// respect to every parameter, given the trace of a forward pass.
    pub fn backward(&self, pass: &ForwardPass, d_feature: &[f64], d_logits: &[f64]) -> Gradients {
        let fd = self.config.feature_dim;
        let last_ch = self.config.last_channels();
        assert_eq!(d_feature.len(), fd, "feature gradient length");
        assert_eq!(d_logits.len(), self.config.num_pretext_classes, "logit gradient length");
        let mut grads = Gradients::zeros_like(self);

        // Head.
        let feature = &pass.feature.values;
        for (c, &dl) in d_logits.iter().enumerate() {
            grads.head_b[c] = dl;
            for (g, &fv) in grads.head_w[c * fd..(c + 1) * fd].iter_mut().zip(feature) {
                *g = dl * fv;
            }
        }
        // Total gradient reaching the feature.
        let mut d_feat = d_feature.to_vec();
        for (c, &dl) in d_logits.iter().enumerate() {
            for (d, &w) in d_feat.iter_mut().zip(&self.head_w[c * fd..(c + 1) * fd]) {
                *d += dl * w;
            }
        }
        // Projection.
        let pooled = &pass.trace.pooled;
        let mut d_pooled = vec![0.0; last_ch];
        for (f, &df) in d_feat.iter().enumerate() {
            grads.proj_b[f] = df;
            for ch in 0..last_ch {
                grads.proj_w[f * last_ch + ch] = df * pooled[ch];
                d_pooled[ch] += df * self.proj_w[f * last_ch + ch];
            }
        }
        // Global average pool.
        let (lh, lw) = *pass.trace.dims.last().unwrap();
        let spatial = lh * lw;
        let mut d_act = vec![0.0; last_ch * spatial];
        for c in 0..last_ch {
            let g = d_pooled[c] / spatial as f64;
            d_act[c * spatial..(c + 1) * spatial].fill(g);
        }

        // Conv stack, last to first.
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let act = &pass.trace.activations[idx];
            let (oh, ow) = pass.trace.dims[idx];
            // tanh'(z) = 1 - tanh(z)^2, with act = tanh(z).
            let mut d_pre = d_act;
            for (d, a) in d_pre.iter_mut().zip(act) {
                *d *= 1.0 - a * a;
            }
            let (below, bh, bw) = if idx == 0 {
                (&pass.trace.input, self.config.input_side, self.config.input_side)
            } else {
                let (h, w) = pass.trace.dims[idx - 1];
                (&pass.trace.activations[idx - 1], h, w)
            };
            let g = &mut grads.layers[idx];
            d_act = conv_backward(layer, below, bh, bw, &d_pre, oh, ow, &mut g.0, &mut g.1);
        }
        grads
    }

    /// Fingerprint -> unit-norm feature, the standard retrieval path.
    pub fn embed(&self, fp: &FingerprintImage) -> Result<FeatureVector> {
        self.forward(fp)?.feature.normalize()
    }
}

/// Output of [`EncoderParams::forward`], holding everything the backward
/// pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Pre-normalization feature.
    pub feature: FeatureVector,
    pub logits: Vec<f64>,
    trace: Trace,
}

impl ForwardPass {
    /// Spatial dimensions after each conv layer.
    pub fn layer_dims(&self) -> &[(usize, usize)] {
        &self.trace.dims
    }
}

#[derive(Debug, Clone)]
struct Trace {
    input: Vec<f64>,
    activations: Vec<Vec<f64>>,
    dims: Vec<(usize, usize)>,
    pooled: Vec<f64>,
}

/// Parameter gradients, shaped like [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per layer: (weight grads, bias grads).
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub proj_w: Vec<f64>,
    pub proj_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
            proj_w: vec![0.0; params.proj_w.len()],
            proj_b: vec![0.0; params.proj_b.len()],
            head_w: vec![0.0; params.head_w.len()],
            head_b: vec![0.0; params.head_b.len()],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        let add = |a: &mut [f64], b: &[f64]| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        };
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            add(&mut mine.0, &theirs.0);
            add(&mut mine.1, &theirs.1);
        }
        add(&mut self.proj_w, &other.proj_w);
        add(&mut self.proj_b, &other.proj_b);
        add(&mut self.head_w, &other.head_w);
        add(&mut self.head_b, &other.head_b);
    }

    pub fn scale(&mut self, factor: f64) {
        let sc = |a: &mut [f64]| {
            for x in a.iter_mut() {
                *x *= factor;
            }
        };
        for layer in &mut self.layers {
            sc(&mut layer.0);
            sc(&mut layer.1);
        }
        sc(&mut self.proj_w);
        sc(&mut self.proj_b);
        sc(&mut self.head_w);
        sc(&mut self.head_b);
    }

    /// All gradients in declaration order (matches `EncoderParams::flatten`).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.proj_w);
        out.extend_from_slice(&self.proj_b);
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
        out
    }
}

/// Same-padding convolution. Returns (output, out_h, out_w) with output
/// indexed [out_channel][row][col].
fn conv_forward(layer: &ConvLayer, input: &[f64], in_h: usize, in_w: usize) -> (Vec<f64>, usize, usize) {
    let k = layer.kernel;
    let p = (k - 1) / 2;
    let s = layer.stride;
    let out_h = (in_h - 1) / s + 1;
    let out_w = (in_w - 1) / s + 1;
    let mut out = vec![0.0; layer.out_channels * out_h * out_w];
    for o in 0..layer.out_channels {
        let plane = &mut out[o * out_h * out_w..(o + 1) * out_h * out_w];
        plane.fill(layer.bias[o]);
        for ic in 0..layer.in_channels {
            let in_plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            for kh in 0..k {
                for kw in 0..k {
                    let w = layer.weights[layer.weight_index(o, ic, kh, kw)];
                    if s == 1 {
                        let i_lo = p.saturating_sub(kh);
                        let i_hi = (in_h + p).saturating_sub(kh).min(out_h);
                        let j_lo = p.saturating_sub(kw);
                        let j_hi = (in_w + p).saturating_sub(kw).min(out_w);
                        for i in i_lo..i_hi {
                            let y = i + kh - p;
                            let in_row = &in_plane[y * in_w..y * in_w + in_w];
                            let out_row = &mut plane[i * out_w..i * out_w + out_w];
                            for j in j_lo..j_hi {
                                out_row[j] += w * in_row[j + kw - p];
                            }
                        }
                    } else {
                        for i in 0..out_h {
                            let y = (i * s + kh) as isize - p as isize;
                            if y < 0 || y as usize >= in_h {
                                continue;
                            }
                            for j in 0..out_w {
                                let x = (j * s + kw) as isize - p as isize;
                                if x < 0 || x as usize >= in_w {
                                    continue;
                                }
                                plane[i * out_w + j] += w * in_plane[y as usize * in_w + x as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, out_h, out_w)
}

/// Gradients of a same-padding convolution: fills weight/bias grads and
/// returns the gradient with respect to the layer input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    layer: &ConvLayer,
    input: &[f64],
    in_h: usize,
    in_w: usize,
    d_out: &[f64],
    out_h: usize,
    out_w: usize,
    d_weights: &mut [f64],
    d_bias: &mut [f64],
) -> Vec<f64> {
    let k = layer.kernel;
    let p = (k - 1) / 2;
    let s = layer.stride;
    let mut d_input = vec![0.0; layer.in_channels * in_h * in_w];
    for o in 0..layer.out_channels {
        let d_plane = &d_out[o * out_h * out_w..(o + 1) * out_h * out_w];
        d_bias[o] += d_plane.iter().sum::<f64>();
        for ic in 0..layer.in_channels {
            let in_plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            let dx_plane = &mut d_input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
            for kh in 0..k {
                for kw in 0..k {
                    let widx = layer.weight_index(o, ic, kh, kw);
                    let w = layer.weights[widx];
                    let mut dw = 0.0;
                    if s == 1 {
                        let i_lo = p.saturating_sub(kh);
                        let i_hi = (in_h + p).saturating_sub(kh).min(out_h);
                        let j_lo = p.saturating_sub(kw);
                        let j_hi = (in_w + p).saturating_sub(kw).min(out_w);
                        let x_lo = j_lo + kw - p;
                        let span = j_hi.saturating_sub(j_lo);
                        for i in i_lo..i_hi {
                            let y = i + kh - p;
                            let in_row = &in_plane[y * in_w + x_lo..y * in_w + x_lo + span];
                            let dx_row =
                                &mut dx_plane[y * in_w + x_lo..y * in_w + x_lo + span];
                            let d_row = &d_plane[i * out_w + j_lo..i * out_w + j_lo + span];
                            for ((&d, &iv), dx) in d_row.iter().zip(in_row).zip(dx_row) {
                                dw += d * iv;
                                *dx += w * d;
                            }
                        }
                    } else {
                        for i in 0..out_h {
                            let y = (i * s + kh) as isize - p as isize;
                            if y < 0 || y as usize >= in_h {
                                continue;
                            }
                            for j in 0..out_w {
                                let x = (j * s + kw) as isize - p as isize;
                                if x < 0 || x as usize >= in_w {
                                    continue;
                                }
                                let d = d_plane[i * out_w + j];
                                dw += d * in_plane[y as usize * in_w + x as usize];
                                dx_plane[y as usize * in_w + x as usize] += w * d;
                            }
                        }
                    }
                    d_weights[widx] += dw;
                }
            }
        }
    }
    d_input
}

/// Real vector produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// Scale to unit Euclidean norm.
    pub fn normalize(&self) -> Result<FeatureVector> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateFeature);
        }
        Ok(FeatureVector::new(self.values.iter().map(|v| v / n).collect()))
    }
}

/// Cosine similarity, clamped into [-1, 1]. Zero-norm inputs score 0.
pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

const CHECKPOINT_MAGIC: &[u8; 7] = b"LIDAENC";
const CHECKPOINT_VERSION: u8 = 1;

const EXTRA_PROTOTYPE: u8 = 1;
const EXTRA_CENTERS: u8 = 2;

/// Encoder parameters plus the training state that travels with them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: EncoderParams,
    /// Real-class prototype fixed at the end of pre-training.
    pub prototype: Option<RealPrototype>,
    /// Class centers left by the last adaptation run.
    pub centers: Option<ClassCenters>,
}

impl Checkpoint {
    pub fn new(params: EncoderParams) -> Self {
        Self { params, prototype: None, centers: None }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(CHECKPOINT_VERSION);
        let cfg = &self.params.config;
        put_u32(&mut buf, cfg.input_side as u32);
        put_u32(&mut buf, cfg.conv_layers.len() as u32);
        for &(out_ch, kernel, stride) in &cfg.conv_layers {
            put_u32(&mut buf, out_ch as u32);
            put_u32(&mut buf, kernel as u32);
            put_u32(&mut buf, stride as u32);
        }
        put_u32(&mut buf, cfg.feature_dim as u32);
        put_u32(&mut buf, cfg.num_pretext_classes as u32);
        put_u64(&mut buf, cfg.seed);
        let mut extras = 0u8;
        if self.prototype.is_some() {
            extras |= EXTRA_PROTOTYPE;
        }
        if self.centers.is_some() {
            extras |= EXTRA_CENTERS;
        }
        buf.push(extras);
        put_f64_slice(&mut buf, &self.params.flatten());
        if let Some(proto) = &self.prototype {
            put_u64(&mut buf, proto.sample_count);
            put_f64_slice(&mut buf, &proto.values.values);
        }
        if let Some(centers) = &self.centers {
            put_f64(&mut buf, centers.alpha);
            put_u32(&mut buf, centers.len() as u32);
            for (label, center) in centers.iter() {
                put_string(&mut buf, label);
                put_f64_slice(&mut buf, center);
            }
        }
        atomic_write(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path)?;
        let mut r = ByteReader::new(&bytes);
        if r.bytes(7, "magic")? != CHECKPOINT_MAGIC {
            return Err(CorruptKind::BadMagic { expected: "LIDAENC" }.into());
        }
        let version = r.u8("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CorruptKind::BadVersion { found: version }.into());
        }
        let input_side = r.u32("input side")? as usize;
        let n_layers = r.u32("layer count")? as usize;
        if n_layers > 1024 {
            return Err(CorruptKind::InvalidField(format!("implausible layer count {n_layers}")).into());
        }
        let mut conv_layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let out_ch = r.u32("layer channels")? as usize;
            let kernel = r.u32("layer kernel")? as usize;
            let stride = r.u32("layer stride")? as usize;
            conv_layers.push((out_ch, kernel, stride));
        }
        let feature_dim = r.u32("feature dim")? as usize;
        let num_pretext_classes = r.u32("pretext classes")? as usize;
        let seed = r.u64("seed")?;
        let config =
            EncoderConfig { input_side, conv_layers, feature_dim, num_pretext_classes, seed };
        config
            .validate()
            .map_err(|e| CorruptKind::InvalidField(format!("bad config: {e}")))?;
        let extras = r.u8("extras flags")?;
        if extras & !(EXTRA_PROTOTYPE | EXTRA_CENTERS) != 0 {
            return Err(CorruptKind::InvalidField(format!("unknown extras flags {extras:#x}")).into());
        }
        // Shape the parameter holder, then fill from the tensor block.
        let mut params = EncoderParams::init(&config)?;
        let flat = r.f64_vec(params.param_count(), "parameter tensors")?;
        params.assign_flat(&flat);
        let prototype = if extras & EXTRA_PROTOTYPE != 0 {
            let sample_count = r.u64("prototype sample count")?;
            let values = r.f64_vec(feature_dim, "prototype values")?;
            Some(
                RealPrototype::from_unit(FeatureVector::new(values), sample_count)
                    .map_err(|e| CorruptKind::InvalidField(format!("prototype: {e}")))?,
            )
        } else {
            None
        };
        let centers = if extras & EXTRA_CENTERS != 0 {
            let alpha = r.f64("center update rate")?;
            let count = r.u32("center count")? as usize;
            let mut centers = ClassCenters::new(alpha);
            for _ in 0..count {
                let label = r.string("center label")?;
                let values = r.f64_vec(feature_dim, "center values")?;
                centers.insert(label, values);
            }
            Some(centers)
        } else {
            None
        };
        r.finish()?;
        Ok(Checkpoint { params, prototype, centers })
    }
}
