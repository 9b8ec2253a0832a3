//! Low-bit generative fingerprints.
//!
//! An 8-bit RGB image decomposes per channel into eight bit planes
//! `x_c = sum_k 2^k * b_c^k`. The fingerprint keeps only the three least
//! significant planes and thresholds them: a fingerprint pixel is 255
//! exactly when the low-3-bit part of the source pixel is nonzero, else 0.
//! Everything here is pure integer arithmetic; no resampling is ever
//! applied to the input, since any interpolation destroys the low bits.

use crate::encoder::{cosine_similarity, EncoderParams, FeatureVector};
use crate::error::{Error, Result};

/// Color channel of an RGB image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }
}

/// 8-bit RGB image, row-major, interleaved R,G,B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Smallest image side accepted for fingerprinting.
pub const MIN_IMAGE_SIDE: usize = 32;

impl RgbImage {
    /// `pixels` holds `width * height` interleaved RGB triples.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(Error::InvalidArgument(format!(
                "image must be at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer length {} does not match {width}x{height}x3",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// Solid-color image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let base = (row * self.width + col) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let base = (row * self.width + col) * 3;
        self.pixels[base..base + 3].copy_from_slice(&rgb);
    }

    pub fn channel_value(&self, row: usize, col: usize, channel: Channel) -> u8 {
        self.pixels[(row * self.width + col) * 3 + channel.index()]
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }
}

/// One bit position of one channel, as a binary matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlane {
    pub index: u8,
    pub channel: Channel,
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BitPlane {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Bit value in {0,1} at (row, col).
    pub fn bit(&self, row: usize, col: usize) -> u8 {
        self.bits[row * self.width + col]
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

/// Extract bit plane `k` of a channel: `bits(i,j) = (x_c(i,j) >> k) & 1`.
pub fn decompose(img: &RgbImage, channel: Channel, k: u8) -> Result<BitPlane> {
    if k > 7 {
        return Err(Error::InvalidArgument(format!(
            "bit plane index {k} out of range [0,7]"
        )));
    }
    let mut bits = Vec::with_capacity(img.width * img.height);
    let offset = channel.index();
    for px in img.pixels.chunks_exact(3) {
        bits.push((px[offset] >> k) & 1);
    }
    Ok(BitPlane { index: k, channel, width: img.width, height: img.height, bits })
}

/// Per-channel binary map with values in {0,255}: 255 exactly where the
/// low-3-bit part of the source pixel is nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FingerprintImage {
    width: usize,
    height: usize,
    /// Planar channel maps in R,G,B order.
    channels: [Vec<u8>; 3],
}

impl FingerprintImage {
    /// Build from planar channel maps; every value must be 0 or 255.
    pub fn from_channels(width: usize, height: usize, channels: [Vec<u8>; 3]) -> Result<Self> {
        for ch in &channels {
            if ch.len() != width * height {
                return Err(Error::InvalidArgument(format!(
                    "channel length {} does not match {width}x{height}",
                    ch.len()
                )));
            }
            if let Some(v) = ch.iter().find(|v| **v != 0 && **v != 255) {
                return Err(Error::InvalidArgument(format!(
                    "fingerprint values must be 0 or 255, found {v}"
                )));
            }
        }
        Ok(Self { width, height, channels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Value in {0,255} at (row, col) of a channel.
    pub fn value(&self, row: usize, col: usize, channel: Channel) -> u8 {
        self.channels[channel.index()][row * self.width + col]
    }

    pub fn channel(&self, channel: Channel) -> &[u8] {
        &self.channels[channel.index()]
    }

    /// Center crop to `side` x `side`. Errors if the fingerprint is smaller.
    pub fn center_crop(&self, side: usize) -> Result<FingerprintImage> {
        self.crop_rect(
            (self.height.checked_sub(side).ok_or_else(|| too_small(self, side))?) / 2,
            (self.width.checked_sub(side).ok_or_else(|| too_small(self, side))?) / 2,
            side,
            side,
        )
    }

    fn crop_rect(&self, top: usize, left: usize, h: usize, w: usize) -> Result<FingerprintImage> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w} at ({top},{left}) exceeds fingerprint {}x{}",
                self.height, self.width
            )));
        }
        let mut channels: [Vec<u8>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (c, out) in channels.iter_mut().enumerate() {
            out.reserve(h * w);
            for r in 0..h {
                let base = (top + r) * self.width + left;
                out.extend_from_slice(&self.channels[c][base..base + w]);
            }
        }
        Ok(FingerprintImage { width: w, height: h, channels })
    }
}

fn too_small(fp: &FingerprintImage, side: usize) -> Error {
    Error::InvalidArgument(format!(
        "fingerprint {}x{} smaller than requested side {side}",
        fp.height, fp.width
    ))
}

/// Threshold the three least significant bit planes of each channel:
/// `out(i,j) = 255 * sgn(sum_{k=0}^{2} 2^k * b_c^k(i,j))`, i.e. 255 exactly
/// when `pixel & 7 != 0`.
pub fn extract_fingerprint(img: &RgbImage) -> FingerprintImage {
    let n = img.width * img.height;
    let mut channels: [Vec<u8>; 3] =
        [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for px in img.pixels.chunks_exact(3) {
        for c in 0..3 {
            channels[c].push(if px[c] & 7 != 0 { 255 } else { 0 });
        }
    }
    FingerprintImage { width: img.width, height: img.height, channels }
}

/// Square region of a fingerprint, produced by [`partition`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    /// (row, col) offset of the patch in the source fingerprint.
    pub origin: (usize, usize),
    /// Square side in pixels.
    pub side: usize,
    /// Cropped fingerprint region.
    pub data: FingerprintImage,
}

/// Tile the center-cropped fingerprint into disjoint `patch_side` squares,
/// row-major. The crop keeps the largest centered multiple of `patch_side`
/// in each dimension.
pub fn partition(fp: &FingerprintImage, patch_side: usize) -> Result<Vec<Patch>> {
    if patch_side == 0 {
        return Err(Error::InvalidArgument("patch side must be positive".into()));
    }
    if patch_side > fp.height || patch_side > fp.width {
        return Err(Error::InvalidArgument(format!(
            "patch side {patch_side} exceeds fingerprint {}x{}",
            fp.height, fp.width
        )));
    }
    let rows = fp.height / patch_side;
    let cols = fp.width / patch_side;
    let top = (fp.height - rows * patch_side) / 2;
    let left = (fp.width - cols * patch_side) / 2;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let origin = (top + r * patch_side, left + c * patch_side);
            let data = fp.crop_rect(origin.0, origin.1, patch_side, patch_side)?;
            patches.push(Patch { origin, side: patch_side, data });
        }
    }
    Ok(patches)
}

/// Encode every patch and return the index of the one whose feature reaches
/// the highest cosine similarity against any database feature. Ties go to
/// the lowest (row-major) patch index.
pub fn select_best_patch(
    patches: &[Patch],
    db_features: &[FeatureVector],
    params: &EncoderParams,
) -> Result<usize> {
    if patches.is_empty() {
        return Err(Error::InvalidArgument("no patches to select from".into()));
    }
    if db_features.is_empty() {
        return Err(Error::InvalidArgument("database features are empty".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (idx, patch) in patches.iter().enumerate() {
        let feature = params.forward(&patch.data)?.feature;
        let score = db_features
            .iter()
            .map(|f| cosine_similarity(&feature, f))
            .fold(f64::NEG_INFINITY, f64::max);
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((idx, score)),
        }
    }
    Ok(best.expect("patches non-empty").0)
}
