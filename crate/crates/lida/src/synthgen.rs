//! Synthetic benchmark generator.
//!
//! Stands in for real generative models at desk scale: each "generator
//! family" plants a stable stochastic signature in the low 3 bits of every
//! channel while the high 5 bits carry ordinary piecewise-flat content.
//! "Real" images get uniformly random low bits instead. Content depends only
//! on (class, seed, side), never on the family, so a real and a fake built
//! from the same seed agree exactly on bits 3-7 — the signature is the only
//! difference, which makes ground truth fully controllable.
//!
//! A family's signature is a per-channel binary mask, tiled with a fixed
//! period and phase: masked pixels get a nonzero low-3-bit value with
//! probability `p_in`, unmasked with `p_out`. High `p_in`/`p_out` contrast
//! makes two images of one family strongly correlated in fingerprint space
//! while independent masks keep cross-family correlation near zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::RgbImage;
use crate::losses::REAL_LABEL;
use crate::util::mix_seed;

const CONTENT_STREAM: u64 = 0x636f6e74;
const REAL_LOW_STREAM: u64 = 0x7265616c;
const FAKE_LOW_STREAM: u64 = 0x66616b65;
const MASK_STREAM: u64 = 0x6d61736b;
const REAL_IMAGE_STREAM: u64 = 0x5249;
const FAKE_IMAGE_STREAM: u64 = 0x4649;

/// Low-3-bit signature process of one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSignature {
    /// Tile side of the binary mask, in pixels.
    pub period: usize,
    /// Fixed (row, col) offset of the mask tiling.
    pub phase: (usize, usize),
    /// Probability of a nonzero low-3 value on masked pixels.
    pub p_in: f64,
    /// Probability of a nonzero low-3 value elsewhere.
    pub p_out: f64,
}

impl ChannelSignature {
    fn validate(&self) -> Result<()> {
        if self.period == 0 || self.period > 64 {
            return Err(Error::Config(format!(
                "signature period must be in 1..=64, got {}",
                self.period
            )));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

/// One synthetic generator family: a name, a per-channel signature, the
/// content-class count it serves, and the seed its masks are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub name: String,
    pub channels: [ChannelSignature; 3],
    pub content_classes: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("generator name must be non-empty".into()));
        }
        if self.name == REAL_LABEL {
            return Err(Error::Config(format!("generator name {REAL_LABEL:?} is reserved")));
        }
        if self.content_classes == 0 {
            return Err(Error::Config("content class count must be positive".into()));
        }
        for ch in &self.channels {
            ch.validate()?;
        }
        Ok(())
    }

    /// The fixed binary mask of one channel, `period` x `period`, row-major.
    fn mask(&self, channel: usize) -> Vec<bool> {
        let sig = &self.channels[channel];
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.seed, MASK_STREAM), channel as u64));
        (0..sig.period * sig.period).map(|_| rng.random::<bool>()).collect()
    }
}

/// Class-dependent piecewise-flat content: the high 5 bits of each channel.
/// Depends only on (class, seed, side). Flat regions are at least side/8
/// across, so mild blur leaves their interiors untouched.
fn content_high5(class_id: usize, side: usize, seed: u64) -> [Vec<u8>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        mix_seed(seed, CONTENT_STREAM),
        class_id as u64,
    ));
    let mut planes: [Vec<u8>; 3] = std::array::from_fn(|_| vec![0u8; side * side]);
    let color = |rng: &mut ChaCha8Rng| -> [u8; 3] { std::array::from_fn(|_| rng.random_range(0..32)) };
    match class_id % 3 {
        // Random rectangle mosaic.
        0 => {
            let base = color(&mut rng);
            for (c, plane) in planes.iter_mut().enumerate() {
                plane.fill(base[c]);
            }
            for _ in 0..10 {
                let w = rng.random_range(side / 8..=side / 2);
                let h = rng.random_range(side / 8..=side / 2);
                let x0 = rng.random_range(0..side);
                let y0 = rng.random_range(0..side);
                let fill = color(&mut rng);
                for r in y0..(y0 + h).min(side) {
                    for q in x0..(x0 + w).min(side) {
                        for (c, plane) in planes.iter_mut().enumerate() {
                            plane[r * side + q] = fill[c];
                        }
                    }
                }
            }
        }
        // Horizontal bands of random heights.
        1 => {
            let mut row = 0;
            while row < side {
                let h = rng.random_range(side / 8..=side / 3);
                let fill = color(&mut rng);
                for r in row..(row + h).min(side) {
                    for q in 0..side {
                        for (c, plane) in planes.iter_mut().enumerate() {
                            plane[r * side + q] = fill[c];
                        }
                    }
                }
                row += h;
            }
        }
        // Diagonal bands.
        _ => {
            let w = rng.random_range(side / 8..=side / 4).max(1);
            let n_bands = (2 * side) / w + 2;
            let colors: Vec<[u8; 3]> = (0..n_bands).map(|_| color(&mut rng)).collect();
            for r in 0..side {
                for q in 0..side {
                    let fill = colors[(r + q) / w];
                    for (c, plane) in planes.iter_mut().enumerate() {
                        plane[r * side + q] = fill[c];
                    }
                }
            }
        }
    }
    planes
}

fn assemble(side: usize, high5: &[Vec<u8>; 3], low3: &[Vec<u8>; 3]) -> Result<RgbImage> {
    let mut pixels = Vec::with_capacity(3 * side * side);
    for idx in 0..side * side {
        for c in 0..3 {
            pixels.push((high5[c][idx] << 3) | low3[c][idx]);
        }
    }
    RgbImage::new(side, side, pixels)
}

/// A genuine image: class-dependent content with uniformly random low bits.
/// Fixed (class, seed, side) give a byte-identical image.
pub fn synth_real(class_id: usize, num_classes: usize, side: usize, seed: u64) -> Result<RgbImage> {
    if class_id >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "class id {class_id} out of range for {num_classes} classes"
        )));
    }
    let high5 = content_high5(class_id, side, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, REAL_LOW_STREAM));
    let mut low3: [Vec<u8>; 3] = std::array::from_fn(|_| vec![0u8; side * side]);
    for plane in &mut low3 {
        for v in plane.iter_mut() {
            *v = rng.random_range(0..8);
        }
    }
    assemble(side, &high5, &low3)
}

/// A fake image: the same content process as [`synth_real`], with the low
/// bits overwritten by the family's signature process.
pub fn synth_fake(spec: &GeneratorSpec, class_id: usize, side: usize, seed: u64) -> Result<RgbImage> {
    spec.validate()?;
    if class_id >= spec.content_classes {
        return Err(Error::InvalidArgument(format!(
            "class id {class_id} out of range for {} classes",
            spec.content_classes
        )));
    }
    let high5 = content_high5(class_id, side, seed);
    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, FAKE_LOW_STREAM), spec.seed));
    let mut low3: [Vec<u8>; 3] = std::array::from_fn(|_| vec![0u8; side * side]);
    for (c, plane) in low3.iter_mut().enumerate() {
        let sig = &spec.channels[c];
        let mask = spec.mask(c);
        let p = sig.period;
        for r in 0..side {
            for q in 0..side {
                let m = mask[((r + sig.phase.0) % p) * p + ((q + sig.phase.1) % p)];
                let prob = if m { sig.p_in } else { sig.p_out };
                let fire = rng.random::<f64>() < prob;
                let value = rng.random_range(1..8u8);
                plane[r * side + q] = if fire { value } else { 0 };
            }
        }
    }
    assemble(side, &high5, &low3)
}

/// The stock four families. Two share overall signature density and differ
/// only in mask grain (fine vs coarse); the other two sit at clearly lower
/// and higher densities. All stay well above 0.5 within-family fingerprint
/// correlation.
pub fn default_families(seed: u64, content_classes: usize) -> Vec<GeneratorSpec> {
    let sig = |period: usize, phase: (usize, usize), p_in: f64, p_out: f64| ChannelSignature {
        period,
        phase,
        p_in,
        p_out,
    };
    let family = |idx: u64, name: &str, s: ChannelSignature| GeneratorSpec {
        name: name.to_string(),
        channels: [s, s, s],
        content_classes,
        seed: mix_seed(seed, 1000 + idx),
    };
    vec![
        family(0, "alpha", sig(2, (0, 0), 0.95, 0.05)),
        family(1, "beta", sig(16, (1, 3), 0.95, 0.05)),
        family(2, "gamma", sig(8, (2, 1), 0.75, 0.02)),
        family(3, "delta", sig(8, (0, 2), 0.98, 0.20)),
    ]
}

/// Everything needed to materialize one benchmark dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    /// Square image side in pixels.
    pub side: usize,
    pub content_classes: usize,
    /// Number of real images.
    pub reals: usize,
    /// Number of images per generator family.
    pub fakes_per_family: usize,
    /// Root seed; every image seed derives from it.
    pub seed: u64,
    pub families: Vec<GeneratorSpec>,
}

impl BenchmarkSpec {
    /// Stock benchmark: 4 families, 3 content classes, 128x128 images.
    pub fn default_benchmark(seed: u64) -> BenchmarkSpec {
        BenchmarkSpec {
            side: 128,
            content_classes: 3,
            reals: 30,
            fakes_per_family: 10,
            seed,
            families: default_families(seed, 3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("benchmark needs at least one family".into()));
        }
        for f in &self.families {
            f.validate()?;
            if f.content_classes != self.content_classes {
                return Err(Error::Config(format!(
                    "family {:?} declares {} content classes, benchmark has {}",
                    f.name, f.content_classes, self.content_classes
                )));
            }
        }
        for (i, a) in self.families.iter().enumerate() {
            for b in &self.families[i + 1..] {
                if a.name == b.name {
                    return Err(Error::Config(format!("duplicate family name {:?}", a.name)));
                }
                if a.channels == b.channels && a.seed == b.seed {
                    return Err(Error::Config(format!(
                        "families {:?} and {:?} share every signature parameter",
                        a.name, b.name
                    )));
                }
            }
        }
        if self.content_classes == 0 {
            return Err(Error::Config("content class count must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic per-image seed for the i-th real image.
    pub fn real_seed(&self, index: usize) -> u64 {
        mix_seed(mix_seed(self.seed, REAL_IMAGE_STREAM), index as u64)
    }

    /// Deterministic per-image seed for the j-th image of family `family_idx`.
    pub fn fake_seed(&self, family_idx: usize, index: usize) -> u64 {
        mix_seed(
            mix_seed(self.seed, FAKE_IMAGE_STREAM),
            (family_idx as u64) << 32 | index as u64,
        )
    }

    /// Materialize the whole dataset: reals first, then each family in
    /// order. Content classes cycle. Parallel across images with the output
    /// in deterministic order.
    pub fn generate(&self) -> Result<Vec<BenchmarkImage>> {
        self.validate()?;
        let mut jobs: Vec<(String, usize, u64)> = Vec::new();
        for i in 0..self.reals {
            jobs.push((REAL_LABEL.to_string(), i % self.content_classes, self.real_seed(i)));
        }
        for (f_idx, family) in self.families.iter().enumerate() {
            for j in 0..self.fakes_per_family {
                jobs.push((
                    family.name.clone(),
                    j % self.content_classes,
                    self.fake_seed(f_idx, j),
                ));
            }
        }
        jobs.into_par_iter()
            .map(|(label, class_id, seed)| {
                let image = if label == REAL_LABEL {
                    synth_real(class_id, self.content_classes, self.side, seed)?
                } else {
                    let family = self
                        .families
                        .iter()
                        .find(|f| f.name == label)
                        .expect("label comes from families");
                    synth_fake(family, class_id, self.side, seed)?
                };
                Ok(BenchmarkImage { label, class_id, seed, image })
            })
            .collect()
    }
}

/// One generated image plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkImage {
    /// Family name, or the reserved real label.
    pub label: String,
    pub class_id: usize,
    pub seed: u64,
    pub image: RgbImage,
}
