//! Low-bit-plane fingerprints for attributing and detecting generated images.
//!
//! The pipeline, end to end:
//!
//! 1. [`fingerprint`] — quantize each pixel's three lowest bits into a
//!    binary fingerprint image; split fingerprints into patches and pick
//!    the most informative one.
//! 2. [`encoder`] — a small convolutional network (pure Rust, `f64`,
//!    hand-derived backward pass) that maps fingerprints to unit-norm
//!    feature vectors.
//! 3. [`losses`] — the training objectives: pretext cross-entropy for
//!    pre-training, a center loss for attribution, and a prototype-
//!    similarity loss for real/fake detection. All gradients are analytic.
//! 4. [`training`] — SGD pre-training on real images, few-shot adaptation
//!    on registered exemplars, and a Gaussian-blur degradation transform
//!    for robustness studies.
//! 5. [`registry`] — a persistent database of labelled exemplar features
//!    with atomic, byte-stable serialization.
//! 6. [`retrieval`] — exact top-K cosine retrieval, threshold detection
//!    against the real prototype, and the two-stage detect-then-attribute
//!    flow.
//! 7. [`metrics`] — Rank-1, average precision, mAP, detection accuracy,
//!    and formatted evaluation reports.
//! 8. [`synthgen`] — a deterministic synthetic benchmark: content images
//!    whose low bit planes carry per-"generator" signatures, plus clean
//!    real counterparts.
//!
//! Everything is deterministic given a seed: same inputs, same bytes out,
//! regardless of thread count.
//!
//! A runnable program for each capability lives in `examples/`; the
//! `lida` binary wires the same modules into a command-line tool.
//!
//! # Quick start
//!
//! ```
//! use lida::fingerprint::{extract_fingerprint, Channel};
//! use lida::synthgen::{default_families, synth_fake, synth_real};
//!
//! // A "real" image and a fake from the first synthetic generator family.
//! let real = synth_real(0, 3, 64, 42)?;
//! let family = &default_families(42, 3)[0];
//! let fake = synth_fake(family, 0, 64, 43)?;
//!
//! // Fingerprints live in the three lowest bits of each channel.
//! let fp_real = extract_fingerprint(&real);
//! let fp_fake = extract_fingerprint(&fake);
//! assert_eq!(fp_real.width(), 64);
//! assert_ne!(fp_real.channel(Channel::R), fp_fake.channel(Channel::R));
//! # Ok::<(), lida::Error>(())
//! ```

pub mod cli;
pub mod encoder;
pub mod error;
pub mod fingerprint;
pub mod losses;
pub mod metrics;
pub mod registry;
pub mod retrieval;
pub mod synthgen;
pub mod training;
mod util;

pub use error::{CorruptKind, Error, Result};
