//! Pick the most database-like patch of a large fingerprint.
//!
//! Encoders take a fixed input side; large images could be center-cropped,
//! but the most informative region is not always in the middle. Patch
//! selection partitions the fingerprint into non-overlapping tiles,
//! encodes each, and keeps the tile whose feature scores the highest
//! cosine against any database feature.
//!
//! Here the image is real-like noise except for one corner stamped with a
//! registered family's texture, so that corner should win.
//!
//! Run with: cargo run --example patch_selection

use lida::encoder::{EncoderConfig, EncoderParams};
use lida::fingerprint::{extract_fingerprint, partition, select_best_patch};
use lida::synthgen::{default_families, synth_fake, synth_real};

fn main() -> lida::Result<()> {
    let side = 96;
    let patch_side = 32;
    let family = &default_families(5, 3)[0];

    // Database features: three exemplars of the family.
    let params = EncoderParams::init(&EncoderConfig::default())?;
    let mut db_features = Vec::new();
    for seed in 0..3 {
        let fake = synth_fake(family, 0, patch_side, seed)?;
        db_features.push(params.embed(&extract_fingerprint(&fake))?);
    }

    // Query: a real image with the family texture stamped bottom-right.
    let mut img = synth_real(0, 3, side, 41)?;
    let stamp = synth_fake(family, 0, patch_side, 77)?;
    for row in 0..patch_side {
        for col in 0..patch_side {
            img.set_pixel(side - patch_side + row, side - patch_side + col, stamp.pixel(row, col));
        }
    }

    let fp = extract_fingerprint(&img);
    let patches = partition(&fp, patch_side)?;
    println!("{} patches of {patch_side}x{patch_side} from a {side}x{side} fingerprint", patches.len());

    let best = select_best_patch(&patches, &db_features, &params)?;
    for (idx, patch) in patches.iter().enumerate() {
        let feature = params.embed(&patch.data)?;
        let score = db_features
            .iter()
            .map(|f| lida::encoder::cosine_similarity(&feature, f))
            .fold(f64::NEG_INFINITY, f64::max);
        let mark = if idx == best { " <- selected" } else { "" };
        println!(
            "patch {idx} at ({:3}, {:3}): best cosine {score:.4}{mark}",
            patch.origin.0, patch.origin.1
        );
    }

    let stamped = patches.len() - 1;
    println!(
        "\nthe stamped corner is patch {stamped}; selection {}",
        if best == stamped { "found it" } else { "missed it" }
    );
    Ok(())
}
