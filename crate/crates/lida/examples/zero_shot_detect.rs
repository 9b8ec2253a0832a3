//! Real-vs-fake detection without any fake training data.
//!
//! Pretraining produces a real prototype: the mean normalized feature of
//! the real corpus. A query is judged real when the cosine similarity of
//! its feature to that prototype clears a threshold. No fake image is
//! needed at any point, which is why this works on generator families
//! never seen before ("zero-shot").
//!
//! The decision threshold matters: features of unseen fakes sit close to
//! the real cluster, so this example also shows how to calibrate the
//! threshold on a labelled split instead of trusting a fixed default.
//!
//! Run with: cargo run --example zero_shot_detect

use lida::encoder::{cosine_similarity, EncoderConfig, EncoderParams};
use lida::fingerprint::{extract_fingerprint, FingerprintImage};
use lida::metrics::detection_accuracy;
use lida::retrieval::{detect, DEFAULT_THRESHOLD};
use lida::synthgen::BenchmarkSpec;
use lida::training::{pretrain, TrainConfig};

fn main() -> lida::Result<()> {
    let mut spec = BenchmarkSpec::default_benchmark(555);
    spec.side = 64;
    spec.reals = 24;
    spec.fakes_per_family = 6;
    let images = spec.generate()?;

    // Pretrain on half the reals; everything else is evaluation data.
    let corpus: Vec<(FingerprintImage, usize)> = images
        .iter()
        .filter(|i| i.label == "real")
        .take(12)
        .map(|i| (extract_fingerprint(&i.image), i.class_id))
        .collect();
    let mut params = EncoderParams::init(&EncoderConfig::default())?;
    let (prototype, _) = pretrain(
        &mut params,
        &corpus,
        &TrainConfig { epochs: 2, learning_rate: 1e-3, seed: 8, ..TrainConfig::default() },
    )?;

    // Similarity of each held-out image to the prototype.
    let mut real_sims = Vec::new();
    let mut fake_sims = Vec::new();
    for img in images.iter().skip(12) {
        let feature = params.embed(&extract_fingerprint(&img.image))?;
        let sim = cosine_similarity(&feature, &prototype.values);
        if img.label == "real" {
            real_sims.push(sim);
        } else {
            fake_sims.push(sim);
        }
    }
    real_sims.sort_by(f64::total_cmp);
    fake_sims.sort_by(f64::total_cmp);
    println!("real similarities: {:.6} .. {:.6}", real_sims[0], real_sims[real_sims.len() - 1]);
    println!("fake similarities: {:.6} .. {:.6}", fake_sims[0], fake_sims[fake_sims.len() - 1]);

    // Calibrate: midpoint between the lowest real and the highest fake.
    let calibrated = 0.5 * (real_sims[0] + fake_sims[fake_sims.len() - 1]);
    println!("calibrated threshold: {calibrated:.6} (default {DEFAULT_THRESHOLD})");

    // Score both thresholds on the held-out images.
    for (name, threshold) in [("default", DEFAULT_THRESHOLD), ("calibrated", calibrated)] {
        let mut verdicts = Vec::new();
        let mut truth = Vec::new();
        for img in images.iter().skip(12) {
            let fp = extract_fingerprint(&img.image);
            verdicts.push(detect(&fp, &prototype, &params, threshold)?);
            truth.push(img.label == "real");
        }
        println!("accuracy at {name} threshold: {:.1}%", detection_accuracy(&verdicts, &truth)?);
    }
    Ok(())
}
