//! Fine-tune the encoder on registered exemplars (few-shot adaptation).
//!
//! After pretraining, a handful of exemplars per new generator family is
//! registered. Adaptation then fine-tunes the encoder on exactly those
//! exemplars plus an equal number of real images, pulling each family
//! toward its own feature-space center while pushing fakes away from the
//! real prototype. The registry is re-encoded with the adapted weights, so
//! retrieval and the stored features stay consistent.
//!
//! Run with: cargo run --example few_shot_adapt

use std::collections::BTreeMap;

use lida::encoder::{EncoderConfig, EncoderParams};
use lida::fingerprint::{extract_fingerprint, FingerprintImage};
use lida::metrics::rank1;
use lida::registry::Registry;
use lida::retrieval::attribute_batch;
use lida::synthgen::BenchmarkSpec;
use lida::training::{adapt, pretrain, TrainConfig};

fn main() -> lida::Result<()> {
    let mut spec = BenchmarkSpec::default_benchmark(321);
    spec.side = 64;
    spec.reals = 12;
    spec.fakes_per_family = 8;
    let images = spec.generate()?;

    // Pretrain briefly on content-class labels to get weights and the
    // real prototype.
    let corpus: Vec<(FingerprintImage, usize)> = images
        .iter()
        .filter(|i| i.label == "real")
        .map(|i| (extract_fingerprint(&i.image), i.class_id))
        .collect();
    let mut params = EncoderParams::init(&EncoderConfig::default())?;
    let (prototype, _) = pretrain(
        &mut params,
        &corpus,
        &TrainConfig { epochs: 2, learning_rate: 1e-3, seed: 4, ..TrainConfig::default() },
    )?;

    // Register three exemplars per family; keep their fingerprints around
    // because adaptation needs the raw inputs, not just stored features.
    let mut registry = Registry::new(params.config.feature_dim);
    let mut exemplar_fps = BTreeMap::new();
    let mut seen = BTreeMap::<String, usize>::new();
    let mut queries = Vec::new();
    let mut truths = Vec::new();
    for img in images.iter().filter(|i| i.label != "real") {
        let n = seen.entry(img.label.clone()).or_insert(0);
        let fp = extract_fingerprint(&img.image);
        if *n < 3 {
            let id = registry.add(&img.label, "exemplar", 0, params.embed(&fp)?)?;
            exemplar_fps.insert(id, fp);
        } else {
            queries.push(fp);
            truths.push(img.label.clone());
        }
        *n += 1;
    }

    let before = rank1(&attribute_batch(&queries, &registry, &params, 5)?, &truths)?;

    // Real fingerprints, one per registered fake exemplar.
    let real_fps: Vec<FingerprintImage> = images
        .iter()
        .filter(|i| i.label == "real")
        .take(registry.len())
        .map(|i| extract_fingerprint(&i.image))
        .collect();

    let config = TrainConfig {
        epochs: 10,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 6,
        ..TrainConfig::default()
    };
    let outcome = adapt(&mut params, &mut registry, &exemplar_fps, &real_fps, &prototype, &config)?;

    let after = rank1(&attribute_batch(&queries, &registry, &params, 5)?, &truths)?;

    println!("adaptation over {} epochs:", outcome.log.records.len());
    for record in outcome.log.records.iter().step_by(3) {
        println!(
            "  epoch {:2}  loss {:.6}  (center {:.6}, detection {:.6}, drift {:.3e})",
            record.epoch, record.loss, record.center_loss, record.detection_loss, record.center_drift
        );
    }
    if let Some(centers) = &outcome.centers {
        let labels: Vec<&str> = centers.labels().collect();
        println!("learned centers for: {}", labels.join(", "));
    }
    println!("\nRank-1 before adaptation: {before:.1}%");
    println!("Rank-1 after adaptation:  {after:.1}%");
    Ok(())
}
