//! Detection first, attribution second, in one call.
//!
//! A deployed system rarely wants a generator name for an image that is
//! probably a camera photo. The two-stage helper runs the prototype
//! detector first and only attributes queries it judges fake, excluding
//! any exemplars registered under the reserved "real" label from the
//! ranking.
//!
//! Run with: cargo run --example two_stage_pipeline

use lida::encoder::{EncoderConfig, EncoderParams};
use lida::fingerprint::extract_fingerprint;
use lida::registry::Registry;
use lida::retrieval::{two_stage_attribute, TwoStageOutcome};
use lida::synthgen::BenchmarkSpec;
use lida::training::{pretrain, TrainConfig};

fn main() -> lida::Result<()> {
    let mut spec = BenchmarkSpec::default_benchmark(606);
    spec.side = 64;
    spec.reals = 16;
    spec.fakes_per_family = 4;
    let images = spec.generate()?;

    let corpus: Vec<_> = images
        .iter()
        .filter(|i| i.label == "real")
        .take(8)
        .map(|i| (extract_fingerprint(&i.image), i.class_id))
        .collect();
    let mut params = EncoderParams::init(&EncoderConfig::default())?;
    let (prototype, _) = pretrain(
        &mut params,
        &corpus,
        &TrainConfig { epochs: 2, learning_rate: 1e-3, seed: 2, ..TrainConfig::default() },
    )?;

    // Registry holds fake exemplars and also some reals; two-stage
    // attribution never returns the real records as a generator guess.
    let mut registry = Registry::new(params.config.feature_dim);
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    let mut queries = Vec::new();
    for img in images.iter().skip(8) {
        let n = seen.entry(img.label.clone()).or_insert(0);
        let fp = extract_fingerprint(&img.image);
        if *n < 2 {
            registry.add(&img.label, "exemplar", 0, params.embed(&fp)?)?;
        } else {
            queries.push((fp, img.label.clone()));
        }
        *n += 1;
    }

    // Threshold picked for this toy run; see the zero_shot_detect example
    // for how to calibrate one properly.
    let threshold = 0.997;
    println!("{:<8} {:<24} outcome", "truth", "verdict");
    for (fp, truth) in &queries {
        let outcome = two_stage_attribute(fp, &registry, &prototype, &params, threshold, 3)?;
        let verdict = outcome.verdict();
        let stage = format!(
            "{} (sim {:.4})",
            if verdict.is_real { "real" } else { "fake" },
            verdict.similarity
        );
        match &outcome {
            TwoStageOutcome::Real(_) => {
                println!("{truth:<8} {stage:<24} stopped at detection");
            }
            TwoStageOutcome::Fake { ranking, .. } => {
                println!("{truth:<8} {stage:<24} attributed to {}", ranking.top_label().unwrap());
            }
        }
    }
    Ok(())
}
