//! Score a batch of attributions with Rank-1, mAP, and a full report.
//!
//! Rank-1 asks "was the top hit the right family?". Mean average
//! precision additionally rewards pushing every exemplar of the right
//! family toward the top of the ranking, so it notices partial mistakes
//! Rank-1 cannot see. EvalReport groups both per family and averages them
//! without weighting by family size.
//!
//! Run with: cargo run --example evaluate_metrics

use lida::encoder::{EncoderConfig, EncoderParams};
use lida::fingerprint::extract_fingerprint;
use lida::metrics::{average_precision, EvalReport};
use lida::registry::Registry;
use lida::retrieval::{attribute_batch, detect};
use lida::synthgen::BenchmarkSpec;
use lida::training::{pretrain, TrainConfig};

fn main() -> lida::Result<()> {
    let mut spec = BenchmarkSpec::default_benchmark(2024);
    spec.side = 64;
    spec.reals = 10;
    spec.fakes_per_family = 7;
    let images = spec.generate()?;

    let corpus: Vec<_> = images
        .iter()
        .filter(|i| i.label == "real")
        .map(|i| (extract_fingerprint(&i.image), i.class_id))
        .collect();
    let mut params = EncoderParams::init(&EncoderConfig::default())?;
    let (prototype, _) = pretrain(
        &mut params,
        &corpus,
        &TrainConfig { epochs: 2, learning_rate: 1e-3, seed: 3, ..TrainConfig::default() },
    )?;

    // Two exemplars per family registered, the rest queried. Ask for a
    // ranking as deep as the registry so average precision is exact.
    let mut registry = Registry::new(params.config.feature_dim);
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    let mut query_fps = Vec::new();
    let mut truths = Vec::new();
    for img in images.iter().filter(|i| i.label != "real") {
        let n = seen.entry(img.label.clone()).or_insert(0);
        let fp = extract_fingerprint(&img.image);
        if *n < 2 {
            registry.add(&img.label, "exemplar", 0, params.embed(&fp)?)?;
        } else {
            query_fps.push(fp);
            truths.push(img.label.clone());
        }
        *n += 1;
    }
    let results = attribute_batch(&query_fps, &registry, &params, registry.len())?;

    // Average precision of a single query, before aggregating anything.
    let relevant: Vec<&str> = results[0].entries.iter().map(|e| e.label.as_str()).collect();
    println!("first query's ranking: {}", relevant.join(" "));
    println!(
        "first query's average precision for '{}': {:.4}",
        truths[0],
        average_precision(&results[0], &truths[0]).unwrap()
    );

    // Detection verdicts for the same queries (all fakes here).
    let mut verdicts = Vec::new();
    let mut truth_flags = Vec::new();
    for fp in &query_fps {
        verdicts.push(detect(fp, &prototype, &params, 0.997)?);
        truth_flags.push(false);
    }

    let report =
        EvalReport::from_rankings(&results, &truths, Some((&verdicts, &truth_flags)))?;
    println!("\n{}", report.text_table());
    println!("machine-readable form:\n{}", report.to_tsv());
    Ok(())
}
