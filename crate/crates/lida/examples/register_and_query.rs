//! Register a few exemplars per generator family, then attribute queries.
//!
//! Attribution is nearest-neighbor retrieval: encode the query fingerprint
//! to a unit feature vector and rank every registered exemplar by cosine
//! similarity. With two exemplars per family the top hit already names the
//! right generator on this benchmark.
//!
//! Run with: cargo run --example register_and_query

use lida::encoder::{EncoderConfig, EncoderParams};
use lida::fingerprint::extract_fingerprint;
use lida::metrics::rank1;
use lida::registry::Registry;
use lida::retrieval::attribute;
use lida::synthgen::BenchmarkSpec;

fn main() -> lida::Result<()> {
    let mut spec = BenchmarkSpec::default_benchmark(99);
    spec.side = 64;
    spec.reals = 4;
    spec.fakes_per_family = 6;
    let images = spec.generate()?;

    let params = EncoderParams::init(&EncoderConfig::default())?;
    let mut registry = Registry::new(params.config.feature_dim);

    // First two fakes of each family become exemplars; the rest are queries.
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    let mut queries = Vec::new();
    for img in images.iter().filter(|i| i.label != "real") {
        let n = seen.entry(img.label.clone()).or_insert(0);
        let fp = extract_fingerprint(&img.image);
        if *n < 2 {
            let id = registry.add(
                &img.label,
                &format!("synthetic seed {}", img.seed),
                0,
                params.embed(&fp)?,
            )?;
            println!("registered exemplar {id} for {}", img.label);
        } else {
            queries.push((fp, img.label.clone()));
        }
        *n += 1;
    }

    println!("\nquery results (top 3):");
    let mut results = Vec::new();
    for (fp, truth) in &queries {
        let ranking = attribute(fp, &registry, &params, 3)?;
        let hits: Vec<String> = ranking
            .entries
            .iter()
            .map(|e| format!("{} {:.4}", e.label, e.similarity))
            .collect();
        let mark = if ranking.top_label() == Some(truth.as_str()) { "ok " } else { "MISS" };
        println!("  truth {truth:<6} [{mark}]  {}", hits.join("  "));
        results.push(ranking);
    }

    let truths: Vec<&str> = queries.iter().map(|(_, t)| t.as_str()).collect();
    println!("\nRank-1 accuracy: {:.1}%", rank1(&results, &truths)?);
    Ok(())
}
