//! Persist an encoder checkpoint and an exemplar registry, then reload.
//!
//! Both files are little-endian binary with a magic tag and version byte.
//! A checkpoint stores the architecture, every parameter as an f64 bit
//! pattern, and optionally the real prototype and adaptation centers, so
//! reloading reproduces features bit for bit. The registry stores feature
//! dim, records (id, label, source path, timestamp, feature), and its own
//! optional prototype.
//!
//! Run with: cargo run --example save_and_load

use lida::encoder::{Checkpoint, EncoderConfig, EncoderParams};
use lida::fingerprint::extract_fingerprint;
use lida::losses::RealPrototype;
use lida::registry::Registry;
use lida::synthgen::{default_families, synth_fake};

fn main() -> lida::Result<()> {
    let dir = tempfile::tempdir().expect("create temp dir");
    let params = EncoderParams::init(&EncoderConfig::default())?;
    let family = &default_families(3, 3)[0];

    // A registry with two exemplars and a prototype.
    let mut registry = Registry::new(params.config.feature_dim);
    let mut features = Vec::new();
    for seed in 0..2 {
        let fp = extract_fingerprint(&synth_fake(family, 0, 64, seed)?);
        let feature = params.embed(&fp)?;
        registry.add(&family.name, &format!("seed-{seed}"), 1_724_544_000, feature.clone())?;
        features.push(feature);
    }
    registry.set_prototype(Some(RealPrototype::from_features(&features)?))?;

    // Round-trip the registry.
    let reg_path = dir.path().join("exemplars.db");
    registry.save(&reg_path)?;
    let reloaded = Registry::load(&reg_path)?;
    assert_eq!(reloaded.len(), registry.len());
    assert_eq!(reloaded.records()[0].feature.values, registry.records()[0].feature.values);
    println!(
        "registry round-trip: {} records, {} bytes, features bit-identical",
        reloaded.len(),
        std::fs::metadata(&reg_path).unwrap().len()
    );

    // Round-trip a checkpoint carrying the same prototype.
    let mut checkpoint = Checkpoint::new(params);
    checkpoint.prototype = Some(RealPrototype::from_features(&features)?);
    let ckpt_path = dir.path().join("encoder.bin");
    checkpoint.save(&ckpt_path)?;
    let restored = Checkpoint::load(&ckpt_path)?;
    assert_eq!(restored.params.flatten(), checkpoint.params.flatten());
    println!(
        "checkpoint round-trip: {} parameters, {} bytes, weights bit-identical",
        restored.params.param_count(),
        std::fs::metadata(&ckpt_path).unwrap().len()
    );

    // Corruption is detected, not silently accepted.
    let mut bytes = std::fs::read(&ckpt_path).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(dir.path().join("truncated.bin"), bytes).unwrap();
    match Checkpoint::load(&dir.path().join("truncated.bin")) {
        Err(e) => println!("truncated checkpoint rejected: {e}"),
        Ok(_) => println!("unexpected: truncated checkpoint loaded"),
    }
    Ok(())
}
