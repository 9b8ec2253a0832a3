//! Pretrain the encoder on a labelled fingerprint corpus.
//!
//! Pretraining is a plain classification task ("which class does this
//! fingerprint belong to?") solved by stochastic gradient descent on a
//! small convolutional network. Two things come out of it: trained encoder
//! weights, and a real prototype, which is the mean normalized feature of
//! the corpus used later for zero-shot detection.
//!
//! The corpus here is deliberately tiny and obviously learnable: class 0
//! fingerprints carry vertical stripes, class 1 horizontal ones, with a
//! few random pixel flips per image so examples are not duplicates.
//!
//! Run with: cargo run --example pretrain_encoder

use lida::encoder::{EncoderConfig, EncoderParams};
use lida::fingerprint::FingerprintImage;
use lida::training::{pretext_accuracy, pretrain, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn striped_fingerprint(side: usize, vertical: bool, rng: &mut ChaCha8Rng) -> FingerprintImage {
    let phase = rng.random_range(0..2usize);
    let flips: Vec<(usize, usize)> =
        (0..8).map(|_| (rng.random_range(0..side), rng.random_range(0..side))).collect();
    let mut channels: [Vec<u8>; 3] = [vec![], vec![], vec![]];
    for ch in channels.iter_mut() {
        for row in 0..side {
            for col in 0..side {
                let stripe = if vertical { col } else { row };
                let mut on = (stripe + phase) % 2 == 0;
                if flips.contains(&(row, col)) {
                    on = !on;
                }
                ch.push(if on { 255 } else { 0 });
            }
        }
    }
    FingerprintImage::from_channels(side, side, channels).unwrap()
}

fn main() -> lida::Result<()> {
    let side = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut corpus = Vec::new();
    for class in 0..2usize {
        for _ in 0..20 {
            corpus.push((striped_fingerprint(side, class == 0, &mut rng), class));
        }
    }

    let mut params = EncoderParams::init(&EncoderConfig {
        input_side: side,
        conv_layers: vec![(6, 3, 1)],
        feature_dim: 8,
        num_pretext_classes: 2,
        seed: 1,
    })?;
    println!("encoder has {} parameters", params.param_count());
    println!("accuracy before training: {:.1}%", 100.0 * pretext_accuracy(&params, &corpus)?);

    let config = TrainConfig {
        batch_size: 8,
        learning_rate: 0.05,
        epochs: 60,
        seed: 5,
        ..TrainConfig::default()
    };
    let (prototype, log) = pretrain(&mut params, &corpus, &config)?;

    // The log records one row per epoch; print a thinned loss curve.
    for record in log.records.iter().step_by(10) {
        println!("epoch {:3}  loss {:.6}", record.epoch, record.loss);
    }
    println!("accuracy after training:  {:.1}%", 100.0 * pretext_accuracy(&params, &corpus)?);
    println!(
        "real prototype: {} dims from {} samples, norm {:.6}",
        prototype.values.len(),
        prototype.sample_count,
        prototype.values.norm()
    );
    println!("trained in {:.2}s", log.wall_seconds);
    Ok(())
}
