//! Split a channel into its eight bit planes and put it back together.
//!
//! Every 8-bit value is the weighted sum of its planes: v = sum over k of
//! 2^k * b_k. The low planes look like noise but carry the generator
//! traces the fingerprint keeps; the high planes carry the scene.
//!
//! Run with: cargo run --example bit_planes

use lida::fingerprint::{decompose, Channel, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lida::Result<()> {
    // Random image so every plane has something in it.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pixels: Vec<u8> = (0..32 * 32 * 3).map(|_| rng.random()).collect();
    let img = RgbImage::new(32, 32, pixels)?;

    // Decompose the green channel and report how often each bit is set.
    // For uniform random bytes every plane should sit near 50%.
    let mut planes = Vec::new();
    for k in 0..8 {
        let plane = decompose(&img, Channel::G, k)?;
        let set = plane.bits().iter().filter(|&&b| b == 1).count();
        let total = plane.width() * plane.height();
        println!("plane {k}: weight {:3}, {:5.1}% of bits set", 1u16 << k, 100.0 * set as f64 / total as f64);
        planes.push(plane);
    }

    // Reconstruct the channel from the planes and check it is exact.
    let mut mismatches = 0usize;
    for row in 0..img.height() {
        for col in 0..img.width() {
            let rebuilt: u16 = (0..8).map(|k| (planes[k].bit(row, col) as u16) << k).sum();
            if rebuilt != img.channel_value(row, col, Channel::G) as u16 {
                mismatches += 1;
            }
        }
    }
    println!("\nreconstruction: {mismatches} mismatched pixels (expected 0)");
    assert_eq!(mismatches, 0);
    Ok(())
}
