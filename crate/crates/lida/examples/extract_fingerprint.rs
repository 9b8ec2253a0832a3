//! Extract a low-bit fingerprint from an image.
//!
//! The fingerprint keeps only what the three lowest bit planes of each
//! channel say: a fingerprint pixel is 255 when any of those bits is set
//! and 0 otherwise. Generator post-processing (rounding, quantization,
//! upsampling) leaves family-specific texture in exactly those bits, while
//! scene content lives almost entirely in the high bits.
//!
//! Run with: cargo run --example extract_fingerprint

use lida::fingerprint::{extract_fingerprint, Channel, RgbImage};

fn main() -> lida::Result<()> {
    // A flat mid-gray image whose value has empty low bits (96 = 0b0110_0000),
    // with a small block whose value has low bits set (100 = 0b0110_0100).
    // To the eye the two values are nearly identical; the fingerprint
    // separates them perfectly.
    let mut img = RgbImage::filled(32, 32, [96, 96, 96])?;
    for row in 8..16 {
        for col in 8..16 {
            img.set_pixel(row, col, [100, 100, 100]);
        }
    }

    let fp = extract_fingerprint(&img);

    // The rule per channel: output 255 iff (value & 7) != 0.
    println!("pixel (0,0)  value {:3?} -> fingerprint {}", img.pixel(0, 0), fp.value(0, 0, Channel::R));
    println!("pixel (8,8)  value {:3?} -> fingerprint {}", img.pixel(8, 8), fp.value(8, 8, Channel::R));

    // Count active fingerprint pixels per channel.
    for channel in Channel::ALL {
        let active = fp.channel(channel).iter().filter(|&&v| v == 255).count();
        println!(
            "channel {:?}: {:4} of {:4} fingerprint pixels active",
            channel,
            active,
            fp.width() * fp.height()
        );
    }

    // Render the red channel of the center rows as text.
    println!("\nfingerprint rows 6..=17 (red channel, # = 255):");
    for row in 6..18 {
        let line: String = (6..18)
            .map(|col| if fp.value(row, col, Channel::R) == 255 { '#' } else { '.' })
            .collect();
        println!("  {line}");
    }
    Ok(())
}
