//! How many mantissa bits each addend of a dot product needs, and a check
//! that no cheaper assignment meets the same error budget.

use alignkv::align::{k_channel_tiers, required_mantissa_bits, rule1_target};
use alignkv::analysis::alignment_bruteforce;
use alignkv::{AlignConfig, HalfWord, UlpExponent};

fn main() -> alignkv::Result<()> {
    let q: Vec<HalfWord> = [3.0, 0.01, -0.5, 0.0].map(HalfWord::encode).to_vec();
    let colmax: Vec<HalfWord> = [2.0, 8.0, 0.125, 1.0].map(HalfWord::encode).to_vec();

    let target = rule1_target(&q, &colmax)?;
    println!("coarsest addend ulp: 2^{}", target.0);

    for margin in [0, 4] {
        let cfg = AlignConfig {
            margin_bits: margin,
            ..AlignConfig::default()
        };
        let tiers = k_channel_tiers(&q, &colmax, &cfg)?;
        println!("margin {margin}: {tiers:?}");
    }

    let bare = AlignConfig {
        margin_bits: 0,
        ..AlignConfig::default()
    };
    println!("\nproduct exponent -> kept bits (target 2^-9)");
    for p in [-20, -12, -8, -4, 0, 1] {
        println!(
            "{p:>4} -> {}",
            required_mantissa_bits(p, UlpExponent(-9), &bare)
        );
    }

    let o = alignment_bruteforce(&[1, -5, -3], UlpExponent(-9))?;
    println!(
        "\nbrute force over products [1, -5, -3]: aligned {:?} total {}, minimum {:?}",
        o.aligned, o.aligned_total, o.min_total
    );
    Ok(())
}
