//! One attention decode step with aligned reads, compared with the
//! full-precision reference.

use alignkv::attention::{decode, reference_output, reference_scores, softmax};
use alignkv::data_io::{generate, SynthConfig};
use alignkv::{AttentionConfig, KvStore, ReadTier, VStrategy};

fn main() -> alignkv::Result<()> {
    let data = generate(&SynthConfig::new(2048, 128, 42))?;
    let store = KvStore::from_tensors(&data.k, &data.v)?;
    let q = data.q.data();

    let ref_scores = reference_scores(q, &data.k)?;
    let ref_out = reference_output(&softmax(&ref_scores), &data.v)?;

    for strategy in [VStrategy::Element, VStrategy::Row] {
        let cfg = AttentionConfig {
            strategy,
            ..AttentionConfig::default()
        };
        let r = decode(q, &store, &cfg)?;
        let max_rel = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| if *y == 0.0 { 0.0 } else { ((x - y) / y).abs() })
                .fold(0.0, f64::max)
        };
        let skipped = r.k_tiers.iter().filter(|t| **t == ReadTier::Skip).count();
        println!("strategy {strategy}");
        println!(
            "  K: {:.2} bits/element, target ulp 2^{}, {skipped} channels skipped",
            r.k_stats.average_bit_width()?,
            r.k_target.map_or(0, |t| t.0)
        );
        println!(
            "  V: {:.2} bits/element, {} estimate rows",
            r.v_stats.average_bit_width()?,
            r.estimate.as_ref().map_or(0, |e| e.selected.len())
        );
        println!(
            "  total {:.2} bits; max relative error: scores {:.2e}, output {:.2e}",
            r.total_stats().average_bit_width()?,
            max_rel(&r.scores, &ref_scores),
            max_rel(&r.output, &ref_out)
        );
    }

    let lossless = decode(q, &store, &AttentionConfig::lossless())?;
    println!(
        "forced 16-bit output equals reference: {}",
        lossless.output == ref_out
    );
    Ok(())
}
