//! Average loaded bit width as the context grows. Run with `--release`.

use alignkv::analysis::{bitwidth_sweep, DataSource, SweepConfig};
use alignkv::data_io::{stats_to_csv, SynthConfig};

fn main() -> alignkv::Result<()> {
    let source = DataSource::Synthetic(SynthConfig::new(1, 128, 0));
    let curve = bitwidth_sweep(
        &source,
        &[128, 256, 512, 1024, 2048, 4096],
        &SweepConfig::default(),
    )?;
    println!("{:>7} {:>8} {:>8} {:>8}", "n", "avg", "K", "V");
    for p in &curve.points {
        println!(
            "{:>7} {:>8.3} {:>8.3} {:>8.3}",
            p.context_length, p.avg_bits, p.avg_bits_k, p.avg_bits_v
        );
    }
    let csv = stats_to_csv(&curve.to_table())?;
    println!("\n{}", String::from_utf8_lossy(&csv));
    Ok(())
}
