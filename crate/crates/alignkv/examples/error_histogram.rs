//! Relative-error histograms of the aligned path and a fixed-width
//! truncation baseline, pooled over a few decode steps.

use alignkv::analysis::{
    compare_report, evaluate_step, CompareReport, HistogramBasis, BUCKET_LABELS,
};
use alignkv::data_io::{generate, SynthConfig};
use alignkv::{AttentionConfig, KvStore};

fn main() -> alignkv::Result<()> {
    let cfg = AttentionConfig::default();
    let mut report = CompareReport::default();
    for seed in 0..4 {
        let data = generate(&SynthConfig::new(1024, 128, seed))?;
        let store = KvStore::from_tensors(&data.k, &data.v)?;
        let eval = evaluate_step(data.q.data(), &store, &cfg, 13)?;
        report.merge(&compare_report(
            ("aligned", &eval.aligned),
            ("truncated-13", &eval.baseline),
            &eval.reference,
            HistogramBasis::Half,
        )?);
    }

    print!("{:<6}{:<14}{:>6}", "gemm", "method", "bits");
    for label in BUCKET_LABELS {
        print!("{label:>16}");
    }
    println!();
    for row in &report.rows {
        print!(
            "{:<6}{:<14}{:>6.2}",
            row.gemm.to_string(),
            row.method,
            row.avg_bits
        );
        for f in row.fractions {
            print!("{:>15.2}%", f * 100.0);
        }
        println!();
    }
    Ok(())
}
