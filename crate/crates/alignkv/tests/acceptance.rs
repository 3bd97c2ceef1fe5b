//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use alignkv::analysis::{
    alignment_bruteforce, bitwidth_sweep, compare_report, evaluate_step, CompareReport, DataSource,
    GemmKind, HistogramBasis, SweepConfig,
};
use alignkv::attention::{
    decode, estimate_output, output_aligned, reference_output, reference_scores, select_top,
    softmax,
};
use alignkv::data_io::{self, HalfTensor, SynthConfig};
use alignkv::{
    AccessCounter, AttentionConfig, Error, HalfWord, KvStore, ReadTier, Tier, UlpExponent,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bit_exactness() -> Outcome {
    let start = Instant::now();
    let finite: Vec<HalfWord> = (0..=u16::MAX)
        .map(HalfWord::from_bits)
        .filter(|h| h.is_finite())
        .collect();

    for bits in 0..=u16::MAX {
        let h = HalfWord::from_bits(bits);
        ensure(h.split().merge() == h, || {
            format!("split/merge changed {bits:#06x}")
        })?;
    }

    for &h in &finite {
        let u = h.ulp_exponent().map_err(|e| e.to_string())?;
        for t in 0..=10u32 {
            let r = h.truncate_fill(t).map_err(|e| e.to_string())?;
            let err = (r.decode() - h.decode()).abs();
            let bound = 2f64.powi(9 - t as i32 + u);
            ensure(err <= bound, || {
                format!("{:#06x} kept {t}: error {err} > {bound}", h.bits())
            })?;
        }
    }

    let d = 64;
    let mut store = KvStore::new(d);
    for row in finite.chunks(d) {
        let mut padded = row.to_vec();
        padded.resize(d, HalfWord::ZERO);
        store
            .append_token(&padded, &padded)
            .map_err(|e| e.to_string())?;
    }
    let mut counter = AccessCounter::default();
    for (i, &h) in finite.iter().enumerate() {
        let got = store
            .k()
            .read_element(i / d, i % d, ReadTier::Read(Tier::T16), &mut counter)
            .map_err(|e| e.to_string())?;
        ensure(got == h, || {
            format!("T16 read of {:#06x} gave {:#06x}", h.bits(), got.bits())
        })?;
    }

    let elapsed = start.elapsed();
    ensure(elapsed.as_secs_f64() < 1.0, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "65536 split/merge, {} finite x 11 truncations, T16 lossless, {:.0} ms",
        finite.len(),
        elapsed.as_secs_f64() * 1e3
    ))
}

fn oracle_equivalence() -> Outcome {
    let lengths = [16usize, 256, 1024];
    let steps = 102;
    let cfg = AttentionConfig::lossless();
    for step in 0..steps {
        let n = lengths[step % lengths.len()];
        let data = data_io::generate(&SynthConfig::new(n, 128, 1000 + step as u64))
            .map_err(|e| e.to_string())?;
        let store = KvStore::from_tensors(&data.k, &data.v).map_err(|e| e.to_string())?;
        let r = decode(data.q.data(), &store, &cfg).map_err(|e| e.to_string())?;
        let ref_scores = reference_scores(data.q.data(), &data.k).map_err(|e| e.to_string())?;
        let ref_out =
            reference_output(&softmax(&ref_scores), &data.v).map_err(|e| e.to_string())?;
        let same = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        };
        ensure(same(&r.scores, &ref_scores), || {
            format!("step {step} (n={n}): QK^T differs")
        })?;
        ensure(same(&r.output, &ref_out), || {
            format!("step {step} (n={n}): SV differs")
        })?;
    }
    Ok(format!(
        "{steps} steps, d=128, n in {lengths:?}, bit-identical"
    ))
}

fn alignment_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut infeasible) = (0usize, 0usize);
    while checked < 1000 {
        let k = rng.random_range(1..=4usize);
        let products: Vec<i32> = (0..k).map(|_| rng.random_range(-24..=12)).collect();
        let target = UlpExponent(rng.random_range(-14..=4));
        let o = alignment_bruteforce(&products, target).map_err(|e| e.to_string())?;
        if !o.feasible() {
            infeasible += 1;
            continue;
        }
        ensure(o.aligned_is_optimal(), || {
            format!(
                "{products:?} target {}: aligned {} vs minimum {:?}",
                target.0, o.aligned_total, o.min_total
            )
        })?;
        checked += 1;
    }
    Ok(format!(
        "{checked} instances optimal ({infeasible} infeasible skipped)"
    ))
}

fn average_bit_width() -> Outcome {
    let lengths = [256usize, 1024, 4096];
    let mut lines = Vec::new();
    for seed in 0..4u64 {
        let source = DataSource::Synthetic(SynthConfig::new(1, 128, seed));
        let curve = bitwidth_sweep(&source, &lengths, &SweepConfig::default())
            .map_err(|e| e.to_string())?;
        let avg: Vec<f64> = curve.points.iter().map(|p| p.avg_bits).collect();
        ensure(avg[1] <= 13.0 && avg[2] <= 13.0, || {
            format!("seed {seed}: averages {avg:?} exceed 13 at n >= 1024")
        })?;
        ensure(avg[2] < avg[0], || {
            format!(
                "seed {seed}: avg(4096) {} not below avg(256) {}",
                avg[2], avg[0]
            )
        })?;
        lines.push(format!("{:.2}/{:.2}/{:.2}", avg[0], avg[1], avg[2]));
    }
    Ok(format!("n=256/1024/4096 per seed: {}", lines.join(", ")))
}

fn error_dominance() -> Outcome {
    let cfg = AttentionConfig::default();
    let baseline = format!("truncated-{}", 13);
    let mut report = CompareReport::default();
    let (mut k_stats, mut v_stats) = (AccessCounter::default(), AccessCounter::default());
    for trial in 0..4u64 {
        let data =
            data_io::generate(&SynthConfig::new(1024, 128, trial)).map_err(|e| e.to_string())?;
        let store = KvStore::from_tensors(&data.k, &data.v).map_err(|e| e.to_string())?;
        let eval = evaluate_step(data.q.data(), &store, &cfg, 13).map_err(|e| e.to_string())?;
        k_stats.merge(&eval.k_stats);
        v_stats.merge(&eval.v_stats);
        let r = compare_report(
            ("aligned", &eval.aligned),
            (&baseline, &eval.baseline),
            &eval.reference,
            HistogramBasis::Half,
        )
        .map_err(|e| e.to_string())?;
        report.merge(&r);
    }
    let frac = |g, m: &str| {
        report
            .row(g, m)
            .map(|r| r.fractions)
            .ok_or(format!("no row {m}"))
    };
    let (qa, qb) = (
        frac(GemmKind::Scores, "aligned")?,
        frac(GemmKind::Scores, &baseline)?,
    );
    let (sa, sb) = (
        frac(GemmKind::Output, "aligned")?,
        frac(GemmKind::Output, &baseline)?,
    );
    let bits = k_stats
        .merged(&v_stats)
        .average_bit_width()
        .map_err(|e| e.to_string())?;
    let pct = |x: f64| format!("{:.2}%", x * 100.0);
    let detail = format!(
        "QK^T zero {} vs {}, tail {}; SV zero {} vs {}, tail {}; avg bits {bits:.2}",
        pct(qa[0]),
        pct(qb[0]),
        pct(qa[5]),
        pct(sa[0]),
        pct(sb[0]),
        pct(sa[5])
    );
    ensure(qa[0] > qb[0] && sa[0] > sb[0], || {
        format!("(a) zero bucket: {detail}")
    })?;
    ensure(qa[5] <= 0.01 && sa[5] <= 0.02, || {
        format!("(b) tail: {detail}")
    })?;
    ensure(bits <= 13.0, || format!("(c) bits: {detail}"))?;
    Ok(detail)
}

fn estimation_safety() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trials = 1000;
    for trial in 0..trials {
        let n = rng.random_range(1..=2048usize);
        let spread = 2f64.powi(rng.random_range(-4..=8));
        let mut scores: Vec<f64> = (0..n)
            .map(|_| spread * (rng.random::<f64>() - 0.5))
            .collect();
        if trial % 5 == 0 {
            let j = rng.random_range(0..n);
            scores[j] = scores[(j + 1) % n];
        }
        let arg = scores
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best });
        let p = softmax(&scores);
        let sel = select_top(&p, 5, 32);
        ensure(sel.contains(&arg), || {
            format!("trial {trial}: argmax {arg} not selected")
        })?;
    }

    let cfg = AttentionConfig::default();
    for seed in 0..trials as u64 {
        let n = 1 + (seed as usize * 37) % 300;
        let data = data_io::generate(&SynthConfig::new(n, 32, seed)).map_err(|e| e.to_string())?;
        let store = KvStore::from_tensors(&data.k, &data.v).map_err(|e| e.to_string())?;
        let j = (seed as usize * 13) % n;
        let mut p = vec![0.0; n];
        p[j] = 1.0;
        let est =
            estimate_output(&p, &store, cfg.topk_shift, cfg.topk_cap).map_err(|e| e.to_string())?;
        let out = output_aligned(&p, &store, Some(&est), &cfg).map_err(|e| e.to_string())?;
        let row: Vec<f64> = data.v.row(j).iter().map(|h| h.decode()).collect();
        ensure(out.output == row, || {
            format!("seed {seed}: one-hot output differs from V row {j}")
        })?;
    }
    Ok(format!(
        "{trials} argmax trials, {trials} one-hot outputs exact"
    ))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn format_conformance() -> Outcome {
    let m = HalfTensor::load(fixture("golden_2x3.akv")).map_err(|e| e.to_string())?;
    let bits: Vec<u16> = m.data().iter().map(|h| h.bits()).collect();
    ensure(m.dims() == [2, 3], || {
        format!("golden_2x3 dims {:?}", m.dims())
    })?;
    ensure(
        bits == [0x3C00, 0xC100, 0x0000, 0x7BFF, 0x0001, 0x8000],
        || format!("golden_2x3 payload {bits:04x?}"),
    )?;
    let q = HalfTensor::load(fixture("golden_q4.akv")).map_err(|e| e.to_string())?;
    let bits: Vec<u16> = q.data().iter().map(|h| h.bits()).collect();
    ensure(
        q.dims() == [4] && bits == [0x2E66, 0xB555, 0x4248, 0x6400],
        || format!("golden_q4 {:?} {bits:04x?}", q.dims()),
    )?;
    let raw = std::fs::read(fixture("golden_2x3.akv")).map_err(|e| e.to_string())?;
    ensure(m.to_bytes() == raw, || {
        "re-encoding golden_2x3 is not byte-identical".into()
    })?;

    match HalfTensor::load(fixture("bad_magic.akv")) {
        Err(Error::BadMagic(got)) if &got == b"AKV2" => {}
        other => return Err(format!("bad_magic: {other:?}")),
    }
    match HalfTensor::load(fixture("truncated.akv")) {
        Err(Error::Truncated {
            expected: 32,
            found: 29,
        }) => {}
        other => return Err(format!("truncated: {other:?}")),
    }
    Ok("2 golden files bit-identical; bad magic and truncation rejected distinctly".into())
}

fn run_cli(out: &Path, threads: &str) -> Result<Vec<u8>, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_akv"))
        .args(["run", "--seed", "5", "--lengths", "64,256,1024", "--out"])
        .arg(out)
        .env("AKV_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || {
        format!(
            "akv run failed: {}",
            String::from_utf8_lossy(&status.stderr)
        )
    })?;
    std::fs::read(out.join("sweep.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: Vec<Vec<u8>> = [("a", "1"), ("b", "1"), ("c", "4")]
        .iter()
        .map(|(name, threads)| run_cli(&dir.path().join(name), threads))
        .collect::<Result<_, _>>()?;
    ensure(runs[0] == runs[1], || "two runs differ".into())?;
    ensure(runs[0] == runs[2], || "AKV_THREADS=1 and 4 differ".into())?;
    Ok(format!(
        "sweep.csv identical over 3 runs ({} bytes)",
        runs[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("bit-exactness", bit_exactness),
        ("oracle equivalence", oracle_equivalence),
        ("alignment optimality", alignment_optimality),
        ("average bit width", average_bit_width),
        ("error-distribution dominance", error_dominance),
        ("estimation safety", estimation_safety),
        ("format conformance", format_conformance),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
