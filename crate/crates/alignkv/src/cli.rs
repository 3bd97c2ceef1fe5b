//! Command-line front end used by the `akv` binary.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O or file format, 4 numeric
//! degeneracy, 5 failed internal check, 1 anything else.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::align::{self, AlignConfig, Tier, TierThresholds};
use crate::analysis::{
    self, BitWidthCurve, CompareReport, DataSource, GemmKind, HistogramBasis, SweepConfig,
    BUCKET_LABELS,
};
use crate::attention::{AttentionConfig, VStrategy};
use crate::data_io::{self, HalfTensor, StatsFormat, SynthConfig};
use crate::error::Error;
use crate::kv_store::KvStore;

/// Published values for Llama-2-7B, printed next to measured ones.
const PUBLISHED_TABLE: [(&str, &str, [f64; 6]); 4] = [
    ("QK^T", "aligned", [56.30, 37.00, 5.42, 0.73, 0.31, 0.25]),
    (
        "QK^T",
        "truncated-13",
        [18.65, 32.70, 36.21, 10.26, 1.36, 0.83],
    ),
    ("SV", "aligned", [76.12, 18.14, 3.61, 1.29, 0.39, 0.44]),
    (
        "SV",
        "truncated-13",
        [20.04, 29.47, 26.66, 13.82, 5.71, 4.30],
    ),
];
const PUBLISHED_AVG_BITS: &str = "about 12 at long context, falling as context grows";

pub const THREADS_ENV: &str = "AKV_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "akv",
    version,
    about = "Precision-aligned KV-cache reads: generate data, sweep bit widths, compare errors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic K.akv, V.akv and Q.akv.
    Gen(GenArgs),
    /// Average loaded bit width per context length.
    Run(RunArgs),
    /// Relative-error distributions of aligned reads and uniform truncation.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub tokens: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    pub scale_min: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub scale_max: f64,
    /// Query gain as a power of two.
    #[arg(long, default_value_t = data_io::DEFAULT_Q_GAIN_EXP, allow_negative_numbers = true)]
    pub q_gain_exp: i32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TierArg {
    T8,
    T12,
    T16,
}

impl From<TierArg> for Tier {
    fn from(t: TierArg) -> Tier {
        match t {
            TierArg::T8 => Tier::T8,
            TierArg::T12 => Tier::T12,
            TierArg::T16 => Tier::T16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Element,
    Row,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Half,
    Wide,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Directory with K.akv, V.akv and Q.akv; synthetic data when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Element)]
    pub strategy: StrategyArg,
    #[arg(long, default_value_t = align::DEFAULT_MARGIN_BITS, allow_negative_numbers = true)]
    pub margin_bits: i32,
    /// Largest kept-bit requirement served by an 8-bit read.
    #[arg(long, default_value_t = 2, allow_negative_numbers = true)]
    pub t8_max: i32,
    /// Largest kept-bit requirement served by a 12-bit read.
    #[arg(long, default_value_t = 6)]
    pub t12_max: i32,
    /// Tokens with p >= max(p) * 2^-shift enter the output estimate.
    #[arg(long, default_value_t = 5)]
    pub topk_shift: u32,
    #[arg(long, default_value_t = 32)]
    pub topk_cap: usize,
    #[arg(long, value_enum)]
    pub force_tier: Option<TierArg>,
    #[arg(long)]
    pub no_zero_skip: bool,
    /// Precision at which results are compared with the reference.
    #[arg(long, value_enum, default_value_t = BasisArg::Half)]
    pub basis: BasisArg,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (overrides AKV_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![256usize, 1024, 4096])]
    pub lengths: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1024)]
    pub tokens: usize,
    /// Independent decode steps (synthetic seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 4)]
    pub trials: u64,
    #[arg(long, default_value_t = 13)]
    pub baseline_bits: u32,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(Error),
    Check(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Check(_) => 5,
            CliError::Lib(e) => match e {
                Error::InvalidConfig(_) => 2,
                Error::Io { .. }
                | Error::BadMagic(_)
                | Error::UnsupportedVersion(_)
                | Error::UnsupportedDtype(_)
                | Error::Truncated { .. }
                | Error::TrailingBytes { .. }
                | Error::SidecarMismatch(_)
                | Error::Csv(_)
                | Error::Json(_) => 3,
                Error::DegenerateDotProduct
                | Error::NonFinite(_)
                | Error::NonFiniteAppend { .. }
                | Error::EmptyContext
                | Error::NoReads => 4,
                _ => 1,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "internal check failed: {m}"),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Lib(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

impl CommonArgs {
    fn attention(&self) -> Result<AttentionConfig, CliError> {
        let cfg = AttentionConfig {
            align: AlignConfig {
                margin_bits: self.margin_bits,
                zero_skip: !self.no_zero_skip,
                thresholds: TierThresholds {
                    t8_max: self.t8_max,
                    t12_max: self.t12_max,
                },
                force_tier: self.force_tier.map(Tier::from),
            },
            strategy: match self.strategy {
                StrategyArg::Element => VStrategy::Element,
                StrategyArg::Row => VStrategy::Row,
            },
            topk_shift: self.topk_shift,
            topk_cap: self.topk_cap,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn basis(&self) -> HistogramBasis {
        match self.basis {
            BasisArg::Half => HistogramBasis::Half,
            BasisArg::Wide => HistogramBasis::Wide,
        }
    }

    fn threads(&self) -> Result<Option<usize>, CliError> {
        if let Some(t) = self.threads {
            return Ok(Some(t.max(1)));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => v
                .trim()
                .parse::<usize>()
                .map(|t| Some(t.max(1)))
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV}={v} is not a count"))),
            _ => Ok(None),
        }
    }

    fn source(&self, seed: u64) -> Result<DataSource, CliError> {
        if self.dim == 0 {
            return Err(CliError::Usage("--dim must be at least 1".into()));
        }
        match &self.input {
            None => Ok(DataSource::Synthetic(SynthConfig::new(1, self.dim, seed))),
            Some(dir) => {
                let names = ["K.akv", "V.akv", "Q.akv"];
                let missing: Vec<&str> = names
                    .iter()
                    .copied()
                    .filter(|n| !dir.join(n).is_file())
                    .collect();
                if !missing.is_empty() {
                    return Err(io_err(
                        dir,
                        std::io::Error::new(
                            std::io::ErrorKind::NotFound,
                            format!(
                                "expected {} (missing: {})",
                                names.join(", "),
                                missing.join(", ")
                            ),
                        ),
                    ));
                }
                let k = HalfTensor::load(dir.join("K.akv"))?;
                let v = HalfTensor::load(dir.join("V.akv"))?;
                let q = HalfTensor::load(dir.join("Q.akv"))?;
                let (_, d) = k.as_matrix()?;
                if q.as_matrix()? != (1, d) {
                    return Err(CliError::Usage(format!(
                        "Q.akv must hold one row of {d} values, got dims {:?}",
                        q.dims()
                    )));
                }
                Ok(DataSource::Tensors { k, v, q })
            }
        }
    }

    fn metadata(&self) -> Vec<(String, String)> {
        let cfg_force = self
            .force_tier
            .map(|t| Tier::from(t).read_bits().to_string())
            .unwrap_or_else(|| "none".into());
        vec![
            (
                "strategy".into(),
                format!("{:?}", self.strategy).to_lowercase(),
            ),
            ("seed".into(), self.seed.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("margin_bits".into(), self.margin_bits.to_string()),
            (
                "tier_thresholds".into(),
                format!("{}/{}", self.t8_max, self.t12_max),
            ),
            ("topk_shift".into(), self.topk_shift.to_string()),
            ("topk_cap".into(), self.topk_cap.to_string()),
            ("force_tier_bits".into(), cfg_force),
            ("basis".into(), format!("{:?}", self.basis).to_lowercase()),
            (
                "input".into(),
                self.input
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| "synthetic".into()),
            ),
        ]
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

pub fn cmd_gen(args: &GenArgs) -> Result<String, CliError> {
    if args.tokens == 0 || args.dim == 0 {
        return Err(CliError::Usage(
            "--tokens and --dim must be at least 1".into(),
        ));
    }
    let cfg = SynthConfig {
        n_tokens: args.tokens,
        d: args.dim,
        scale_exp_range: (args.scale_min, args.scale_max),
        q_gain_exp: args.q_gain_exp,
        seed: args.seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = data_io::generate(&cfg)?;
    ensure_dir(&args.out)?;
    data.k.save(args.out.join("K.akv"))?;
    data.v.save(args.out.join("V.akv"))?;
    data.q.save(args.out.join("Q.akv"))?;
    Ok(format!(
        "wrote K.akv, V.akv, Q.akv ({} tokens x {} dims, seed {}) to {}\n",
        args.tokens,
        args.dim,
        args.seed,
        args.out.display()
    ))
}

fn check_curve(curve: &BitWidthCurve, d: usize) -> Result<(), CliError> {
    for p in &curve.points {
        let n = p.context_length;
        let ok = [p.avg_bits, p.avg_bits_k, p.avg_bits_v]
            .iter()
            .all(|a| (8.0..=16.0).contains(a))
            && p.k_stats.is_consistent()
            && p.v_stats.is_consistent()
            && p.k_stats.elements_read + p.k_stats.skipped == (n * d) as u64
            && p.qk_hist.total() == n as u64
            && p.sv_hist.total() == d as u64;
        if !ok {
            return Err(CliError::Check(format!(
                "sweep point n={n} is inconsistent"
            )));
        }
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<String, CliError> {
    let c = &args.common;
    if args.lengths.is_empty() || args.lengths.contains(&0) {
        return Err(CliError::Usage("--lengths needs positive values".into()));
    }
    let cfg = SweepConfig {
        attention: c.attention()?,
        basis: c.basis(),
        threads: c.threads()?,
    };
    let source = c.source(c.seed)?;
    let d = match &source {
        DataSource::Synthetic(s) => s.d,
        DataSource::Tensors { k, .. } => k.as_matrix()?.1,
    };
    let curve = analysis::bitwidth_sweep(&source, &args.lengths, &cfg).map_err(|e| match e {
        Error::InvalidConfig(m) => CliError::Usage(m),
        e => CliError::Lib(e),
    })?;
    check_curve(&curve, d)?;

    let mut table = curve.to_table();
    table.metadata = c.metadata().into_iter().collect();
    ensure_dir(&c.out)?;
    data_io::export_stats(&table, c.out.join("sweep.csv"), StatsFormat::Csv)?;
    data_io::export_stats(&table, c.out.join("sweep.json"), StatsFormat::Json)?;

    let mut s = String::new();
    let _ = writeln!(s, "strategy: {}", table.metadata["strategy"]);
    let _ = writeln!(
        s,
        "{:>8} {:>9} {:>9} {:>9} {:>11}",
        "n", "avg_bits", "K", "V", "est_bits"
    );
    for p in &curve.points {
        let _ = writeln!(
            s,
            "{:>8} {:>9.3} {:>9.3} {:>9.3} {:>11}",
            p.context_length, p.avg_bits, p.avg_bits_k, p.avg_bits_v, p.estimate_bits
        );
    }
    let _ = writeln!(s, "published reference (Llama-2-7B): {PUBLISHED_AVG_BITS}");
    let _ = writeln!(s, "wrote {}", c.out.join("sweep.csv").display());
    Ok(s)
}

fn compare_once(args: &CompareArgs, seed: u64) -> Result<CompareReport, CliError> {
    let c = &args.common;
    let source = c.source(seed)?;
    let (store, q) = match &source {
        DataSource::Synthetic(base) => {
            let data = data_io::generate(&SynthConfig {
                n_tokens: args.tokens,
                ..base.clone()
            })?;
            (
                KvStore::from_tensors(&data.k, &data.v)?,
                data.q.data().to_vec(),
            )
        }
        DataSource::Tensors { k, v, q } => {
            let (n, d) = k.as_matrix()?;
            let take = args.tokens.min(n);
            let prefix =
                |t: &HalfTensor| HalfTensor::new(vec![take, d], t.data()[..take * d].to_vec());
            (
                KvStore::from_tensors(&prefix(k)?, &prefix(v)?)?,
                q.data().to_vec(),
            )
        }
    };
    let eval = analysis::evaluate_step(&q, &store, &c.attention()?, args.baseline_bits)?;
    let baseline = format!("truncated-{}", args.baseline_bits);
    Ok(analysis::compare_report(
        ("aligned", &eval.aligned),
        (&baseline, &eval.baseline),
        &eval.reference,
        c.basis(),
    )?)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let c = &args.common;
    if args.tokens == 0 || args.trials == 0 {
        return Err(CliError::Usage(
            "--tokens and --trials must be at least 1".into(),
        ));
    }
    if !(8..=16).contains(&args.baseline_bits) {
        return Err(CliError::Usage("--baseline-bits must be in [8, 16]".into()));
    }
    // Loaded tensors give one step; synthetic data gives one per seed.
    let trials = if c.input.is_some() { 1 } else { args.trials };
    let mut report = CompareReport::default();
    for i in 0..trials {
        report.merge(&compare_once(args, c.seed.wrapping_add(i))?);
    }
    for row in &report.rows {
        let sum: f64 = row.fractions.iter().sum();
        if (sum - 1.0).abs() > 2f64.powi(-30) {
            return Err(CliError::Check(format!(
                "{} {} fractions sum to {sum}",
                row.gemm, row.method
            )));
        }
    }

    ensure_dir(&c.out)?;
    let json_path = c.out.join("compare.json");
    let mut meta: std::collections::BTreeMap<String, String> = c.metadata().into_iter().collect();
    meta.insert("tokens".into(), args.tokens.to_string());
    meta.insert("trials".into(), trials.to_string());
    meta.insert("baseline_bits".into(), args.baseline_bits.to_string());
    let mut json =
        serde_json::to_vec_pretty(&serde_json::json!({ "metadata": meta, "rows": report.rows }))
            .map_err(Error::from)?;
    json.push(b'\n');
    data_io::write_atomic(&json_path, &json)?;

    let mut s = String::new();
    let _ = writeln!(s, "strategy: {}", meta["strategy"]);
    let _ = write!(s, "{:<6} {:<14} {:>8}", "gemm", "method", "avg_bits");
    for l in BUCKET_LABELS {
        let _ = write!(s, " {l:>15}");
    }
    s.push('\n');
    for row in &report.rows {
        let _ = write!(
            s,
            "{:<6} {:<14} {:>8.3}",
            row.gemm.to_string(),
            row.method,
            row.avg_bits
        );
        for f in row.fractions {
            let _ = write!(s, " {:>14.2}%", 100.0 * f);
        }
        s.push('\n');
    }
    let _ = writeln!(s, "published reference (Llama-2-7B, 16 vs 13 bits):");
    for (g, m, vals) in PUBLISHED_TABLE {
        let _ = write!(s, "{g:<6} {m:<14} {:>8}", "");
        for v in vals {
            let _ = write!(s, " {v:>14.2}%");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "wrote {}", json_path.display());
    for g in [GemmKind::Scores, GemmKind::Output] {
        debug_assert!(report.row(g, "aligned").is_some());
    }
    Ok(s)
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

/// Parses `args`, runs the command and maps failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("akv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
