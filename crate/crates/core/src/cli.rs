//! Command-line front end.
//!
//! Machine-readable results go to standard output (or `--out`); summaries and
//! diagnostics go to standard error. Exit status is 0 on success, 1 on a
//! numerical or property failure and 2 on a usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{
    fig1_inputs, quarter_turn_grid, rotation_sweep, run_benchmark, write_bench_csv, write_sweep_csv, BenchConfig,
    BenchRow, EstimatorKind,
};
use crate::checks::{run_suites, SuiteOptions};
use crate::error::{Result, TraceError};
use crate::estimators::{girard_hutchinson, projected_gh, xtrace_full, xtrace_naive, EstimateReport, ResampleOptions};
use crate::kernels::{rng_from_seed, sample_gaussian, RotationKind};
use crate::matfree::{spectrum_operator, MatFreeOperator, SpectrumFamily, SpectrumSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_DIM: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "xtrace", version, about = "Matrix-free stochastic trace estimation")]
struct Cli {
    /// Seed controlling every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file (standard output when omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Log verbosity on standard error (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one estimator on one draw of test vectors.
    Estimate(EstimateArgs),
    /// Paired RMS-error benchmark written as CSV.
    Bench(BenchArgs),
    /// Rotation sweep over the fixed two-vector example, written as CSV.
    Fig1,
    /// Run the invariance and equivalence suites.
    Check(CheckArgs),
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Spectrum as `family` or `family:N`.
    #[arg(long)]
    spectrum: String,
    /// Dimension N.
    #[arg(long, value_parser = positive)]
    n: Option<usize>,
    /// Number of test vectors.
    #[arg(long, value_parser = positive)]
    m: usize,
    /// Number of rotations for xtrace-full (default 1; 25 for xtrace-full-resampled).
    #[arg(long, value_parser = positive)]
    k: Option<usize>,
    #[arg(long, default_value = "xtrace-full")]
    estimator: String,
    #[arg(long, default_value = "identity-first-haar")]
    strategy: String,
    /// Replace the operator by the identity.
    #[arg(long)]
    identity_override: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Spectra as `family` or `family:N`, comma separated (default: all six).
    #[arg(long, value_delimiter = ',')]
    spectrum: Vec<String>,
    /// Dimension N for spectra given without one.
    #[arg(long, value_parser = positive)]
    n: Option<usize>,
    /// Test-vector counts, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    m: Vec<usize>,
    /// Rotations for xtrace-full-resampled.
    #[arg(long, value_parser = positive, default_value_t = 25)]
    k: usize,
    #[arg(long, value_parser = positive, default_value_t = 1000)]
    trials: usize,
    /// Estimators, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    estimator: Vec<String>,
    #[arg(long)]
    identity_override: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Also run the Monte Carlo conditional-expectation checks.
    #[arg(long)]
    mc: bool,
    #[arg(long, value_parser = positive, default_value_t = 100_000)]
    samples: usize,
}

/// Parses `family` or `family:N`, reconciling with an explicit `--n`.
fn parse_spectrum(text: &str, n: Option<usize>) -> Result<SpectrumSpec> {
    if text.contains(':') {
        let spec: SpectrumSpec = text.parse()?;
        match n {
            Some(n) if n != spec.dim() => Err(TraceError::InvalidSpec(format!(
                "--n {n} conflicts with spectrum '{text}'"
            ))),
            _ => Ok(spec),
        }
    } else {
        SpectrumSpec::new(text.parse()?, n.unwrap_or(DEFAULT_DIM))
    }
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn output_path(out: Option<&Path>) -> PathBuf {
    out.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf)
}

fn io_error(out: Option<&Path>) -> impl FnOnce(io::Error) -> TraceError + '_ {
    move |source| TraceError::Io {
        path: output_path(out),
        source,
    }
}

fn csv_error(out: Option<&Path>) -> impl FnOnce(csv::Error) -> TraceError + '_ {
    move |source| TraceError::Csv {
        path: output_path(out),
        source,
    }
}

fn run_estimator(
    op: &MatFreeOperator,
    kind: EstimatorKind,
    m: usize,
    opts: &ResampleOptions,
    seed: u64,
) -> Result<EstimateReport> {
    let mut rng = rng_from_seed(seed);
    let omega = sample_gaussian(&mut rng, op.dim(), m);
    let mut report = match kind {
        EstimatorKind::Gh => girard_hutchinson(op, omega.view()),
        EstimatorKind::ProjectedGh => projected_gh(op, omega.view()),
        EstimatorKind::XTrace => xtrace_naive(op, omega.view()),
        EstimatorKind::XTraceFull | EstimatorKind::XTraceFullResampled => xtrace_full(op, omega.view(), opts, &mut rng),
    }?;
    report.seed = Some(seed);
    Ok(report)
}

fn cmd_estimate(args: &EstimateArgs, seed: u64, out: Option<&Path>) -> Result<bool> {
    let spec = parse_spectrum(&args.spectrum, args.n)?;
    let kind: EstimatorKind = args.estimator.parse()?;
    let strategy: RotationKind = args.strategy.parse()?;
    let default_k = if kind == EstimatorKind::XTraceFullResampled { 25 } else { 1 };
    let k = args.k.unwrap_or(default_k);
    let n = spec.dim();
    if args.m > n {
        return Err(TraceError::InvalidInput(format!("m = {} exceeds N = {n}", args.m)));
    }
    let (op, trace) = if args.identity_override {
        (MatFreeOperator::identity(n), n as f64)
    } else {
        spectrum_operator(&spec)
    };
    let opts = ResampleOptions {
        k,
        strategy,
        ..Default::default()
    };
    let report = run_estimator(&op, kind, args.m, &opts, seed)?;
    let rel_err = (report.estimate - trace).abs() / trace.abs();

    let mut w = open_output(out)?;
    let write = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "estimator,spectrum,N,m,k,estimate,trace,rel_err,matvecs,seed,fell_back")?;
        writeln!(
            w,
            "{},{},{},{},{},{:e},{:e},{:e},{},{},{}",
            kind,
            if args.identity_override { "identity" } else { spec.family().name() },
            n,
            args.m,
            k,
            report.estimate,
            trace,
            rel_err,
            report.matvecs_used,
            seed,
            report.fell_back
        )?;
        w.flush()
    };
    write(&mut *w).map_err(io_error(out))?;
    eprintln!(
        "{kind}: estimate {:.10e}, trace {trace:.10e}, relative error {rel_err:.3e}, matvecs {}",
        report.estimate, report.matvecs_used
    );
    Ok(true)
}

fn summarize_spectrum(rows: &[BenchRow]) {
    let Some(first) = rows.first() else { return };
    let worst = rows.iter().map(|r| r.rms_rel_err).fold(0.0f64, f64::max);
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    eprintln!(
        "{} N={}: {} rows, largest rms_rel_err {worst:.3e}, {failures} failed trials",
        first.spectrum,
        first.n,
        rows.len()
    );
}

fn cmd_bench(args: &BenchArgs, seed: u64, out: Option<&Path>) -> Result<bool> {
    let spectra: Vec<SpectrumSpec> = if args.spectrum.is_empty() {
        SpectrumFamily::ALL
            .iter()
            .map(|&f| SpectrumSpec::new(f, args.n.unwrap_or(DEFAULT_DIM)))
            .collect::<Result<_>>()?
    } else {
        args.spectrum.iter().map(|s| parse_spectrum(s, args.n)).collect::<Result<_>>()?
    };
    let estimators: Vec<EstimatorKind> = if args.estimator.is_empty() {
        EstimatorKind::ALL.to_vec()
    } else {
        args.estimator.iter().map(|s| s.parse()).collect::<Result<_>>()?
    };
    let m_values = if args.m.is_empty() {
        BenchConfig::DEFAULT_M_VALUES.to_vec()
    } else {
        args.m.clone()
    };

    let configs: Vec<BenchConfig> = spectra
        .into_iter()
        .map(|spectrum| BenchConfig {
            spectrum,
            m_values: m_values.clone(),
            trials: args.trials,
            resample_k: args.k,
            estimators: estimators.clone(),
            base_seed: seed,
            identity_override: args.identity_override,
        })
        .collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    let mut rows = Vec::new();
    for cfg in &configs {
        let spectrum_rows = run_benchmark(cfg)?;
        summarize_spectrum(&spectrum_rows);
        rows.extend(spectrum_rows);
    }
    rows.sort_by(|a, b| (&a.spectrum, a.n, a.estimator, a.m).cmp(&(&b.spectrum, b.n, b.estimator, b.m)));
    write_bench_csv(&rows, open_output(out)?).map_err(csv_error(out))?;
    Ok(true)
}

fn cmd_fig1(out: Option<&Path>) -> Result<bool> {
    let (op, omega) = fig1_inputs();
    let points = rotation_sweep(&op, omega.view(), &quarter_turn_grid(65))?;
    let (lo, hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.xtrace), hi.max(p.xtrace)));
    write_sweep_csv(&points, open_output(out)?).map_err(csv_error(out))?;
    eprintln!("xtrace ranges over [{lo:.6}, {hi:.6}] across {} angles", points.len());
    Ok(true)
}

fn cmd_check(args: &CheckArgs, seed: u64, out: Option<&Path>) -> Result<bool> {
    let outcomes = run_suites(SuiteOptions {
        seed,
        mc_samples: args.mc.then_some(args.samples),
    });
    let mut w = open_output(out)?;
    let write = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "suite\tstatus\tdetail")?;
        for o in &outcomes {
            writeln!(w, "{}\t{}\t{}", o.name, if o.passed { "pass" } else { "FAIL" }, o.detail)?;
        }
        w.flush()
    };
    write(&mut *w).map_err(io_error(out))?;
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    if failed.is_empty() {
        eprintln!("all {} suites passed", outcomes.len());
    } else {
        eprintln!("failed suites: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    // builder ignores the environment; only the flag sets the level
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name) and runs the command, returning
/// the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let out = cli.out.as_deref();
    let result = match &cli.command {
        Command::Estimate(args) => cmd_estimate(args, cli.seed, out),
        Command::Bench(args) => cmd_bench(args, cli.seed, out),
        Command::Fig1 => cmd_fig1(out),
        Command::Check(args) => cmd_check(args, cli.seed, out),
    };
    match result {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}
