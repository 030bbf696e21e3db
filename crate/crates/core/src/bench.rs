//! Benchmark harness: paired RMS-error sweeps, the two-vector rotation sweep,
//! Monte Carlo checks of the conditional expectations and a correlation
//! diagnostic for resampled estimates.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{array, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, TraceError};
use crate::estimators::{
    build_krylov_factors, girard_hutchinson, leave_one_out_full, loo_full_from_factors, projected_gh,
    xtrace_full, xtrace_full_naive, xtrace_naive, ResampleOptions, RotationFrame,
};
use crate::kernels::{
    derive_seed, rng_from_seed, sample_gaussian, sample_gaussian_r_factor, sample_haar_orthogonal,
    sample_unit_vector, RotationKind,
};
use crate::matfree::{make_diagonal_operator, spectrum_operator, MatFreeOperator, SpectrumSpec};

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EstimatorKind {
    Gh,
    ProjectedGh,
    XTrace,
    XTraceFull,
    XTraceFullResampled,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Gh,
        EstimatorKind::ProjectedGh,
        EstimatorKind::XTrace,
        EstimatorKind::XTraceFull,
        EstimatorKind::XTraceFullResampled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Gh => "gh",
            EstimatorKind::ProjectedGh => "projected-gh",
            EstimatorKind::XTrace => "xtrace",
            EstimatorKind::XTraceFull => "xtrace-full",
            EstimatorKind::XTraceFullResampled => "xtrace-full-resampled",
        }
    }

    /// Matvecs spent for `m` test vectors.
    pub fn matvecs(self, m: usize) -> usize {
        match self {
            EstimatorKind::Gh | EstimatorKind::ProjectedGh => m,
            _ => 2 * m,
        }
    }

    fn needs_krylov_room(self) -> bool {
        matches!(self, EstimatorKind::XTraceFull | EstimatorKind::XTraceFullResampled)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TraceError::InvalidSpec(format!("unknown estimator '{s}'")))
    }
}

/// Benchmark settings.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub spectrum: SpectrumSpec,
    pub m_values: Vec<usize>,
    pub trials: usize,
    pub resample_k: usize,
    pub estimators: Vec<EstimatorKind>,
    pub base_seed: u64,
    /// Replace the operator by the identity of the same size.
    pub identity_override: bool,
}

impl BenchConfig {
    pub const DEFAULT_M_VALUES: [usize; 6] = [2, 4, 8, 16, 32, 64];

    pub fn new(spectrum: SpectrumSpec) -> Self {
        BenchConfig {
            spectrum,
            m_values: Self::DEFAULT_M_VALUES.to_vec(),
            trials: 1000,
            resample_k: 25,
            estimators: EstimatorKind::ALL.to_vec(),
            base_seed: 0,
            identity_override: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.spectrum.dim();
        if self.trials == 0 {
            return Err(TraceError::InvalidSpec("trials must be at least 1".into()));
        }
        if self.resample_k == 0 {
            return Err(TraceError::InvalidSpec("resampling number must be at least 1".into()));
        }
        if self.estimators.is_empty() || self.m_values.is_empty() {
            return Err(TraceError::InvalidSpec("need at least one estimator and one m".into()));
        }
        let krylov = self.estimators.iter().any(|e| e.needs_krylov_room());
        for &m in &self.m_values {
            if m < 2 {
                return Err(TraceError::InvalidSpec(format!("every m must be at least 2, got {m}")));
            }
            let limit = if krylov { n / 2 } else { n };
            if m > limit {
                return Err(TraceError::InvalidSpec(format!("m = {m} is too large for N = {n}")));
            }
        }
        Ok(())
    }
}

/// One line of benchmark output.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub spectrum: String,
    pub n: usize,
    pub m: usize,
    pub matvecs: usize,
    pub estimator: EstimatorKind,
    pub k: usize,
    pub trials: usize,
    pub rms_rel_err: f64,
    pub mean_estimate: f64,
    pub std_error: f64,
    /// Standard error of `rms_rel_err` (delta method); not written to CSV.
    pub rms_rel_err_se: f64,
    /// Trials in which the estimator returned an error; not written to CSV.
    pub failures: usize,
}

/// Seed of trial `trial` at test-vector count `m`.
pub fn trial_seed(base_seed: u64, m: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(base_seed, m as u64), trial as u64)
}

/// Runs every estimator on the single `Ω` drawn from `seed`.
///
/// The resampled estimator draws its rotations from the same stream after
/// `Ω`, so the whole trial is a function of `seed`.
pub fn run_trial(
    op: &MatFreeOperator,
    m: usize,
    seed: u64,
    estimators: &[EstimatorKind],
    resample_k: usize,
) -> Vec<Result<f64>> {
    let mut rng = rng_from_seed(seed);
    let omega = sample_gaussian(&mut rng, op.dim(), m);
    estimators
        .iter()
        .map(|&kind| {
            let report = match kind {
                EstimatorKind::Gh => girard_hutchinson(op, omega.view()),
                EstimatorKind::ProjectedGh => projected_gh(op, omega.view()),
                EstimatorKind::XTrace => xtrace_naive(op, omega.view()),
                EstimatorKind::XTraceFull => xtrace_full(op, omega.view(), &ResampleOptions::default(), &mut rng),
                EstimatorKind::XTraceFullResampled => {
                    xtrace_full(op, omega.view(), &ResampleOptions::with_k(resample_k), &mut rng)
                }
            };
            report.map(|r| r.estimate)
        })
        .collect()
}

fn summarize(values: &[f64], trace: f64) -> (f64, f64, f64, f64) {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0)
    } else {
        0.0
    };
    let sq: Vec<f64> = values.iter().map(|v| (v - trace).powi(2)).collect();
    let mse = sq.iter().sum::<f64>() / t;
    let mse_var = if values.len() > 1 {
        sq.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / (t - 1.0)
    } else {
        0.0
    };
    let rms = mse.sqrt() / trace.abs();
    let rms_se = if mse > 0.0 {
        (mse_var / t).sqrt() / (2.0 * mse.sqrt()) / trace.abs()
    } else {
        0.0
    };
    (rms, mean, (var / t).sqrt(), rms_se)
}

/// Runs the paired benchmark. Rows come back sorted by spectrum, estimator
/// and `m`, and depend only on the configuration.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let n = cfg.spectrum.dim();
    let (op, trace, label) = if cfg.identity_override {
        (MatFreeOperator::identity(n), n as f64, "identity".to_string())
    } else {
        let (op, trace) = spectrum_operator(&cfg.spectrum);
        (op, trace, cfg.spectrum.family().name().to_string())
    };

    let mut rows = Vec::new();
    for &m in &cfg.m_values {
        let outcomes: Vec<Vec<Result<f64>>> = (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(&op.fork(), m, trial_seed(cfg.base_seed, m, t), &cfg.estimators, cfg.resample_k))
            .collect();
        for (e, &kind) in cfg.estimators.iter().enumerate() {
            let mut values = Vec::with_capacity(cfg.trials);
            let mut failures = 0;
            for trial in &outcomes {
                match &trial[e] {
                    Ok(v) => values.push(*v),
                    Err(err) => {
                        failures += 1;
                        log::debug!("{kind} failed at m = {m}: {err}");
                    }
                }
            }
            if failures > 0 {
                log::warn!("{kind} failed in {failures} of {} trials at m = {m}", cfg.trials);
            }
            let (rms, mean, se, rms_se) = if values.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
            } else {
                summarize(&values, trace)
            };
            if (mean - trace).abs() > 5.0 * se && se > 0.0 {
                log::warn!(
                    "{label}: {kind} mean {mean:e} is {:.1} standard errors from the trace at m = {m}",
                    (mean - trace).abs() / se
                );
            }
            rows.push(BenchRow {
                spectrum: label.clone(),
                n,
                m,
                matvecs: kind.matvecs(m),
                estimator: kind,
                k: if kind == EstimatorKind::XTraceFullResampled { cfg.resample_k } else { 1 },
                trials: cfg.trials,
                rms_rel_err: rms,
                mean_estimate: mean,
                std_error: se,
                rms_rel_err_se: rms_se,
                failures,
            });
        }
    }
    rows.sort_by(|a, b| (&a.spectrum, a.estimator, a.m).cmp(&(&b.spectrum, b.estimator, b.m)));
    Ok(rows)
}

/// The fixed two-vector example: `A = diag(5, 4, 3, 2, 1)` and
/// `Ω = [e₁, ½(e₂ + e₃ + e₄ + e₅)]`.
pub fn fig1_inputs() -> (MatFreeOperator, Array2<f64>) {
    let op = make_diagonal_operator(&[5.0, 4.0, 3.0, 2.0, 1.0]);
    let omega = array![[1.0, 0.0], [0.0, 0.5], [0.0, 0.5], [0.0, 0.5], [0.0, 0.5]];
    (op, omega)
}

/// `[[cos θ, −sin θ], [sin θ, cos θ]]`.
pub fn plane_rotation(theta: f64) -> Array2<f64> {
    let (s, c) = theta.sin_cos();
    array![[c, -s], [s, c]]
}

/// `count` evenly spaced angles covering `[0, π/2]`.
pub fn quarter_turn_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count)
            .map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub theta: f64,
    pub xtrace: f64,
    pub xtrace_full: f64,
}

/// Both naive estimators on `Ω·U_θ` for each angle.
pub fn rotation_sweep(op: &MatFreeOperator, omega: ArrayView2<f64>, thetas: &[f64]) -> Result<Vec<SweepPoint>> {
    if omega.ncols() != 2 {
        return Err(TraceError::InvalidInput(format!("rotation sweep needs m = 2, got {}", omega.ncols())));
    }
    if thetas.is_empty() {
        return Err(TraceError::InvalidInput("empty angle grid".into()));
    }
    thetas
        .iter()
        .map(|&theta| {
            let rotated = omega.dot(&plane_rotation(theta));
            Ok(SweepPoint {
                theta,
                xtrace: xtrace_naive(op, rotated.view())?.estimate,
                xtrace_full: xtrace_full_naive(op, rotated.view())?.estimate,
            })
        })
        .collect()
}

/// A Monte Carlo mean set against a reference value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McComparison {
    pub mc_mean: f64,
    pub mc_std_error: f64,
    pub reference: f64,
    /// Zero when the reference is computed exactly.
    pub reference_std_error: f64,
}

impl McComparison {
    pub fn combined_std_error(&self) -> f64 {
        self.mc_std_error.hypot(self.reference_std_error)
    }

    /// Within four combined standard errors, with a relative floor of `1e-10`
    /// for the noiseless case.
    pub fn within_four_se(&self) -> bool {
        (self.mc_mean - self.reference).abs() <= 4.0 * self.combined_std_error() + 1e-10 * self.reference.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMcReport {
    /// Girard–Hutchinson on `QUR` against `(N/m)tr(QᵀAQ)`.
    pub gh: McComparison,
    /// XTraceFull on `QUR` against the Haar-direction mean of the
    /// closed-form estimate built from `Q`.
    pub xtrace_full: McComparison,
}

impl ConditionalMcReport {
    pub fn passes(&self) -> bool {
        self.gh.within_four_se() && self.xtrace_full.within_four_se()
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let t = values.len() as f64;
    let mean = values.iter().sum::<f64>() / t;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
    (mean, (var / t).sqrt())
}

/// Draws `Ω = QUR` with `U` Haar and `R` distributed as the triangular factor
/// of a Gaussian block, and compares the resulting Monte Carlo means with
/// their conditional expectations given `range(Q)`.
pub fn conditional_mc_check<R: Rng + ?Sized>(
    op: &MatFreeOperator,
    q: ArrayView2<f64>,
    samples: usize,
    rng: &mut R,
) -> Result<ConditionalMcReport> {
    let (n, m) = q.dim();
    if n != op.dim() || m < 2 || samples < 2 {
        return Err(TraceError::InvalidInput(format!(
            "need an N×m basis with m ≥ 2 and at least two samples, got {n}×{m} and {samples}"
        )));
    }
    let mut gh = Vec::with_capacity(samples);
    let mut full = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u = sample_haar_orthogonal(rng, m);
        let r = sample_gaussian_r_factor(rng, n, m);
        let omega = q.dot(&u).dot(&r);
        gh.push(girard_hutchinson(op, omega.view())?.estimate);
        full.push(xtrace_full_naive(op, omega.view())?.estimate);
    }

    let reference: Vec<f64> = match build_krylov_factors(op, q) {
        Ok(factors) => (0..samples)
            .map(|_| loo_full_from_factors(&factors, sample_unit_vector(rng, m).view()))
            .collect::<Result<_>>()?,
        Err(TraceError::RankDeficient { .. }) => (0..samples)
            .map(|_| leave_one_out_full(op, q.dot(&sample_haar_orthogonal(rng, m)).view()))
            .collect::<Result<_>>()?,
        Err(e) => return Err(e),
    };

    let (gh_mean, gh_se) = mean_and_se(&gh);
    let (full_mean, full_se) = mean_and_se(&full);
    let (ref_mean, ref_se) = mean_and_se(&reference);
    Ok(ConditionalMcReport {
        gh: McComparison {
            mc_mean: gh_mean,
            mc_std_error: gh_se,
            reference: projected_gh(op, q)?.estimate,
            reference_std_error: 0.0,
        },
        xtrace_full: McComparison {
            mc_mean: full_mean,
            mc_std_error: full_se,
            reference: ref_mean,
            reference_std_error: ref_se,
        },
    })
}

/// Correlation estimate with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Correlation between per-sample estimates that share a rotation and those
/// that do not. `None` means not applicable (no spread in the samples).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationReport {
    pub within_rotation: Option<Correlation>,
    pub across_rotations: Option<Correlation>,
}

fn pooled(per_trial: &[f64]) -> Option<Correlation> {
    if per_trial.len() < 2 {
        return None;
    }
    let (value, se) = mean_and_se(per_trial);
    Some(Correlation {
        value,
        ci_low: value - 1.96 * se,
        ci_high: value + 1.96 * se,
    })
}

/// Measures, over `trials` independent draws of `Ω`, how the `m` samples
/// produced by one Haar rotation correlate with each other compared with
/// samples from different rotations. Samples are centred on their own trial
/// mean, so the variation of `range(Ω)` between trials does not enter.
pub fn resampling_correlation(
    op: &MatFreeOperator,
    m: usize,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<CorrelationReport> {
    if k < 2 || trials < 1 {
        return Err(TraceError::InvalidInput("correlation needs k ≥ 2 and at least one trial".into()));
    }
    let opts = ResampleOptions {
        k,
        strategy: RotationKind::IdentityFirstHaar,
        frame: RotationFrame::Orthonormal,
        kac_steps: None,
    };
    let mut within = Vec::with_capacity(trials);
    let mut across = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = rng_from_seed(derive_seed(seed, t as u64));
        let omega = sample_gaussian(&mut rng, op.dim(), m);
        let report = xtrace_full(op, omega.view(), &opts, &mut rng)?;
        if report.fell_back {
            continue;
        }
        let mean = report.estimate;
        let dev: Vec<f64> = report.samples.iter().map(|s| s - mean).collect();
        let var = dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64;
        if !(var > 1e-24 * mean * mean) {
            continue;
        }
        let total: f64 = dev.iter().sum();
        let squares: f64 = dev.iter().map(|d| d * d).sum();
        let within_sum: f64 = dev
            .chunks(m)
            .map(|g| {
                let s: f64 = g.iter().sum();
                s * s - g.iter().map(|d| d * d).sum::<f64>()
            })
            .sum();
        let all_pairs = total * total - squares;
        let within_pairs = (k * m * (m - 1)) as f64;
        let across_pairs = (k * m * m * (k - 1)) as f64;
        within.push(within_sum / within_pairs / var);
        across.push((all_pairs - within_sum) / across_pairs / var);
    }
    Ok(CorrelationReport {
        within_rotation: pooled(&within),
        across_rotations: pooled(&across),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

fn write_records<W: Write>(sink: W, header: &[&str], records: impl Iterator<Item = Vec<String>>) -> csv::Result<()> {
    let mut w = csv_writer(sink);
    w.write_record(header)?;
    for record in records {
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub const BENCH_HEADER: [&str; 10] = [
    "spectrum",
    "N",
    "m",
    "matvecs",
    "estimator",
    "k",
    "trials",
    "rms_rel_err",
    "mean_estimate",
    "std_error",
];

pub const FIG1_HEADER: [&str; 3] = ["theta", "xtrace", "xtrace_full"];

fn bench_record(r: &BenchRow) -> Vec<String> {
    vec![
        r.spectrum.clone(),
        r.n.to_string(),
        r.m.to_string(),
        r.matvecs.to_string(),
        r.estimator.name().to_string(),
        r.k.to_string(),
        r.trials.to_string(),
        format!("{:e}", r.rms_rel_err),
        format!("{:e}", r.mean_estimate),
        format!("{:e}", r.std_error),
    ]
}

fn sweep_record(p: &SweepPoint) -> Vec<String> {
    vec![format!("{:e}", p.theta), format!("{:e}", p.xtrace), format!("{:e}", p.xtrace_full)]
}

/// Writes benchmark rows as CSV to any sink.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], sink: W) -> csv::Result<()> {
    write_records(sink, &BENCH_HEADER, rows.iter().map(bench_record))
}

/// Writes sweep points as CSV to any sink.
pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], sink: W) -> csv::Result<()> {
    write_records(sink, &FIG1_HEADER, points.iter().map(sweep_record))
}

/// Writes benchmark rows to `path`.
pub fn write_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    write_bench_csv(rows, create(path)?).map_err(|source| TraceError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes sweep points to `path`.
pub fn write_fig1_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    write_sweep_csv(points, create(path)?).map_err(|source| TraceError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::economy_qr;

    fn small_config(spec: &str) -> BenchConfig {
        BenchConfig {
            m_values: vec![2, 4],
            trials: 20,
            resample_k: 3,
            ..BenchConfig::new(spec.parse().unwrap())
        }
    }

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("hutch".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_config("poly:20");
        cfg.validate().unwrap();
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config("poly:20");
        cfg.m_values = vec![1];
        assert!(cfg.validate().is_err());
        cfg.m_values = vec![11];
        assert!(cfg.validate().is_err());
        cfg.estimators = vec![EstimatorKind::Gh, EstimatorKind::XTrace];
        cfg.validate().unwrap();
    }

    #[test]
    fn identity_override_is_exact() {
        let mut cfg = small_config("flat:60");
        cfg.identity_override = true;
        let rows = run_benchmark(&cfg).unwrap();
        assert_eq!(rows.len(), 10);
        for r in rows.iter().filter(|r| r.estimator != EstimatorKind::Gh) {
            assert!(r.rms_rel_err <= 1e-10, "{:?}", r);
        }
    }

    #[test]
    fn rows_are_sorted_and_labelled() {
        let rows = run_benchmark(&small_config("exp:40")).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.estimator, r.m)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for r in &rows {
            assert_eq!(r.matvecs, r.estimator.matvecs(r.m));
            assert_eq!(r.failures, 0);
            assert!(r.rms_rel_err >= 0.0);
            assert_eq!(r.k, if r.estimator == EstimatorKind::XTraceFullResampled { 3 } else { 1 });
        }
    }

    #[test]
    fn single_trial_is_reproducible_from_its_seed() {
        let mut cfg = small_config("poly:50");
        cfg.trials = 1;
        cfg.base_seed = 42;
        let rows = run_benchmark(&cfg).unwrap();
        let (op, _) = spectrum_operator(&cfg.spectrum);
        for &m in &cfg.m_values {
            let redo = run_trial(&op, m, trial_seed(42, m, 0), &cfg.estimators, cfg.resample_k);
            for (kind, value) in cfg.estimators.iter().zip(redo) {
                let row = rows.iter().find(|r| r.m == m && r.estimator == *kind).unwrap();
                assert_eq!(row.mean_estimate, value.unwrap());
            }
        }
    }

    #[test]
    fn trial_shares_one_draw() {
        let (op, _) = spectrum_operator(&"poly:60".parse().unwrap());
        let seed = trial_seed(3, 5, 7);
        let omega = sample_gaussian(&mut rng_from_seed(seed), 60, 5);
        let kinds = [EstimatorKind::Gh, EstimatorKind::XTrace, EstimatorKind::XTraceFull];
        let values = run_trial(&op, 5, seed, &kinds, 1);
        assert_eq!(*values[0].as_ref().unwrap(), girard_hutchinson(&op, omega.view()).unwrap().estimate);
        assert_eq!(*values[1].as_ref().unwrap(), xtrace_naive(&op, omega.view()).unwrap().estimate);
        let naive = xtrace_full_naive(&op, omega.view()).unwrap().estimate;
        assert!((values[2].as_ref().unwrap() - naive).abs() <= 1e-9 * naive.abs());
    }

    #[test]
    fn sweep_endpoints() {
        let (op, omega) = fig1_inputs();
        let points = rotation_sweep(&op, omega.view(), &quarter_turn_grid(65)).unwrap();
        assert_eq!(points.len(), 65);
        assert!((points[0].xtrace - 115.0 / 6.0).abs() <= 1e-10);
        assert!((points[0].xtrace_full - 17.5).abs() <= 1e-10);
        assert!((points[64].xtrace - points[0].xtrace).abs() <= 1e-10);
        let (lo, hi) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.xtrace), hi.max(p.xtrace)));
        assert!(hi - lo > 0.5);
        assert!(rotation_sweep(&op, omega.view(), &[]).is_err());
    }

    #[test]
    fn conditional_check_on_identity_is_exact() {
        let op = MatFreeOperator::identity(30);
        let q = economy_qr(sample_gaussian(&mut rng_from_seed(1), 30, 3).view()).unwrap().q;
        let report = conditional_mc_check(&op, q.view(), 50, &mut rng_from_seed(2)).unwrap();
        assert!((report.gh.reference - 30.0).abs() <= 1e-10);
        assert!((report.xtrace_full.mc_mean - 30.0).abs() <= 1e-9);
        assert!((report.xtrace_full.reference - 30.0).abs() <= 1e-9);
        assert!(report.xtrace_full.within_four_se());
    }

    #[test]
    fn conditional_check_small_run() {
        let (op, _) = spectrum_operator(&"poly:40".parse().unwrap());
        let q = economy_qr(sample_gaussian(&mut rng_from_seed(3), 40, 4).view()).unwrap().q;
        let report = conditional_mc_check(&op, q.view(), 4000, &mut rng_from_seed(4)).unwrap();
        assert!(report.passes(), "{report:?}");
    }

    #[test]
    fn correlation_diagnostic() {
        let id = MatFreeOperator::identity(40);
        let r = resampling_correlation(&id, 4, 3, 5, 1).unwrap();
        assert_eq!(r.within_rotation, None);
        assert_eq!(r.across_rotations, None);

        let (op, _) = spectrum_operator(&"exp:60".parse().unwrap());
        let a = resampling_correlation(&op, 4, 5, 30, 9).unwrap();
        let b = resampling_correlation(&op, 4, 5, 30, 9).unwrap();
        assert_eq!(a, b);
        let w = a.within_rotation.unwrap();
        assert!(w.ci_low <= w.value && w.value <= w.ci_high);
        assert!(resampling_correlation(&op, 4, 1, 5, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_bench_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), BENCH_HEADER.join(",") + "\n");

        let rows = run_benchmark(&small_config("poly:30")).unwrap();
        let mut buf = Vec::new();
        write_bench_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains('\r'));
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for (record, row) in reader.records().zip(&rows) {
            let record = record.unwrap();
            assert_eq!(&record[4], row.estimator.name());
            assert_eq!(record[7].parse::<f64>().unwrap(), row.rms_rel_err);
            assert_eq!(record[8].parse::<f64>().unwrap(), row.mean_estimate);
            assert_eq!(record[9].parse::<f64>().unwrap(), row.std_error);
        }
    }

    #[test]
    fn csv_io_error_names_path() {
        let path = Path::new("/nonexistent-dir/out.csv");
        let err = write_csv(&[], path).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/out.csv"));
    }
}
