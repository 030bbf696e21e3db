//! Property suites behind `xtrace check`.

use ndarray::{array, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::bench::fig1_inputs;
use crate::error::Result;
use crate::estimators::{
    check_last_column_dependence, leave_one_out, leave_one_out_full, projected_gh, xtrace_full,
    xtrace_full_naive, xtrace_naive, ResampleOptions,
};
use crate::kernels::{economy_qr, rng_from_seed, sample_gaussian, sample_haar_orthogonal, TraceRng};
use crate::matfree::{make_dense_operator, spectrum_operator, MatFreeOperator, SpectrumFamily, SpectrumSpec};

/// Result of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from_result(name: &'static str, result: Result<(bool, String)>) -> Self {
        match result {
            Ok((passed, detail)) => CheckOutcome { name, passed, detail },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        }
    }
}

/// An XTraceFull implementation under test: maps `(A, Ω)` to an estimate.
pub type FullEstimator<'a> = dyn Fn(&MatFreeOperator, ArrayView2<f64>) -> Result<f64> + 'a;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Random symmetric positive semidefinite `MMᵀ/N`.
pub fn random_wishart<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array2<f64> {
    let g = sample_gaussian(rng, n, n);
    g.dot(&g.t()) / n as f64
}

/// Every estimator except Girard–Hutchinson returns `N` on the identity.
pub fn identity_exactness(seed: u64) -> CheckOutcome {
    CheckOutcome::from_result("identity exactness", (|| {
        let n = 1000;
        let op = MatFreeOperator::identity(n);
        let mut rng = rng_from_seed(seed);
        let mut worst: f64 = 0.0;
        for m in [2, 10, 50] {
            let omega = sample_gaussian(&mut rng, n, m);
            let values = [
                xtrace_naive(&op, omega.view())?.estimate,
                xtrace_full_naive(&op, omega.view())?.estimate,
                xtrace_full(&op, omega.view(), &ResampleOptions::with_k(1), &mut rng)?.estimate,
                xtrace_full(&op, omega.view(), &ResampleOptions::with_k(25), &mut rng)?.estimate,
                projected_gh(&op, omega.view())?.estimate,
                leave_one_out(&op, omega.view())?,
                leave_one_out_full(&op, omega.view())?,
            ];
            worst = values.iter().fold(worst, |w, &v| w.max(rel_err(v, n as f64)));
        }
        Ok((worst <= 1e-10, format!("max relative error {worst:.2e}")))
    })())
}

fn random_block_triangular(rng: &mut TraceRng, m: usize) -> Array2<f64> {
    let mut r = sample_gaussian(rng, m, m);
    r.slice_mut(s![m - 1, ..m - 1]).fill(0.0);
    // keep both diagonal blocks safely invertible
    for i in 0..m {
        r[[i, i]] += if r[[i, i]] >= 0.0 { 2.0 } else { -2.0 };
    }
    r
}

/// `LeaveOneOutFull(ΩR) = LeaveOneOutFull(Ω)` for block upper triangular `R`
/// with blocks `(m − 1, 1)`, across `cases` random draws.
pub fn block_triangular_invariance(seed: u64, cases: usize) -> CheckOutcome {
    CheckOutcome::from_result("block-triangular invariance", (|| {
        let mut rng = rng_from_seed(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let n = rng.random_range(12..=60);
            let m = rng.random_range(2..=5);
            let op = make_dense_operator(random_wishart(&mut rng, n))?;
            let omega = sample_gaussian(&mut rng, n, m);
            let r = random_block_triangular(&mut rng, m);
            let base = leave_one_out_full(&op, omega.view())?;
            let moved = leave_one_out_full(&op, omega.dot(&r).view())?;
            worst = worst.max(rel_err(moved, base));
        }
        Ok((worst <= 1e-10, format!("{cases} cases, max relative change {worst:.2e}")))
    })())
}

/// The two-vector example with its columns swapped, so that `ω₁` is held out,
/// and the shear `R = [[1, 1], [0, 1]]`.
pub fn loo_counterexample() -> (MatFreeOperator, Array2<f64>, Array2<f64>) {
    let (op, omega) = fig1_inputs();
    (op, omega.select(Axis(1), &[1, 0]), array![[1.0, 1.0], [0.0, 1.0]])
}

/// The shear of [`loo_counterexample`] changes `LeaveOneOut` by more than
/// `1e-6` while leaving `LeaveOneOutFull` fixed.
pub fn loo_not_invariant() -> CheckOutcome {
    CheckOutcome::from_result("leave-one-out counterexample", (|| {
        let (op, omega, r) = loo_counterexample();
        let sheared = omega.dot(&r);
        let loo_change = (leave_one_out(&op, omega.view())? - leave_one_out(&op, sheared.view())?).abs();
        let full_change = (leave_one_out_full(&op, omega.view())? - leave_one_out_full(&op, sheared.view())?).abs();
        Ok((
            loo_change > 1e-6 && full_change <= 1e-10,
            format!("LeaveOneOut moves by {loo_change:.3e}, LeaveOneOutFull by {full_change:.1e}"),
        ))
    })())
}

/// Rotations sharing their last column give identical leave-one-out values.
pub fn last_column_dependence(seed: u64, cases: usize) -> CheckOutcome {
    CheckOutcome::from_result("last-column dependence", (|| {
        let mut rng = rng_from_seed(seed);
        for case in 0..cases {
            let n = rng.random_range(12..=60);
            let m = rng.random_range(2..=5);
            let op = make_dense_operator(random_wishart(&mut rng, n))?;
            let omega = sample_gaussian(&mut rng, n, m);
            let u1 = sample_haar_orthogonal(&mut rng, m);
            let mut v = Array2::<f64>::eye(m);
            v.slice_mut(s![..m - 1, ..m - 1]).assign(&sample_haar_orthogonal(&mut rng, m - 1));
            let u2 = u1.dot(&v);
            if !check_last_column_dependence(&op, omega.view(), u1.view(), u2.view())? {
                return Ok((false, format!("case {case} (N = {n}, m = {m}) differs")));
            }
        }
        Ok((true, format!("{cases} cases")))
    })())
}

/// Compares `estimator` with [`xtrace_full_naive`] on `cases` random
/// symmetric `A` (`N ≤ 200`) and Gaussian `Ω` (`m ≤ 20`) at `1e-8` relative.
pub fn efficient_naive_equivalence_with(seed: u64, cases: usize, estimator: &FullEstimator<'_>) -> CheckOutcome {
    CheckOutcome::from_result("efficient vs naive equivalence", (|| {
        let mut rng = rng_from_seed(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            let n = rng.random_range(40..=200);
            let m = rng.random_range(2..=20);
            let op = make_dense_operator(random_wishart(&mut rng, n))?;
            let omega = sample_gaussian(&mut rng, n, m);
            let fast = estimator(&op, omega.view())?;
            let slow = xtrace_full_naive(&op, omega.view())?.estimate;
            worst = worst.max(rel_err(fast, slow));
        }
        Ok((worst <= 1e-8, format!("{cases} cases, max relative gap {worst:.2e}")))
    })())
}

/// [`efficient_naive_equivalence_with`] applied to [`xtrace_full`] with one
/// identity rotation.
pub fn efficient_naive_equivalence(seed: u64, cases: usize) -> CheckOutcome {
    let run = |op: &MatFreeOperator, omega: ArrayView2<f64>| -> Result<f64> {
        let report = xtrace_full(op, omega, &ResampleOptions::default(), &mut rng_from_seed(0))?;
        Ok(report.estimate)
    };
    efficient_naive_equivalence_with(seed, cases, &run)
}

/// Conditional-expectation Monte Carlo checks at `N = 100`, `m = 5` on the
/// poly spectrum.
pub fn conditional_expectations(seed: u64, samples: usize) -> Vec<CheckOutcome> {
    let run = || -> Result<crate::bench::ConditionalMcReport> {
        let spec = SpectrumSpec::new(SpectrumFamily::Poly, 100)?;
        let (op, _) = spectrum_operator(&spec);
        let mut rng = rng_from_seed(seed);
        let q = economy_qr(sample_gaussian(&mut rng, 100, 5).view())?.q;
        crate::bench::conditional_mc_check(&op, q.view(), samples, &mut rng)
    };
    match run() {
        Ok(report) => {
            let describe = |c: &crate::bench::McComparison| {
                format!(
                    "MC mean {:.6} vs {:.6}, {:.2} combined SE",
                    c.mc_mean,
                    c.reference,
                    (c.mc_mean - c.reference).abs() / c.combined_std_error()
                )
            };
            vec![
                CheckOutcome {
                    name: "conditional expectation of GH",
                    passed: report.gh.within_four_se(),
                    detail: describe(&report.gh),
                },
                CheckOutcome {
                    name: "XTraceFull basis invariance",
                    passed: report.xtrace_full.within_four_se(),
                    detail: describe(&report.xtrace_full),
                },
            ]
        }
        Err(e) => vec![CheckOutcome {
            name: "conditional expectations",
            passed: false,
            detail: format!("error: {e}"),
        }],
    }
}

/// Suite selection for [`run_suites`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Monte Carlo sample count; `None` skips the Monte Carlo suites.
    pub mc_samples: Option<usize>,
}

pub fn run_suites(opts: SuiteOptions) -> Vec<CheckOutcome> {
    let mut out = vec![
        identity_exactness(opts.seed),
        block_triangular_invariance(opts.seed, 100),
        loo_not_invariant(),
        last_column_dependence(opts.seed, 50),
        efficient_naive_equivalence(opts.seed, 100),
    ];
    if let Some(samples) = opts.mc_samples {
        out.extend(conditional_expectations(opts.seed, samples));
    }
    out
}

/// Unit direction `R₀⁻ᵀeᵢ/‖R₀⁻ᵀeᵢ‖`; exposed so that alternative estimators
/// can be assembled from public factor pieces.
pub fn test_vector_direction(r0: ArrayView2<f64>, i: usize) -> Result<Array1<f64>> {
    let m = r0.nrows();
    let mut e = Array2::zeros((m, 1));
    e[[i, 0]] = 1.0;
    let w = crate::kernels::solve_transposed_upper(r0, e.view())?;
    let w = w.column(0).to_owned();
    let norm = w.dot(&w).sqrt();
    Ok(w / norm)
}
