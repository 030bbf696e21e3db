//! XTraceFull through cached Krylov factors.
//!
//! With `[Ω, AΩ] = Q·R̂` and `Q₀ = ΩR₀⁻¹`, the block `[Q₀, AQ₀]` factors as
//! `Q·R` where `R = [[I, MR₀⁻¹], [0, R₁R₀⁻¹]]`. Removing the direction `u`
//! from `Q₀` leaves a deflation basis whose complement in `range(Q)` is
//! spanned by `S = R⁻ᵀ(I₂ ⊗ u)`. After the QL step `S = S̃L` the held-out
//! residual is parallel to `Qs̃₁`, which gives
//!
//! ```text
//! tr̂(u) = tr(H) − s̃₂ᵀHs̃₂ + (N − 2m + 1)·s̃₁ᵀHs̃₁,   H = QᵀAQ
//! ```
//!
//! at `O(m²)` per `u` and no matvecs.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::loo::block_tolerances;
use super::naive::xtrace_full_from_products;
use super::{check_block, EstimateReport};
use crate::error::{Result, TraceError};
use crate::kernels::{
    householder, ql_orthonormalize_pair, ql_pair_in_place, rng_from_seed, sample_gaussian, solve_transposed_upper,
    solve_upper_right, Rotation, RotationKind, RotationStrategy,
};
use crate::matfree::MatFreeOperator;

/// Cached `(Q, R, H)` for one draw of `Ω`.
#[derive(Debug, Clone)]
pub struct KrylovFactors {
    q: Array2<f64>,
    r: Array2<f64>,
    h: Array2<f64>,
    r0: Array2<f64>,
    ambient: usize,
    m: usize,
}

impl KrylovFactors {
    /// `N×2m` orthonormal basis of `[Ω, AΩ]`.
    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    /// Triangular factor of `[Q₀, AQ₀]`; its leading `m×m` block is `I`.
    pub fn r(&self) -> &Array2<f64> {
        &self.r
    }

    /// `QᵀAQ`.
    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }

    /// `R₀` with `Ω = Q₀R₀`.
    pub fn omega_factor(&self) -> &Array2<f64> {
        &self.r0
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn test_vectors(&self) -> usize {
        self.m
    }

    /// Largest gap between the first `m` columns of `H` and the
    /// corresponding block of `R`; both equal `QᵀAQ₀`.
    pub fn overlap_defect(&self) -> f64 {
        let m = self.m;
        (&self.h.slice(s![.., ..m]) - &self.r.slice(s![.., m..]))
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    /// The orthonormalized pair `(s̃₁, s̃₂)` for the unit direction `u`.
    pub fn deflation_pair(&self, u: ArrayView1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check_direction(u)?;
        let s = self.complement_block(u.insert_axis(Axis(1)))?;
        let (tilde, _) = ql_orthonormalize_pair(s.view())?;
        Ok((tilde.column(0).to_owned(), tilde.column(1).to_owned()))
    }

    fn check_direction(&self, u: ArrayView1<f64>) -> Result<()> {
        if u.len() != self.m {
            return Err(TraceError::InvalidInput(format!(
                "direction has length {}, expected {}",
                u.len(),
                self.m
            )));
        }
        let norm = u.dot(&u).sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(TraceError::InvalidInput(format!("direction must be a unit vector, norm is {norm}")));
        }
        Ok(())
    }

    /// `R⁻ᵀ(I₂ ⊗ U)` for the columns of `us`, laid out as `[s₁ block, s₂ block]`.
    fn complement_block(&self, us: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (m, c) = (self.m, us.ncols());
        let mut rhs = Array2::zeros((2 * m, 2 * c));
        rhs.slice_mut(s![..m, ..c]).assign(&us);
        rhs.slice_mut(s![m.., c..]).assign(&us);
        solve_transposed_upper(self.r.view(), rhs.view())
    }

    /// Closed-form leave-one-out estimate for every column of `us`.
    pub(crate) fn estimate_columns(&self, us: ArrayView2<f64>) -> Result<Vec<f64>> {
        let c = us.ncols();
        let dim = 2 * self.m;
        let s = self.complement_block(us)?;
        let h = self.h.as_standard_layout();
        let h = h.as_slice().expect("standard layout");
        let quadratic = |x: &[f64]| -> f64 {
            h.chunks_exact(dim)
                .zip(x)
                .map(|(row, xi)| xi * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let trace_h = self.h.diag().sum();
        let coef = (self.ambient + 1 - 2 * self.m) as f64;
        let mut s1 = vec![0.0; dim];
        let mut s2 = vec![0.0; dim];
        (0..c)
            .map(|i| {
                s1.iter_mut().zip(s.column(i)).for_each(|(d, v)| *d = *v);
                s2.iter_mut().zip(s.column(c + i)).for_each(|(d, v)| *d = *v);
                ql_pair_in_place(&mut s1, &mut s2)?;
                Ok(trace_h - quadratic(&s2) + coef * quadratic(&s1))
            })
            .collect()
    }
}

/// Factors `[Ω, AΩ]` and forms `H`, spending exactly `2m` matvecs.
///
/// A numerically dependent Krylov block (for example `A = I`, where
/// `AΩ ⊂ range(Ω)`) is reported as [`TraceError::RankDeficient`].
pub fn build_krylov_factors(op: &MatFreeOperator, omega: ArrayView2<f64>) -> Result<KrylovFactors> {
    check_krylov_shape(op, omega, 1)?;
    let y = op.apply(omega)?;
    factors_from_products(op, omega, y.view())
}

fn check_krylov_shape(op: &MatFreeOperator, omega: ArrayView2<f64>, min_cols: usize) -> Result<()> {
    check_block(op, omega, min_cols)?;
    if 2 * omega.ncols() > op.dim() {
        return Err(TraceError::InvalidInput(format!(
            "Krylov block [Ω, AΩ] needs 2m ≤ N, got m = {} and N = {}",
            omega.ncols(),
            op.dim()
        )));
    }
    Ok(())
}

fn factors_from_products(op: &MatFreeOperator, omega: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<KrylovFactors> {
    let m = omega.ncols();
    let stacked = concatenate![Axis(1), omega, y];
    let tols = block_tolerances(stacked.view(), &[m, m]);
    let f = householder(stacked.view(), &tols, false)?;
    let r0 = f.r.slice(s![..m, ..m]).to_owned();

    let mut r = Array2::zeros((2 * m, 2 * m));
    r.slice_mut(s![..m, ..m]).assign(&Array2::<f64>::eye(m));
    r.slice_mut(s![.., m..]).assign(&solve_upper_right(f.r.slice(s![.., m..]), r0.view())?);

    let aq0 = solve_upper_right(y, r0.view())?;
    let aq1 = op.apply(f.q.slice(s![.., m..]))?;
    let h = f.q.t().dot(&concatenate![Axis(1), aq0, aq1]);
    Ok(KrylovFactors {
        q: f.q,
        r,
        h,
        r0,
        ambient: op.dim(),
        m,
    })
}

/// `LeaveOneOutFull(Q₀·[U⊥, u])` for any completion `U⊥`, from the cached
/// factors alone.
pub fn loo_full_from_factors(factors: &KrylovFactors, u: ArrayView1<f64>) -> Result<f64> {
    factors.check_direction(u)?;
    Ok(factors.estimate_columns(u.insert_axis(Axis(1)))?[0])
}

/// Which coordinates a rotation acts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationFrame {
    /// `U` right-multiplies the test vectors themselves: sample `(i, j)` is
    /// `LeaveOneOutFull(ΩUⱼ)` with column `i` held out, so `U = I` reproduces
    /// [`xtrace_full_naive`](super::xtrace_full_naive) on `Ω`.
    #[default]
    TestVectors,
    /// `U` right-multiplies the orthonormal basis `Q₀` of `Ω`; Haar `U`
    /// then samples the conditional expectation given `range(Ω)`.
    Orthonormal,
}

/// Resampling controls for [`xtrace_full`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleOptions {
    /// Number of rotations; each contributes `m` samples.
    pub k: usize,
    pub strategy: RotationKind,
    pub frame: RotationFrame,
    /// Givens rotations per Kac-walk draw; `None` means `m²`.
    pub kac_steps: Option<usize>,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        ResampleOptions {
            k: 1,
            strategy: RotationKind::IdentityFirstHaar,
            frame: RotationFrame::TestVectors,
            kac_steps: None,
        }
    }
}

impl ResampleOptions {
    pub fn with_k(k: usize) -> Self {
        ResampleOptions {
            k,
            ..Default::default()
        }
    }
}

/// Unit directions in `Q₀`-coordinates for the columns of `v`.
fn frame_directions(factors: &KrylovFactors, frame: RotationFrame, v: Array2<f64>) -> Result<Array2<f64>> {
    match frame {
        RotationFrame::Orthonormal => Ok(v),
        RotationFrame::TestVectors => {
            // (ΩV)₋ᵢ spans Q₀·{R₀Ve_j : j ≠ i}; its complement in R^m is R₀⁻ᵀVeᵢ
            let mut w = solve_transposed_upper(factors.r0.view(), v.view())?;
            for mut col in w.columns_mut() {
                let n = col.dot(&col).sqrt();
                col /= n;
            }
            Ok(w)
        }
    }
}

/// XTraceFull with rotation resampling on a given test block.
///
/// Costs `2m` matvecs regardless of `k`. If the Krylov block is numerically
/// rank-deficient the naive path on the same `Ω` and `AΩ` produces the value
/// instead (without resampling) and `fell_back` is set.
pub fn xtrace_full<R: Rng + ?Sized>(
    op: &MatFreeOperator,
    omega: ArrayView2<f64>,
    opts: &ResampleOptions,
    rng: &mut R,
) -> Result<EstimateReport> {
    check_krylov_shape(op, omega, 2)?;
    if opts.k == 0 {
        return Err(TraceError::InvalidInput("resampling number k must be at least 1".into()));
    }
    let m = omega.ncols();
    let start = op.matvec_count();
    let y = op.apply(omega)?;
    let factors = match factors_from_products(op, omega, y.view()) {
        Ok(f) => f,
        Err(TraceError::RankDeficient { index }) => {
            log::debug!("Krylov column {index} is dependent; using the naive path");
            let samples = xtrace_full_from_products(op, omega, y.view())?;
            let mut report = EstimateReport::from_samples(samples, op.matvec_count() - start);
            report.fell_back = true;
            return Ok(report);
        }
        Err(e) => return Err(e),
    };

    let mut strategy = RotationStrategy::new(opts.strategy, m);
    if let Some(steps) = opts.kac_steps {
        strategy = strategy.with_kac_steps(steps);
    }
    let mut samples = Vec::with_capacity(opts.k * m);
    for _ in 0..opts.k {
        let v = match strategy.next_rotation(rng) {
            Rotation::Matrix(u) => u,
            Rotation::Vector(first) => {
                let mut v = Array2::zeros((m, m));
                v.column_mut(0).assign(&first);
                for i in 1..m {
                    match strategy.next_rotation(rng) {
                        Rotation::Vector(x) => v.column_mut(i).assign(&x),
                        Rotation::Matrix(_) => unreachable!("unit-vector strategy emits vectors"),
                    }
                }
                v
            }
        };
        let dirs = frame_directions(&factors, opts.frame, v)?;
        samples.extend(factors.estimate_columns(dirs.view())?);
    }
    Ok(EstimateReport::from_samples(samples, op.matvec_count() - start))
}

/// Draws a Gaussian `N×m` block from `seed` and runs [`xtrace_full`] on it.
pub fn xtrace_full_sampled(op: &MatFreeOperator, m: usize, opts: &ResampleOptions, seed: u64) -> Result<EstimateReport> {
    let mut rng = rng_from_seed(seed);
    let omega = sample_gaussian(&mut rng, op.dim(), m);
    let mut report = xtrace_full(op, omega.view(), opts, &mut rng)?;
    report.seed = Some(seed);
    Ok(report)
}
