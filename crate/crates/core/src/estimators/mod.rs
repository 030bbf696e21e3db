//! Trace estimators.
//!
//! All estimators take the test block `Ω` explicitly so that several of them
//! can be run on the same draw. `matvecs_used` in every report is read off the
//! operator's own counter, so a handle must not be shared with concurrent
//! callers while an estimator runs (use [`MatFreeOperator::fork`]).
//!
//! There are three routes to the leave-one-out family, kept deliberately
//! separate so that each can serve as an oracle for the others:
//!
//! - [`leave_one_out`] / [`leave_one_out_full`] execute the textbook
//!   algorithm in `R^N`, applying `A` to every basis they build.
//! - [`xtrace_naive`] / [`xtrace_full_naive`] build one truncated orthonormal
//!   basis of `[Ω, AΩ]`, spend `2m` matvecs on it, and then run every
//!   leave-one-out step explicitly in those coordinates.
//! - [`xtrace_full`] uses the closed form over the cached Krylov factors and
//!   costs nothing per rotation beyond `O(m²)` dense work.

mod krylov;
mod loo;
mod naive;

use ndarray::{ArrayView2, Axis};

use crate::error::{Result, TraceError};
use crate::kernels::economy_qr;
use crate::matfree::MatFreeOperator;

pub use krylov::{
    build_krylov_factors, loo_full_from_factors, xtrace_full, xtrace_full_sampled, KrylovFactors,
    ResampleOptions, RotationFrame,
};
pub use loo::{check_last_column_dependence, leave_one_out, leave_one_out_full};
pub use naive::{xtrace_full_naive, xtrace_naive};

/// Result of one estimator call.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: f64,
    /// Per-sample values whose mean is `estimate`.
    pub samples: Vec<f64>,
    pub matvecs_used: usize,
    /// Seed of the draw, when the estimator sampled `Ω` itself.
    pub seed: Option<u64>,
    /// Set when the efficient path hit a rank-deficient Krylov block and the
    /// naive path produced the value instead.
    pub fell_back: bool,
}

impl EstimateReport {
    pub(crate) fn from_samples(samples: Vec<f64>, matvecs_used: usize) -> Self {
        let estimate = samples.iter().sum::<f64>() / samples.len() as f64;
        EstimateReport {
            estimate,
            samples,
            matvecs_used,
            seed: None,
            fell_back: false,
        }
    }
}

pub(crate) fn check_block(op: &MatFreeOperator, omega: ArrayView2<f64>, min_cols: usize) -> Result<()> {
    if omega.nrows() != op.dim() {
        return Err(TraceError::InvalidInput(format!(
            "test block has {} rows but the operator has dimension {}",
            omega.nrows(),
            op.dim()
        )));
    }
    if omega.ncols() < min_cols {
        return Err(TraceError::InvalidInput(format!(
            "need at least {min_cols} test vectors, got {}",
            omega.ncols()
        )));
    }
    Ok(())
}

/// Girard–Hutchinson: `(1/m) Σ ωᵢᵀAωᵢ`, `m` matvecs.
pub fn girard_hutchinson(op: &MatFreeOperator, omega: ArrayView2<f64>) -> Result<EstimateReport> {
    check_block(op, omega, 1)?;
    let start = op.matvec_count();
    let y = op.apply(omega)?;
    let samples = (&omega * &y).sum_axis(Axis(0)).to_vec();
    Ok(EstimateReport::from_samples(samples, op.matvec_count() - start))
}

/// Conditional expectation of Girard–Hutchinson given `range(Ω)`:
/// `(N/m)·tr(QᵀAQ)` with `Q` an orthonormal basis of `Ω`, `m` matvecs.
///
/// Sample `i` is `N·qᵢᵀAqᵢ`.
pub fn projected_gh(op: &MatFreeOperator, omega: ArrayView2<f64>) -> Result<EstimateReport> {
    check_block(op, omega, 1)?;
    let start = op.matvec_count();
    let q = economy_qr(omega)?.q;
    let aq = op.apply(q.view())?;
    let n = op.dim() as f64;
    let samples = (&q * &aq).sum_axis(Axis(0)).mapv(|v| n * v).to_vec();
    Ok(EstimateReport::from_samples(samples, op.matvec_count() - start))
}
