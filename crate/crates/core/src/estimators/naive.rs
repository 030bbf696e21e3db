//! XTrace and XTraceFull evaluated column by column.
//!
//! Every deflation basis either algorithm builds lies in `span[Ω, AΩ]`, and
//! so does every held-out column. One truncated orthonormal basis `Q` of that
//! span, together with `H = QᵀAQ`, therefore carries everything the
//! leave-one-out steps need: each step orthonormalizes its own columns,
//! projects, normalizes and evaluates quadratic forms in `Q`-coordinates.
//! `A·Q` costs `AΩ` (already formed) plus one matvec per new direction.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::loo::{block_tolerances, deflation_basis_within, normalized_residual};
use super::{check_block, EstimateReport};
use crate::error::{Result, TraceError};
use crate::kernels::{householder, solve_upper_right};
use crate::matfree::MatFreeOperator;

/// `Ω`, `AΩ` and `A` compressed onto a shared basis of `span[Ω, AΩ]`.
#[derive(Debug, Clone)]
pub(crate) struct SharedBasis {
    ambient: usize,
    coords_omega: Array2<f64>,
    coords_y: Array2<f64>,
    h: Array2<f64>,
}

impl SharedBasis {
    /// `y` must be `A·omega`.
    pub(crate) fn new(op: &MatFreeOperator, omega: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Self> {
        let m = omega.ncols();
        let stacked = concatenate![Axis(1), omega, y];
        let tols = block_tolerances(stacked.view(), &[m, m]);
        let f = householder(stacked.view(), &tols, true)?;
        if let Some(index) = (0..m).find(|&j| f.kept.get(j) != Some(&j)) {
            return Err(TraceError::RankDeficient { index });
        }
        let r_omega = f.r.slice(s![..m, ..m]);
        let aq_omega = solve_upper_right(y, r_omega)?;
        let aq_new = op.apply(f.q.slice(s![.., m..]))?;
        let aq = concatenate![Axis(1), aq_omega, aq_new];
        let h = f.q.t().dot(&aq);
        Ok(SharedBasis {
            ambient: op.dim(),
            coords_omega: f.r.slice(s![.., ..m]).to_owned(),
            coords_y: f.r.slice(s![.., m..]).to_owned(),
            h,
        })
    }

    /// Leave-one-out estimate holding out column `i`.
    pub(crate) fn leave_out(&self, i: usize, full: bool) -> Result<f64> {
        let m = self.coords_omega.ncols();
        let rest: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        let y_rest = self.coords_y.select(Axis(1), &rest);
        let omega_rest = self.coords_omega.select(Axis(1), &rest);
        // the deflation span excludes ωᵢ: rank at most r − 1
        let limit = self.h.nrows() - 1;
        let b = if full {
            deflation_basis_within(omega_rest.view(), Some(y_rest.view()), limit)?
        } else {
            deflation_basis_within(y_rest.view(), None, limit)?
        };
        let hb = self.h.dot(&b);
        let deflated = (&b * &hb).sum();
        let residual = match normalized_residual(self.ambient, b.view(), self.coords_omega.column(i))? {
            Some(nu) => nu.dot(&self.h.dot(&nu)),
            None => 0.0,
        };
        Ok(deflated + residual)
    }

    pub(crate) fn leave_each_out(&self, full: bool) -> Result<Vec<f64>> {
        (0..self.coords_omega.ncols()).map(|i| self.leave_out(i, full)).collect()
    }
}

fn run(op: &MatFreeOperator, omega: ArrayView2<f64>, full: bool) -> Result<EstimateReport> {
    check_block(op, omega, 2)?;
    let start = op.matvec_count();
    let y = op.apply(omega)?;
    let basis = SharedBasis::new(op, omega, y.view())?;
    let samples = basis.leave_each_out(full)?;
    Ok(EstimateReport::from_samples(samples, op.matvec_count() - start))
}

/// XTrace: the mean over `i` of the leave-one-out estimate that deflates with
/// `orth((AΩ)₋ᵢ)` and holds out `ωᵢ`. At most `2m` matvecs.
pub fn xtrace_naive(op: &MatFreeOperator, omega: ArrayView2<f64>) -> Result<EstimateReport> {
    run(op, omega, false)
}

/// XTraceFull: as [`xtrace_naive`] but deflating with
/// `orth([(AΩ)₋ᵢ, Ω₋ᵢ])`. At most `2m` matvecs.
pub fn xtrace_full_naive(op: &MatFreeOperator, omega: ArrayView2<f64>) -> Result<EstimateReport> {
    run(op, omega, true)
}

/// The full-variant mean computed by [`SharedBasis`] from an existing `AΩ`.
pub(crate) fn xtrace_full_from_products(
    op: &MatFreeOperator,
    omega: ArrayView2<f64>,
    y: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    SharedBasis::new(op, omega, y)?.leave_each_out(true)
}
