//! Textbook leave-one-out steps executed in the ambient space.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::check_block;
use crate::error::{Result, TraceError};
use crate::kernels::{householder, max_column_norm};
use crate::matfree::MatFreeOperator;
use crate::RANK_TOL;

/// Per-column rank tolerances for a block assembled from consecutive pieces
/// of the given widths, each piece judged against its own largest column.
pub(crate) fn block_tolerances(m: ArrayView2<f64>, widths: &[usize]) -> Vec<f64> {
    let mut tols = Vec::with_capacity(m.ncols());
    let mut start = 0;
    for &w in widths {
        let tol = RANK_TOL * max_column_norm(m.slice(s![.., start..start + w]));
        tols.extend(std::iter::repeat_n(tol, w));
        start += w;
    }
    debug_assert_eq!(start, m.ncols());
    tols
}

/// Truncated orthonormal basis of `[first, second]`. Callers put the
/// better-conditioned block first.
pub(crate) fn deflation_basis(first: ArrayView2<f64>, second: Option<ArrayView2<f64>>) -> Result<Array2<f64>> {
    deflation_basis_within(first, second, usize::MAX)
}

/// As [`deflation_basis`], but at most `limit` columns wide. Surplus kept
/// columns are removed weakest first, ranked by pivot relative to the
/// column's own norm, and the block is refactored without them.
pub(crate) fn deflation_basis_within(
    first: ArrayView2<f64>,
    second: Option<ArrayView2<f64>>,
    limit: usize,
) -> Result<Array2<f64>> {
    let (mut block, widths) = match second {
        Some(second) => (
            concatenate![Axis(1), first, second],
            vec![first.ncols(), second.ncols()],
        ),
        None => (first.to_owned(), vec![first.ncols()]),
    };
    let mut tols = block_tolerances(block.view(), &widths);
    loop {
        let f = householder(block.view(), &tols, true)?;
        if f.kept.len() <= limit {
            return Ok(f.q);
        }
        let weakest = f
            .kept
            .iter()
            .enumerate()
            .map(|(t, &j)| {
                let c = block.column(j);
                (j, f.r[[t, j]].abs() / c.dot(&c).sqrt())
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
            .expect("kept is nonempty when above the limit");
        let rest: Vec<usize> = (0..block.ncols()).filter(|&j| j != weakest).collect();
        block = block.select(Axis(1), &rest);
        tols.remove(weakest);
    }
}

/// Normalized residual `ν = √(n − rank(B))·μ/‖μ‖` with `μ = (I − BBᵀ)c`.
/// `None` when `B` already spans the whole space, so the residual term
/// vanishes.
pub(crate) fn normalized_residual(
    ambient: usize,
    basis: ArrayView2<f64>,
    held_out: ArrayView1<f64>,
) -> Result<Option<Array1<f64>>> {
    let rank = basis.ncols();
    if rank >= ambient {
        return Ok(None);
    }
    let mut mu = held_out.to_owned();
    for _ in 0..2 {
        let coef = basis.t().dot(&mu);
        mu -= &basis.dot(&coef);
    }
    let mu_norm = mu.dot(&mu).sqrt();
    let c_norm = held_out.dot(&held_out).sqrt();
    if !(mu_norm > RANK_TOL * c_norm) {
        return Err(TraceError::DegenerateResidual);
    }
    mu *= ((ambient - rank) as f64).sqrt() / mu_norm;
    Ok(Some(mu))
}

fn leave_last_out(op: &MatFreeOperator, omega: ArrayView2<f64>, full: bool) -> Result<f64> {
    check_block(op, omega, 2)?;
    let m = omega.ncols();
    let head = omega.slice(s![.., ..m - 1]);
    let y = op.apply(head)?;
    let q = if full {
        deflation_basis(head, Some(y.view()))?
    } else {
        deflation_basis(y.view(), None)?
    };
    let aq = op.apply(q.view())?;
    let deflated = (&q * &aq).sum();
    let residual = match normalized_residual(op.dim(), q.view(), omega.column(m - 1))? {
        Some(nu) => {
            let nu = nu.insert_axis(Axis(1));
            let a_nu = op.apply(nu.view())?;
            (&nu * &a_nu).sum()
        }
        None => 0.0,
    };
    Ok(deflated + residual)
}

/// XTrace's leave-one-out step: deflate with `orth(AΩ₋ₘ)`, estimate the
/// residual with the normalized last column.
pub fn leave_one_out(op: &MatFreeOperator, omega: ArrayView2<f64>) -> Result<f64> {
    leave_last_out(op, omega, false)
}

/// XTraceFull's leave-one-out step: deflate with `orth([AΩ₋ₘ, Ω₋ₘ])`.
///
/// When the basis already has rank `N` the residual term is zero.
pub fn leave_one_out_full(op: &MatFreeOperator, omega: ArrayView2<f64>) -> Result<f64> {
    leave_last_out(op, omega, true)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Whether both leave-one-out steps give the same value on `ΩU₁` and `ΩU₂`
/// (relative tolerance `1e-10`).
pub fn check_last_column_dependence(
    op: &MatFreeOperator,
    omega: ArrayView2<f64>,
    u1: ArrayView2<f64>,
    u2: ArrayView2<f64>,
) -> Result<bool> {
    let m = omega.ncols();
    for u in [u1, u2] {
        if u.dim() != (m, m) {
            return Err(TraceError::InvalidInput(format!(
                "rotation must be {m}×{m}, got {}×{}",
                u.nrows(),
                u.ncols()
            )));
        }
    }
    let a = omega.dot(&u1);
    let b = omega.dot(&u2);
    Ok(rel_close(leave_one_out_full(op, a.view())?, leave_one_out_full(op, b.view())?, 1e-10)
        && rel_close(leave_one_out(op, a.view())?, leave_one_out(op, b.view())?, 1e-10))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{rng_from_seed, sample_gaussian, sample_haar_orthogonal};
    use crate::matfree::{make_dense_operator, make_diagonal_operator};
    use ndarray::array;

    fn fig1() -> (MatFreeOperator, Array2<f64>) {
        let op = make_diagonal_operator(&[5.0, 4.0, 3.0, 2.0, 1.0]);
        let omega = array![[1.0, 0.0], [0.0, 0.5], [0.0, 0.5], [0.0, 0.5], [0.0, 0.5]];
        (op, omega)
    }

    fn swapped(omega: &Array2<f64>) -> Array2<f64> {
        omega.select(Axis(1), &[1, 0])
    }

    #[test]
    fn identity_is_exact() {
        let n = 40;
        let op = MatFreeOperator::identity(n);
        for m in [2, 5, 12] {
            let omega = sample_gaussian(&mut rng_from_seed(m as u64), n, m);
            assert!((leave_one_out(&op, omega.view()).unwrap() - n as f64).abs() <= 1e-10 * n as f64);
            assert!((leave_one_out_full(&op, omega.view()).unwrap() - n as f64).abs() <= 1e-10 * n as f64);
        }
    }

    #[test]
    fn fig1_by_hand() {
        let (op, omega) = fig1();
        let out_first = swapped(&omega);
        assert!((leave_one_out(&op, out_first.view()).unwrap() - 70.0 / 3.0).abs() < 1e-12);
        assert!((leave_one_out(&op, omega.view()).unwrap() - 15.0).abs() < 1e-12);
        assert!((leave_one_out_full(&op, out_first.view()).unwrap() - 20.0).abs() < 1e-12);
        assert!((leave_one_out_full(&op, omega.view()).unwrap() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn standalone_matvec_count() {
        let n = 30;
        let op = make_diagonal_operator(&(1..=n).map(|i| i as f64).collect::<Vec<_>>());
        let omega = sample_gaussian(&mut rng_from_seed(2), n, 4);
        leave_one_out(&op, omega.view()).unwrap();
        // AΩ₋ₘ, A·Q, A·ν
        assert_eq!(op.matvec_count(), 3 + 3 + 1);
    }

    #[test]
    fn saturated_basis_drops_residual() {
        // 2(m−1) = N: the deflation basis is the whole space
        let n = 6;
        let g = sample_gaussian(&mut rng_from_seed(8), n, n);
        let a = &g + &g.t();
        let tr = a.diag().sum();
        let op = make_dense_operator(a).unwrap();
        let omega = sample_gaussian(&mut rng_from_seed(9), n, 4);
        let est = leave_one_out_full(&op, omega.view()).unwrap();
        assert!((est - tr).abs() <= 1e-10 * tr.abs().max(1.0));
    }

    #[test]
    fn held_out_in_span_is_degenerate() {
        let (op, _) = fig1();
        // last column parallel to Aω₁ = 5e₁
        let omega = array![[1.0, 2.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        assert!(matches!(leave_one_out(&op, omega.view()), Err(TraceError::DegenerateResidual)));
        assert!(matches!(leave_one_out(&op, omega.slice(s![.., ..1])), Err(TraceError::InvalidInput(_))));
    }

    #[test]
    fn last_column_dependence() {
        let n = 25;
        let m = 4;
        let g = sample_gaussian(&mut rng_from_seed(10), n, n);
        let op = make_dense_operator(g.t().dot(&g)).unwrap();
        let omega = sample_gaussian(&mut rng_from_seed(11), n, m);
        let mut rng = rng_from_seed(12);
        let u1 = sample_haar_orthogonal(&mut rng, m);
        let mut v = Array2::<f64>::eye(m);
        v.slice_mut(s![..m - 1, ..m - 1]).assign(&sample_haar_orthogonal(&mut rng, m - 1));
        let u2 = u1.dot(&v);
        assert!(check_last_column_dependence(&op, omega.view(), u1.view(), u2.view()).unwrap());
        assert!(check_last_column_dependence(&op, omega.view(), u1.view(), u1.view()).unwrap());
        let u3 = sample_haar_orthogonal(&mut rng, m);
        assert!(!check_last_column_dependence(&op, omega.view(), u1.view(), u3.view()).unwrap());
    }

    #[test]
    fn width_limit_drops_weakest_column() {
        let mut block = sample_gaussian(&mut rng_from_seed(13), 6, 4);
        let g = sample_gaussian(&mut rng_from_seed(14), 6, 1);
        let noisy = &block.column(0) + &(&g.column(0) * 1e-11);
        block.column_mut(3).assign(&noisy);
        assert_eq!(deflation_basis(block.view(), None).unwrap().ncols(), 4);
        let q = deflation_basis_within(block.view(), None, 3).unwrap();
        assert_eq!(q.ncols(), 3);
        let strong = block.slice(s![.., ..3]);
        let residual = &strong - &q.dot(&q.t().dot(&strong));
        assert!(residual.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn fig1_different_last_column() {
        let (op, omega) = fig1();
        let id = Array2::<f64>::eye(2);
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(!check_last_column_dependence(&op, omega.view(), id.view(), swap.view()).unwrap());
        assert!(check_last_column_dependence(&op, omega.view(), id.view(), id.view()).unwrap());
    }
}
