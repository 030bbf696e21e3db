use ndarray::{Array2, ArrayView2};

use crate::error::{Result, TraceError};
use crate::RANK_TOL;

/// Thin QR factors `M = Q·R` with `R_ii > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QrFactors {
    /// `N×p`, orthonormal columns.
    pub q: Array2<f64>,
    /// `p×p`, upper triangular with strictly positive diagonal.
    pub r: Array2<f64>,
}

/// Output of the column-skipping Householder pass.
///
/// `q` holds one orthonormal column per kept input column. Column `j` of `r`
/// holds the coordinates of input column `j` in `q`; for a skipped column the
/// residual that fell under the tolerance is discarded.
#[derive(Debug, Clone)]
pub(crate) struct Factorization {
    pub q: Array2<f64>,
    pub r: Array2<f64>,
    pub kept: Vec<usize>,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `x ← (I − 2vvᵀ)x` for unit `v`.
fn reflect(v: &[f64], x: &mut [f64]) {
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let s = 2.0 * dot;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= s * vi;
    }
}

pub fn max_column_norm(m: ArrayView2<f64>) -> f64 {
    m.columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .fold(0.0, f64::max)
}

/// Left-looking Householder QR. Column `j` is dropped (or reported as
/// rank-deficient when `allow_skip` is false) once its residual norm is at
/// most `tols[j]`.
pub(crate) fn householder(m: ArrayView2<f64>, tols: &[f64], allow_skip: bool) -> Result<Factorization> {
    let (n, p) = m.dim();
    debug_assert_eq!(tols.len(), p);
    // column-major working copy; column j ends up holding its R coordinates
    let mut a: Vec<f64> = Vec::with_capacity(n * p);
    for col in m.columns() {
        a.extend(col.iter());
    }
    // reflector l occupies n − l entries starting at starts[l]
    let mut reflectors: Vec<f64> = Vec::new();
    let mut starts: Vec<usize> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut kept = Vec::new();
    let mut coord_len = vec![0usize; p];

    for j in 0..p {
        let col = &mut a[j * n..(j + 1) * n];
        for (l, &st) in starts.iter().enumerate() {
            reflect(&reflectors[st..st + n - l], &mut col[l..]);
        }
        let k = starts.len();
        let tail = if k < n { norm(&col[k..]) } else { 0.0 };
        if tail <= tols[j] {
            if !allow_skip {
                return Err(TraceError::RankDeficient { index: j });
            }
            coord_len[j] = k;
            continue;
        }
        let beta = if col[k] >= 0.0 { -tail } else { tail };
        let st = reflectors.len();
        reflectors.extend_from_slice(&col[k..]);
        reflectors[st] -= beta;
        let vn = norm(&reflectors[st..]);
        reflectors[st..].iter_mut().for_each(|x| *x /= vn);
        starts.push(st);
        betas.push(beta);
        kept.push(j);
        col[k] = beta;
        coord_len[j] = k + 1;
    }

    let k = starts.len();
    let mut q = vec![0.0; n * k];
    for c in 0..k {
        let e = &mut q[c * n..(c + 1) * n];
        e[c] = 1.0;
        for l in (0..=c).rev() {
            let st = starts[l];
            reflect(&reflectors[st..st + n - l], &mut e[l..]);
        }
    }

    // positive diagonal convention
    for (l, &beta) in betas.iter().enumerate() {
        if beta < 0.0 {
            q[l * n..(l + 1) * n].iter_mut().for_each(|x| *x = -*x);
            for j in 0..p {
                if coord_len[j] > l {
                    a[j * n + l] = -a[j * n + l];
                }
            }
        }
    }

    let q = Array2::from_shape_fn((n, k), |(i, c)| q[c * n + i]);
    let r = Array2::from_shape_fn((k, p), |(l, j)| if l < coord_len[j] { a[j * n + l] } else { 0.0 });
    Ok(Factorization { q, r, kept })
}

/// Householder thin QR with positive `R` diagonal.
///
/// Fails with [`TraceError::RankDeficient`] when a column's residual is at
/// most `1e-12` times the largest input column norm.
pub fn economy_qr(m: ArrayView2<f64>) -> Result<QrFactors> {
    let (n, p) = m.dim();
    if p == 0 || n < p {
        return Err(TraceError::InvalidInput(format!("economy QR needs N ≥ p ≥ 1, got {n}×{p}")));
    }
    let tol = RANK_TOL * max_column_norm(m);
    let f = householder(m, &vec![tol; p], false)?;
    Ok(QrFactors { q: f.q, r: f.r })
}

/// Orthonormal basis for the column space, dropping numerically dependent
/// columns. May return zero columns.
pub fn orthonormal_basis(m: ArrayView2<f64>) -> Array2<f64> {
    let tol = RANK_TOL * max_column_norm(m);
    householder(m, &vec![tol; m.ncols()], true)
        .expect("column skipping never fails")
        .q
}

fn check_triangular(r: ArrayView2<f64>) -> Result<()> {
    if r.nrows() != r.ncols() {
        return Err(TraceError::InvalidInput(format!(
            "triangular factor must be square, got {}×{}",
            r.nrows(),
            r.ncols()
        )));
    }
    for (i, d) in r.diag().iter().enumerate() {
        if *d == 0.0 || !d.is_finite() {
            return Err(TraceError::SingularFactor { index: i });
        }
    }
    Ok(())
}

/// Solves `Rᵀ X = B` for upper-triangular `R` by forward substitution.
pub fn solve_transposed_upper(r: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_triangular(r)?;
    let p = r.nrows();
    if b.nrows() != p {
        return Err(TraceError::InvalidInput(format!(
            "right-hand side has {} rows, factor has {p}",
            b.nrows()
        )));
    }
    let c = b.ncols();
    let mut x = b.as_standard_layout().into_owned();
    let xs = x.as_slice_mut().expect("standard layout");
    for i in 0..p {
        let (done, rest) = xs.split_at_mut(i * c);
        let row = &mut rest[..c];
        for l in 0..i {
            let coef = r[[l, i]];
            if coef != 0.0 {
                for (v, d) in row.iter_mut().zip(&done[l * c..(l + 1) * c]) {
                    *v -= coef * d;
                }
            }
        }
        let d = r[[i, i]];
        row.iter_mut().for_each(|v| *v /= d);
    }
    Ok(x)
}

/// Solves `X R = B` for upper-triangular `R`, i.e. `X = B R⁻¹`.
pub fn solve_upper_right(b: ArrayView2<f64>, r: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_triangular(r)?;
    let p = r.nrows();
    if b.ncols() != p {
        return Err(TraceError::InvalidInput(format!(
            "left-hand side has {} columns, factor has {p}",
            b.ncols()
        )));
    }
    let r = r.as_standard_layout();
    let rs = r.as_slice().expect("standard layout");
    let mut x = b.as_standard_layout().into_owned();
    for mut row in x.rows_mut() {
        let row = row.as_slice_mut().expect("standard layout");
        for j in 0..p {
            let mut v = row[j];
            for l in 0..j {
                v -= row[l] * rs[l * p + j];
            }
            row[j] = v / rs[j * p + j];
        }
    }
    Ok(x)
}

/// In-place core of [`ql_orthonormalize_pair`]: overwrites `(s1, s2)` with
/// `(s̃₁, s̃₂)` and returns the entries `(n1, c, n2)` of
/// `L = [[n1, 0], [c, n2]]`.
pub(crate) fn ql_pair_in_place(s1: &mut [f64], s2: &mut [f64]) -> Result<(f64, f64, f64)> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let tol = RANK_TOL * (dot(s1, s1) + dot(s2, s2)).sqrt();
    let n2 = dot(s2, s2).sqrt();
    if !(n2 > tol) {
        return Err(TraceError::DegeneratePair);
    }
    s2.iter_mut().for_each(|v| *v /= n2);
    let mut c = 0.0;
    // second pass keeps s̃₁ ⊥ s̃₂ to working precision
    for _ in 0..2 {
        let proj = dot(s2, s1);
        s1.iter_mut().zip(s2.iter()).for_each(|(a, b)| *a -= proj * b);
        c += proj;
    }
    let n1 = dot(s1, s1).sqrt();
    if !(n1 > tol) {
        return Err(TraceError::DegeneratePair);
    }
    s1.iter_mut().for_each(|v| *v /= n1);
    Ok((n1, c, n2))
}

/// Orthonormalizes a pair from the last column backwards: `S = S̃·L` with
/// `L` lower triangular, `s̃₂ ∥ s₂` and `s̃₁ ⊥ s̃₂`.
pub fn ql_orthonormalize_pair(s: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if s.ncols() != 2 || s.nrows() < 2 {
        return Err(TraceError::InvalidInput(format!(
            "QL pair step needs a p×2 block with p ≥ 2, got {}×{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let mut s1 = s.column(0).to_vec();
    let mut s2 = s.column(1).to_vec();
    let (n1, c, n2) = ql_pair_in_place(&mut s1, &mut s2)?;
    let p = s.nrows();
    let tilde = Array2::from_shape_fn((p, 2), |(i, j)| if j == 0 { s1[i] } else { s2[i] });
    Ok((tilde, ndarray::array![[n1, 0.0], [c, n2]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn orthogonality_defect(q: &Array2<f64>) -> f64 {
        max_abs(&(q.t().dot(q) - Array2::<f64>::eye(q.ncols())))
    }

    #[test]
    fn qr_of_identity() {
        let f = economy_qr(Array2::<f64>::eye(3).view()).unwrap();
        assert_eq!(f.q, Array2::<f64>::eye(3));
        assert_eq!(f.r, Array2::<f64>::eye(3));
    }

    #[test]
    fn qr_of_scaled_orthogonal_columns() {
        let m = array![[2.0, 0.0], [0.0, 0.0], [0.0, 3.0]];
        let f = economy_qr(m.view()).unwrap();
        assert!(max_abs(&(&f.q - &array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])) <= 1e-15);
        assert!(max_abs(&(&f.r - &array![[2.0, 0.0], [0.0, 3.0]])) <= 1e-15);
    }

    #[test]
    fn qr_reconstructs_gaussian_block() {
        let m = gaussian(50, 5, 7);
        let f = economy_qr(m.view()).unwrap();
        assert!(orthogonality_defect(&f.q) <= 1e-12);
        assert!(max_abs(&(f.q.dot(&f.r) - &m)) <= 1e-12 * max_abs(&m));
        for i in 0..5 {
            assert!(f.r[[i, i]] > 0.0);
            for j in 0..i {
                assert_eq!(f.r[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn qr_is_deterministic() {
        let m = gaussian(30, 6, 8);
        assert_eq!(economy_qr(m.view()).unwrap(), economy_qr(m.view()).unwrap());
    }

    #[test]
    fn qr_reports_dependent_column() {
        let mut m = gaussian(10, 4, 9);
        let dep = &m.column(0) * 2.0 - m.column(1);
        m.column_mut(2).assign(&dep);
        assert!(matches!(economy_qr(m.view()), Err(TraceError::RankDeficient { index: 2 })));
        assert!(matches!(economy_qr(gaussian(3, 4, 1).view()), Err(TraceError::InvalidInput(_))));
    }

    #[test]
    fn basis_drops_dependent_columns() {
        let mut m = gaussian(10, 4, 10);
        let dep = &m.column(1) - &m.column(3) * 0.5;
        m.column_mut(0).fill(0.0);
        let mut wide = Array2::zeros((10, 5));
        wide.slice_mut(s![.., ..4]).assign(&m);
        wide.column_mut(4).assign(&dep);
        let q = orthonormal_basis(wide.view());
        assert_eq!(q.ncols(), 3);
        assert!(orthogonality_defect(&q) <= 1e-12);
        // every input column lies in span(q)
        let resid = &wide - &q.dot(&q.t().dot(&wide));
        assert!(max_abs(&resid) <= 1e-12 * max_abs(&wide));
    }

    #[test]
    fn transposed_solve_by_hand() {
        let r = array![[2.0, 1.0], [0.0, 3.0]];
        let x = solve_transposed_upper(r.view(), array![[1.0], [0.0]].view()).unwrap();
        assert!((x[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((x[[1, 0]] + 1.0 / 6.0).abs() < 1e-15);

        let b = gaussian(4, 3, 3);
        assert_eq!(solve_transposed_upper(Array2::<f64>::eye(4).view(), b.view()).unwrap(), b);
    }

    #[test]
    fn transposed_solve_residual() {
        let f = economy_qr(gaussian(40, 8, 12).view()).unwrap();
        let b = gaussian(8, 3, 13);
        let x = solve_transposed_upper(f.r.view(), b.view()).unwrap();
        assert!(max_abs(&(f.r.t().dot(&x) - &b)) <= 1e-12 * max_abs(&b));

        let y = solve_upper_right(b.t(), f.r.view()).unwrap();
        assert!(max_abs(&(y.dot(&f.r) - b.t())) <= 1e-12 * max_abs(&b));
    }

    #[test]
    fn singular_factor_is_reported() {
        let r = array![[1.0, 2.0], [0.0, 0.0]];
        let b = array![[1.0], [1.0]];
        assert!(matches!(
            solve_transposed_upper(r.view(), b.view()),
            Err(TraceError::SingularFactor { index: 1 })
        ));
        assert!(matches!(solve_upper_right(b.t(), r.view()), Err(TraceError::SingularFactor { index: 1 })));
    }

    #[test]
    fn ql_by_hand() {
        let s = array![[1.0, 0.0], [1.0, 1.0]];
        let (t, l) = ql_orthonormalize_pair(s.view()).unwrap();
        assert_eq!(t, array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(l, array![[1.0, 0.0], [1.0, 1.0]]);

        let q = economy_qr(gaussian(6, 2, 4).view()).unwrap().q;
        let (t, l) = ql_orthonormalize_pair(q.view()).unwrap();
        assert!(max_abs(&(&t - &q)) <= 1e-15);
        assert!(max_abs(&(l - Array2::<f64>::eye(2))) <= 1e-15);
    }

    #[test]
    fn ql_degenerate_pairs() {
        let zero_last = array![[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]];
        assert!(matches!(ql_orthonormalize_pair(zero_last.view()), Err(TraceError::DegeneratePair)));
        let parallel = array![[1.0, -2.0], [2.0, -4.0], [0.5, -1.0]];
        assert!(matches!(ql_orthonormalize_pair(parallel.view()), Err(TraceError::DegeneratePair)));
    }

    proptest! {
        #[test]
        fn ql_reconstructs_and_preserves_span(seed in any::<u64>(), p in 2usize..12) {
            let s = gaussian(p, 2, seed);
            let (t, l) = ql_orthonormalize_pair(s.view()).unwrap();
            prop_assert!(orthogonality_defect(&t) <= 1e-12);
            prop_assert_eq!(l[[0, 1]], 0.0);
            prop_assert!(max_abs(&(t.dot(&l) - &s)) <= 1e-12 * max_abs(&s));
            // span(S̃) = span(S): projecting S onto S̃ loses nothing
            let resid = &s - &t.dot(&t.t().dot(&s));
            prop_assert!(max_abs(&resid) <= 1e-10 * max_abs(&s));
        }

        #[test]
        fn qr_invariants(seed in any::<u64>(), n in 1usize..40, p in 1usize..8) {
            prop_assume!(p <= n);
            let m = gaussian(n, p, seed);
            let f = economy_qr(m.view()).unwrap();
            prop_assert!(orthogonality_defect(&f.q) <= 1e-12);
            prop_assert!(max_abs(&(f.q.dot(&f.r) - &m)) <= 1e-12 * max_abs(&m).max(1.0));
            prop_assert!(f.r.diag().iter().all(|d| *d > 0.0));
        }
    }
}
