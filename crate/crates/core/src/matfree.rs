//! Matrix-free operators and the synthetic test spectra.
//!
//! Every operator is applied to `N×b` blocks and charged one matvec per
//! column, whether the caller batches or loops. Counters are private to each
//! operator handle; [`MatFreeOperator::fork`] hands a concurrent trial its own
//! counter over the same matrix data.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Result, TraceError};

/// Number of unit eigenvalues at the top of the step spectra.
pub const STEP_PLATEAU: usize = 50;
/// Level of the lagging eigenvalues in the `step` spectrum.
pub const STEP_LEVEL: f64 = 1e-3;
/// Ratio of the geometric `exp` spectrum.
pub const EXP_RATIO: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpectrumFamily {
    Flat,
    Poly,
    InvPoly,
    Exp,
    Step,
    StepDecay,
}

impl SpectrumFamily {
    pub const ALL: [SpectrumFamily; 6] = [
        SpectrumFamily::Flat,
        SpectrumFamily::Poly,
        SpectrumFamily::InvPoly,
        SpectrumFamily::Exp,
        SpectrumFamily::Step,
        SpectrumFamily::StepDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpectrumFamily::Flat => "flat",
            SpectrumFamily::Poly => "poly",
            SpectrumFamily::InvPoly => "inv-poly",
            SpectrumFamily::Exp => "exp",
            SpectrumFamily::Step => "step",
            SpectrumFamily::StepDecay => "step-decay",
        }
    }

    fn has_plateau(self) -> bool {
        matches!(self, SpectrumFamily::Step | SpectrumFamily::StepDecay)
    }
}

impl fmt::Display for SpectrumFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpectrumFamily {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self> {
        SpectrumFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| TraceError::InvalidSpec(format!("unknown spectrum family `{s}`")))
    }
}

/// A named eigenvalue family at a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpectrumSpec {
    family: SpectrumFamily,
    dim: usize,
}

impl SpectrumSpec {
    pub fn new(family: SpectrumFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(TraceError::InvalidSpec("dimension must be positive".into()));
        }
        if family.has_plateau() && dim <= STEP_PLATEAU {
            return Err(TraceError::InvalidSpec(format!(
                "{family} needs N > {STEP_PLATEAU}, got N = {dim}"
            )));
        }
        Ok(SpectrumSpec { family, dim })
    }

    pub fn family(&self) -> SpectrumFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl fmt::Display for SpectrumSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family, self.dim)
    }
}

/// Parses `family:N`, e.g. `step:1000`.
impl FromStr for SpectrumSpec {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self> {
        let (family, dim) = s
            .split_once(':')
            .ok_or_else(|| TraceError::InvalidSpec(format!("expected `family:N`, got `{s}`")))?;
        let dim: usize = dim
            .trim()
            .parse()
            .map_err(|_| TraceError::InvalidSpec(format!("bad dimension in `{s}`")))?;
        SpectrumSpec::new(family.trim().parse()?, dim)
    }
}

/// Eigenvalues `λ_1, …, λ_N` of the requested family.
pub fn make_spectrum(spec: &SpectrumSpec) -> Vec<f64> {
    let n = spec.dim;
    let inv_sq = |i: usize| 1.0 / (i as f64 * i as f64);
    (1..=n)
        .map(|i| match spec.family {
            SpectrumFamily::Flat if n == 1 => 3.0,
            SpectrumFamily::Flat => 3.0 - 2.0 * (i - 1) as f64 / (n - 1) as f64,
            SpectrumFamily::Poly => inv_sq(i),
            SpectrumFamily::InvPoly => 2.0 - inv_sq(i),
            SpectrumFamily::Exp => EXP_RATIO.powi((i - 1) as i32),
            SpectrumFamily::Step if i <= STEP_PLATEAU => 1.0,
            SpectrumFamily::Step => STEP_LEVEL,
            SpectrumFamily::StepDecay if i <= STEP_PLATEAU => 1.0,
            SpectrumFamily::StepDecay => inv_sq(i),
        })
        .collect()
}

/// Neumaier-compensated sum of the eigenvalues.
pub fn exact_trace(eigenvalues: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in eigenvalues {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

type BlockFn = dyn Fn(ArrayView2<f64>) -> Array2<f64> + Send + Sync;

#[derive(Clone)]
enum Action {
    Diagonal(Arc<Array1<f64>>),
    Dense(Arc<Array2<f64>>),
    Custom(Arc<BlockFn>),
}

/// A square linear map reachable only through counted block products.
pub struct MatFreeOperator {
    dim: usize,
    action: Action,
    matvecs: AtomicUsize,
}

impl fmt::Debug for MatFreeOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.action {
            Action::Diagonal(_) => "diagonal",
            Action::Dense(_) => "dense",
            Action::Custom(_) => "custom",
        };
        f.debug_struct("MatFreeOperator")
            .field("dim", &self.dim)
            .field("kind", &kind)
            .field("matvecs", &self.matvec_count())
            .finish()
    }
}

impl MatFreeOperator {
    fn with_action(dim: usize, action: Action) -> Self {
        MatFreeOperator {
            dim,
            action,
            matvecs: AtomicUsize::new(0),
        }
    }

    /// Wraps an arbitrary block map. The closure must be linear and return an
    /// `N×b` block for an `N×b` input.
    pub fn from_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(ArrayView2<f64>) -> Array2<f64> + Send + Sync + 'static,
    {
        assert!(dim > 0, "operator dimension must be positive");
        Self::with_action(dim, Action::Custom(Arc::new(f)))
    }

    pub fn identity(dim: usize) -> Self {
        make_diagonal_operator(&vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Matvecs charged to this handle so far.
    pub fn matvec_count(&self) -> usize {
        self.matvecs.load(Ordering::Relaxed)
    }

    pub fn reset_count(&self) {
        self.matvecs.store(0, Ordering::Relaxed);
    }

    /// Same matrix, fresh private counter.
    pub fn fork(&self) -> Self {
        Self::with_action(self.dim, self.action.clone())
    }

    /// Computes `A·X` for an `N×b` block and charges `b` matvecs.
    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.nrows() != self.dim {
            return Err(TraceError::InvalidInput(format!(
                "operator has dimension {} but block has {} rows",
                self.dim,
                x.nrows()
            )));
        }
        self.matvecs.fetch_add(x.ncols(), Ordering::Relaxed);
        let out = match &self.action {
            Action::Diagonal(lambda) => &x * &lambda.view().insert_axis(Axis(1)),
            Action::Dense(m) => m.dot(&x),
            Action::Custom(f) => f(x),
        };
        debug_assert_eq!(out.dim(), x.dim());
        Ok(out)
    }

    /// Dense copy of the matrix, `N` matvecs. Test-scale only.
    pub fn to_dense(&self) -> Array2<f64> {
        self.apply(Array2::eye(self.dim).view())
            .expect("identity block has matching dimension")
    }
}

/// Diagonal operator `diag(λ)`.
///
/// Panics on an empty eigenvalue slice.
pub fn make_diagonal_operator(eigenvalues: &[f64]) -> MatFreeOperator {
    assert!(!eigenvalues.is_empty(), "eigenvalue sequence must be nonempty");
    MatFreeOperator::with_action(
        eigenvalues.len(),
        Action::Diagonal(Arc::new(Array1::from(eigenvalues.to_vec()))),
    )
}

/// Operator backed by an explicit square matrix.
pub fn make_dense_operator(m: Array2<f64>) -> Result<MatFreeOperator> {
    let (rows, cols) = m.dim();
    if rows != cols || rows == 0 {
        return Err(TraceError::InvalidInput(format!(
            "dense operator must be square and nonempty, got {rows}×{cols}"
        )));
    }
    Ok(MatFreeOperator::with_action(rows, Action::Dense(Arc::new(m))))
}

/// The operator for a synthetic spectrum, together with its exact trace.
pub fn spectrum_operator(spec: &SpectrumSpec) -> (MatFreeOperator, f64) {
    let eigs = make_spectrum(spec);
    let trace = exact_trace(&eigs);
    (make_diagonal_operator(&eigs), trace)
}
