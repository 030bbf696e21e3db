//! Matrix-free stochastic trace estimation.
//!
//! The crate estimates `tr(A)` for a square operator `A` that can only be
//! applied to blocks of vectors. It provides the plain Girard-Hutchinson
//! estimator, its orthogonalized conditional-expectation form, XTrace
//! (leave-one-out deflation against `AΩ`), and XTraceFull, which deflates
//! against the whole degree-two Krylov block `[Ω, AΩ]` and can average over
//! random orthogonal rotations `Ω ↦ ΩU` at no extra matvec cost.
//!
//! Module map:
//!
//! - [`matfree`]: operators with matvec accounting and the synthetic spectra.
//! - [`kernels`]: Householder QR, triangular solves, the two-column QL step
//!   and random sampling (Gaussian, Haar, Kac walk).
//! - [`estimators`]: every trace estimator plus the invariance checks.
//! - [`bench`]: the Monte-Carlo harness, rotation sweep and CSV output.
//! - [`checks`]: the invariance suites run by `xtrace check`.
//! - [`cli`]: the `xtrace` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod checks;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod matfree;

pub use error::{Result, TraceError};
pub use estimators::{EstimateReport, KrylovFactors, ResampleOptions, RotationFrame};
pub use kernels::{QrFactors, Rotation, RotationKind, RotationStrategy};
pub use matfree::{MatFreeOperator, SpectrumFamily, SpectrumSpec};

/// Relative tolerance used for every numerical rank decision.
pub const RANK_TOL: f64 = 1e-12;
