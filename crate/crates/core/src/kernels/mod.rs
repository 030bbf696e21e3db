//! Dense kernels shared by the estimators: Householder QR, triangular
//! solves, the two-column QL step and random sampling.

mod qr;
mod random;

pub use qr::{
    economy_qr, max_column_norm, orthonormal_basis, ql_orthonormalize_pair, solve_transposed_upper,
    solve_upper_right, QrFactors,
};
pub(crate) use qr::{householder, ql_pair_in_place};
pub use random::{
    derive_seed, rng_from_seed, sample_gaussian, sample_gaussian_r_factor, sample_haar_orthogonal,
    sample_unit_vector, Rotation, RotationKind, RotationStrategy, TraceRng,
};
