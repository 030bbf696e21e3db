use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::qr::economy_qr;
use crate::error::TraceError;

pub type TraceRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> TraceRng {
    TraceRng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `base`. Any single trial can be
/// replayed from `(base, index)` alone.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// `rows×cols` block of i.i.d. standard normals, filled row by row.
pub fn sample_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Uniform point on the unit sphere in `R^m`.
pub fn sample_unit_vector<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Array1<f64> {
    loop {
        let g: Array1<f64> = Array1::from_shape_simple_fn(m, || StandardNormal.sample(rng));
        let n = g.dot(&g).sqrt();
        if n > 0.0 {
            return g / n;
        }
    }
}

/// Haar-distributed `m×m` orthogonal matrix: the Q factor of a Gaussian
/// block under the positive-diagonal convention.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Array2<f64> {
    assert!(m >= 1);
    loop {
        let g = sample_gaussian(rng, m, m);
        if let Ok(f) = economy_qr(g.view()) {
            return f.q;
        }
    }
}

/// Triangular factor of the Gaussian `QUR` decomposition of an `n×m` block:
/// `R_ii² ~ χ²(n−i+1)` (1-based `i`) and standard normal strict upper part.
pub fn sample_gaussian_r_factor<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> Array2<f64> {
    assert!(n >= m && m >= 1);
    let mut r = Array2::zeros((m, m));
    for i in 0..m {
        let chi2 = ChiSquared::new((n - i) as f64).expect("positive degrees of freedom");
        r[[i, i]] = chi2.sample(rng).sqrt();
        for j in i + 1..m {
            r[[i, j]] = StandardNormal.sample(rng);
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RotationKind {
    /// `I_m` first, then independent Haar matrices.
    #[default]
    IdentityFirstHaar,
    /// Independent uniform unit vectors, one per sample.
    IidUnitVectors,
    /// Kac's walk from `I_m`, advanced by random Givens rotations per draw.
    KacWalk,
}

impl RotationKind {
    pub fn name(self) -> &'static str {
        match self {
            RotationKind::IdentityFirstHaar => "identity-first-haar",
            RotationKind::IidUnitVectors => "iid-unit-vectors",
            RotationKind::KacWalk => "kac-walk",
        }
    }
}

impl fmt::Display for RotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RotationKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, TraceError> {
        [RotationKind::IdentityFirstHaar, RotationKind::IidUnitVectors, RotationKind::KacWalk]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| TraceError::InvalidInput(format!("unknown rotation strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rotation {
    Matrix(Array2<f64>),
    Vector(Array1<f64>),
}

/// Stateful source of rotations `U` (or single unit vectors) of size `m`.
#[derive(Debug, Clone)]
pub struct RotationStrategy {
    kind: RotationKind,
    m: usize,
    calls: usize,
    kac_state: Option<Array2<f64>>,
    kac_steps: usize,
}

impl RotationStrategy {
    pub fn new(kind: RotationKind, m: usize) -> Self {
        assert!(m >= 1, "rotation size must be positive");
        RotationStrategy {
            kind,
            m,
            calls: 0,
            kac_state: matches!(kind, RotationKind::KacWalk).then(|| Array2::eye(m)),
            kac_steps: m * m,
        }
    }

    /// Givens rotations applied per Kac-walk draw (default `m²`).
    pub fn with_kac_steps(mut self, steps: usize) -> Self {
        self.kac_steps = steps;
        self
    }

    pub fn kind(&self) -> RotationKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn next_rotation<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Rotation {
        self.calls += 1;
        let m = self.m;
        match self.kind {
            RotationKind::IdentityFirstHaar if self.calls == 1 => Rotation::Matrix(Array2::eye(m)),
            RotationKind::IdentityFirstHaar => Rotation::Matrix(sample_haar_orthogonal(rng, m)),
            RotationKind::IidUnitVectors => Rotation::Vector(sample_unit_vector(rng, m)),
            RotationKind::KacWalk => {
                let steps = self.kac_steps;
                let state = self.kac_state.as_mut().expect("kac state initialized");
                if m >= 2 {
                    for _ in 0..steps {
                        let p = rng.random_range(0..m);
                        let mut q = rng.random_range(0..m - 1);
                        if q >= p {
                            q += 1;
                        }
                        let theta = rng.random_range(0.0..std::f64::consts::TAU);
                        let (s, c) = theta.sin_cos();
                        for col in 0..m {
                            let a = state[[p, col]];
                            let b = state[[q, col]];
                            state[[p, col]] = c * a - s * b;
                            state[[q, col]] = s * a + c * b;
                        }
                    }
                }
                Rotation::Matrix(state.clone())
            }
        }
    }
}
