//! Deterministic numeric kernels: dense matrices, seeded random streams and
//! the symmetric eigensolver used by whitening.

mod eig;
mod matrix;
mod rng;

pub use eig::{inv_sqrt_psd, inv_sqrt_psd_ranked, sym_eig, InvSqrt, SymEig};
pub use matrix::Matrix;
pub use rng::{label_hash, splitmix64, SeededStream};

/// Floating point types the network can run in: `f32` for production,
/// `f64` for gradient checking.
pub trait Real:
    num_traits::Float
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::MulAssign
    + Default
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn f64(self) -> f64 {
        self
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
