use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Matrix, Scalar};

/// How [`seeded_init`] draws its entries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Uniform on `[-s, s)`.
    Uniform(f64),
    /// Uniform on `[-s, s)` with `s = 1/√rows` (rows = fan-in of `x · W`).
    FanIn,
}

impl InitScheme {
    pub fn bound(self, rows: usize) -> f64 {
        match self {
            InitScheme::Uniform(s) => s,
            InitScheme::FanIn => 1.0 / (rows.max(1) as f64).sqrt(),
        }
    }
}

/// Creates the generator used for every seeded draw in this crate: a ChaCha8
/// stream keyed by `seed_from_u64(seed)`. Floats are rand's standard `f64`
/// sample (53 random mantissa bits scaled into `[0, 1)`), so any ChaCha8
/// implementation reproduces the same sequence.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic matrix initialization; entries are drawn row-major.
pub fn seeded_init<T: Scalar>(rows: usize, cols: usize, seed: u64, scheme: InitScheme) -> Matrix<T> {
    let mut rng = seeded_rng(seed);
    let s = scheme.bound(rows);
    Matrix::from_fn(rows, cols, |_, _| T::lit(s * (2.0 * rng.gen::<f64>() - 1.0)))
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a: Matrix<f64> = seeded_init(3, 5, 42, InitScheme::FanIn);
        let b: Matrix<f64> = seeded_init(3, 5, 42, InitScheme::FanIn);
        assert_eq!(a, b);
        let c: Matrix<f64> = seeded_init(3, 5, 43, InitScheme::FanIn);
        assert!(a.data().iter().zip(c.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn fan_in_bound() {
        for seed in 0..50 {
            let m: Matrix<f64> = seeded_init(4, 4, seed, InitScheme::FanIn);
            assert!(m.data().iter().all(|v| v.abs() < 0.5));
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
