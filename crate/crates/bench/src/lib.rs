//! Inputs for the kernel micro-benchmarks.

use gradfeat::{GradientFeature, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A normalized factor pair with uniform random entries in `[-1, 1)`.
pub fn random_feature(seed: u64, d: usize, big_d: usize) -> GradientFeature {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vector = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u: Vector = (0..big_d).map(|_| rng.random_range(-1.0..1.0)).collect();
    GradientFeature::normalized(Some(1), &a, &u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let f = random_feature(3, 5, 7);
        assert_eq!((f.a().len(), f.u().len()), (5, 7));
        assert_eq!(f, random_feature(3, 5, 7));
    }
}
