use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Deterministic random network with `dims.len() - 1` bias-free layers: ReLU
/// on every layer except the last, which is SoftMax.
///
/// Weights of a layer with fan-in `n` are drawn as `f32` uniformly from
/// `[-1/√n, 1/√n]` using ChaCha8 seeded with `seed`, in layer order then
/// row-major order.
pub fn make_synthetic_network(seed: u64, dims: &[usize]) -> Result<Network> {
    if dims.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "synthetic network needs at least 3 dims (2 layers), got {}",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("network dims must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(idx, pair)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f32).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| f64::from(rng.random_range(-bound..=bound)))
                .collect();
            let activation = if idx == last {
                Activation::Softmax
            } else {
                Activation::Relu
            };
            LayerSpec::new(Matrix::new(fan_in, fan_out, data)?, None, activation)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::encode_network;

    #[test]
    fn same_seed_same_bytes() {
        let a = encode_network(&make_synthetic_network(42, &[8, 6, 5, 4]).unwrap());
        let b = encode_network(&make_synthetic_network(42, &[8, 6, 5, 4]).unwrap());
        assert_eq!(a, b);
        let c = encode_network(&make_synthetic_network(43, &[8, 6, 5, 4]).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn weights_within_bound_and_valid() {
        let net = make_synthetic_network(42, &[8, 6, 5, 4]).unwrap();
        assert_eq!(net.dims(), vec![8, 6, 5, 4]);
        assert_eq!(net.class_count(), 4);
        for l in net.layers() {
            let bound = 1.0 / (l.in_dim() as f64).sqrt() + 1e-7;
            assert!(l.weights().data().iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn too_few_dims() {
        assert!(make_synthetic_network(1, &[4, 2]).is_err());
        assert!(make_synthetic_network(1, &[4, 0, 2]).is_err());
    }
}
