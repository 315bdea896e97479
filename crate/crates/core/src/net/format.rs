//! `.dfn` weights file.
//!
//! ```text
//! "DFN1"  u32 layer_count
//! per layer: u32 in_dim, u32 out_dim, u8 has_bias, u8 activation,
//!            f32 weights[in_dim][out_dim], f32 bias[out_dim] (iff has_bias)
//! ```
//!
//! All values little-endian, no padding.

use std::path::Path;

use super::{Activation, LayerSpec, Network};
use crate::codec::{put_f32, put_u32, write_atomic, Reader};
use crate::error::Result;
use crate::linalg::{Matrix, Vector};

pub(crate) const MAGIC: &[u8; 4] = b"DFN1";

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, net.num_layers());
    for layer in net.layers() {
        put_u32(&mut out, layer.in_dim());
        put_u32(&mut out, layer.out_dim());
        out.push(layer.bias().is_some() as u8);
        out.push(layer.activation().code());
        for &w in layer.weights().data() {
            put_f32(&mut out, w);
        }
        if let Some(b) = layer.bias() {
            for &v in b.iter() {
                put_f32(&mut out, v);
            }
        }
    }
    out
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes, "network file");
    r.magic(MAGIC)?;
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.offset();
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        if in_dim == 0 || out_dim == 0 {
            return Err(r.malformed(format!("layer header at byte {at} has a zero dimension")));
        }
        let has_bias = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(r.malformed(format!("has_bias flag {other} is not 0 or 1"))),
        };
        let code = r.u8()?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| r.malformed(format!("unknown activation code {code}")))?;
        let len = in_dim
            .checked_mul(out_dim)
            .ok_or_else(|| r.malformed("weight count overflow"))?;
        let weights: Vec<f64> = r.f32s(len)?.into_iter().map(f64::from).collect();
        let bias = if has_bias {
            Some(Vector::new(r.f32s(out_dim)?.into_iter().map(f64::from).collect()))
        } else {
            None
        };
        let weights = Matrix::new(in_dim, out_dim, weights)
            .map_err(|_| r.malformed("non-finite weight"))?;
        layers.push(LayerSpec::new(weights, bias, activation).map_err(|e| r.malformed(e.to_string()))?);
    }
    r.finish()?;
    Network::new(layers)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    decode_network(&std::fs::read(path)?)
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_network(net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::net::make_synthetic_network;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = make_synthetic_network(42, &[8, 6, 5, 4]).unwrap();
        let bytes = encode_network(&net);
        let back = decode_network(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(encode_network(&back), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.dfn");
        save_network(&net, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load_network(&path).unwrap(), net);
    }

    #[test]
    fn header_layout() {
        let net = make_synthetic_network(1, &[3, 2, 2]).unwrap();
        let bytes = encode_network(&net);
        assert_eq!(&bytes[..4], b"DFN1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 2);
        assert_eq!(bytes[16], 0);
        assert_eq!(bytes[17], 0);
        assert_eq!(bytes.len(), 8 + (10 + 4 * 6) + (10 + 4 * 4));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_network(&make_synthetic_network(1, &[3, 2, 2]).unwrap());
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_network(&bad), Err(Error::BadMagic { .. })));
        bytes[3] = b'2';
        assert!(matches!(
            decode_network(&bytes),
            Err(Error::VersionMismatch { found: '2', expected: '1', .. })
        ));
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = encode_network(&make_synthetic_network(1, &[3, 2, 2]).unwrap());
        let cut = &bytes[..bytes.len() - 3];
        match decode_network(cut) {
            Err(Error::Truncated { offset, needed, .. }) => {
                assert_eq!(offset, cut.len());
                assert_eq!(needed, 3);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn broken_chain_names_layers() {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, 2);
        for (i, o, act) in [(2usize, 3usize, 0u8), (2, 2, 2)] {
            put_u32(&mut out, i);
            put_u32(&mut out, o);
            out.push(0);
            out.push(act);
            for _ in 0..i * o {
                put_f32(&mut out, 0.5);
            }
        }
        let err = decode_network(&out).unwrap_err();
        assert!(matches!(err, Error::ChainViolation { layer: 1, next: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_activation_and_trailing_bytes() {
        let mut bytes = encode_network(&make_synthetic_network(1, &[3, 2, 2]).unwrap());
        let mut bad = bytes.clone();
        bad[17] = 9;
        assert!(matches!(decode_network(&bad), Err(Error::Malformed { offset: 18, .. })));
        bytes.push(0);
        assert!(matches!(decode_network(&bytes), Err(Error::Malformed { .. })));
    }
}
