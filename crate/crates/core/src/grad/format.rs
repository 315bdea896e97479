//! `.dff` feature file.
//!
//! ```text
//! "DFF1"  u32 sample_count  u8 kind  u32 dim_a  u32 dim_u
//! per sample: f32 a[dim_a], f32 u[dim_u]
//! ```
//!
//! `kind` is 0 for gradient factor pairs and 1 for forward vectors
//! (`dim_u = 0`). The file does not record the source layer or block layout.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{FeatureSet, ForwardFeature, GradientFeature};
use crate::codec::{put_f32, put_u32, write_atomic, Reader};
use crate::error::Result;
use crate::linalg::Vector;

const MAGIC: &[u8; 4] = b"DFF1";

pub fn encode_features(set: &FeatureSet) -> Vec<u8> {
    let (dim_a, dim_u) = set.dims();
    let mut out = Vec::with_capacity(17 + set.len() * (dim_a + dim_u) * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, set.len());
    match set {
        FeatureSet::Gradient(fs) => {
            out.push(0);
            put_u32(&mut out, dim_a);
            put_u32(&mut out, dim_u);
            for f in fs {
                f.a().iter().chain(f.u().iter()).for_each(|&v| put_f32(&mut out, v));
            }
        }
        FeatureSet::Forward(fs) => {
            out.push(1);
            put_u32(&mut out, dim_a);
            put_u32(&mut out, 0);
            for f in fs {
                f.data().iter().for_each(|&v| put_f32(&mut out, v));
            }
        }
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(bytes, "feature file");
    r.magic(MAGIC)?;
    let n = r.u32()? as usize;
    let kind = r.u8()?;
    let dim_a = r.u32()? as usize;
    let dim_u = r.u32()? as usize;
    let widen = |v: Vec<f32>| -> Vector { v.into_iter().map(f64::from).collect() };
    let set = match kind {
        0 => {
            let mut fs = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let a = widen(r.f32s(dim_a)?);
                let u = widen(r.f32s(dim_u)?);
                if !a.is_finite() || !u.is_finite() {
                    return Err(r.malformed("non-finite feature value"));
                }
                fs.push(GradientFeature::from_factors(None, a, u));
            }
            FeatureSet::Gradient(fs)
        }
        1 => {
            if dim_u != 0 {
                return Err(r.malformed(format!("forward features must have dim_u = 0, got {dim_u}")));
            }
            let mut fs = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let v = widen(r.f32s(dim_a)?);
                if !v.is_finite() {
                    return Err(r.malformed("non-finite feature value"));
                }
                fs.push(ForwardFeature::from_raw(v));
            }
            FeatureSet::Forward(fs)
        }
        other => return Err(r.malformed(format!("unknown feature kind {other}"))),
    };
    r.finish()?;
    Ok(set)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    decode_features(&std::fs::read(path)?)
}

pub fn save_features(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_features(set))
}

/// Hex SHA-256 of the encoded feature file; identifies a training set.
pub fn fingerprint(set: &FeatureSet) -> String {
    hex::encode(Sha256::digest(encode_features(set)))
}
