//! Factorized trace kernel, dot kernel and Gram assembly.
//!
//! For rank-1 gradients `A = a·uᵀ` and `B = b·vᵀ`,
//! `Tr(AᵀB) = (aᵀb)·(uᵀv)`, so a similarity costs `O(d + D)` instead of
//! `O(d·D)`. Since `Tr(AᵀB)` is the inner product of the flattened matrices,
//! the trace and dot kernels agree on either feature representation; the
//! kind is carried as a tag on the resulting matrix.

use std::path::Path;

use rayon::prelude::*;

use crate::codec::{put_u32, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::grad::{FeatureSet, ForwardFeature, GradientFeature};
use crate::linalg::dot_unchecked;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Trace,
    Dot,
}

impl KernelKind {
    pub fn code(self) -> u8 {
        match self {
            KernelKind::Trace => 0,
            KernelKind::Dot => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(KernelKind::Trace),
            1 => Some(KernelKind::Dot),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Trace => "trace",
            KernelKind::Dot => "dot",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(KernelKind::Trace),
            "dot" => Ok(KernelKind::Dot),
            _ => Err(Error::InvalidArgument(format!("unknown kernel {s:?} (trace|dot)"))),
        }
    }
}

/// `(a₁ᵀa₂)·(u₁ᵀu₂)`.
pub fn trace_kernel(f1: &GradientFeature, f2: &GradientFeature) -> Result<f64> {
    if f1.shape() != f2.shape() {
        return Err(Error::FeatureMismatch(format!(
            "gradient shapes {}x{} and {}x{} differ",
            f1.a().len(),
            f1.u().len(),
            f2.a().len(),
            f2.u().len()
        )));
    }
    if let (Some(l1), Some(l2)) = (f1.layer(), f2.layer()) {
        if l1 != l2 {
            return Err(Error::FeatureMismatch(format!(
                "features come from layers {l1} and {l2}"
            )));
        }
    }
    Ok(trace_unchecked(f1, f2))
}

fn trace_unchecked(f1: &GradientFeature, f2: &GradientFeature) -> f64 {
    dot_unchecked(f1.a(), f2.a()) * dot_unchecked(f1.u(), f2.u())
}

pub fn dot_kernel(f1: &ForwardFeature, f2: &ForwardFeature) -> Result<f64> {
    let layouts_known = f1.block_lens().len() > 1 && f2.block_lens().len() > 1;
    if f1.len() != f2.len() || (layouts_known && f1.block_lens() != f2.block_lens()) {
        return Err(Error::FeatureMismatch(format!(
            "forward block layouts {:?} and {:?} differ",
            f1.block_lens(),
            f2.block_lens()
        )));
    }
    Ok(dot_unchecked(f1.data(), f2.data()))
}

/// Symmetric `n × n` kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    n: usize,
    kind: KernelKind,
    entries: Vec<f64>,
}

impl GramMatrix {
    /// Builds from row-major entries; fails unless exactly symmetric.
    pub fn from_entries(n: usize, kind: KernelKind, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                op: "gram entries (n*n vs length)",
                left: n * n,
                right: entries.len(),
            });
        }
        for i in 0..n {
            for j in 0..i {
                if entries[i * n + j].to_bits() != entries[j * n + i].to_bits() {
                    return Err(Error::InvalidArgument(format!(
                        "gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gram entries"));
        }
        Ok(GramMatrix { n, kind, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }
}

/// Rectangular kernel matrix: rows are test samples, columns training samples.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossGram {
    rows: usize,
    cols: usize,
    kind: KernelKind,
    entries: Vec<f64>,
}

impl CrossGram {
    pub fn from_entries(rows: usize, cols: usize, kind: KernelKind, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "cross gram entries (rows*cols vs length)",
                left: rows * cols,
                right: entries.len(),
            });
        }
        Ok(CrossGram {
            rows,
            cols,
            kind,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> CrossGram {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.get(i, j));
            }
        }
        CrossGram {
            rows: self.cols,
            cols: self.rows,
            kind: self.kind,
            entries,
        }
    }
}

impl From<GramMatrix> for CrossGram {
    fn from(g: GramMatrix) -> Self {
        CrossGram {
            rows: g.n,
            cols: g.n,
            kind: g.kind,
            entries: g.entries,
        }
    }
}

fn check_compatible(left: &FeatureSet, right: &FeatureSet) -> Result<()> {
    left.validate()?;
    right.validate()?;
    match (left, right) {
        (FeatureSet::Gradient(l), FeatureSet::Gradient(r)) => {
            if let (Some(a), Some(b)) = (l.first(), r.first()) {
                trace_kernel(a, b)?;
            }
        }
        (FeatureSet::Forward(l), FeatureSet::Forward(r)) => {
            if let (Some(a), Some(b)) = (l.first(), r.first()) {
                dot_kernel(a, b)?;
            }
        }
        _ => {
            return Err(Error::FeatureMismatch(
                "cannot compare gradient features with forward features".into(),
            ))
        }
    }
    Ok(())
}

// Every entry is one fixed-order sequential reduction, so the result does not
// depend on how rows are spread over threads.
fn pair(left: &FeatureSet, i: usize, right: &FeatureSet, j: usize) -> f64 {
    match (left, right) {
        (FeatureSet::Gradient(l), FeatureSet::Gradient(r)) => trace_unchecked(&l[i], &r[j]),
        (FeatureSet::Forward(l), FeatureSet::Forward(r)) => dot_unchecked(l[i].data(), r[j].data()),
        _ => unreachable!("checked by check_compatible"),
    }
}

/// Computes the upper triangle in parallel and mirrors it.
pub fn gram(features: &FeatureSet, kind: KernelKind) -> Result<GramMatrix> {
    check_compatible(features, features)?;
    let n = features.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| pair(features, i, features, j)).collect())
        .collect();
    let mut entries = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Ok(GramMatrix { n, kind, entries })
}

/// `K[t, i] = k(test_t, train_i)`, shape `test.len() × train.len()`.
pub fn cross_gram(train: &FeatureSet, test: &FeatureSet, kind: KernelKind) -> Result<CrossGram> {
    check_compatible(train, test)?;
    let (rows, cols) = (test.len(), train.len());
    let entries: Vec<f64> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|t| (0..cols).map(move |i| pair(test, t, train, i)))
        .collect();
    Ok(CrossGram {
        rows,
        cols,
        kind,
        entries,
    })
}

/// Contents of a `.dfg` file.
///
/// ```text
/// "DFG1"  u32 n  [u32 m]  u8 kernel  f64 entries[n][m or n]
/// ```
///
/// The optional `m` is present for rectangular matrices. A square file is
/// `9 + 8n²` bytes and a rectangular one `13 + 8nm`; the two lengths never
/// coincide modulo 8, which is how a reader tells them apart.
#[derive(Clone, Debug, PartialEq)]
pub enum GramFile {
    Square(GramMatrix),
    Rect(CrossGram),
}

const MAGIC: &[u8; 4] = b"DFG1";

pub fn encode_gram(g: &GramMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 8 * g.entries.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, g.n);
    out.push(g.kind.code());
    g.entries.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn encode_cross_gram(g: &CrossGram) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 8 * g.entries.len());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, g.rows);
    put_u32(&mut out, g.cols);
    out.push(g.kind.code());
    g.entries.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    out
}

pub fn decode_gram_file(bytes: &[u8]) -> Result<GramFile> {
    let mut r = Reader::new(bytes, "gram file");
    r.magic(MAGIC)?;
    let rows = r.u32()? as usize;
    let square = bytes.len() % 8 == 9 % 8;
    let cols = if square { rows } else { r.u32()? as usize };
    let code = r.u8()?;
    let kind =
        KernelKind::from_code(code).ok_or_else(|| r.malformed(format!("unknown kernel code {code}")))?;
    let entries = r.f64s(rows.checked_mul(cols).ok_or_else(|| r.malformed("size overflow"))?)?;
    r.finish()?;
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(r.malformed("non-finite gram entry"));
    }
    if square {
        GramMatrix::from_entries(rows, kind, entries)
            .map(GramFile::Square)
            .map_err(|e| r.malformed(e.to_string()))
    } else {
        Ok(GramFile::Rect(CrossGram {
            rows,
            cols,
            kind,
            entries,
        }))
    }
}

pub fn load_gram_file(path: impl AsRef<Path>) -> Result<GramFile> {
    decode_gram_file(&std::fs::read(path)?)
}

pub fn save_gram(g: &GramMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_gram(g))
}

pub fn save_cross_gram(g: &CrossGram, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_cross_gram(g))
}
