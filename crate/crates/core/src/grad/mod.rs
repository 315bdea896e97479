//! Back-propagation from a label seed and packaging of layer features.
//!
//! The weight gradient of layer `k` is the rank-1 matrix
//! `x_{k-1} · d_kᵀ` where `d_k` follows the recursion
//!
//! ```text
//! d_L = g − x_L
//! d_k = (W_{k+1} d_{k+1}) ∘ 1[y_k > 0]
//! ```
//!
//! `d_L` is the *negative* of the calculus derivative of the cross-entropy.
//! Kernel values multiply two such factors, so the sign never shows up in a
//! similarity.

mod format;

pub use format::{decode_features, encode_features, fingerprint, load_features, save_features};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{l2_norm, matvec, normalize, Matrix, Vector};
use crate::net::{Activation, ForwardTrace, Network};

/// Default cap on the number of entries [`explicit_gradient`] will allocate.
pub const DEFAULT_EXPLICIT_GUARD: u64 = 10_000_000;

/// A label distribution `g` over the `P` output classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector(Vector);

impl LabelVector {
    pub fn new(g: Vec<f64>) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::InvalidLabels("label vector is empty".into()));
        }
        if g.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidLabels("label entries must lie in [0, 1]".into()));
        }
        let sum: f64 = g.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLabels(format!("label entries sum to {sum}, not 1")));
        }
        Ok(LabelVector(Vector::new(g)))
    }

    /// The non-informative seed `[1/P, …, 1/P]`.
    pub fn uniform(classes: usize) -> Self {
        LabelVector(Vector::new(vec![1.0 / classes as f64; classes]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `g − x_L`.
pub fn backward_seed(output: &[f64], g: &LabelVector) -> Result<Vector> {
    if output.len() != g.len() {
        return Err(Error::DimensionMismatch {
            op: "backward_seed (output vs label length)",
            left: output.len(),
            right: g.len(),
        });
    }
    Ok(g.as_slice().iter().zip(output).map(|(g, x)| g - x).collect())
}

/// `d_j = ∂E/∂y_j` (paper sign) for `j` from the target layer up to `L`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardTrace {
    target: usize,
    // deltas[j - target]
    deltas: Vec<Vector>,
}

impl BackwardTrace {
    pub fn target(&self) -> usize {
        self.target
    }

    pub fn delta(&self, k: usize) -> Option<&Vector> {
        k.checked_sub(self.target).and_then(|i| self.deltas.get(i))
    }

    /// `d_target`.
    pub fn target_delta(&self) -> &Vector {
        &self.deltas[0]
    }
}

/// Back-propagates the uniform seed down to layer `k`.
pub fn backprop_to(net: &Network, trace: &ForwardTrace, k: usize) -> Result<BackwardTrace> {
    backprop_with_label(net, trace, k, &LabelVector::uniform(net.class_count()))
}

pub fn backprop_with_label(
    net: &Network,
    trace: &ForwardTrace,
    k: usize,
    g: &LabelVector,
) -> Result<BackwardTrace> {
    check_trace(net, trace)?;
    let seed = backward_seed(trace.output(), g)?;
    backprop_from_seed(net, trace, k, seed)
}

/// Runs the recursion from an arbitrary top-layer signal `d_L`.
pub fn backprop_from_seed(
    net: &Network,
    trace: &ForwardTrace,
    k: usize,
    seed: Vector,
) -> Result<BackwardTrace> {
    net.check_index(k)?;
    check_trace(net, trace)?;
    let top = net.num_layers();
    if seed.len() != net.class_count() {
        return Err(Error::DimensionMismatch {
            op: "backprop seed (class count vs seed length)",
            left: net.class_count(),
            right: seed.len(),
        });
    }
    let mut deltas = Vec::with_capacity(top - k + 1);
    deltas.push(seed);
    for j in (k..top).rev() {
        let upper = &net.layers()[j]; // layer j + 1
        let above = deltas.last().expect("seeded");
        let mut d = matvec(upper.weights(), above)?;
        if net.layers()[j - 1].activation() == Activation::Relu {
            let y = trace.pre_activation(j).expect("checked trace");
            for (di, &yi) in d.as_mut_slice().iter_mut().zip(y.iter()) {
                if yi <= 0.0 {
                    *di = 0.0;
                }
            }
        }
        deltas.push(d);
    }
    deltas.reverse();
    Ok(BackwardTrace { target: k, deltas })
}

fn check_trace(net: &Network, trace: &ForwardTrace) -> Result<()> {
    if trace.num_layers() != net.num_layers() {
        return Err(Error::DimensionMismatch {
            op: "trace/network layer count",
            left: trace.num_layers(),
            right: net.num_layers(),
        });
    }
    if trace.input().len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "trace/network input dim",
            left: trace.input().len(),
            right: net.input_dim(),
        });
    }
    for (k, layer) in net.layers().iter().enumerate() {
        let y = trace.pre_activation(k + 1).expect("layer count checked");
        if y.len() != layer.out_dim() {
            return Err(Error::DimensionMismatch {
                op: "trace/network layer width",
                left: y.len(),
                right: layer.out_dim(),
            });
        }
    }
    Ok(())
}

/// Shape of `∂E/∂W_k`: `d × D` with `d = in_dim`, `D = out_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradientShape {
    pub rows: usize,
    pub cols: usize,
}

impl GradientShape {
    /// Entries of the dense gradient matrix.
    pub fn implied_entries(&self) -> u64 {
        self.rows as u64 * self.cols as u64
    }

    /// Numbers stored by the factorized form.
    pub fn factorized_len(&self) -> u64 {
        self.rows as u64 + self.cols as u64
    }
}

/// Gradient shapes for every layer of a stack with the given dims
/// (`[input, out_1, …, out_L]`), layer 1 first.
pub fn gradient_shapes(dims: &[usize]) -> Vec<GradientShape> {
    dims.windows(2)
        .map(|w| GradientShape {
            rows: w[0],
            cols: w[1],
        })
        .collect()
}

/// The rank-1 gradient `a·uᵀ` held as its two factors.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientFeature {
    layer: Option<usize>,
    a: Vector,
    u: Vector,
}

impl GradientFeature {
    /// Wraps factors as given, without normalizing. `layer` is `None` when
    /// the origin is unknown (e.g. read back from a feature file).
    pub fn from_factors(layer: Option<usize>, a: Vector, u: Vector) -> Self {
        GradientFeature { layer, a, u }
    }

    /// ℓ2-normalizes each factor independently.
    pub fn normalized(layer: Option<usize>, a: &[f64], u: &[f64]) -> Self {
        GradientFeature {
            layer,
            a: normalize(a),
            u: normalize(u),
        }
    }

    pub fn layer(&self) -> Option<usize> {
        self.layer
    }

    pub fn a(&self) -> &Vector {
        &self.a
    }

    pub fn u(&self) -> &Vector {
        &self.u
    }

    pub fn shape(&self) -> GradientShape {
        GradientShape {
            rows: self.a.len(),
            cols: self.u.len(),
        }
    }

    /// Rounds both factors to the single precision used on disk.
    pub fn to_f32_precision(&self) -> Self {
        GradientFeature {
            layer: self.layer,
            a: round_f32(&self.a),
            u: round_f32(&self.u),
        }
    }
}

fn round_f32(v: &[f64]) -> Vector {
    v.iter().map(|&x| f64::from(x as f32)).collect()
}

/// Normalized factor pair `(x_{k-1}, d_k)` for layer `k` under the uniform seed.
pub fn gradient_feature(net: &Network, trace: &ForwardTrace, k: usize) -> Result<GradientFeature> {
    let back = backprop_to(net, trace, k)?;
    let a = trace.activation(k - 1).expect("index checked by backprop");
    Ok(GradientFeature::normalized(Some(k), a, back.target_delta()))
}

/// Materializes `a·uᵀ`. Refuses shapes above `guard` entries.
pub fn explicit_gradient(f: &GradientFeature, guard: u64) -> Result<Matrix> {
    outer_product(&f.a, &f.u, guard)
}

pub fn outer_product(a: &[f64], u: &[f64], guard: u64) -> Result<Matrix> {
    let required = a.len() as u64 * u.len() as u64;
    if required > guard {
        return Err(Error::SizeGuard {
            required,
            allowed: guard,
        });
    }
    let data = a.iter().flat_map(|&ai| u.iter().map(move |&uj| ai * uj)).collect();
    Matrix::new(a.len(), u.len(), data)
}

/// Selects one activation vector of a trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockRef {
    /// `x_k`, `k = 0` being the network input.
    Activation(usize),
    /// `y_k`, `k ≥ 1`.
    PreActivation(usize),
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockRef::Activation(k) => write!(f, "x{k}"),
            BlockRef::PreActivation(k) => write!(f, "y{k}"),
        }
    }
}

impl FromStr for BlockRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("block {s:?} is not of the form x<k> or y<k>"));
        let (kind, idx) = s.split_at(s.char_indices().nth(1).map(|(i, _)| i).ok_or_else(bad)?);
        let k: usize = idx.parse().map_err(|_| bad())?;
        match kind {
            "x" => Ok(BlockRef::Activation(k)),
            "y" if k >= 1 => Ok(BlockRef::PreActivation(k)),
            _ => Err(bad()),
        }
    }
}

/// Concatenation of independently ℓ2-normalized activation blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardFeature {
    block_lens: Vec<usize>,
    data: Vector,
}

impl ForwardFeature {
    /// A single block taken as-is (already normalized, e.g. read from disk).
    pub fn from_raw(data: Vector) -> Self {
        ForwardFeature {
            block_lens: vec![data.len()],
            data,
        }
    }

    pub fn block_lens(&self) -> &[usize] {
        &self.block_lens
    }

    pub fn data(&self) -> &Vector {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rounds the data to the single precision used on disk.
    pub fn to_f32_precision(&self) -> Self {
        ForwardFeature {
            block_lens: self.block_lens.clone(),
            data: round_f32(&self.data),
        }
    }
}

pub fn forward_feature(trace: &ForwardTrace, blocks: &[BlockRef]) -> Result<ForwardFeature> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("forward feature needs at least one block".into()));
    }
    let layers = trace.num_layers();
    let mut block_lens = Vec::with_capacity(blocks.len());
    let mut data = Vec::new();
    for block in blocks {
        let v = match *block {
            BlockRef::Activation(k) => trace.activation(k),
            BlockRef::PreActivation(k) => trace.pre_activation(k),
        }
        .ok_or(Error::InvalidLayer {
            index: match *block {
                BlockRef::Activation(k) | BlockRef::PreActivation(k) => k,
            },
            layers,
        })?;
        block_lens.push(v.len());
        data.extend(normalize(v).into_inner());
    }
    Ok(ForwardFeature {
        block_lens,
        data: Vector::new(data),
    })
}

/// A homogeneous collection of per-sample features.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSet {
    Gradient(Vec<GradientFeature>),
    Forward(Vec<ForwardFeature>),
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        match self {
            FeatureSet::Gradient(v) => v.len(),
            FeatureSet::Forward(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(dim_a, dim_u)`; `dim_u = 0` for forward features.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            FeatureSet::Gradient(v) => v.first().map_or((0, 0), |f| (f.a.len(), f.u.len())),
            FeatureSet::Forward(v) => v.first().map_or((0, 0), |f| (f.len(), 0)),
        }
    }

    /// Rejects mixed dims, mixed layers or mixed block layouts.
    pub fn validate(&self) -> Result<()> {
        match self {
            FeatureSet::Gradient(v) => {
                let Some(first) = v.first() else { return Ok(()) };
                for (i, f) in v.iter().enumerate() {
                    if f.shape() != first.shape() {
                        return Err(Error::FeatureMismatch(format!(
                            "sample {i} has shape {}x{}, sample 0 has {}x{}",
                            f.a.len(),
                            f.u.len(),
                            first.a.len(),
                            first.u.len()
                        )));
                    }
                    if f.layer != first.layer {
                        return Err(Error::FeatureMismatch(format!(
                            "sample {i} comes from layer {:?}, sample 0 from layer {:?}",
                            f.layer, first.layer
                        )));
                    }
                }
            }
            FeatureSet::Forward(v) => {
                let Some(first) = v.first() else { return Ok(()) };
                for (i, f) in v.iter().enumerate() {
                    if f.block_lens != first.block_lens {
                        return Err(Error::FeatureMismatch(format!(
                            "sample {i} has blocks {:?}, sample 0 has {:?}",
                            f.block_lens, first.block_lens
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// ‖a·uᵀ‖_F computed from the factors.
pub fn factorized_frobenius(a: &[f64], u: &[f64]) -> f64 {
    l2_norm(a) * l2_norm(u)
}
