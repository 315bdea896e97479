//! Rank-1 gradient features from the fully connected stack of a feed-forward
//! network.
//!
//! For a layer `y_k = W_kᵀ x_{k-1}` the weight gradient of the cross-entropy
//! loss is the outer product `x_{k-1} · (∂E/∂y_k)ᵀ`. This crate extracts that
//! gradient as a pair of factors, compares pairs with the trace kernel
//! `Tr(AᵀB) = (aᵀb)(uᵀv)` without ever materializing the matrices, and
//! evaluates the resulting Gram matrices with one-vs-rest kernel SVMs and
//! average precision.
//!
//! Module map:
//!
//! - [`linalg`]: dense vectors and matrices with fixed accumulation order.
//! - [`net`]: fully connected networks, tempered SoftMax, the `.dfn` format.
//! - [`grad`]: back-propagation from a label seed and feature packaging.
//! - [`kernel`]: trace/dot kernels and Gram assembly, the `.dfg` format.
//! - [`svm`]: SMO dual solver, one-vs-rest models.
//! - [`metrics`]: average precision and mAP.
//! - [`dataset`]: the `.dfs` format and the planted synthetic task.
//! - [`pipeline`]: extract → gram → train → eval orchestration.
//! - [`oracle`] and [`check`]: independent reference computations and the
//!   self-check suites built on them.

pub mod check;
mod codec;
pub mod dataset;
pub mod error;
pub mod grad;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod pipeline;
pub mod svm;

pub use codec::write_atomic;
pub use dataset::{Dataset, SyntheticData, SyntheticTask};
pub use error::{Error, Result};
pub use grad::{
    backprop_to, backward_seed, explicit_gradient, forward_feature, gradient_feature,
    BackwardTrace, BlockRef, FeatureSet, ForwardFeature, GradientFeature, LabelVector,
};
pub use kernel::{cross_gram, dot_kernel, gram, trace_kernel, CrossGram, GramMatrix, KernelKind};
pub use linalg::{dot, l2_norm, matvec_transposed, normalize, Matrix, Vector};
pub use metrics::{average_precision, mean_ap, ApVariant, MapReport};
pub use net::{make_synthetic_network, tempered_softmax, Activation, ForwardTrace, LayerSpec, Network};
pub use pipeline::{EvalReport, FeatureMode, PipelineConfig};
pub use svm::{
    decision_scores, train_binary, train_ovr, MultiLabelSet, OvrSvmModel, Scores, SmoConfig,
    SvmBinaryModel,
};
