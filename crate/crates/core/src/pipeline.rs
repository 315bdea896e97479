//! Extract → gram → train → eval, and the per-layer mode comparison.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grad::{fingerprint, forward_feature, gradient_feature, BlockRef, FeatureSet};
use crate::kernel::{cross_gram, gram, CrossGram, GramMatrix, KernelKind};
use crate::metrics::{mean_ap, ApVariant, MapReport};
use crate::net::Network;
use crate::svm::{decision_scores, train_ovr, MultiLabelSet, OvrSvmModel, Scores, SmoConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Factor pair `(x_{k-1}, d_k)` of the layer-`k` weight gradient.
    Gradient,
    /// Activation blocks, by default `x_k`.
    Forward,
    /// Several activation blocks, by default `x_{k-1}` and `x_k`.
    Concat,
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Gradient => "gradient",
            FeatureMode::Forward => "forward",
            FeatureMode::Concat => "concat",
        }
    }

    pub fn default_kernel(self) -> KernelKind {
        match self {
            FeatureMode::Gradient => KernelKind::Trace,
            FeatureMode::Forward | FeatureMode::Concat => KernelKind::Dot,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(FeatureMode::Gradient),
            "forward" => Ok(FeatureMode::Forward),
            "concat" => Ok(FeatureMode::Concat),
            _ => Err(Error::InvalidArgument(format!(
                "unknown feature mode {s:?} (expected gradient, forward or concat)"
            ))),
        }
    }
}

/// Settings shared by every pipeline stage.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// 1-based index into the fully connected stack.
    pub layer: usize,
    pub tau: f64,
    pub mode: FeatureMode,
    pub kernel: KernelKind,
    /// Explicit block list for forward/concat modes; `None` picks the default.
    pub blocks: Option<Vec<BlockRef>>,
    pub smo: SmoConfig,
    pub ap: ApVariant,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            layer: 1,
            tau: 2.0,
            mode: FeatureMode::Gradient,
            kernel: KernelKind::Trace,
            blocks: None,
            smo: SmoConfig::default(),
            ap: ApVariant::NonInterpolated,
        }
    }
}

impl PipelineConfig {
    pub fn new(mode: FeatureMode, layer: usize) -> Self {
        PipelineConfig {
            layer,
            mode,
            kernel: mode.default_kernel(),
            ..PipelineConfig::default()
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        if !(self.smo.c > 0.0 && self.smo.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be positive, got {}", self.smo.c)));
        }
        net.layer(self.layer)?;
        for block in self.blocks() {
            let (k, top) = match block {
                BlockRef::Activation(k) | BlockRef::PreActivation(k) => (k, net.num_layers()),
            };
            if k > top {
                return Err(Error::InvalidLayer { index: k, layers: top });
            }
        }
        Ok(())
    }

    /// Blocks used in forward and concat modes.
    pub fn blocks(&self) -> Vec<BlockRef> {
        if let Some(b) = &self.blocks {
            return b.clone();
        }
        let k = self.layer;
        match self.mode {
            FeatureMode::Gradient => Vec::new(),
            FeatureMode::Forward => vec![BlockRef::Activation(k)],
            FeatureMode::Concat => vec![BlockRef::Activation(k - 1), BlockRef::Activation(k)],
        }
    }

    fn describe_blocks(&self) -> String {
        self.blocks().iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }
}

fn check_dataset(net: &Network, data: &Dataset) -> Result<()> {
    if data.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            op: "dataset dim vs network input dim",
            left: data.dim(),
            right: net.input_dim(),
        });
    }
    Ok(())
}

/// One feature per sample, rounded to the single precision stored on disk
/// so that in-memory and reloaded features give identical kernels.
pub fn extract_features(net: &Network, data: &Dataset, cfg: &PipelineConfig) -> Result<FeatureSet> {
    cfg.validate(net)?;
    check_dataset(net, data)?;
    let with_index = |i: usize, e: Error| Error::Sample {
        index: i,
        source: Box::new(e),
    };
    match cfg.mode {
        FeatureMode::Gradient => {
            let fs = (0..data.n())
                .into_par_iter()
                .map(|i| {
                    let trace = net.forward(&data.input(i), cfg.tau).map_err(|e| with_index(i, e))?;
                    let f = gradient_feature(net, &trace, cfg.layer).map_err(|e| with_index(i, e))?;
                    Ok(f.to_f32_precision())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FeatureSet::Gradient(fs))
        }
        FeatureMode::Forward | FeatureMode::Concat => {
            let blocks = cfg.blocks();
            let fs = (0..data.n())
                .into_par_iter()
                .map(|i| {
                    let trace = net.forward(&data.input(i), cfg.tau).map_err(|e| with_index(i, e))?;
                    let f = forward_feature(&trace, &blocks).map_err(|e| with_index(i, e))?;
                    Ok(f.to_f32_precision())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FeatureSet::Forward(fs))
        }
    }
}

/// Structured result of an evaluation, rendered as `key: value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mode: FeatureMode,
    pub kernel: KernelKind,
    pub layer: usize,
    /// Comma-separated block list for forward modes, empty for gradient.
    pub blocks: String,
    pub tau: f64,
    pub c: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub map: MapReport,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "kernel: {}", self.kernel.name());
        let _ = writeln!(s, "layer: {}", self.layer);
        if !self.blocks.is_empty() {
            let _ = writeln!(s, "blocks: {}", self.blocks);
        }
        let _ = writeln!(s, "tau: {}", self.tau);
        let _ = writeln!(s, "C: {}", self.c);
        let _ = writeln!(s, "train_samples: {}", self.train_samples);
        let _ = writeln!(s, "test_samples: {}", self.test_samples);
        let _ = writeln!(s, "ap_variant: {}", self.map.variant.name());
        let _ = writeln!(s, "classes: {}", self.map.per_class.len());
        for (j, ap) in self.map.per_class.iter().enumerate() {
            match ap {
                Some(v) => {
                    let _ = writeln!(s, "ap[{j}]: {v}");
                }
                None => {
                    let _ = writeln!(s, "ap[{j}]: skipped");
                }
            }
        }
        let _ = writeln!(s, "mAP: {}", self.map.mean);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("report: {msg}"));
        let mut fields = std::collections::BTreeMap::new();
        let mut per_class = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once(": ").ok_or_else(|| bad(format!("line {line:?} is not key: value")))?;
            if let Some(idx) = key.strip_prefix("ap[").and_then(|r| r.strip_suffix(']')) {
                let j: usize = idx.parse().map_err(|_| bad(format!("bad class index {idx:?}")))?;
                if j != per_class.len() {
                    return Err(bad(format!("class {j} out of order")));
                }
                per_class.push(match value {
                    "skipped" => None,
                    v => Some(v.parse::<f64>().map_err(|_| bad(format!("bad AP {v:?}")))?),
                });
            } else {
                fields.insert(key.to_string(), value.to_string());
            }
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| bad(format!("missing {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| bad(format!("bad {k}"))) };
        if count("classes")? != per_class.len() {
            return Err(bad("class count does not match AP lines".into()));
        }
        let variant = match get("ap_variant")?.as_str() {
            "non-interpolated" => ApVariant::NonInterpolated,
            "11-point" => ApVariant::Interpolated11,
            v => return Err(bad(format!("unknown AP variant {v:?}"))),
        };
        Ok(EvalReport {
            mode: get("mode")?.parse()?,
            kernel: get("kernel")?.parse()?,
            layer: count("layer")?,
            blocks: fields.get("blocks").cloned().unwrap_or_default(),
            tau: num("tau")?,
            c: num("C")?,
            train_samples: count("train_samples")?,
            test_samples: count("test_samples")?,
            map: MapReport {
                variant,
                per_class,
                mean: num("mAP")?,
            },
        })
    }
}

/// Every intermediate product of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub train_features: FeatureSet,
    pub test_features: FeatureSet,
    pub gram: GramMatrix,
    pub cross: CrossGram,
    pub model: OvrSvmModel,
    pub scores: Scores,
    pub report: EvalReport,
}

/// Trains on `train` and evaluates on `test`.
pub fn run(net: &Network, train: &Dataset, test: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput> {
    if train.classes() != test.classes() {
        return Err(Error::DimensionMismatch {
            op: "train vs test class count",
            left: train.classes(),
            right: test.classes(),
        });
    }
    let train_features = extract_features(net, train, cfg)?;
    let test_features = extract_features(net, test, cfg)?;
    let gram = gram(&train_features, cfg.kernel)?;
    let model = train_ovr(&gram, train.labels(), &cfg.smo, &fingerprint(&train_features))?;
    let cross = cross_gram(&train_features, &test_features, cfg.kernel)?;
    let scores = decision_scores(&model, &cross)?;
    let report = evaluate(&scores, test.labels(), cfg, train.n())?;
    Ok(RunOutput {
        train_features,
        test_features,
        gram,
        cross,
        model,
        scores,
        report,
    })
}

/// mAP report for `scores` against `labels`, tagged with the run settings.
pub fn evaluate(scores: &Scores, labels: &MultiLabelSet, cfg: &PipelineConfig, train_samples: usize) -> Result<EvalReport> {
    let map = mean_ap(scores, labels, cfg.ap)?;
    Ok(EvalReport {
        mode: cfg.mode,
        kernel: cfg.kernel,
        layer: cfg.layer,
        blocks: if cfg.mode == FeatureMode::Gradient {
            String::new()
        } else {
            cfg.describe_blocks()
        },
        tau: cfg.tau,
        c: cfg.smo.c,
        train_samples,
        test_samples: scores.rows(),
        map,
    })
}

/// One row of the mode comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub mode: FeatureMode,
    pub layer: usize,
    pub blocks: String,
    pub map: f64,
}

/// Runs forward, concat and gradient modes for each layer in `layers`.
///
/// Forward uses `x_k`; concat uses `x_{k-1}` and `x_k`. At the top layer the
/// concat block list is `x_{k-1}, y_L` so that it does not repeat the
/// forward row's probabilities.
pub fn compare_modes(
    net: &Network,
    train: &Dataset,
    test: &Dataset,
    layers: &[usize],
    base: &PipelineConfig,
) -> Result<Vec<ComparisonRow>> {
    let top = net.num_layers();
    let mut rows = Vec::new();
    for &k in layers {
        for mode in [FeatureMode::Forward, FeatureMode::Concat, FeatureMode::Gradient] {
            let blocks = match mode {
                FeatureMode::Concat if k == top => Some(vec![BlockRef::Activation(k - 1), BlockRef::PreActivation(k)]),
                _ => None,
            };
            let cfg = PipelineConfig {
                layer: k,
                mode,
                kernel: mode.default_kernel(),
                blocks,
                ..base.clone()
            };
            let out = run(net, train, test, &cfg)?;
            rows.push(ComparisonRow {
                mode,
                layer: k,
                blocks: out.report.blocks.clone(),
                map: out.report.map.mean,
            });
        }
    }
    Ok(rows)
}

pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut s = format!("{:<6} {:<9} {:<10} {:>8}\n", "layer", "mode", "blocks", "mAP");
    for r in rows {
        let blocks = if r.blocks.is_empty() {
            format!("dW{}", r.layer)
        } else {
            r.blocks.clone()
        };
        let _ = writeln!(s, "{:<6} {:<9} {:<10} {:>8.4}", r.layer, r.mode, blocks, r.map);
    }
    s
}
