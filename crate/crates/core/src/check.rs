//! Self-check suites comparing the fast paths against [`crate::oracle`].

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::grad::{
    backprop_from_seed, backward_seed, explicit_gradient, factorized_frobenius, gradient_feature,
    gradient_shapes, outer_product, FeatureSet, GradientFeature, LabelVector, DEFAULT_EXPLICIT_GUARD,
};
use crate::kernel::{gram, trace_kernel, GramMatrix, KernelKind};
use crate::linalg::{l2_norm, Matrix, Vector};
use crate::metrics::average_precision;
use crate::net::{Activation, LayerSpec, Network};
use crate::oracle;
use crate::svm::{train_binary, SmoConfig};

/// Signature of [`backward_seed`]; replaceable to test that the suites catch
/// a broken seed.
pub type SeedFn = fn(&[f64], &LabelVector) -> Result<Vector>;

#[derive(Clone, Debug)]
pub struct CheckConfig {
    pub seed: u64,
    pub seed_fn: SeedFn,
    /// Sampled weight entries per layer in the finite-difference suite.
    pub fd_entries_per_layer: usize,
    pub trace_pairs: usize,
    pub psd_features: usize,
    pub smo_problems: usize,
    pub frobenius_pairs: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            seed: 2024,
            seed_fn: |x, g| backward_seed(x, g),
            fd_entries_per_layer: 50,
            trace_pairs: 60,
            psd_features: 30,
            smo_problems: 20,
            frobenius_pairs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest error observed, in the unit the tolerance is stated in.
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
    /// First failure or note, if any.
    pub detail: String,
}

impl SuiteResult {
    fn from_errors(name: &'static str, tolerance: f64, errors: &[f64], min_cases: usize) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        let enough = errors.len() >= min_cases;
        let nan = errors.iter().any(|e| e.is_nan());
        SuiteResult {
            name,
            passed: enough && !nan && max_error < tolerance,
            max_error: if nan { f64::NAN } else { max_error },
            tolerance,
            cases: errors.len(),
            detail: if enough {
                String::new()
            } else {
                format!("only {} cases, need {min_cases}", errors.len())
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub suites: Vec<SuiteResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.suites {
            let _ = write!(
                s,
                "{} {:<20} cases={:<5} max_error={:.3e} tolerance={:.0e}",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.cases,
                r.max_error,
                r.tolerance
            );
            if !r.detail.is_empty() {
                let _ = write!(s, " ({})", r.detail);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "overall: {}", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

pub fn run_all(cfg: &CheckConfig) -> Result<CheckReport> {
    Ok(CheckReport {
        suites: vec![
            finite_difference(cfg)?,
            factorized_trace(cfg)?,
            psd(cfg)?,
            smo_vs_qp(cfg)?,
            ap_hand_cases()?,
            frobenius(cfg)?,
            gradient_sizes(),
        ],
    })
}

/// Random network with Gaussian weights scaled by `1/√fan_in` and optional
/// biases; ReLU below the SoftMax top.
pub fn random_network(rng: &mut ChaCha8Rng, dims: &[usize], bias: bool) -> Result<Network> {
    let top = dims.len() - 2;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(idx, w)| {
            let scale = 1.0 / (w[0] as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let b = bias.then(|| (0..w[1]).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect());
            let act = if idx == top { Activation::Softmax } else { Activation::Relu };
            LayerSpec::new(Matrix::new(w[0], w[1], data)?, b, act)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_label(rng: &mut ChaCha8Rng, p: usize) -> Result<LabelVector> {
    let raw: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let mut g: Vec<f64> = raw.iter().map(|v| v / sum).collect();
    // make the sum exactly 1 up to rounding of the last entry
    let head: f64 = g[..p - 1].iter().sum();
    g[p - 1] = (1.0 - head).max(0.0);
    LabelVector::new(g)
}

/// Unnormalized `x_{k-1} d_kᵀ` entries against `−1 ×` central differences of
/// the cross-entropy at `τ = 1`.
pub fn finite_difference(cfg: &CheckConfig) -> Result<SuiteResult> {
    const TOL: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shapes: [(&[usize], bool); 3] = [(&[8, 6, 5, 4], false), (&[8, 6, 5, 4], true), (&[10, 7, 6, 5, 3], true)];
    let mut errors = Vec::new();
    let mut per_layer_min = usize::MAX;
    for (dims, bias) in shapes {
        let net = random_network(&mut rng, dims, bias)?;
        let layers = oracle::ref_layers(&net);
        let mut counts = vec![0usize; net.num_layers()];
        for trial in 0..40 {
            if counts.iter().all(|&c| c >= cfg.fd_entries_per_layer) {
                break;
            }
            let input = gaussian(&mut rng, dims[0]);
            let g = if trial % 2 == 0 {
                LabelVector::uniform(net.class_count())
            } else {
                random_label(&mut rng, net.class_count())?
            };
            let trace = net.forward(&input, 1.0)?;
            let seed = (cfg.seed_fn)(trace.output(), &g)?;
            for k in 1..=net.num_layers() {
                let back = backprop_from_seed(&net, &trace, k, seed.clone())?;
                let x = trace.activation(k - 1).expect("valid layer");
                let d = back.target_delta();
                for _ in 0..8 {
                    let (i, j) = (rng.random_range(0..x.len()), rng.random_range(0..d.len()));
                    let analytic = x[i] * d[j];
                    if analytic.abs() <= 1e-8 {
                        continue;
                    }
                    let Some(fd) = oracle::fd_weight_gradient(&layers, &input, g.as_slice(), 1.0, k, i, j) else {
                        continue;
                    };
                    errors.push((analytic + fd).abs() / analytic.abs());
                    counts[k - 1] += 1;
                }
            }
        }
        per_layer_min = per_layer_min.min(*counts.iter().min().expect("layers"));
    }
    let mut r = SuiteResult::from_errors("finite-difference", TOL, &errors, 0);
    if per_layer_min < cfg.fd_entries_per_layer {
        r.passed = false;
        r.detail = format!("a layer had only {per_layer_min} usable entries");
    }
    Ok(r)
}

/// Features from random inputs through one net, all layers mixed.
fn sample_features(rng: &mut ChaCha8Rng, net: &Network, k: usize, count: usize, tau: f64) -> Result<Vec<GradientFeature>> {
    (0..count)
        .map(|_| {
            let input = gaussian(rng, net.input_dim());
            gradient_feature(net, &net.forward(&input, tau)?, k)
        })
        .collect()
}

/// `(aᵀb)(uᵀv)` against the dense `Tr(AᵀB)` of the materialized gradients.
pub fn factorized_trace(cfg: &CheckConfig) -> Result<SuiteResult> {
    const TOL: f64 = 1e-10;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472);
    let shapes: [&[usize]; 3] = [&[8, 6, 5, 4], &[20, 16, 12, 6], &[64, 48, 32, 16]];
    let mut errors = Vec::new();
    let per_shape = cfg.trace_pairs.div_ceil(shapes.len());
    for dims in shapes {
        let net = random_network(&mut rng, dims, true)?;
        for _ in 0..per_shape {
            let k = rng.random_range(1..=net.num_layers());
            let pair = sample_features(&mut rng, &net, k, 2, 2.0)?;
            let fast = trace_kernel(&pair[0], &pair[1])?;
            let a = explicit_gradient(&pair[0], DEFAULT_EXPLICIT_GUARD)?;
            let b = explicit_gradient(&pair[1], DEFAULT_EXPLICIT_GUARD)?;
            let dense = oracle::dense_trace(&a, &b);
            errors.push(relative(fast, dense));
        }
    }
    Ok(SuiteResult::from_errors("factorized-trace", TOL, &errors, cfg.trace_pairs))
}

fn relative(value: f64, reference: f64) -> f64 {
    if value == reference {
        0.0
    } else {
        (value - reference).abs() / reference.abs()
    }
}

/// Gram symmetry, PSD via eigendecomposition, unit self-similarity and
/// Cauchy–Schwarz. The reported error is the worst of the four, each
/// divided by its own tolerance.
pub fn psd(cfg: &CheckConfig) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x707364);
    let net = random_network(&mut rng, &[16, 12, 10, 6], true)?;
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    let mut cases = 0;
    for k in 1..=net.num_layers() {
        let feats = sample_features(&mut rng, &net, k, cfg.psd_features, 2.0)?;
        let g = gram(&FeatureSet::Gradient(feats.clone()), KernelKind::Trace)?;
        cases += 1;
        let ratios = gram_property_ratios(&g, &feats);
        for (what, ratio) in ratios {
            if ratio > worst {
                worst = ratio;
                if ratio >= 1.0 && detail.is_empty() {
                    detail = format!("{what} violated at layer {k}");
                }
            }
        }
    }
    let mut r = SuiteResult::from_errors("psd", 1.0, &[worst], 1);
    r.cases = cases;
    r.detail = detail;
    Ok(r)
}

/// Each property's violation divided by its tolerance; `< 1` passes.
pub fn gram_property_ratios(g: &GramMatrix, feats: &[GradientFeature]) -> Vec<(&'static str, f64)> {
    let n = g.n();
    let mut asym: f64 = 0.0;
    let mut cs: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((g.get(i, j) - g.get(j, i)).abs());
            let bound = (g.get(i, i) * g.get(j, j)).sqrt();
            cs = cs.max(g.get(i, j).abs() - bound);
        }
    }
    let mut self_sim: f64 = 0.0;
    for (i, f) in feats.iter().enumerate() {
        if l2_norm(f.a()) > 0.0 && l2_norm(f.u()) > 0.0 {
            self_sim = self_sim.max((g.get(i, i) - 1.0).abs());
        }
    }
    let min_eig = oracle::min_symmetric_eigenvalue(n, g.entries());
    let eig_tol = 1e-8 * g.trace().max(1.0);
    vec![
        ("symmetry", if asym == 0.0 { 0.0 } else { f64::INFINITY }),
        ("min eigenvalue", (-min_eig).max(0.0) / eig_tol),
        ("self-similarity", self_sim / 1e-9),
        ("cauchy-schwarz", cs.max(0.0) / 1e-12),
    ]
}

/// Random PSD 12-point problem with balanced labels.
pub fn random_svm_problem(rng: &mut ChaCha8Rng, n: usize) -> Result<(GramMatrix, Vec<i8>)> {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| gaussian(rng, 5)).collect();
    let mut e = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| a * b).sum();
            e[i * n + j] = v;
            e[j * n + i] = v;
        }
    }
    let mut labels: Vec<i8> = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();
    labels.shuffle(rng);
    Ok((GramMatrix::from_entries(n, KernelKind::Dot, e)?, labels))
}

/// SMO dual objective against the projected-gradient oracle, plus the
/// two-point closed form `α = (½, ½)`, `b = 0`.
pub fn smo_vs_qp(cfg: &CheckConfig) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x736d6f);
    let smo = SmoConfig::default();
    let mut errors = Vec::new();
    for _ in 0..cfg.smo_problems {
        let (g, y) = random_svm_problem(&mut rng, 12)?;
        let model = train_binary(&g, &y, &smo)?;
        let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let alpha = oracle::projected_gradient_svm_dual(g.entries(), &yf, smo.c, 200_000);
        let reference = oracle::svm_dual_objective(g.entries(), &yf, &alpha);
        let ours = oracle::svm_dual_objective(g.entries(), &yf, &model.alpha);
        errors.push(relative(ours, reference) / 1e-4);
    }
    let two = GramMatrix::from_entries(2, KernelKind::Dot, vec![1.0, -1.0, -1.0, 1.0])?;
    let m = train_binary(&two, &[1, -1], &smo)?;
    let closed = [(m.alpha[0] - 0.5).abs(), (m.alpha[1] - 0.5).abs(), m.bias.abs()];
    errors.push(closed.iter().copied().fold(0.0, f64::max) / 1e-9);
    let mut r = SuiteResult::from_errors("smo-vs-qp", 1.0, &errors, cfg.smo_problems + 1);
    r.detail = "errors scaled by tolerance (1e-4 relative objective, 1e-9 closed form)".into();
    Ok(r)
}

pub fn ap_hand_cases() -> Result<SuiteResult> {
    let mut errors = vec![
        (average_precision(&[0.9, 0.8, 0.7], &[true, false, true])? - 5.0 / 6.0).abs(),
        (average_precision(&[0.3, 0.1, 0.2, 0.9], &[true; 4])? - 1.0).abs(),
    ];
    for n in [1usize, 2, 3, 10, 100] {
        let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let mut rel = vec![false; n];
        rel[n - 1] = true;
        errors.push((average_precision(&scores, &rel)? - 1.0 / n as f64).abs());
    }
    Ok(SuiteResult::from_errors("ap-hand-cases", 1e-12, &errors, 7))
}

/// `‖a·uᵀ‖_F` of the dense outer product against `‖a‖₂‖u‖₂`.
pub fn frobenius(cfg: &CheckConfig) -> Result<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x66726f);
    let mut errors = Vec::new();
    for _ in 0..cfg.frobenius_pairs {
        let (d, big_d) = (rng.random_range(1..40), rng.random_range(1..40));
        let a = gaussian(&mut rng, d);
        let u = gaussian(&mut rng, big_d);
        let dense = outer_product(&a, &u, DEFAULT_EXPLICIT_GUARD)?.frobenius_norm();
        errors.push(relative(factorized_frobenius(&a, &u), dense));
    }
    Ok(SuiteResult::from_errors("frobenius", 1e-5, &errors, cfg.frobenius_pairs))
}

/// Implied and factorized gradient sizes for a 9216-4096-4096-1000 stack.
pub fn gradient_sizes() -> SuiteResult {
    let shapes = gradient_shapes(&[9216, 4096, 4096, 1000]);
    let implied: Vec<u64> = shapes.iter().map(|s| s.implied_entries()).collect();
    let stored: Vec<u64> = shapes.iter().map(|s| s.factorized_len()).collect();
    let ok = implied == [37_748_736, 16_777_216, 4_096_000] && stored == [13_312, 8_192, 5_096];
    SuiteResult {
        name: "gradient-sizes",
        passed: ok,
        max_error: if ok { 0.0 } else { 1.0 },
        tolerance: 0.5,
        cases: 3,
        detail: format!("implied {implied:?}, stored {stored:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;

    fn flipped(x: &[f64], g: &LabelVector) -> Result<Vector> {
        Ok(backward_seed(x, g)?.iter().map(|v| -v).collect())
    }

    #[test]
    fn all_suites_pass() {
        let report = run_all(&CheckConfig::default()).unwrap();
        assert!(report.passed(), "{}", report.to_text());
        let text = report.to_text();
        for name in ["finite-difference", "factorized-trace", "psd", "smo-vs-qp", "ap-hand-cases", "frobenius"] {
            assert!(text.contains(name), "{name} missing from report");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let cfg = CheckConfig {
            seed_fn: flipped,
            ..CheckConfig::default()
        };
        let r = finite_difference(&cfg).unwrap();
        assert!(!r.passed);
        assert!(r.max_error > 1.0, "{}", r.max_error);
    }
}
