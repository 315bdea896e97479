//! Independent reference computations used to cross-check the fast paths.
//!
//! Nothing here calls into [`crate::grad`], [`crate::kernel`] or
//! [`crate::svm`]; each routine is a direct, slow transcription of the
//! quantity it checks.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::linalg::Matrix;
use crate::net::{Activation, Network};

/// `Tr(AᵀB)` by forming the diagonal of `AᵀB` column by column.
pub fn dense_trace(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()), "dense_trace shape mismatch");
    let mut tr = 0.0;
    for j in 0..a.cols() {
        let mut diag = 0.0;
        for i in 0..a.rows() {
            diag += a[(i, j)] * b[(i, j)];
        }
        tr += diag;
    }
    tr
}

/// Smallest eigenvalue of a symmetric row-major `n × n` matrix.
pub fn min_symmetric_eigenvalue(n: usize, entries: &[f64]) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let m = DMatrix::from_row_slice(n, n, entries);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// A plain-`Vec` copy of a layer for straight-line evaluation.
#[derive(Clone, Debug)]
pub struct RefLayer {
    /// `w[i][j]`, `i` over inputs.
    pub w: Vec<Vec<f64>>,
    pub b: Option<Vec<f64>>,
    pub relu: bool,
}

pub fn ref_layers(net: &Network) -> Vec<RefLayer> {
    net.layers()
        .iter()
        .map(|l| RefLayer {
            w: (0..l.in_dim()).map(|i| l.weights().row(i).to_vec()).collect(),
            b: l.bias().map(|b| b.to_vec()),
            relu: l.activation() == Activation::Relu,
        })
        .collect()
}

fn affine(layer: &RefLayer, x: &[f64]) -> Vec<f64> {
    let out = layer.w[0].len();
    let mut y = vec![0.0; out];
    for (j, yj) in y.iter_mut().enumerate() {
        for (i, xi) in x.iter().enumerate() {
            *yj += layer.w[i][j] * xi;
        }
        if let Some(b) = &layer.b {
            *yj += b[j];
        }
    }
    y
}

/// `−Σ_j g_j log softmax(y/τ)_j`.
pub fn cross_entropy_of_logits(y: &[f64], g: &[f64], tau: f64) -> f64 {
    let z: Vec<f64> = y.iter().map(|v| v / tau).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().zip(g).map(|(zj, gj)| gj * (lse - zj)).sum()
}

/// Pre-activations of every layer and the loss, from the network input.
pub fn ref_forward(layers: &[RefLayer], input: &[f64]) -> Vec<Vec<f64>> {
    let mut pre = Vec::with_capacity(layers.len());
    let mut x = input.to_vec();
    for (idx, layer) in layers.iter().enumerate() {
        let y = affine(layer, &x);
        if idx + 1 < layers.len() {
            x = if layer.relu { y.iter().map(|v| v.max(0.0)).collect() } else { y.clone() };
        }
        pre.push(y);
    }
    pre
}

pub fn ref_loss(layers: &[RefLayer], input: &[f64], g: &[f64], tau: f64) -> f64 {
    let pre = ref_forward(layers, input);
    cross_entropy_of_logits(pre.last().expect("non-empty"), g, tau)
}

/// Loss when the pre-activation of layer `k` (1-based) is replaced by `y_k`.
pub fn ref_loss_from(layers: &[RefLayer], k: usize, y_k: &[f64], g: &[f64], tau: f64) -> f64 {
    let mut y = y_k.to_vec();
    for j in k..layers.len() {
        let x: Vec<f64> = if layers[j - 1].relu { y.iter().map(|v| v.max(0.0)).collect() } else { y };
        y = affine(&layers[j], &x);
    }
    cross_entropy_of_logits(&y, g, tau)
}

fn relu_pattern(layers: &[RefLayer], pre: &[Vec<f64>]) -> Vec<bool> {
    pre.iter()
        .zip(layers)
        .take(layers.len() - 1)
        .filter(|(_, l)| l.relu)
        .flat_map(|(y, _)| y.iter().map(|v| *v > 0.0))
        .collect()
}

/// Central difference of the loss w.r.t. `W_k[i][j]` with
/// `h = 1e-4·(1 + |w|)`. Returns `None` when the step flips any ReLU unit or
/// when the directly affected pre-activation sits within `1e-3` of the kink.
pub fn fd_weight_gradient(
    layers: &[RefLayer],
    input: &[f64],
    g: &[f64],
    tau: f64,
    k: usize,
    i: usize,
    j: usize,
) -> Option<f64> {
    let base = ref_forward(layers, input);
    if k < layers.len() && layers[k - 1].relu && base[k - 1][j].abs() <= 1e-3 {
        return None;
    }
    let pattern = relu_pattern(layers, &base);
    let w = layers[k - 1].w[i][j];
    let h = 1e-4 * (1.0 + w.abs());
    let eval = |delta: f64| {
        let mut perturbed = layers.to_vec();
        perturbed[k - 1].w[i][j] = w + delta;
        let pre = ref_forward(&perturbed, input);
        (relu_pattern(&perturbed, &pre) == pattern)
            .then(|| cross_entropy_of_logits(pre.last().expect("non-empty"), g, tau))
    };
    let plus = eval(h)?;
    let minus = eval(-h)?;
    Some((plus - minus) / (2.0 * h))
}

/// Central difference of the loss w.r.t. `y_k[i]`, `h = 1e-4·(1 + |y|)`.
pub fn fd_preactivation_gradient(
    layers: &[RefLayer],
    k: usize,
    y_k: &[f64],
    g: &[f64],
    tau: f64,
    i: usize,
) -> f64 {
    let h = 1e-4 * (1.0 + y_k[i].abs());
    let mut plus = y_k.to_vec();
    plus[i] += h;
    let mut minus = y_k.to_vec();
    minus[i] -= h;
    (ref_loss_from(layers, k, &plus, g, tau) - ref_loss_from(layers, k, &minus, g, tau)) / (2.0 * h)
}

/// `max_α Σα − ½ αᵀQα` s.t. `yᵀα = 0`, `0 ≤ α ≤ C`, `Q_ij = y_i y_j K_ij`,
/// by projected gradient ascent with a `1/L` step. The projection onto the
/// box ∩ hyperplane is found by bisection on the multiplier.
pub fn projected_gradient_svm_dual(kernel: &[f64], labels: &[f64], c: f64, max_iter: usize) -> Vec<f64> {
    let n = labels.len();
    let q = |i: usize, j: usize| labels[i] * labels[j] * kernel[i * n + j];
    let lipschitz = (0..n)
        .map(|i| (0..n).map(|j| q(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12);
    let step = 1.0 / lipschitz;
    let mut alpha = vec![0.0; n];
    for _ in 0..max_iter {
        let grad: Vec<f64> = (0..n)
            .map(|i| 1.0 - (0..n).map(|j| q(i, j) * alpha[j]).sum::<f64>())
            .collect();
        let target: Vec<f64> = alpha.iter().zip(&grad).map(|(a, g)| a + step * g).collect();
        let next = project(&target, labels, c);
        let change = next.iter().zip(&alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        alpha = next;
        if change < 1e-15 {
            break;
        }
    }
    alpha
}

fn project(z: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> { z.iter().zip(y).map(|(zi, yi)| (zi - lambda * yi).clamp(0.0, c)).collect() };
    let residual = |lambda: f64| -> f64 { at(lambda).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    // residual is non-increasing in lambda.
    let mut lo = -1.0;
    let mut hi = 1.0;
    while residual(lo) < 0.0 {
        lo *= 2.0;
    }
    while residual(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// `Σα − ½ αᵀQα` computed directly from the kernel.
pub fn svm_dual_objective(kernel: &[f64], labels: &[f64], alpha: &[f64]) -> f64 {
    let n = labels.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * labels[i] * labels[j] * kernel[i * n + j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Non-interpolated AP by counting, for each relevant item, how many items
/// outrank it (ties broken by index).
pub fn ap_by_counting(scores: &[f64], relevant: &[bool]) -> f64 {
    let n = scores.len();
    let outranks = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    let mut total = 0.0;
    let mut count = 0;
    for p in (0..n).filter(|&p| relevant[p]) {
        let rank = 1 + (0..n).filter(|&q| q != p && outranks(q, p)).count();
        let hits = 1 + (0..n).filter(|&q| q != p && relevant[q] && outranks(q, p)).count();
        total += hits as f64 / rank as f64;
        count += 1;
    }
    total / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_feasible() {
        let y = [1.0, -1.0, 1.0, -1.0];
        let a = project(&[2.0, -0.3, 0.4, 0.9], &y, 1.0);
        let s: f64 = a.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(s.abs() < 1e-12);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn two_point_dual() {
        let k = [1.0, -1.0, -1.0, 1.0];
        let a = projected_gradient_svm_dual(&k, &[1.0, -1.0], 1.0, 100_000);
        assert!((a[0] - 0.5).abs() < 1e-9 && (a[1] - 0.5).abs() < 1e-9);
        assert!((svm_dual_objective(&k, &[1.0, -1.0], &a) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn counting_ap() {
        assert!((ap_by_counting(&[0.9, 0.8, 0.7], &[true, false, true]) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn eigen_of_diagonal() {
        assert_eq!(min_symmetric_eigenvalue(2, &[3.0, 0.0, 0.0, -1.0]), -1.0);
    }
}
