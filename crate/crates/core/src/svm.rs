//! Kernel SVMs on precomputed Gram matrices.
//!
//! [`train_binary`] solves the C-SVM dual
//!
//! ```text
//! min ½ αᵀQα − Σα   s.t.  yᵀα = 0,  0 ≤ α ≤ C,   Q_ij = y_i y_j K_ij
//! ```
//!
//! with SMO using maximal-violating-pair selection (lowest index on ties), so
//! training is bit-reproducible. The decision function is
//! `f(t) = Σ_i α_i y_i K(t, i) + b`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::write_atomic;
use crate::error::{Error, Result};
use crate::kernel::{CrossGram, GramMatrix, KernelKind};

/// `n × P` binary indicator matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiLabelSet {
    n: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl MultiLabelSet {
    pub fn new(n: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != n * classes {
            return Err(Error::DimensionMismatch {
                op: "label matrix (n*P vs length)",
                left: n * classes,
                right: labels.len(),
            });
        }
        if labels.iter().any(|&v| v > 1) {
            return Err(Error::InvalidLabels("label entries must be 0 or 1".into()));
        }
        Ok(MultiLabelSet { n, classes, labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn raw(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.labels[i * self.classes + j] == 1
    }

    pub fn column(&self, j: usize) -> Vec<bool> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    /// `+1` where sample `i` carries class `j`, `-1` elsewhere.
    pub fn signed_column(&self, j: usize) -> Vec<i8> {
        (0..self.n).map(|i| if self.get(i, j) { 1 } else { -1 }).collect()
    }

    pub fn positives(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.get(i, j)).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmoConfig {
    pub c: f64,
    /// Bound on the maximal KKT violation; the duality gap must also fall
    /// below `tol·(1 + |dual objective|)`.
    pub tol: f64,
    /// Iteration budget in units of `n` pair updates.
    pub max_passes: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        SmoConfig {
            c: 1.0,
            tol: 1e-3,
            max_passes: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmBinaryModel {
    pub alpha: Vec<f64>,
    pub labels: Vec<i8>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
    /// `Σα − ½αᵀQα` at the returned solution.
    pub dual_objective: f64,
    pub duality_gap: f64,
}

impl SvmBinaryModel {
    /// `Σ_i α_i y_i k_i + b` for a row of kernel values against the training set.
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(&self.labels)
            .zip(kernel_row)
            .fold(0.0, |acc, ((a, &y), k)| if *a != 0.0 { acc + a * f64::from(y) * k } else { acc })
            + self.bias
    }

    pub fn support_indices(&self) -> Vec<usize> {
        (0..self.alpha.len()).filter(|&i| self.alpha[i] > 0.0).collect()
    }
}

const TAU: f64 = 1e-12;

struct Smo<'a> {
    gram: &'a GramMatrix,
    y: Vec<f64>,
    c: f64,
    alpha: Vec<f64>,
    // G = Qα − e
    grad: Vec<f64>,
}

impl Smo<'_> {
    fn q(&self, i: usize, j: usize) -> f64 {
        self.y[i] * self.y[j] * self.gram.get(i, j)
    }

    fn in_up(&self, t: usize) -> bool {
        (self.y[t] > 0.0 && self.alpha[t] < self.c) || (self.y[t] < 0.0 && self.alpha[t] > 0.0)
    }

    fn in_low(&self, t: usize) -> bool {
        (self.y[t] > 0.0 && self.alpha[t] > 0.0) || (self.y[t] < 0.0 && self.alpha[t] < self.c)
    }

    /// `(i, j, m − M)` for the maximal violating pair.
    fn select(&self) -> (usize, usize, f64) {
        let mut i = usize::MAX;
        let mut m = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut big_m = f64::INFINITY;
        for t in 0..self.y.len() {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) && v > m {
                m = v;
                i = t;
            }
            if self.in_low(t) && v < big_m {
                big_m = v;
                j = t;
            }
        }
        (i, j, m - big_m)
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let qii = self.gram.get(i, i);
        let qjj = self.gram.get(j, j);
        let qij = self.q(i, j);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (self.alpha[i] - old_i, self.alpha[j] - old_j);
        for t in 0..self.y.len() {
            self.grad[t] += self.q(t, i) * di + self.q(t, j) * dj;
        }
    }

    fn bias(&self) -> f64 {
        let mut free_sum = 0.0;
        let mut free = 0usize;
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.grad[t];
            let at_upper = self.alpha[t] >= self.c;
            let at_lower = self.alpha[t] <= 0.0;
            if at_upper {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if at_lower {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                free_sum += yg;
            }
        }
        let rho = if free > 0 { free_sum / free as f64 } else { 0.5 * (ub + lb) };
        -rho
    }

    fn dual_objective(&self) -> f64 {
        // Σα − ½αᵀQα = −½ Σ α_t (G_t − 1)
        -0.5 * self.alpha.iter().zip(&self.grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>()
    }

    /// Primal minus dual with slack computed from the current bias.
    fn duality_gap(&self, b: f64) -> f64 {
        let mut gap = 0.0;
        for t in 0..self.y.len() {
            let margin = self.grad[t] + 1.0 + self.y[t] * b;
            gap += self.alpha[t] * self.grad[t] + self.c * (1.0 - margin).max(0.0);
        }
        gap
    }
}

pub fn train_binary(gram: &GramMatrix, labels: &[i8], cfg: &SmoConfig) -> Result<SvmBinaryModel> {
    let n = gram.n();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            op: "train_binary (gram size vs label count)",
            left: n,
            right: labels.len(),
        });
    }
    if !cfg.c.is_finite() || cfg.c <= 0.0 {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", cfg.c)));
    }
    if labels.iter().any(|&l| l != 1 && l != -1) {
        return Err(Error::InvalidLabels("signed labels must be +1 or -1".into()));
    }
    match labels.first() {
        None => return Err(Error::InvalidLabels("no training samples".into())),
        Some(&first) if labels.iter().all(|&l| l == first) => return Err(Error::AllSameSign(first)),
        _ => {}
    }
    let mut smo = Smo {
        gram,
        y: labels.iter().map(|&l| f64::from(l)).collect(),
        c: cfg.c,
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
    };
    let budget = cfg.max_passes.saturating_mul(n.max(1));
    let mut iterations = 0;
    loop {
        let (i, j, violation) = smo.select();
        if violation <= cfg.tol {
            let b = smo.bias();
            let obj = smo.dual_objective();
            let gap = smo.duality_gap(b);
            if gap <= cfg.tol * (1.0 + obj.abs()) || violation <= 0.0 {
                return Ok(SvmBinaryModel {
                    alpha: smo.alpha,
                    labels: labels.to_vec(),
                    bias: b,
                    c: cfg.c,
                    iterations,
                    dual_objective: obj,
                    duality_gap: gap,
                });
            }
        }
        if iterations >= budget {
            let b = smo.bias();
            return Err(Error::NotConverged {
                iterations,
                gap: smo.duality_gap(b),
                violation,
            });
        }
        smo.update(i, j);
        iterations += 1;
    }
}

/// `Σα − ½αᵀQα` evaluated from scratch.
pub fn dual_objective(gram: &GramMatrix, labels: &[i8], alpha: &[f64]) -> f64 {
    let n = gram.n();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += alpha[j] * f64::from(labels[j]) * gram.get(i, j);
        }
        quad += alpha[i] * f64::from(labels[i]) * row;
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// One binary SVM per class, plus what is needed to refuse mismatched inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OvrSvmModel {
    pub format: String,
    pub kernel: KernelKind,
    /// Hex SHA-256 of the encoded training features (empty if unknown).
    pub fingerprint: String,
    pub classes: Vec<SvmBinaryModel>,
}

const MODEL_FORMAT: &str = "gradfeat-ovr-svm/1";

impl OvrSvmModel {
    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn train_count(&self) -> usize {
        self.classes.first().map_or(0, |m| m.alpha.len())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes") + "\n"
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: OvrSvmModel = serde_json::from_str(s)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::BadModel(format!(
                "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
                model.format
            )));
        }
        let n = model.train_count();
        if model.classes.iter().any(|m| m.alpha.len() != n || m.labels.len() != n) {
            return Err(Error::BadModel("model classes disagree on training size".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Trains class `j` with `y_i = +1` iff sample `i` carries label `j`.
pub fn train_ovr(gram: &GramMatrix, labels: &MultiLabelSet, cfg: &SmoConfig, fingerprint: &str) -> Result<OvrSvmModel> {
    if labels.n() != gram.n() {
        return Err(Error::DimensionMismatch {
            op: "train_ovr (gram size vs label rows)",
            left: gram.n(),
            right: labels.n(),
        });
    }
    let classes = (0..labels.classes())
        .into_par_iter()
        .map(|j| {
            train_binary(gram, &labels.signed_column(j), cfg).map_err(|e| Error::Class {
                class: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OvrSvmModel {
        format: MODEL_FORMAT.into(),
        kernel: gram.kind(),
        fingerprint: fingerprint.into(),
        classes,
    })
}

/// `n_test × P` decision values.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    rows: usize,
    classes: usize,
    values: Vec<f64>,
}

impl Scores {
    pub fn new(rows: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * classes {
            return Err(Error::DimensionMismatch {
                op: "score matrix (rows*P vs length)",
                left: rows * classes,
                right: values.len(),
            });
        }
        Ok(Scores { rows, classes, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[t * self.classes + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.get(t, j)).collect()
    }
}

pub fn decision_scores(model: &OvrSvmModel, cross: &CrossGram) -> Result<Scores> {
    if cross.cols() != model.train_count() {
        return Err(Error::DimensionMismatch {
            op: "decision_scores (training samples vs cross-gram columns)",
            left: model.train_count(),
            right: cross.cols(),
        });
    }
    let p = model.class_count();
    let values = (0..cross.rows())
        .flat_map(|t| model.classes.iter().map(move |m| m.decision(cross.row(t))))
        .collect();
    Scores::new(cross.rows(), p, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{projected_gradient_svm_dual, svm_dual_objective};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_gram(points: &[Vec<f64>]) -> GramMatrix {
        let n = points.len();
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                e[i * n + j] = points[i].iter().zip(&points[j]).map(|(a, b)| a * b).sum();
            }
        }
        for i in 0..n {
            for j in 0..i {
                e[i * n + j] = e[j * n + i];
            }
        }
        GramMatrix::from_entries(n, KernelKind::Dot, e).unwrap()
    }

    fn random_problem(seed: u64, n: usize) -> (GramMatrix, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut labels: Vec<i8> = (0..n).map(|i| if i < n / 2 { 1 } else { -1 }).collect();
        labels.shuffle(&mut rng);
        (linear_gram(&pts), labels)
    }

    fn kkt_ok(model: &SvmBinaryModel, gram: &GramMatrix, tol: f64) -> bool {
        (0..gram.n()).all(|i| {
            let yf = f64::from(model.labels[i]) * model.decision(gram.row(i));
            let a = model.alpha[i];
            if a <= 0.0 {
                yf >= 1.0 - tol
            } else if a >= model.c {
                yf <= 1.0 + tol
            } else {
                (yf - 1.0).abs() <= tol
            }
        })
    }

    #[test]
    fn two_point_closed_form() {
        let g = GramMatrix::from_entries(2, KernelKind::Dot, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let m = train_binary(&g, &[1, -1], &SmoConfig::default()).unwrap();
        assert!((m.alpha[0] - 0.5).abs() < 1e-9 && (m.alpha[1] - 0.5).abs() < 1e-9);
        assert!(m.bias.abs() < 1e-9);
        assert_eq!(m.support_indices(), vec![0, 1]);
    }

    #[test]
    fn same_sign_rejected() {
        let g = GramMatrix::from_entries(2, KernelKind::Dot, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(matches!(train_binary(&g, &[1, 1], &SmoConfig::default()), Err(Error::AllSameSign(1))));
        assert!(train_binary(&g, &[1, 0], &SmoConfig::default()).is_err());
        let bad_c = SmoConfig { c: 0.0, ..SmoConfig::default() };
        assert!(train_binary(&g, &[1, -1], &bad_c).is_err());
    }

    #[test]
    fn non_convergence_reports_gap() {
        let (g, y) = random_problem(3, 12);
        let cfg = SmoConfig { max_passes: 0, ..SmoConfig::default() };
        match train_binary(&g, &y, &cfg) {
            Err(Error::NotConverged { iterations: 0, gap, .. }) => assert!(gap > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        for seed in 0..10 {
            let (g, y) = random_problem(seed, 12);
            let m = train_binary(&g, &y, &SmoConfig::default()).unwrap();
            let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
            let reference = projected_gradient_svm_dual(g.entries(), &yf, 1.0, 200_000);
            let ours = dual_objective(&g, &y, &m.alpha);
            let theirs = svm_dual_objective(g.entries(), &yf, &reference);
            assert!((ours - theirs).abs() <= 1e-4 * theirs.abs(), "seed {seed}: {ours} vs {theirs}");
            assert!((ours - m.dual_objective).abs() < 1e-9);
            assert!(kkt_ok(&m, &g, 1e-3), "seed {seed}");
        }
    }

    #[test]
    fn ovr_reduces_to_binary_and_is_deterministic() {
        let (g, y) = random_problem(8, 10);
        let raw: Vec<u8> = y.iter().flat_map(|&v| [u8::from(v > 0), u8::from(v > 0)]).collect();
        let labels = MultiLabelSet::new(10, 2, raw).unwrap();
        let ovr = train_ovr(&g, &labels, &SmoConfig::default(), "").unwrap();
        let bin = train_binary(&g, &y, &SmoConfig::default()).unwrap();
        assert_eq!(ovr.classes[0], bin);
        assert_eq!(ovr.classes[1], bin);
        let single = MultiLabelSet::new(10, 1, y.iter().map(|&v| u8::from(v > 0)).collect()).unwrap();
        assert_eq!(train_ovr(&g, &single, &SmoConfig::default(), "").unwrap().classes[0], bin);
    }

    #[test]
    fn ovr_names_failing_class() {
        let (g, y) = random_problem(8, 10);
        let raw: Vec<u8> = y.iter().flat_map(|&v| [u8::from(v > 0), 0]).collect();
        let labels = MultiLabelSet::new(10, 2, raw).unwrap();
        let err = train_ovr(&g, &labels, &SmoConfig::default(), "").unwrap_err();
        assert!(matches!(err, Error::Class { class: 1, .. }), "{err}");
    }

    #[test]
    fn separable_three_class_ranking() {
        // Three well separated clusters in the plane.
        let centers = [(5.0, 0.0), (-5.0, 5.0), (0.0, -6.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = Vec::new();
        let mut raw = Vec::new();
        for i in 0..24 {
            let c = i % 3;
            pts.push(vec![
                centers[c].0 + rng.random_range(-0.5..0.5),
                centers[c].1 + rng.random_range(-0.5..0.5),
                1.0,
            ]);
            raw.extend((0..3).map(|j| u8::from(j == c)));
        }
        let g = linear_gram(&pts);
        let labels = MultiLabelSet::new(24, 3, raw).unwrap();
        let model = train_ovr(&g, &labels, &SmoConfig::default(), "fp").unwrap();
        let scores = decision_scores(&model, &CrossGram::from(g.clone())).unwrap();
        for j in 0..3 {
            let col = scores.column(j);
            let min_pos = (0..24).filter(|&i| labels.get(i, j)).map(|i| col[i]).fold(f64::INFINITY, f64::min);
            let max_neg = (0..24).filter(|&i| !labels.get(i, j)).map(|i| col[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(min_pos > max_neg, "class {j}");
        }
    }

    #[test]
    fn decision_score_edge_cases() {
        let (g, y) = random_problem(4, 12);
        let labels = MultiLabelSet::new(12, 1, y.iter().map(|&v| u8::from(v > 0)).collect()).unwrap();
        let model = train_ovr(&g, &labels, &SmoConfig::default(), "").unwrap();
        let zero = CrossGram::from_entries(1, 12, KernelKind::Dot, vec![0.0; 12]).unwrap();
        assert_eq!(decision_scores(&model, &zero).unwrap().get(0, 0), model.classes[0].bias);
        let bad = CrossGram::from_entries(1, 11, KernelKind::Dot, vec![0.0; 11]).unwrap();
        assert!(decision_scores(&model, &bad).is_err());

        // A free support vector sits on its margin.
        let m = &model.classes[0];
        if let Some(i) = (0..12).find(|&i| m.alpha[i] > 0.0 && m.alpha[i] < m.c) {
            let yf = f64::from(m.labels[i]) * m.decision(g.row(i));
            assert!((yf - 1.0).abs() <= 1e-3);
        }

        // Zero-coefficient training points do not influence scores.
        let mut row: Vec<f64> = g.row(0).to_vec();
        for (r, &a) in row.iter_mut().zip(&m.alpha) {
            if a == 0.0 {
                *r = 1e6;
            }
        }
        assert_eq!(m.decision(&row), m.decision(g.row(0)));
    }

    #[test]
    fn model_json_round_trip() {
        let (g, y) = random_problem(5, 12);
        let labels = MultiLabelSet::new(12, 1, y.iter().map(|&v| u8::from(v > 0)).collect()).unwrap();
        let model = train_ovr(&g, &labels, &SmoConfig::default(), "abc123").unwrap();
        let text = model.to_json();
        assert!(text.contains("\"fingerprint\": \"abc123\""));
        assert!(text.contains("\"kernel\": \"dot\""));
        let back = OvrSvmModel::from_json(&text).unwrap();
        assert_eq!(back, model);
        assert!(OvrSvmModel::from_json("{}").is_err());
        let wrong = text.replace(MODEL_FORMAT, "other/9");
        assert!(OvrSvmModel::from_json(&wrong).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn kkt_and_feasibility(seed in 0u64..10_000, c in 0.1f64..10.0) {
            let (g, y) = random_problem(seed, 12);
            let m = train_binary(&g, &y, &SmoConfig { c, ..SmoConfig::default() }).unwrap();
            let s: f64 = m.alpha.iter().zip(&y).map(|(a, &l)| a * f64::from(l)).sum();
            prop_assert!(s.abs() < 1e-6);
            prop_assert!(m.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            prop_assert!(kkt_ok(&m, &g, 1e-3));
        }
    }
}
