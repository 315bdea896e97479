//! Dense vector and matrix primitives.
//!
//! Every reduction accumulates in `f64` over ascending indices, so results do
//! not depend on how callers schedule work across threads.

use std::ops::{Deref, Index};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Vector(iter.into_iter().collect())
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::DimensionMismatch {
                op: "matrix construction (rows*cols vs data length)",
                left: rows.saturating_mul(cols),
                right: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        self.data.iter_mut().for_each(|v| *v = f(*v));
    }

    pub fn frobenius_norm(&self) -> f64 {
        l2_norm(&self.data)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

/// `Wᵀx` for `W` of shape `[in × out]`: `out[j] = Σ_i W[i,j]·x[i]`.
pub fn matvec_transposed(w: &Matrix, x: &[f64]) -> Result<Vector> {
    if w.rows != x.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec_transposed (W rows vs x length)",
            left: w.rows,
            right: x.len(),
        });
    }
    let mut out = vec![0.0f64; w.cols];
    for (i, &xi) in x.iter().enumerate() {
        for (acc, &wij) in out.iter_mut().zip(w.row(i)) {
            *acc += wij * xi;
        }
    }
    Ok(Vector(out))
}

/// `W·v` for `W` of shape `[in × out]`: `out[i] = Σ_j W[i,j]·v[j]`.
pub fn matvec(w: &Matrix, v: &[f64]) -> Result<Vector> {
    if w.cols != v.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec (W cols vs v length)",
            left: w.cols,
            right: v.len(),
        });
    }
    Ok((0..w.rows)
        .map(|i| w.row(i).iter().zip(v).fold(0.0, |acc, (a, b)| acc + a * b))
        .collect())
}

pub fn dot(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            op: "dot",
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(dot_unchecked(x, y))
}

// Multiplication commutes bitwise, so dot(x, y) == dot(y, x) exactly.
pub(crate) fn dot_unchecked(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).fold(0.0, |acc, (a, b)| acc + a * b)
}

pub fn l2_norm(x: &[f64]) -> f64 {
    dot_unchecked(x, x).sqrt()
}

/// `x / ‖x‖₂`; the zero vector maps to itself.
pub fn normalize(x: &[f64]) -> Vector {
    let norm = l2_norm(x);
    if norm > 0.0 {
        x.iter().map(|v| v / norm).collect()
    } else {
        Vector::zeros(x.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_wtx(rows: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        let cols = rows[0].len();
        let mut out = Vec::with_capacity(cols);
        for j in 0..cols {
            let mut s = 0.0;
            for (i, row) in rows.iter().enumerate() {
                s += row[j] * x[i];
            }
            out.push(s);
        }
        out
    }

    #[test]
    fn matvec_transposed_identity_and_hand_cases() {
        let id = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matvec_transposed(&id, &[3.0, -1.0]).unwrap().as_slice(), &[3.0, -1.0]);
        let w = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matvec_transposed(&w, &[1.0, 1.0]).unwrap().as_slice(), &[4.0, 6.0]);
    }

    #[test]
    fn matvec_transposed_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Matrix::new(5, 3, rows.concat()).unwrap();
        let got = matvec_transposed(&w, &x).unwrap();
        for (g, r) in got.iter().zip(reference_wtx(&rows, &x)) {
            assert!((g - r).abs() <= 1e-15 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn matvec_transposed_rejects_mismatch() {
        let w = Matrix::zeros(3, 2);
        let err = matvec_transposed(&w, &[1.0, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn matvec_is_adjoint_of_transposed() {
        let w = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = [1.0, -1.0, 2.0];
        assert_eq!(matvec(&w, &v).unwrap().as_slice(), &[5.0, 11.0]);
        assert!(matvec(&w, &[1.0]).is_err());
    }

    #[test]
    fn dot_hand_cases() {
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        assert!(dot(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn norm_and_normalize() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[0.0, 0.0]), 0.0);
        let n = normalize(&[3.0, 4.0]);
        assert!((n[0] - 0.6).abs() < 1e-15 && (n[1] - 0.8).abs() < 1e-15);
        assert_eq!(normalize(&[0.0, 0.0]).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn matrix_rejects_bad_shape_and_nan() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_yields_unit_norm(x in prop::collection::vec(-1e3f64..1e3, 1..64)) {
            prop_assume!(x.iter().any(|v| v.abs() > 1e-6));
            prop_assert!((l2_norm(&normalize(&x)) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn dot_is_bitwise_symmetric(
            pair in (1usize..48).prop_flat_map(|n| (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n),
            ))
        ) {
            let (x, y) = pair;
            prop_assert_eq!(dot(&x, &y).unwrap().to_bits(), dot(&y, &x).unwrap().to_bits());
            prop_assert!(dot(&x, &x).unwrap() >= 0.0);
        }

        #[test]
        fn norm_matches_reference_sum_of_squares(x in prop::collection::vec(-1e2f64..1e2, 1..32)) {
            let mut s = 0.0;
            for v in &x { s += v * v; }
            prop_assert!((l2_norm(&x) - s.sqrt()).abs() <= 1e-12 * (1.0 + s.sqrt()));
        }
    }
}
