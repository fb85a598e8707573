//! Dense f64 matrix kernels, activations, initialization and the
//! finite-difference gradient oracle.
//!
//! Everything here is deterministic: dot products sum left to right, and
//! all randomness comes from an explicitly seeded ChaCha8 stream, so
//! identical inputs produce bit-identical outputs on every platform.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Row-major dense matrix of f64. The single numeric carrier for
/// embeddings, weights, activations and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        DenseMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must equal rows*cols");
        DenseMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty());
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        DenseMatrix { rows: rows.len(), cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &DenseMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Matrix product with a fixed summation order: each output entry is
    /// a dot product accumulated left to right over k.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.at(i, k) * other.at(k, j);
                }
                *out.at_mut(i, j) = acc;
            }
        }
        Ok(out)
    }

    /// Matrix-vector product, same summation contract as `matmul`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::Shape(format!(
                "matvec: {}x{} * {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for k in 0..self.cols {
                acc += row[k] * v[k];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `W^T v` without materializing the transpose.
    pub fn matvec_transposed(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.rows != v.len() {
            return Err(Error::Shape(format!(
                "matvec_transposed: ({}x{})^T * {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for k in 0..self.rows {
            let row = self.row(k);
            let vk = v[k];
            for j in 0..self.cols {
                out[j] += vk * row[j];
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.at_mut(j, i) = self.at(i, j);
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &DenseMatrix, scale: f64) {
        assert!(self.same_shape(other), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    /// Rank-1 accumulation: `self += a * b^T` (a along rows, b along cols).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        assert_eq!(self.rows, a.len());
        assert_eq!(self.cols, b.len());
        for i in 0..self.rows {
            let ai = a[i];
            let row = self.row_mut(i);
            for j in 0..b.len() {
                row[j] += ai * b[j];
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Left-to-right dot product of two slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Elementwise activation over a whole matrix.
pub fn activate(kind: Activation, x: &DenseMatrix) -> DenseMatrix {
    x.map(|v| kind.apply(v))
}

pub fn activate_vec(kind: Activation, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| kind.apply(v)).collect()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of empty vector");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    XavierUniform,
    Zeros,
}

/// Deterministic RNG used everywhere in the crate. ChaCha8 keyed from a
/// 64-bit seed gives the same stream on all platforms.
pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a component sub-seed from the master seed, so adding a new
/// consumer of randomness does not shift any other component's stream.
pub fn sub_seed(master: u64, component: &str) -> u64 {
    master ^ fnv1a64(component.as_bytes())
}

/// FNV-1a, 64-bit. Used for sub-seed derivation and content hashing.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn init_matrix(rows: usize, cols: usize, scheme: InitScheme, rng: &mut Rng) -> DenseMatrix {
    match scheme {
        InitScheme::Zeros => DenseMatrix::zeros(rows, cols),
        InitScheme::XavierUniform => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = DenseMatrix::zeros(rows, cols);
            for v in m.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            m
        }
    }
}

/// Central-difference gradient of a scalar function of a matrix.
/// The oracle every analytic gradient in this crate is checked against.
pub fn finite_diff_grad(
    f: &mut dyn FnMut(&DenseMatrix) -> f64,
    params: &DenseMatrix,
    eps: f64,
) -> Result<DenseMatrix> {
    assert!(eps > 0.0);
    let mut grad = DenseMatrix::zeros(params.rows(), params.cols());
    let mut p = params.clone();
    for i in 0..p.len() {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + eps;
        let fp = f(&p);
        p.data_mut()[i] = orig - eps;
        let fm = f(&p);
        p.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_grad: non-finite function value at coordinate {i}"
            )));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}

/// Relative error between an analytic and a numeric gradient over
/// coordinates where the analytic value is meaningfully nonzero.
pub fn max_rel_error(analytic: &DenseMatrix, numeric: &DenseMatrix, threshold: f64) -> f64 {
    assert!(analytic.same_shape(numeric));
    let mut worst = 0.0f64;
    for (a, n) in analytic.data().iter().zip(numeric.data().iter()) {
        if a.abs() > threshold {
            let rel = (a - n).abs() / a.abs().max(n.abs());
            worst = worst.max(rel);
        }
    }
    worst
}
