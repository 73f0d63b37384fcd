use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
///
/// Any rank can be stored and serialized; the graph operations work on
/// rank-2 arrays (matrices), with row vectors written as `1 x n`.
#[derive(Clone, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("array", format!("zero-sized dimension in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(
                "array",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Array { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        assert!(n > 0, "row vector must be nonempty");
        Array { shape: vec![1, n], data }
    }

    pub fn scalar(v: f64) -> Self {
        Array { shape: vec![1, 1], data: vec![v] }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, v: f64) -> Self {
        assert!(rows > 0 && cols > 0, "array dimensions must be positive");
        Array { shape: vec![rows, cols], data: vec![v; rows * cols] }
    }

    pub fn zeros_like(other: &Array) -> Self {
        Array { shape: other.shape.clone(), data: vec![0.0; other.data.len()] }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a `1 x 1` array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
        debug_assert_eq!(self.shape, other.shape);
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Array> {
        Array::new(shape, self.data.clone())
    }

    pub fn transpose(&self) -> Array {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Array { shape: vec![c, r], data: out }
    }

    /// Plain `self @ other` for rank-2 operands with matching inner dimension.
    pub fn matmul(&self, other: &Array) -> Array {
        let (n, k) = (self.rows(), self.cols());
        let m = other.cols();
        debug_assert_eq!(k, other.rows());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Array { shape: vec![n, m], data: out }
    }

    /// `self @ other^T`.
    pub fn matmul_nt(&self, other: &Array) -> Array {
        let (n, k) = (self.rows(), self.cols());
        let m = other.rows();
        debug_assert_eq!(k, other.cols());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b = &other.data[j * k..(j + 1) * k];
                out[i * m + j] = dot(a, b);
            }
        }
        Array { shape: vec![n, m], data: out }
    }

    /// `self^T @ other`.
    pub fn matmul_tn(&self, other: &Array) -> Array {
        let (k, n) = (self.rows(), self.cols());
        let m = other.cols();
        debug_assert_eq!(k, other.rows());
        let mut out = vec![0.0; n * m];
        for p in 0..k {
            let arow = &self.data[p * n..(p + 1) * n];
            let brow = &other.data[p * m..(p + 1) * m];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Array { shape: vec![n, m], data: out }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl fmt::Debug for Array {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Array{:?}{:?}", self.shape, self.data)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
