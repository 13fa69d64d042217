//! Dense row-major tensors over `f64`.
//!
//! The single numeric carrier for the whole crate. All arithmetic is
//! shape-checked; there is no implicit broadcasting. The one sanctioned
//! broadcast is the leading batch dimension, and it is spelled out in the op
//! names ([`Tensor::broadcast_add_row`], [`Tensor::mul_row`]): a `(m, n)`
//! batch combined with a length-`n` row applied to every sample.
//!
//! Tensors are immutable values in normal use (ops return new tensors), so
//! they are safe to share across threads; [`Tensor::data_mut`] exists for the
//! optimizer, which rewrites parameters between passes. Every op is
//! deterministic: identical inputs give bit-identical outputs, whether or not
//! the `parallel` feature routes a kernel through rayon.

pub mod kernels;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from an explicit shape and row-major data.
    ///
    /// Extents must be positive, except the leading (batch) dimension may be
    /// 0 to represent an empty batch.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().skip(1).any(|&e| e == 0) || shape.is_empty() {
            return Err(Error::shape("new", format!("zero extent in {shape:?}")));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} wants {expect} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-1 tensor from a flat vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Rank-2 tensor from rows (all rows must have equal length).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if m == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::shape("from_rows", "empty or ragged rows".to_string()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Tensor {
            shape: vec![m, n],
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Value of a rank-2 tensor at `(row, col)`.
    pub fn at2(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.rank(), 2);
        let n = self.shape[1];
        &self.data[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> usize {
        debug_assert!(self.rank() >= 1);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: kernels::zip_map_dispatch(&self.data, &other.data, |a, b| a + b),
        })
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: kernels::zip_map_dispatch(&self.data, &other.data, |a, b| a - b),
        })
    }

    /// Hadamard (elementwise) product.
    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "hadamard")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: kernels::zip_map_dispatch(&self.data, &other.data, |a, b| a * b),
        })
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: kernels::map_dispatch(&self.data, |a| a * factor),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: kernels::map_dispatch(&self.data, f),
        }
    }

    /// Rank-2 matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("need rank-2 operands, got {:?} x {:?}", self.shape, other.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let (n2, p) = (other.shape[0], other.shape[1]);
        if n != n2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: vec![m, p],
            data: kernels::matmul_dispatch(&self.data, &other.data, m, n, p),
        })
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("need rank 2, got {:?}", self.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().skip(1).any(|&e| e == 0) || shape.is_empty() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Contiguous row range along the first axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if self.rank() < 1 || start >= end || end > self.shape[0] {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{end} of {:?}", self.shape),
            ));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        })
    }

    /// Rows by index along the first axis (repeats allowed).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() < 1 {
            return Err(Error::shape("gather_rows", "rank-0".to_string()));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {i} out of {}", self.shape[0]),
                ));
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// Stack along the first axis; trailing dims must agree.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no operands".to_string()))?;
        let inner_shape = &first.shape[1..];
        let mut rows = 0;
        for t in parts {
            if t.rank() != first.rank() || &t.shape[1..] != inner_shape {
                return Err(Error::shape(
                    "concat_rows",
                    format!("{:?} vs {:?}", first.shape, t.shape),
                ));
            }
            rows += t.shape[0];
        }
        let mut data = Vec::with_capacity(rows * inner_shape.iter().product::<usize>().max(1));
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Tensor::new(shape, data)
    }

    /// Khatri-Rao product: columnwise Kronecker of `(d1, k)` and `(d2, k)`,
    /// giving `(d1 * d2, k)`.
    pub fn khatri_rao(&self, other: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::shape(
                "khatri_rao",
                format!("need rank-2 operands, got {:?}, {:?}", self.shape, other.shape),
            ));
        }
        let (d1, k) = (self.shape[0], self.shape[1]);
        let (d2, k2) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::shape(
                "khatri_rao",
                format!("column counts differ: {k} vs {k2}"),
            ));
        }
        let mut data = vec![0.0; d1 * d2 * k];
        for i1 in 0..d1 {
            for i2 in 0..d2 {
                let out_row = i1 * d2 + i2;
                for j in 0..k {
                    data[out_row * k + j] = self.data[i1 * k + j] * other.data[i2 * k + j];
                }
            }
        }
        Tensor::new(vec![d1 * d2, k], data)
    }

    /// Contract mode `mode` (0-based) against a vector, dropping that mode.
    ///
    /// For a rank-2 tensor, `mode = 1` contracts columns: `W ×₁ v` in 0-based
    /// indexing is the matrix-vector product `W v`.
    pub fn mode_vec_product(&self, v: &Tensor, mode: usize) -> Result<Tensor> {
        if v.rank() != 1 {
            return Err(Error::shape("mode_vec_product", "v must be rank 1".to_string()));
        }
        if mode >= self.rank() {
            return Err(Error::shape(
                "mode_vec_product",
                format!("mode {mode} out of range for rank {}", self.rank()),
            ));
        }
        let extent = self.shape[mode];
        if extent != v.len() {
            return Err(Error::shape(
                "mode_vec_product",
                format!("mode {mode} extent {extent} vs vector length {}", v.len()),
            ));
        }
        let outer: usize = self.shape[..mode].iter().product();
        let inner: usize = self.shape[mode + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        for a in 0..outer {
            for b in 0..inner {
                let mut acc = 0.0;
                for (j, &vj) in v.data.iter().enumerate() {
                    acc += self.data[(a * extent + j) * inner + b] * vj;
                }
                data[a * inner + b] = acc;
            }
        }
        let mut shape: Vec<usize> = self.shape[..mode].to_vec();
        shape.extend_from_slice(&self.shape[mode + 1..]);
        if shape.is_empty() {
            shape.push(1); // full contraction leaves a scalar
            return Tensor::new(shape, data);
        }
        Tensor::new(shape, data)
    }

    /// Batch broadcast: add a length-`n` row to every row of `(m, n)`.
    pub fn broadcast_add_row(&self, row: &Tensor) -> Result<Tensor> {
        self.check_row_broadcast(row, "broadcast_add_row")?;
        let n = self.shape[1];
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(n) {
            for (x, &r) in chunk.iter_mut().zip(&row.data) {
                *x += r;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Batch broadcast: multiply every row of `(m, n)` by a length-`n` row.
    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        self.check_row_broadcast(row, "mul_row")?;
        let n = self.shape[1];
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(n) {
            for (x, &r) in chunk.iter_mut().zip(&row.data) {
                *x *= r;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    fn check_row_broadcast(&self, row: &Tensor, op: &'static str) -> Result<()> {
        if self.rank() != 2 || row.rank() != 1 || row.len() != self.shape[1] {
            return Err(Error::shape(
                op,
                format!("batch {:?} vs row {:?}", self.shape, row.shape),
            ));
        }
        Ok(())
    }

    /// Standardize each row of `(m, n)` to zero mean and unit (biased)
    /// variance, with `eps` inside the square root.
    pub fn instance_norm_rows(&self, eps: f64) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape(
                "instance_norm_rows",
                format!("need rank 2, got {:?}", self.shape),
            ));
        }
        let n = self.shape[1] as f64;
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.shape[0] {
            let row = self.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            out.extend(row.iter().map(|&v| (v - mean) * inv));
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Sum over the first axis of `(m, n)`, giving a length-`n` row.
    pub fn sum_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape("sum_rows", format!("need rank 2, got {:?}", self.shape)));
        }
        let n = self.shape[1];
        let mut out = vec![0.0; n];
        for chunk in self.data.chunks(n) {
            for (o, &x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        Ok(Tensor::from_vec(out))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Index of the max entry per row of a rank-2 tensor (first max wins).
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        if self.rank() != 2 {
            return Err(Error::shape("argmax_rows", format!("need rank 2, got {:?}", self.shape)));
        }
        let n = self.shape[1];
        Ok(self
            .data
            .chunks(n)
            .map(|row| {
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Bitwise equality (distinguishes -0.0 from 0.0; NaN equals NaN).
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
