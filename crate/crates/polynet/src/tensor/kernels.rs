//! Batch kernels behind the `Tensor` ops.
//!
//! Every kernel has a sequential form; with the `parallel` feature a rayon
//! form exists as well. Work is split so that each output element is computed
//! by exactly the same floating-point expression in both forms, which makes
//! the parallel results bit-identical to the sequential ones (asserted by
//! tests). `Tensor` dispatches on the feature plus a size threshold.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below these sizes the rayon fork/join overhead dominates.
pub(crate) const PAR_MATMUL_FLOPS: usize = 1 << 16;
pub(crate) const PAR_ELEMWISE_LEN: usize = 1 << 16;

fn matmul_row(a_row: &[f64], b: &[f64], p: usize, out_row: &mut [f64]) {
    out_row.fill(0.0);
    for (k, &aik) in a_row.iter().enumerate() {
        let b_row = &b[k * p..(k + 1) * p];
        for (o, &bkj) in out_row.iter_mut().zip(b_row) {
            *o += aik * bkj;
        }
    }
}

/// `(m, n) x (n, p)` row-major matrix product, one output row at a time.
pub fn matmul_seq(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * p);
    let mut out = vec![0.0; m * p];
    for (i, out_row) in out.chunks_mut(p).enumerate() {
        matmul_row(&a[i * n..(i + 1) * n], b, p, out_row);
    }
    out
}

/// Parallel over output rows; each row is computed exactly as in
/// [`matmul_seq`].
#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), n * p);
    let mut out = vec![0.0; m * p];
    out.par_chunks_mut(p).enumerate().for_each(|(i, out_row)| {
        matmul_row(&a[i * n..(i + 1) * n], b, p, out_row);
    });
    out
}

pub(crate) fn matmul_dispatch(a: &[f64], b: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if m * n * p >= PAR_MATMUL_FLOPS {
        return matmul_par(a, b, m, n, p);
    }
    matmul_seq(a, b, m, n, p)
}

/// Elementwise binary map.
pub fn zip_map_seq(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(feature = "parallel")]
pub fn zip_map_par(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    a.par_iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn zip_map_dispatch(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64 + Sync) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if a.len() >= PAR_ELEMWISE_LEN {
        return zip_map_par(a, b, f);
    }
    zip_map_seq(a, b, f)
}

/// Elementwise unary map.
pub fn map_seq(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.iter().map(|&x| f(x)).collect()
}

#[cfg(feature = "parallel")]
pub fn map_par(a: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    a.par_iter().map(|&x| f(x)).collect()
}

pub(crate) fn map_dispatch(a: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    if a.len() >= PAR_ELEMWISE_LEN {
        return map_par(a, f);
    }
    map_seq(a, f)
}
