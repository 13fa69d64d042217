//! Polynomial neural networks without activation functions.
//!
//! The networks here compute a polynomial of their input. Each block raises
//! the polynomial order through Hadamard-product skip connections over
//! factorized parameters (the `ccp`, `ncp`, and `ncp-skip` recursions plus a
//! higher-order residual block), and blocks chain into a product whose total
//! order is the product of the per-block orders.
//!
//! Everything a claim rests on is checkable in-process:
//!
//! - [`oracle`] recovers the explicit dense coefficients of any low-dimensional
//!   polynomial map by least squares and probes realized degree along a ray,
//!   certifying that the factorized recursions expand to the polynomials they
//!   promise.
//! - [`autodiff`] is a small tape sufficient to train every block variant, with
//!   a central-difference gradient checker.
//! - [`train`] is a deterministic (bit-reproducible per seed) training loop
//!   with SGD-momentum and Adam.
//! - [`verify`] bundles the oracle-equivalence grid, gradient battery, and
//!   degree battery used by the CLI and the acceptance suite.
//!
//! With the `parallel` feature (default) the batch kernels run on rayon;
//! results are bit-identical to the sequential fallback.

pub mod autodiff;
pub mod blocks;
pub mod data;
mod error;
pub mod oracle;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
