//! Seeded parameter initialization.

use super::{BlockParams, CcpParams, NcpParams, PolyBlockSpec, ResidualParams, Variant};
use crate::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How [`init_params`] fills each tensor. Factor matrices always draw
/// i.i.d. normal with standard deviation `rank^(-1/2)` unless zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// Factors normal, β and b_n zero. Note this makes initial NCP-family
    /// outputs equal β (every x_n carries a b factor); prefer `ones-bias`
    /// when training those variants.
    #[default]
    Default,
    /// Everything zero: the block computes β everywhere.
    Zeros,
    /// Like `default` but b_n = 1, so NCP-family blocks start non-degenerate.
    OnesBias,
    /// Every tensor (β and b_n included) drawn normal. Used by the
    /// verification batteries, which need generic parameters.
    Generic,
}

impl InitScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitScheme::Default => "default",
            InitScheme::Zeros => "zeros",
            InitScheme::OnesBias => "ones-bias",
            InitScheme::Generic => "generic",
        }
    }
}

/// One standard normal via Box-Muller (second value discarded, so draws are
/// reproducible element by element).
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], sd: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| sd * normal(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data consistent by construction")
}

/// Deterministic parameters for a block spec: same `(spec, seed, scheme)`
/// gives bit-identical tensors. Tensors are drawn in the documented
/// parameter order.
pub fn init_params(spec: &PolyBlockSpec, seed: u64, scheme: InitScheme) -> Result<BlockParams> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = 1.0 / (spec.rank as f64).sqrt();
    let (n, d, k, o, w) = (spec.order, spec.input_dim, spec.rank, spec.output_dim, spec.bias_dim);

    let factor = |rng: &mut ChaCha8Rng, shape: &[usize]| match scheme {
        InitScheme::Zeros => Tensor::zeros(shape),
        _ => normal_tensor(rng, shape, sd),
    };
    let bias_vec = |rng: &mut ChaCha8Rng, shape: &[usize]| match scheme {
        InitScheme::Default | InitScheme::Zeros => Tensor::zeros(shape),
        InitScheme::OnesBias => Tensor::ones(shape),
        InitScheme::Generic => normal_tensor(rng, shape, sd),
    };
    let beta_vec = |rng: &mut ChaCha8Rng, shape: &[usize]| match scheme {
        InitScheme::Generic => normal_tensor(rng, shape, sd),
        _ => Tensor::zeros(shape),
    };

    Ok(match spec.variant {
        Variant::Ccp => {
            let u = (0..n).map(|_| factor(&mut rng, &[d, k])).collect();
            let c = factor(&mut rng, &[o, k]);
            let beta = beta_vec(&mut rng, &[o]);
            BlockParams::Ccp(CcpParams { u, c, beta })
        }
        Variant::Ncp | Variant::NcpSkip => {
            let a = (0..n).map(|_| factor(&mut rng, &[d, k])).collect();
            let s = (0..n - 1).map(|_| factor(&mut rng, &[k, k])).collect();
            let b = (0..n).map(|_| factor(&mut rng, &[w, k])).collect();
            let bias = (0..n).map(|_| bias_vec(&mut rng, &[w])).collect();
            let c = factor(&mut rng, &[o, k]);
            let beta = beta_vec(&mut rng, &[o]);
            let p = NcpParams { a, s, b, bias, c, beta };
            if spec.variant == Variant::Ncp {
                BlockParams::Ncp(p)
            } else {
                BlockParams::NcpSkip(p)
            }
        }
        Variant::HighOrderResidual => {
            // No rank here; scale by the row length instead.
            let sd = 1.0 / (d as f64).sqrt();
            let c = match scheme {
                InitScheme::Zeros => Tensor::zeros(&[d, d]),
                _ => normal_tensor(&mut rng, &[d, d], sd),
            };
            BlockParams::HighOrderResidual(ResidualParams { c })
        }
    })
}
