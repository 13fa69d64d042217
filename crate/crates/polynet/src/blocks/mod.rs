//! Polynomial blocks and their composition.
//!
//! A block maps `R^d -> R^o` through a Hadamard-product recursion over
//! factorized parameters; with stabilizer and activation off it is an exact
//! polynomial of degree ≤ its order `N`. Four variants:
//!
//! - `Ccp`: coupled CP factorization,
//!   `x_n = (U_n^T z) * x_{n-1} + x_{n-1}`, `x_1 = U_1^T z`, out `C x_N + β`.
//! - `Ncp`: nested factorization,
//!   `x_n = (A_n^T z) * (S_n^T x_{n-1} + B_n^T b_n)`,
//!   `x_1 = (A_1^T z) * (B_1^T b_1)`, out `C x_N + β`.
//! - `NcpSkip`: the `Ncp` step plus an additive `+ x_{n-1}`.
//! - `HighOrderResidual`: a residual block raised to order `i`,
//!   `z + Cz + (Cz)*z + ... + (Cz)*z^{*(i-1)}` with one shared square `C`.
//!
//! [`ProductNet`] chains blocks so the realized degree is the product of the
//! per-block degrees.
//!
//! Evaluation is batch-first: inputs are `(m, d)` and every sample is a row.
//! Forward is pure given `(params, z)`; parameters only change between
//! passes.

mod checkpoint;
mod init;
mod tape_build;

pub use checkpoint::{load_checkpoint, read_checkpoint_bytes, save_checkpoint, write_checkpoint_bytes};
pub use init::{init_params, InitScheme};
pub use tape_build::{build_block_forward, build_product_forward};

use crate::{Error, Result, Tensor};
use serde::{Deserialize, Serialize};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Ccp,
    Ncp,
    NcpSkip,
    HighOrderResidual,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Ccp => "ccp",
            Variant::Ncp => "ncp",
            Variant::NcpSkip => "ncp-skip",
            Variant::HighOrderResidual => "high-order-residual",
        }
    }
}

/// Magnitude control on the order-≥2 term of each recursion step. Any mode
/// other than `None` makes the block non-polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stabilizer {
    #[default]
    None,
    /// Elementwise tanh of the higher-order term before it is added.
    Tanh,
    /// Per-sample standardization of the higher-order term.
    InstanceNorm,
}

/// Optional nonlinearity applied to a block's output (never inside the
/// recursion). Verification modes require `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(&self, t: Tensor) -> Tensor {
        match self {
            Activation::None => t,
            Activation::Relu => t.map(|x| if x > 0.0 { x } else { 0.0 }),
            Activation::Tanh => t.map(f64::tanh),
            Activation::Sigmoid => t.map(|x| 1.0 / (1.0 + (-x).exp())),
        }
    }
}

/// Architecture of one polynomial block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolyBlockSpec {
    pub variant: Variant,
    /// Polynomial order `N` (the expansion order for the residual variant).
    pub order: usize,
    /// Rank `k` of the factorization, shared across orders.
    pub rank: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    /// `ω`, the bias length of the NCP family. Defaults to `rank`.
    pub bias_dim: usize,
    #[serde(default)]
    pub stabilizer: Stabilizer,
    #[serde(default)]
    pub activation: Activation,
}

impl PolyBlockSpec {
    pub fn ccp(input_dim: usize, output_dim: usize, order: usize, rank: usize) -> Self {
        PolyBlockSpec {
            variant: Variant::Ccp,
            order,
            rank,
            input_dim,
            output_dim,
            bias_dim: rank,
            stabilizer: Stabilizer::None,
            activation: Activation::None,
        }
    }

    pub fn ncp(input_dim: usize, output_dim: usize, order: usize, rank: usize, bias_dim: usize) -> Self {
        PolyBlockSpec {
            variant: Variant::Ncp,
            order,
            rank,
            input_dim,
            output_dim,
            bias_dim,
            stabilizer: Stabilizer::None,
            activation: Activation::None,
        }
    }

    pub fn ncp_skip(input_dim: usize, output_dim: usize, order: usize, rank: usize, bias_dim: usize) -> Self {
        PolyBlockSpec {
            variant: Variant::NcpSkip,
            ..Self::ncp(input_dim, output_dim, order, rank, bias_dim)
        }
    }

    pub fn high_order_residual(dim: usize, order: usize) -> Self {
        PolyBlockSpec {
            variant: Variant::HighOrderResidual,
            order,
            rank: 1,
            input_dim: dim,
            output_dim: dim,
            bias_dim: 1,
            stabilizer: Stabilizer::None,
            activation: Activation::None,
        }
    }

    pub fn with_stabilizer(mut self, stabilizer: Stabilizer) -> Self {
        self.stabilizer = stabilizer;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 || self.rank < 1 || self.input_dim < 1 || self.output_dim < 1 {
            return Err(Error::InvalidArgument(format!(
                "block spec needs order, rank, input_dim, output_dim >= 1, got {self:?}"
            )));
        }
        if matches!(self.variant, Variant::Ncp | Variant::NcpSkip) && self.bias_dim < 1 {
            return Err(Error::InvalidArgument(
                "ncp-family block needs bias_dim >= 1".to_string(),
            ));
        }
        if self.variant == Variant::HighOrderResidual && self.input_dim != self.output_dim {
            return Err(Error::InvalidArgument(format!(
                "high-order-residual needs square C: input_dim {} != output_dim {}",
                self.input_dim, self.output_dim
            )));
        }
        Ok(())
    }

    /// Degree of the exact polynomial realized when stabilizer and
    /// activation are off.
    pub fn degree(&self) -> usize {
        self.order
    }

    /// Closed-form learnable element count.
    pub fn param_count(&self) -> usize {
        let (n, d, k, o, w) = (self.order, self.input_dim, self.rank, self.output_dim, self.bias_dim);
        match self.variant {
            Variant::Ccp => n * d * k + o * k + o,
            Variant::Ncp | Variant::NcpSkip => {
                n * d * k + (n - 1) * k * k + n * w * k + n * w + o * k + o
            }
            Variant::HighOrderResidual => d * d,
        }
    }
}

/// Element count of the unfactorized polynomial with the same `(d, o, N)`:
/// `o * (d + d^2 + ... + d^N) + o`.
pub fn dense_param_count(input_dim: usize, output_dim: usize, order: usize) -> u128 {
    let d = input_dim as u128;
    let mut total = 0u128;
    let mut power = 1u128;
    for _ in 1..=order {
        power *= d;
        total += power;
    }
    output_dim as u128 * total + output_dim as u128
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcpParams {
    /// `U_n`, each `(d, k)`, for `n = 1..=N`.
    pub u: Vec<Tensor>,
    /// `(o, k)`.
    pub c: Tensor,
    /// `(o)`.
    pub beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcpParams {
    /// `A_n`, each `(d, k)`, for `n = 1..=N`.
    pub a: Vec<Tensor>,
    /// `S_n`, each `(k, k)`, for `n = 2..=N` (index `n - 2`).
    pub s: Vec<Tensor>,
    /// `B_n`, each `(ω, k)`, for `n = 1..=N`.
    pub b: Vec<Tensor>,
    /// `b_n`, each `(ω)`, for `n = 1..=N`.
    pub bias: Vec<Tensor>,
    /// `(o, k)`.
    pub c: Tensor,
    /// `(o)`.
    pub beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualParams {
    /// Shared `(d, d)` transform.
    pub c: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams {
    Ccp(CcpParams),
    Ncp(NcpParams),
    NcpSkip(NcpParams),
    HighOrderResidual(ResidualParams),
}

impl BlockParams {
    pub fn element_count(&self) -> usize {
        self.named().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Tensors in a fixed documented order with `(name, tensor, bias_like)`.
    /// `bias_like` marks β and the `b_n` vectors, which are exempt from
    /// weight decay.
    pub fn named(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out = Vec::new();
        match self {
            BlockParams::Ccp(p) => {
                for (i, u) in p.u.iter().enumerate() {
                    out.push((format!("U{}", i + 1), u, false));
                }
                out.push(("C".to_string(), &p.c, false));
                out.push(("beta".to_string(), &p.beta, true));
            }
            BlockParams::Ncp(p) | BlockParams::NcpSkip(p) => {
                for (i, a) in p.a.iter().enumerate() {
                    out.push((format!("A{}", i + 1), a, false));
                }
                for (i, s) in p.s.iter().enumerate() {
                    out.push((format!("S{}", i + 2), s, false));
                }
                for (i, b) in p.b.iter().enumerate() {
                    out.push((format!("B{}", i + 1), b, false));
                }
                for (i, bias) in p.bias.iter().enumerate() {
                    out.push((format!("b{}", i + 1), bias, true));
                }
                out.push(("C".to_string(), &p.c, false));
                out.push(("beta".to_string(), &p.beta, true));
            }
            BlockParams::HighOrderResidual(p) => {
                out.push(("C".to_string(), &p.c, false));
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor, bool)> {
        let mut out = Vec::new();
        match self {
            BlockParams::Ccp(p) => {
                for (i, u) in p.u.iter_mut().enumerate() {
                    out.push((format!("U{}", i + 1), u, false));
                }
                out.push(("C".to_string(), &mut p.c, false));
                out.push(("beta".to_string(), &mut p.beta, true));
            }
            BlockParams::Ncp(p) | BlockParams::NcpSkip(p) => {
                for (i, a) in p.a.iter_mut().enumerate() {
                    out.push((format!("A{}", i + 1), a, false));
                }
                for (i, s) in p.s.iter_mut().enumerate() {
                    out.push((format!("S{}", i + 2), s, false));
                }
                for (i, b) in p.b.iter_mut().enumerate() {
                    out.push((format!("B{}", i + 1), b, false));
                }
                for (i, bias) in p.bias.iter_mut().enumerate() {
                    out.push((format!("b{}", i + 1), bias, true));
                }
                out.push(("C".to_string(), &mut p.c, false));
                out.push(("beta".to_string(), &mut p.beta, true));
            }
            BlockParams::HighOrderResidual(p) => {
                out.push(("C".to_string(), &mut p.c, false));
            }
        }
        out
    }

    fn variant(&self) -> Variant {
        match self {
            BlockParams::Ccp(_) => Variant::Ccp,
            BlockParams::Ncp(_) => Variant::Ncp,
            BlockParams::NcpSkip(_) => Variant::NcpSkip,
            BlockParams::HighOrderResidual(_) => Variant::HighOrderResidual,
        }
    }
}

/// Shape check of every tensor against the spec.
pub fn params_match_spec(spec: &PolyBlockSpec, params: &BlockParams) -> Result<()> {
    spec.validate()?;
    if params.variant() != spec.variant {
        return Err(Error::InvalidArgument(format!(
            "params are {:?} but spec wants {:?}",
            params.variant(),
            spec.variant
        )));
    }
    let bad = |what: &str, got: &[usize], want: &[usize]| {
        Err(Error::shape(
            "params_match_spec",
            format!("{what}: got {got:?}, want {want:?}"),
        ))
    };
    let (n, d, k, o, w) = (spec.order, spec.input_dim, spec.rank, spec.output_dim, spec.bias_dim);
    match params {
        BlockParams::Ccp(p) => {
            if p.u.len() != n {
                return Err(Error::InvalidArgument(format!("need {n} U factors, got {}", p.u.len())));
            }
            for u in &p.u {
                if u.shape() != [d, k] {
                    return bad("U", u.shape(), &[d, k]);
                }
            }
            if p.c.shape() != [o, k] {
                return bad("C", p.c.shape(), &[o, k]);
            }
            if p.beta.shape() != [o] {
                return bad("beta", p.beta.shape(), &[o]);
            }
        }
        BlockParams::Ncp(p) | BlockParams::NcpSkip(p) => {
            if p.a.len() != n || p.s.len() != n - 1 || p.b.len() != n || p.bias.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "need {n} A/B/b factors and {} S factors, got {}/{}/{}/{}",
                    n - 1,
                    p.a.len(),
                    p.b.len(),
                    p.bias.len(),
                    p.s.len()
                )));
            }
            for a in &p.a {
                if a.shape() != [d, k] {
                    return bad("A", a.shape(), &[d, k]);
                }
            }
            for s in &p.s {
                if s.shape() != [k, k] {
                    return bad("S", s.shape(), &[k, k]);
                }
            }
            for b in &p.b {
                if b.shape() != [w, k] {
                    return bad("B", b.shape(), &[w, k]);
                }
            }
            for bias in &p.bias {
                if bias.shape() != [w] {
                    return bad("b", bias.shape(), &[w]);
                }
            }
            if p.c.shape() != [o, k] {
                return bad("C", p.c.shape(), &[o, k]);
            }
            if p.beta.shape() != [o] {
                return bad("beta", p.beta.shape(), &[o]);
            }
        }
        BlockParams::HighOrderResidual(p) => {
            if p.c.shape() != [d, d] {
                return bad("C", p.c.shape(), &[d, d]);
            }
        }
    }
    Ok(())
}

pub fn apply_stabilizer(term: &Tensor, mode: Stabilizer) -> Result<Tensor> {
    match mode {
        Stabilizer::None => Ok(term.clone()),
        Stabilizer::Tanh => Ok(term.map(f64::tanh)),
        Stabilizer::InstanceNorm => term.instance_norm_rows(INSTANCE_NORM_EPS),
    }
}

/// CCP recursion over a `(m, d)` batch.
pub fn forward_ccp(p: &CcpParams, z: &Tensor, stabilizer: Stabilizer) -> Result<Tensor> {
    let mut x = z.matmul(&p.u[0])?;
    for u in &p.u[1..] {
        let t = z.matmul(u)?.hadamard(&x)?;
        let t = apply_stabilizer(&t, stabilizer)?;
        x = t.add(&x)?;
    }
    x.matmul(&p.c.transpose()?)?.broadcast_add_row(&p.beta)
}

/// NCP recursion (`skip` adds the `+ x_{n-1}` term) over a `(m, d)` batch.
pub fn forward_ncp(p: &NcpParams, z: &Tensor, stabilizer: Stabilizer, skip: bool) -> Result<Tensor> {
    let w = p.bias[0].len();
    let btb = |n: usize| -> Result<Tensor> {
        let row = p.bias[n].reshape(&[1, w])?.matmul(&p.b[n])?;
        let k = row.len();
        row.reshape(&[k])
    };
    let mut x = z.matmul(&p.a[0])?.mul_row(&btb(0)?)?;
    for n in 1..p.a.len() {
        let inner = x.matmul(&p.s[n - 1])?.broadcast_add_row(&btb(n)?)?;
        let t = z.matmul(&p.a[n])?.hadamard(&inner)?;
        let t = apply_stabilizer(&t, stabilizer)?;
        x = if skip { t.add(&x)? } else { t };
    }
    x.matmul(&p.c.transpose()?)?.broadcast_add_row(&p.beta)
}

/// Higher-order residual step over a `(m, d)` batch:
/// `z + Cz + (Cz)*z + ... + (Cz)*z^{*(order-1)}`.
pub fn forward_high_order_residual(
    p: &ResidualParams,
    z: &Tensor,
    order: usize,
    stabilizer: Stabilizer,
) -> Result<Tensor> {
    if order < 1 {
        return Err(Error::InvalidArgument("order must be >= 1".to_string()));
    }
    let cz = z.matmul(&p.c.transpose()?)?;
    let mut acc = z.add(&cz)?;
    let mut term = cz;
    for _ in 2..=order {
        term = term.hadamard(z)?;
        acc = acc.add(&apply_stabilizer(&term, stabilizer)?)?;
    }
    Ok(acc)
}

/// One polynomial block: spec plus matching parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    spec: PolyBlockSpec,
    params: BlockParams,
}

impl Block {
    pub fn new(spec: PolyBlockSpec, params: BlockParams) -> Result<Self> {
        params_match_spec(&spec, &params)?;
        Ok(Block { spec, params })
    }

    /// Seeded construction via [`init_params`].
    pub fn init(spec: PolyBlockSpec, seed: u64, scheme: InitScheme) -> Result<Self> {
        let params = init_params(&spec, seed, scheme)?;
        Ok(Block { spec, params })
    }

    pub fn spec(&self) -> &PolyBlockSpec {
        &self.spec
    }

    pub fn params(&self) -> &BlockParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BlockParams {
        &mut self.params
    }

    /// Batch forward: `(m, input_dim)` to `(m, output_dim)`, including the
    /// spec's stabilizer and post-block activation.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        if z.rank() != 2 || z.cols() != self.spec.input_dim {
            return Err(Error::shape(
                "block forward",
                format!("input {:?}, block wants (m, {})", z.shape(), self.spec.input_dim),
            ));
        }
        let out = match &self.params {
            BlockParams::Ccp(p) => forward_ccp(p, z, self.spec.stabilizer)?,
            BlockParams::Ncp(p) => forward_ncp(p, z, self.spec.stabilizer, false)?,
            BlockParams::NcpSkip(p) => forward_ncp(p, z, self.spec.stabilizer, true)?,
            BlockParams::HighOrderResidual(p) => {
                forward_high_order_residual(p, z, self.spec.order, self.spec.stabilizer)?
            }
        };
        Ok(self.spec.activation.apply(out))
    }

    /// Single-sample forward: `(input_dim)` to `(output_dim)`.
    pub fn forward_vec(&self, z: &Tensor) -> Result<Tensor> {
        let batch = z.reshape(&[1, z.len()])?;
        let out = self.forward(&batch)?;
        let o = out.len();
        out.reshape(&[o])
    }
}

/// Ordered chain of blocks; the output of block `i` feeds block `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductNet {
    blocks: Vec<Block>,
}

impl ProductNet {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("ProductNet needs at least one block".to_string()));
        }
        for pair in blocks.windows(2) {
            if pair[0].spec.output_dim != pair[1].spec.input_dim {
                return Err(Error::shape(
                    "ProductNet::new",
                    format!(
                        "block output_dim {} feeds block input_dim {}",
                        pair[0].spec.output_dim, pair[1].spec.input_dim
                    ),
                ));
            }
        }
        Ok(ProductNet { blocks })
    }

    pub fn single(block: Block) -> Self {
        ProductNet { blocks: vec![block] }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().unwrap().spec.output_dim
    }

    /// Product of per-block degrees: the degree this chain realizes when all
    /// stabilizers and activations are off.
    pub fn total_degree(&self) -> usize {
        self.blocks.iter().map(|b| b.spec.degree()).product()
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.spec.param_count()).sum()
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let mut x = self.blocks[0].forward(z)?;
        for block in &self.blocks[1..] {
            x = block.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_vec(&self, z: &Tensor) -> Result<Tensor> {
        let batch = z.reshape(&[1, z.len()])?;
        let out = self.forward(&batch)?;
        let o = out.len();
        out.reshape(&[o])
    }

    /// Flat parameter list, block by block, names like `block0.U1`.
    pub fn named_params(&self) -> Vec<(String, &Tensor, bool)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                b.params
                    .named()
                    .into_iter()
                    .map(move |(name, t, bias)| (format!("block{i}.{name}"), t, bias))
            })
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor, bool)> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| {
                b.params
                    .named_mut()
                    .into_iter()
                    .map(move |(name, t, bias)| (format!("block{i}.{name}"), t, bias))
            })
            .collect()
    }

    /// Global L2 norm over every parameter element.
    pub fn param_norm(&self) -> f64 {
        self.named_params()
            .iter()
            .map(|(_, t, _)| t.data().iter().map(|&x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// The net as a vector-to-vector map, for the oracle.
    pub fn as_vec_fn(&self) -> impl Fn(&Tensor) -> Result<Tensor> + '_ {
        move |z| self.forward_vec(z)
    }
}
