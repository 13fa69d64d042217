//! Verification batteries: oracle-equivalence grid, gradient checks, degree
//! probes, and checkpoint validation. The CLI `verify` subcommand and the
//! acceptance suite both drive these.

use crate::autodiff::{grad_check, Tape, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::blocks::{
    build_product_forward, Block, InitScheme, PolyBlockSpec, ProductNet, Stabilizer, Variant,
};
use crate::oracle::{fit_dense_with, monomial_count, probe_degree, FitOptions, ProbedDegree};
use crate::train::LossKind;
use crate::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pointwise and fit tolerance for recursion-vs-dense equivalence.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct OracleGridConfig {
    pub variants: Vec<Variant>,
    pub dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub bias_dims: Vec<usize>,
    pub orders: Vec<usize>,
    pub seeds: Vec<u64>,
    pub tolerance: f64,
    pub holdout_points: usize,
}

impl Default for OracleGridConfig {
    fn default() -> Self {
        OracleGridConfig {
            variants: vec![
                Variant::Ccp,
                Variant::Ncp,
                Variant::NcpSkip,
                Variant::HighOrderResidual,
            ],
            dims: vec![1, 2, 3],
            ranks: vec![1, 2, 4],
            out_dims: vec![1, 2],
            bias_dims: vec![1, 2],
            orders: vec![1, 2, 3],
            seeds: (0..5).collect(),
            tolerance: EQUIVALENCE_TOLERANCE,
            holdout_points: 200,
        }
    }
}

impl OracleGridConfig {
    /// All block specs the grid covers. The rank/bias axes collapse where a
    /// variant has no such parameter, and the residual variant forces
    /// `o = d` (square C).
    pub fn specs(&self) -> Vec<PolyBlockSpec> {
        let mut specs = Vec::new();
        for &variant in &self.variants {
            for &d in &self.dims {
                for &n in &self.orders {
                    match variant {
                        Variant::Ccp => {
                            for &k in &self.ranks {
                                for &o in &self.out_dims {
                                    specs.push(PolyBlockSpec::ccp(d, o, n, k));
                                }
                            }
                        }
                        Variant::Ncp | Variant::NcpSkip => {
                            for &k in &self.ranks {
                                for &o in &self.out_dims {
                                    for &w in &self.bias_dims {
                                        specs.push(if variant == Variant::Ncp {
                                            PolyBlockSpec::ncp(d, o, n, k, w)
                                        } else {
                                            PolyBlockSpec::ncp_skip(d, o, n, k, w)
                                        });
                                    }
                                }
                            }
                        }
                        Variant::HighOrderResidual => {
                            specs.push(PolyBlockSpec::high_order_residual(d, n));
                        }
                    }
                }
            }
        }
        specs
    }
}

#[derive(Debug, Clone)]
pub struct OracleCaseResult {
    pub spec: PolyBlockSpec,
    pub seed: u64,
    pub fit_residual: f64,
    /// Max over held-out points of `|recursion - dense| / (1 + |dense|)`.
    pub max_pointwise: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct OracleGridOutcome {
    pub cases: Vec<OracleCaseResult>,
    pub max_fit_residual: f64,
    pub max_pointwise: f64,
    pub passed: bool,
}

/// Fit every grid instance with the dense oracle and compare the recursion
/// against the recovered polynomial on held-out points.
pub fn run_oracle_grid(cfg: &OracleGridConfig) -> Result<OracleGridOutcome> {
    let mut cases = Vec::new();
    let mut max_fit = 0.0_f64;
    let mut max_point = 0.0_f64;
    for spec in cfg.specs() {
        for &seed in &cfg.seeds {
            let block = Block::init(spec.clone(), seed, InitScheme::Generic)?;
            let d = spec.input_dim;
            let fit_opts = FitOptions {
                seed: seed ^ 0x5EED_5EED,
                ..FitOptions::default()
            };
            let (poly, report) =
                fit_dense_with(|z| block.forward_vec(z), d, spec.output_dim, spec.order, fit_opts)?;

            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9E37_79B9));
            let mut pointwise = 0.0_f64;
            for _ in 0..cfg.holdout_points {
                let z = Tensor::from_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect());
                let via_block = block.forward_vec(&z)?;
                let via_dense = poly.eval(&z)?;
                for (a, b) in via_block.data().iter().zip(via_dense.data()) {
                    pointwise = pointwise.max((a - b).abs() / (1.0 + b.abs()));
                }
            }
            let passed = report.residual < cfg.tolerance && pointwise < cfg.tolerance;
            max_fit = max_fit.max(report.residual);
            max_point = max_point.max(pointwise);
            cases.push(OracleCaseResult {
                spec: spec.clone(),
                seed,
                fit_residual: report.residual,
                max_pointwise: pointwise,
                passed,
            });
        }
    }
    Ok(OracleGridOutcome {
        passed: cases.iter().all(|c| c.passed),
        cases,
        max_fit_residual: max_fit,
        max_pointwise: max_point,
    })
}

#[derive(Debug, Clone)]
pub struct GradCaseResult {
    pub spec: PolyBlockSpec,
    pub loss: LossKind,
    pub seed: u64,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradBatteryOutcome {
    pub cases: Vec<GradCaseResult>,
    pub max_rel_err: f64,
    /// Largest analytic gradient entry seen; guards against the battery
    /// passing vacuously on all-zero gradients.
    pub max_grad_magnitude: f64,
    pub passed: bool,
}

/// Seeded (variant, shape) instances checked analytic-vs-central-difference.
/// Covers all four variants, both losses, and the stabilizer modes.
pub fn run_grad_battery(instances: usize, base_seed: u64) -> Result<GradBatteryOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let mut cases = Vec::with_capacity(instances);
    let mut worst = 0.0_f64;
    let mut max_grad = 0.0_f64;
    for i in 0..instances {
        let d = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=4);
        let o = rng.gen_range(1..=3);
        let w = rng.gen_range(1..=3);
        let n = rng.gen_range(1..=3);
        let stabilizer = match i % 5 {
            3 => Stabilizer::Tanh,
            4 => Stabilizer::InstanceNorm,
            _ => Stabilizer::None,
        };
        let spec = match i % 4 {
            0 => PolyBlockSpec::ccp(d, o, n, k),
            1 => PolyBlockSpec::ncp(d, o, n, k, w),
            2 => PolyBlockSpec::ncp_skip(d, o, n, k, w),
            _ => PolyBlockSpec::high_order_residual(d, n),
        }
        .with_stabilizer(stabilizer);
        let loss = if i % 2 == 0 { LossKind::Mse } else { LossKind::SoftmaxCrossEntropy };

        let seed = rng.gen::<u64>();
        let block = Block::init(spec.clone(), seed, InitScheme::Generic)?;
        let net = ProductNet::single(block);
        let rows = 3;
        let features = Tensor::new(
            vec![rows, d],
            (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )?;
        let out_dim = net.output_dim();
        let targets = match loss {
            LossKind::Mse => Tensor::new(
                vec![rows, out_dim],
                (0..rows * out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )?,
            LossKind::SoftmaxCrossEntropy => {
                let mut t = Tensor::zeros(&[rows, out_dim]);
                for r in 0..rows {
                    let c = rng.gen_range(0..out_dim);
                    t.data_mut()[r * out_dim + c] = 1.0;
                }
                t
            }
        };

        let params: Vec<Tensor> = net.named_params().iter().map(|(_, t, _)| (*t).clone()).collect();
        let net_ref = &net;
        let features_ref = &features;
        let targets_ref = &targets;
        let build = move |tape: &mut Tape, ids: &[crate::autodiff::NodeId]| {
            // Rebuild the net around the supplied parameter nodes.
            let zi = tape.leaf(features_ref.clone());
            let block = net_ref.blocks()[0].clone();
            let out = crate::blocks::build_block_forward(tape, &block, ids, zi)?;
            let ti = tape.leaf(targets_ref.clone());
            match loss {
                LossKind::Mse => tape.mse_loss(out, ti),
                LossKind::SoftmaxCrossEntropy => tape.softmax_cross_entropy(out, ti),
            }
        };
        // Record gradient magnitudes so a vacuous all-zero pass is visible.
        {
            let mut tape = Tape::new();
            let ids: Vec<_> = params.iter().map(|t| tape.var(t.clone())).collect();
            let loss_node = build(&mut tape, &ids)?;
            let mut grads = tape.backward(loss_node)?;
            for (&id, p) in ids.iter().zip(&params) {
                max_grad = max_grad.max(grads.take_or_zeros(id, p.shape()).max_abs());
            }
        }
        let report = grad_check(&build, &params, DEFAULT_STEP, DEFAULT_TOLERANCE)?;
        worst = worst.max(report.max_rel_err);
        cases.push(GradCaseResult {
            spec,
            loss,
            seed,
            max_rel_err: report.max_rel_err,
            passed: report.passed,
        });
    }
    Ok(GradBatteryOutcome {
        passed: cases.iter().all(|c| c.passed) && max_grad > 0.0,
        cases,
        max_rel_err: worst,
        max_grad_magnitude: max_grad,
    })
}

#[derive(Debug, Clone)]
pub struct DegreeCaseResult {
    pub block_degrees: Vec<usize>,
    pub expected: usize,
    pub probed: ProbedDegree,
    pub seed: u64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct DegreeBatteryOutcome {
    pub cases: Vec<DegreeCaseResult>,
    pub passed: bool,
}

/// Every chain of 1..=max_blocks CCP blocks with per-block degrees from
/// `degrees`, capped at `max_total` realized degree, probed for `seeds`
/// seeds each: the probe must equal the product of block degrees exactly.
pub fn run_degree_battery(
    degrees: &[usize],
    max_blocks: usize,
    max_total: usize,
    seeds: &[u64],
) -> Result<DegreeBatteryOutcome> {
    let mut chains: Vec<Vec<usize>> = vec![Vec::new()];
    let mut all: Vec<Vec<usize>> = Vec::new();
    for _ in 0..max_blocks {
        let mut next = Vec::new();
        for chain in &chains {
            for &deg in degrees {
                let mut c = chain.clone();
                c.push(deg);
                if c.iter().product::<usize>() <= max_total {
                    next.push(c.clone());
                    all.push(c);
                }
            }
        }
        chains = next;
    }

    let mut cases = Vec::new();
    for chain in &all {
        for &seed in seeds {
            let mut blocks = Vec::new();
            for (i, &deg) in chain.iter().enumerate() {
                let spec = PolyBlockSpec::ccp(2, 2, deg, 2);
                blocks.push(Block::init(spec, seed.wrapping_add(i as u64 * 101), InitScheme::Generic)?);
            }
            let net = ProductNet::new(blocks)?;
            let expected = net.total_degree();
            let report = probe_degree(net.as_vec_fn(), 2, seed ^ 0xD15EA5E, max_total)?;
            let passed = report.overall == ProbedDegree::Degree(expected);
            cases.push(DegreeCaseResult {
                block_degrees: chain.clone(),
                expected,
                probed: report.overall,
                seed,
                passed,
            });
        }
    }
    Ok(DegreeBatteryOutcome {
        passed: cases.iter().all(|c| c.passed),
        cases,
    })
}

#[derive(Debug, Clone)]
pub struct CheckpointVerifyOutcome {
    pub blocks: usize,
    pub param_count: usize,
    pub declared_degree: usize,
    /// None when the net is stabilized/activated (not a polynomial) or the
    /// basis budget rules the fit out.
    pub fit_residual: Option<f64>,
    pub probed_degree: Option<ProbedDegree>,
    pub notes: Vec<String>,
    pub passed: bool,
}

/// Validate a stored net: container integrity (magic, CRC, directory) comes
/// from the load itself; on top of that, polynomial nets are re-certified
/// against the dense oracle and the degree prober.
pub fn verify_checkpoint(net: &ProductNet) -> Result<CheckpointVerifyOutcome> {
    let declared = net.total_degree();
    let mut notes = Vec::new();
    let polynomial = net.blocks().iter().all(|b| {
        b.spec().stabilizer == Stabilizer::None
            && b.spec().activation == crate::blocks::Activation::None
    });
    let d = net.input_dim();
    let mut passed = true;

    let mut fit_residual = None;
    let mut probed = None;
    if !polynomial {
        notes.push("stabilizer/activation present: not a polynomial, oracle checks skipped".to_string());
    } else {
        let basis = monomial_count(d, declared);
        if basis > crate::oracle::DEFAULT_BASIS_BUDGET {
            notes.push(format!(
                "basis C({}, {declared}) = {basis} exceeds the oracle budget; fit skipped",
                d + declared
            ));
        } else {
            let (_, report) = fit_dense_with(
                |z| net.forward_vec(z),
                d,
                net.output_dim(),
                declared,
                FitOptions::default(),
            )?;
            if report.residual >= EQUIVALENCE_TOLERANCE {
                passed = false;
                notes.push(format!(
                    "oracle residual {} exceeds {EQUIVALENCE_TOLERANCE}",
                    report.residual
                ));
            }
            fit_residual = Some(report.residual);
        }

        // The degree probe costs a handful of forward passes; it runs even
        // when the basis budget rules the fit out.
        let report = probe_degree(net.as_vec_fn(), d, 0x00DE_64EE, declared.max(1) + 1)?;
        if report.overall != ProbedDegree::Degree(declared) {
            // Degree below declared is possible only on measure-zero
            // parameter sets; flag it rather than fail.
            match report.overall {
                ProbedDegree::Degree(got) if got < declared => {
                    notes.push(format!("probed degree {got} below declared {declared}"));
                }
                other => {
                    passed = false;
                    notes.push(format!("probed degree {other}, declared {declared}"));
                }
            }
        }
        probed = Some(report.overall);
    }

    Ok(CheckpointVerifyOutcome {
        blocks: net.blocks().len(),
        param_count: net.param_count(),
        declared_degree: declared,
        fit_residual,
        probed_degree: probed,
        notes,
        passed,
    })
}

/// Tape-vs-direct forward agreement on seeded instances; cheap cross-check
/// bundled into `verify`.
pub fn run_forward_agreement(seeds: &[u64]) -> Result<bool> {
    for &seed in seeds {
        let specs = [
            PolyBlockSpec::ccp(3, 2, 2, 2),
            PolyBlockSpec::ncp(2, 2, 3, 2, 2),
            PolyBlockSpec::ncp_skip(3, 3, 2, 2, 2),
            PolyBlockSpec::high_order_residual(2, 3),
        ];
        for spec in specs {
            let block = Block::init(spec, seed, InitScheme::Generic)?;
            let net = ProductNet::single(block);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFACE);
            let d = net.input_dim();
            let z = Tensor::new(vec![4, d], (0..4 * d).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            let direct = net.forward(&z)?;
            let mut tape = Tape::new();
            let zi = tape.leaf(z);
            let (out, _) = build_product_forward(&mut tape, &net, zi)?;
            if !tape.value(out).bits_eq(&direct) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
