//! Losses, optimizers, and the deterministic training loop.
//!
//! `train` is bit-reproducible given the config seed: initialization happens
//! before the call, shuffling comes from one seeded generator, batches run in
//! order, and gradients accumulate in a fixed order on the tape. Batches are
//! evaluated as whole matrices, so per-sample work may run on the parallel
//! kernels without changing any bit of the result.

mod optim;

pub use optim::{clip_global_norm, step_adam, step_sgd_momentum, AdamState, SgdMomentumState};

use crate::autodiff::Tape;
use crate::blocks::{build_product_forward, ProductNet};
use crate::data::Dataset;
use crate::{Error, Result, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Loss reduction is mean-over-batch in both cases: MSE averages over every
/// element, softmax cross-entropy over rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Mse,
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    SgdMomentum {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
        #[serde(default = "default_sgd_decay")]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_sgd_decay() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::SgdMomentum { lr, .. } | OptimizerConfig::Adam { lr, .. } => *lr,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |key: &str, v: f64| {
            Err(Error::InvalidArgument(format!(
                "optimizer.{key} must be positive, got {v}"
            )))
        };
        match *self {
            OptimizerConfig::SgdMomentum { lr, momentum, weight_decay } => {
                if lr <= 0.0 {
                    return bad("lr", lr);
                }
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::InvalidArgument(format!(
                        "optimizer.momentum must be in [0, 1), got {momentum}"
                    )));
                }
                if weight_decay < 0.0 {
                    return bad("weight_decay", weight_decay);
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps, weight_decay } => {
                if lr <= 0.0 {
                    return bad("lr", lr);
                }
                for (key, v) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(0.0..1.0).contains(&v) {
                        return Err(Error::InvalidArgument(format!(
                            "optimizer.{key} must be in [0, 1), got {v}"
                        )));
                    }
                }
                if eps <= 0.0 {
                    return bad("eps", eps);
                }
                if weight_decay < 0.0 {
                    return bad("weight_decay", weight_decay);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` at each milestone, where milestones are
    /// fractions of the total epoch count (`floor(fraction * epochs)`).
    StepDecay { factor: f64, milestones: Vec<f64> },
}

impl Default for LrSchedule {
    fn default() -> Self {
        // The decimated two-milestone shape used throughout the recipes.
        LrSchedule::StepDecay {
            factor: 0.1,
            milestones: vec![0.5, 0.75],
        }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::StepDecay { factor, milestones } => {
                let passed = milestones
                    .iter()
                    .filter(|&&f| epoch >= (f * total_epochs as f64).floor() as usize)
                    .count();
                base * factor.powi(passed as i32)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let LrSchedule::StepDecay { factor, milestones } = self {
            if *factor <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "lr_schedule.factor must be positive, got {factor}"
                )));
            }
            if milestones.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
                return Err(Error::InvalidArgument(
                    "lr_schedule.milestones must lie in [0, 1]".to_string(),
                ));
            }
        }
        Ok(())
    }
}

fn default_grad_clip() -> Option<f64> {
    // The multiplicative terms produce heavy-tailed gradients; clip by
    // default and let recipes opt out.
    Some(5.0)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.lr_schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".to_string()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".to_string()));
        }
        if let Some(clip) = self.grad_clip {
            if clip <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "grad_clip must be positive, got {clip}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Training accuracy accumulated over the epoch's batches
    /// (classification only; predictions taken before each update).
    pub accuracy: Option<f64>,
    pub param_norm: f64,
    /// Mean pre-clip global gradient norm over the epoch's batches.
    pub grad_norm: f64,
    /// Wall-clock seconds; lives in a separate CSV so metrics stay
    /// bit-reproducible.
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsLog {
    /// Deterministic per-epoch metrics. Header:
    /// `epoch,loss,accuracy,param_norm,grad_norm`; accuracy is empty for
    /// regression runs. Floats use Rust's shortest round-trip format.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,accuracy,param_norm,grad_norm\n");
        for e in &self.epochs {
            let acc = e.accuracy.map(|a| a.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.loss, acc, e.param_norm, e.grad_norm
            ));
        }
        out
    }

    /// Wall-clock per epoch (`epoch,seconds`); not reproducible by nature.
    pub fn to_timings_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{}\n", e.epoch, e.seconds));
        }
        out
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.accuracy)
    }
}

enum OptState {
    Sgd(SgdMomentumState),
    Adam(AdamState),
}

fn add_loss_node(
    tape: &mut Tape,
    loss: LossKind,
    pred: crate::autodiff::NodeId,
    target: crate::autodiff::NodeId,
) -> Result<crate::autodiff::NodeId> {
    match loss {
        LossKind::Mse => tape.mse_loss(pred, target),
        LossKind::SoftmaxCrossEntropy => tape.softmax_cross_entropy(pred, target),
    }
}

/// Train in place, returning the metrics log. Deterministic per seed.
pub fn train(net: &mut ProductNet, data: &Dataset, cfg: &TrainConfig) -> Result<MetricsLog> {
    train_with(net, data, cfg, |_, _| Ok(()))
}

/// [`train`] with a per-epoch callback (checkpointing hooks).
pub fn train_with<F>(
    net: &mut ProductNet,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<MetricsLog>
where
    F: FnMut(usize, &ProductNet) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".to_string()));
    }
    if data.feature_dim() != net.input_dim() || data.label_dim() != net.output_dim() {
        return Err(Error::shape(
            "train",
            format!(
                "data ({}, {}) vs net ({}, {})",
                data.feature_dim(),
                data.label_dim(),
                net.input_dim(),
                net.output_dim()
            ),
        ));
    }

    let mut opt_state = match cfg.optimizer {
        OptimizerConfig::SgdMomentum { .. } => OptState::Sgd(SgdMomentumState::new(&net.named_params())),
        OptimizerConfig::Adam { .. } => OptState::Adam(AdamState::new(&net.named_params())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let classification = cfg.loss == LossKind::SoftmaxCrossEntropy;
    let mut log = MetricsLog::default();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.lr_schedule.lr_at(cfg.optimizer.lr(), epoch, cfg.epochs);
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        let mut correct = 0usize;
        for batch in indices.chunks(cfg.batch_size) {
            let features = data.features().gather_rows(batch)?;
            let labels = data.labels().gather_rows(batch)?;

            let mut tape = Tape::new();
            let zi = tape.leaf(features);
            let (out, param_ids) = build_product_forward(&mut tape, net, zi)?;
            let ti = tape.leaf(labels);
            let loss_node = add_loss_node(&mut tape, cfg.loss, out, ti)?;
            let loss_value = tape.value(loss_node).data()[0];
            if !loss_value.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            loss_sum += loss_value * batch.len() as f64;

            if classification {
                let pred = tape.value(out).argmax_rows()?;
                let truth = tape.value(ti).argmax_rows()?;
                correct += pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
            }

            let mut grads_by_node = tape.backward(loss_node)?;
            let shapes: Vec<Vec<usize>> = net.named_params().iter().map(|(_, t, _)| t.shape().to_vec()).collect();
            let mut grads: Vec<Tensor> = param_ids
                .iter()
                .zip(&shapes)
                .map(|(&id, shape)| grads_by_node.take_or_zeros(id, shape))
                .collect();

            let pre_norm = match cfg.grad_clip {
                Some(threshold) => clip_global_norm(&mut grads, threshold),
                None => grads
                    .iter()
                    .map(|g| g.data().iter().map(|&x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt(),
            };
            norm_sum += pre_norm;
            batches += 1;

            let mut params = net.named_params_mut();
            match (&mut opt_state, &cfg.optimizer) {
                (OptState::Sgd(state), OptimizerConfig::SgdMomentum { momentum, weight_decay, .. }) => {
                    step_sgd_momentum(&mut params, &grads, state, lr, *momentum, *weight_decay)?;
                }
                (OptState::Adam(state), OptimizerConfig::Adam { beta1, beta2, eps, weight_decay, .. }) => {
                    step_adam(&mut params, &grads, state, lr, *beta1, *beta2, *eps, *weight_decay)?;
                }
                _ => unreachable!("optimizer state matches config by construction"),
            }
        }

        log.epochs.push(EpochMetrics {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: classification.then(|| correct as f64 / data.len() as f64),
            param_norm: net.param_norm(),
            grad_norm: norm_sum / batches as f64,
            seconds: started.elapsed().as_secs_f64(),
        });
        on_epoch(epoch, net)?;
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    /// Argmax match rate; present for classification losses.
    pub accuracy: Option<f64>,
}

/// Loss (and accuracy for classification) without touching parameters.
/// Evaluation is chunked, so arbitrarily large datasets stay in memory
/// bounds.
pub fn evaluate(net: &ProductNet, data: &Dataset, loss: LossKind) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".to_string()));
    }
    if data.feature_dim() != net.input_dim() || data.label_dim() != net.output_dim() {
        return Err(Error::shape(
            "evaluate",
            format!(
                "data ({}, {}) vs net ({}, {})",
                data.feature_dim(),
                data.label_dim(),
                net.input_dim(),
                net.output_dim()
            ),
        ));
    }
    const CHUNK: usize = 4096;
    let n = data.len();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let features = data.features().slice_rows(start, end)?;
        let labels = data.labels().slice_rows(start, end)?;
        let pred = net.forward(&features)?;
        match loss {
            LossKind::Mse => {
                let numel = (pred.len()) as f64;
                let sum: f64 = pred
                    .data()
                    .iter()
                    .zip(labels.data())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                // Accumulate as mean * rows to combine chunks exactly.
                loss_sum += sum / numel * (end - start) as f64;
            }
            LossKind::SoftmaxCrossEntropy => {
                for i in 0..pred.rows() {
                    let row = pred.row(i);
                    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let log_z = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
                    for (j, &tj) in labels.row(i).iter().enumerate() {
                        if tj != 0.0 {
                            loss_sum -= tj * (row[j] - log_z);
                        }
                    }
                }
                let p = pred.argmax_rows()?;
                let t = labels.argmax_rows()?;
                correct += p.iter().zip(&t).filter(|(a, b)| a == b).count();
            }
        }
        start = end;
    }
    Ok(EvalMetrics {
        loss: loss_sum / n as f64,
        accuracy: (loss == LossKind::SoftmaxCrossEntropy).then(|| correct as f64 / n as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{Block, InitScheme, PolyBlockSpec};
    use crate::data::{make_synthetic, LabelKind, SyntheticKind};

    fn quick_cfg(loss: LossKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig::Adam {
                lr: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                weight_decay: 0.0,
            },
            loss,
            batch_size: 16,
            epochs,
            seed: 42,
            grad_clip: Some(5.0),
            lr_schedule: LrSchedule::Constant,
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = make_synthetic(&SyntheticKind::Xor { jitter: 0.1 }, 64, 3).unwrap();
        let run = || {
            let block = Block::init(PolyBlockSpec::ncp_skip(2, 2, 2, 4, 4), 7, InitScheme::OnesBias).unwrap();
            let mut net = ProductNet::single(block);
            let log = train(&mut net, &data, &quick_cfg(LossKind::SoftmaxCrossEntropy, 5)).unwrap();
            (log.to_csv(), crate::blocks::write_checkpoint_bytes(&net).unwrap())
        };
        let (csv_a, ckpt_a) = run();
        let (csv_b, ckpt_b) = run();
        assert_eq!(csv_a, csv_b);
        assert_eq!(ckpt_a, ckpt_b);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let data = make_synthetic(&SyntheticKind::Xor { jitter: 0.0 }, 32, 1).unwrap();
        let block = Block::init(PolyBlockSpec::ccp(2, 2, 3, 8), 2, InitScheme::Generic).unwrap();
        let mut net = ProductNet::single(block);
        let mut cfg = quick_cfg(LossKind::Mse, 50);
        cfg.optimizer = OptimizerConfig::SgdMomentum {
            lr: 1e6,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        cfg.grad_clip = None;
        match train(&mut net, &data, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sgd_monotone_on_convex_quadratic_after_warmup() {
        // Heavy-ball on a quadratic is monotone once the step is in the
        // overdamped regime: (1 + μ - ηλ)^2 >= 4μ. With μ = 0.9 and
        // λ_max = 1, η = 1e-3 sits well inside it.
        let targets = [2.0, -1.5];
        let curv = [0.125, 0.5]; // loss = Σ c_i (θ_i - t_i)^2, λ_i = 2 c_i
        let mut theta = Tensor::from_vec(vec![0.0, 0.0]);
        let mut state = SgdMomentumState::new(&[("θ".to_string(), &theta, false)]);
        let loss_of = |t: &Tensor| -> f64 {
            t.data()
                .iter()
                .zip(&targets)
                .zip(&curv)
                .map(|((&x, &tgt), &c)| c * (x - tgt) * (x - tgt))
                .sum()
        };
        let mut losses = Vec::new();
        for _ in 0..200 {
            let g: Vec<f64> = theta
                .data()
                .iter()
                .zip(&targets)
                .zip(&curv)
                .map(|((&x, &t), &c)| 2.0 * c * (x - t))
                .collect();
            let grads = vec![Tensor::from_vec(g)];
            let mut params = vec![("θ".to_string(), &mut theta, false)];
            step_sgd_momentum(&mut params, &grads, &mut state, 1e-3, 0.9, 0.0).unwrap();
            losses.push(loss_of(&theta));
        }
        for (i, pair) in losses[10..].windows(2).enumerate() {
            assert!(
                pair[1] <= pair[0] + 1e-15,
                "loss rose at step {}: {} -> {}",
                i + 11,
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn optimizer_steps_preserve_shapes() {
        let data = make_synthetic(&SyntheticKind::Xor { jitter: 0.1 }, 32, 3).unwrap();
        let block = Block::init(PolyBlockSpec::ncp(2, 2, 2, 3, 3), 1, InitScheme::OnesBias).unwrap();
        let mut net = ProductNet::single(block);
        let before: Vec<Vec<usize>> = net.named_params().iter().map(|(_, t, _)| t.shape().to_vec()).collect();
        train(&mut net, &data, &quick_cfg(LossKind::SoftmaxCrossEntropy, 3)).unwrap();
        let after: Vec<Vec<usize>> = net.named_params().iter().map(|(_, t, _)| t.shape().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn evaluate_constant_predictor_on_balanced_data() {
        // Zeros init outputs β = 0 for both classes; argmax ties resolve to
        // class 0, and the data is balanced.
        let data = make_synthetic(&SyntheticKind::Circles { radius0: 1.0, radius1: 2.0, jitter: 0.0 }, 64, 2).unwrap();
        let block = Block::init(PolyBlockSpec::ccp(2, 2, 2, 2), 0, InitScheme::Zeros).unwrap();
        let net = ProductNet::single(block);
        let metrics = evaluate(&net, &data, LossKind::SoftmaxCrossEntropy).unwrap();
        assert_eq!(metrics.accuracy, Some(0.5));
    }

    #[test]
    fn evaluate_perfect_predictor() {
        // Labels manufactured from the net's own argmax.
        let block = Block::init(PolyBlockSpec::ccp(2, 2, 2, 3), 11, InitScheme::Generic).unwrap();
        let net = ProductNet::single(block);
        let features = make_synthetic(&SyntheticKind::Xor { jitter: 0.3 }, 32, 8)
            .unwrap()
            .features()
            .clone();
        let outputs = net.forward(&features).unwrap();
        let classes = outputs.argmax_rows().unwrap();
        let mut labels = Tensor::zeros(&[features.rows(), 2]);
        for (i, &c) in classes.iter().enumerate() {
            labels.data_mut()[i * 2 + c] = 1.0;
        }
        let data = Dataset::new(features, labels, LabelKind::OneHot, "t", "manufactured").unwrap();
        let metrics = evaluate(&net, &data, LossKind::SoftmaxCrossEntropy).unwrap();
        assert_eq!(metrics.accuracy, Some(1.0));
    }

    #[test]
    fn metrics_csv_shape() {
        let log = MetricsLog {
            epochs: vec![EpochMetrics {
                epoch: 0,
                loss: 0.5,
                accuracy: None,
                param_norm: 1.25,
                grad_norm: 0.75,
                seconds: 0.001,
            }],
        };
        assert_eq!(
            log.to_csv(),
            "epoch,loss,accuracy,param_norm,grad_norm\n0,0.5,,1.25,0.75\n"
        );
        assert!(log.to_timings_csv().starts_with("epoch,seconds\n0,"));
    }

    #[test]
    fn lr_schedule_steps_down() {
        let schedule = LrSchedule::StepDecay {
            factor: 0.1,
            milestones: vec![0.5, 0.75],
        };
        assert_eq!(schedule.lr_at(1.0, 0, 100), 1.0);
        assert_eq!(schedule.lr_at(1.0, 49, 100), 1.0);
        assert!((schedule.lr_at(1.0, 50, 100) - 0.1).abs() < 1e-15);
        assert!((schedule.lr_at(1.0, 75, 100) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn config_validation_names_offending_key() {
        let mut cfg = quick_cfg(LossKind::Mse, 1);
        cfg.optimizer = OptimizerConfig::Adam {
            lr: -0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("optimizer.lr"), "{err}");
    }
}
