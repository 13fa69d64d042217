//! Reverse-mode automatic differentiation on an eager tape.
//!
//! Ops execute as they are recorded, so every node carries its forward value
//! and the tape order is already topological; `backward` walks it in reverse.
//! The op set is exactly what the polynomial blocks and losses need. Leaves
//! are either constants ([`Tape::leaf`]) or differentiable parameters
//! ([`Tape::var`]).
//!
//! A tape is single-writer during a pass; distinct tapes run concurrently
//! without coordination. Repeating a forward+backward over the same values
//! is bit-identical: gradient contributions accumulate in recording order.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, ABS_FLOOR, DEFAULT_STEP, DEFAULT_TOLERANCE};

use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { requires_grad: bool },
    Add(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Scale(NodeId, f64),
    Transpose(NodeId),
    Reshape(NodeId),
    ConcatRows(Vec<NodeId>),
    BroadcastAddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    InstanceNormRows(NodeId, f64),
    Sum(NodeId),
    // Losses take the target as a (non-differentiated) node.
    MseLoss(NodeId, NodeId),
    SoftmaxCrossEntropy(NodeId, NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients keyed by the tape node of each differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a leaf, zero-filled when the leaf never reached the loss.
    pub fn take_or_zeros(&mut self, id: NodeId, shape: &[usize]) -> Tensor {
        self.by_node
            .get_mut(id.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: false }, value)
    }

    /// Differentiable leaf (parameter).
    pub fn var(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { requires_grad: true }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.value(a).scale(factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), value))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(Op::Reshape(a), value))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn broadcast_add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let value = self.value(x).broadcast_add_row(self.value(row))?;
        Ok(self.push(Op::BroadcastAddRow(x, row), value))
    }

    pub fn mul_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let value = self.value(x).mul_row(self.value(row))?;
        Ok(self.push(Op::MulRow(x, row), value))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    /// Subgradient 0 at exactly 0.
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    /// Standardize each row to zero mean, unit variance (biased), with `eps`
    /// inside the square root.
    pub fn instance_norm_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let value = self.value(a).instance_norm_rows(eps)?;
        Ok(self.push(Op::InstanceNormRows(a, eps), value))
    }

    /// Sum of all entries, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Mean squared error over all entries; scalar node.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let p = self.value(pred);
        let t = self.value(target);
        if p.shape() != t.shape() {
            return Err(Error::shape(
                "mse_loss",
                format!("{:?} vs {:?}", p.shape(), t.shape()),
            ));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        Ok(self.push(Op::MseLoss(pred, target), Tensor::scalar(loss)))
    }

    /// Softmax cross-entropy against one-hot rows, mean over the batch;
    /// scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> Result<NodeId> {
        let l = self.value(logits);
        let t = self.value(targets);
        if l.rank() != 2 || l.shape() != t.shape() {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{:?} vs {:?}", l.shape(), t.shape()),
            ));
        }
        let m = l.rows();
        let mut total = 0.0;
        for i in 0..m {
            let row = l.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let log_z = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
            for (j, &tj) in t.row(i).iter().enumerate() {
                if tj != 0.0 {
                    total -= tj * (row[j] - log_z);
                }
            }
        }
        let loss = total / m as f64;
        Ok(self.push(Op::SoftmaxCrossEntropy(logits, targets), Tensor::scalar(loss)))
    }

    /// Reverse pass from a scalar loss node, seeded with 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss (got shape {:?}); use backward_seeded",
                self.value(loss).shape()
            )));
        }
        self.backward_seeded(loss, Tensor::scalar(1.0))
    }

    /// Reverse pass from any node with an explicit adjoint seed.
    pub fn backward_seeded(&self, root: NodeId, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::shape(
                "backward_seeded",
                format!("seed {:?} vs node {:?}", seed.shape(), self.value(root).shape()),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.step_backward(idx, &g, &mut adj)?;
            // Leaf gradients stay; interior adjoints are dropped.
            if matches!(self.nodes[idx].op, Op::Leaf { requires_grad: true }) {
                adj[idx] = Some(g);
            }
        }
        Ok(Gradients { by_node: adj })
    }

    fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) -> Result<()> {
        adj[id.0] = Some(match adj[id.0].take() {
            Some(existing) => existing.add(&contrib)?,
            None => contrib,
        });
        Ok(())
    }

    fn step_backward(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        use Op::*;
        match &self.nodes[idx].op {
            Leaf { .. } => {}
            Add(a, b) => {
                Self::accumulate(adj, *a, g.clone())?;
                Self::accumulate(adj, *b, g.clone())?;
            }
            Hadamard(a, b) => {
                Self::accumulate(adj, *a, g.hadamard(self.value(*b))?)?;
                Self::accumulate(adj, *b, g.hadamard(self.value(*a))?)?;
            }
            Matmul(a, b) => {
                let bt = self.value(*b).transpose()?;
                let at = self.value(*a).transpose()?;
                Self::accumulate(adj, *a, g.matmul(&bt)?)?;
                Self::accumulate(adj, *b, at.matmul(g)?)?;
            }
            Scale(a, c) => Self::accumulate(adj, *a, g.scale(*c))?,
            Transpose(a) => Self::accumulate(adj, *a, g.transpose()?)?,
            Reshape(a) => {
                let orig = self.value(*a).shape().to_vec();
                Self::accumulate(adj, *a, g.reshape(&orig)?)?;
            }
            ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    Self::accumulate(adj, p, g.slice_rows(offset, offset + rows)?)?;
                    offset += rows;
                }
            }
            BroadcastAddRow(x, row) => {
                Self::accumulate(adj, *x, g.clone())?;
                Self::accumulate(adj, *row, g.sum_rows()?)?;
            }
            MulRow(x, row) => {
                Self::accumulate(adj, *x, g.mul_row(self.value(*row))?)?;
                let gx = g.hadamard(self.value(*x))?;
                Self::accumulate(adj, *row, gx.sum_rows()?)?;
            }
            Tanh(a) => {
                let y = &self.nodes[idx].value;
                let dy = y.map(|v| 1.0 - v * v);
                Self::accumulate(adj, *a, g.hadamard(&dy)?)?;
            }
            Relu(a) => {
                let dx = self.value(*a).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                Self::accumulate(adj, *a, g.hadamard(&dx)?)?;
            }
            Sigmoid(a) => {
                let y = &self.nodes[idx].value;
                let dy = y.map(|v| v * (1.0 - v));
                Self::accumulate(adj, *a, g.hadamard(&dy)?)?;
            }
            InstanceNormRows(a, eps) => {
                let contrib = instance_norm_rows_backward(self.value(*a), &self.nodes[idx].value, g, *eps)?;
                Self::accumulate(adj, *a, contrib)?;
            }
            Sum(a) => {
                let s = g.data()[0];
                Self::accumulate(adj, *a, Tensor::filled(self.value(*a).shape(), s))?;
            }
            MseLoss(pred, target) => {
                let p = self.value(*pred);
                let t = self.value(*target);
                let n = p.len() as f64;
                let s = g.data()[0];
                let dp = p.sub(t)?.scale(2.0 * s / n);
                Self::accumulate(adj, *pred, dp)?;
            }
            SoftmaxCrossEntropy(logits, targets) => {
                let l = self.value(*logits);
                let t = self.value(*targets);
                let m = l.rows();
                let s = g.data()[0];
                let mut d = vec![0.0; l.len()];
                let n = l.cols();
                for i in 0..m {
                    let row = l.row(i);
                    let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let mut exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for e in &mut exps {
                        *e /= z;
                    }
                    for j in 0..n {
                        d[i * n + j] = (exps[j] - t.row(i)[j]) * s / m as f64;
                    }
                }
                Self::accumulate(adj, *logits, Tensor::new(l.shape().to_vec(), d)?)?;
            }
        }
        Ok(())
    }
}

fn instance_norm_rows_backward(x: &Tensor, y: &Tensor, g: &Tensor, eps: f64) -> Result<Tensor> {
    let n = x.cols() as f64;
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.rows() {
        let xr = x.row(i);
        let yr = y.row(i);
        let gr = g.row(i);
        let mean = xr.iter().sum::<f64>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        let g_mean = gr.iter().sum::<f64>() / n;
        let gy_mean = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<f64>() / n;
        out.extend(
            gr.iter()
                .zip(yr)
                .map(|(&gi, &yi)| inv * (gi - g_mean - yi * gy_mean)),
        );
    }
    Tensor::new(x.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_caches_values() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![2.0, 3.0]));
        let y = tape.hadamard(x, x).unwrap();
        assert_eq!(tape.value(y).data(), &[4.0, 9.0]);
    }

    #[test]
    fn constant_graph() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::scalar(5.0));
        assert_eq!(tape.value(c).data(), &[5.0]);
    }

    #[test]
    fn square_gradient() {
        // d/dx sum(x*x) = 2x
        let mut tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![2.0, 3.0]));
        let sq = tape.hadamard(x, x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn linear_gradient_is_coefficient() {
        let mut tape = Tape::new();
        let c = tape.leaf(Tensor::from_vec(vec![5.0, -1.0, 0.5]));
        let x = tape.var(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let prod = tape.hadamard(c, x).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0, -1.0, 0.5]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn non_scalar_loss_needs_seed() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::from_vec(vec![1.0, 2.0]));
        let y = tape.hadamard(x, x).unwrap();
        assert!(tape.backward(y).is_err());
        let grads = tape
            .backward_seeded(y, Tensor::from_vec(vec![1.0, 1.0]))
            .unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn adjoint_linearity() {
        // backward(f + g) == backward(f) + backward(g)
        let build = |with_both: u8| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.var(Tensor::from_vec(vec![1.5, -2.0]));
            let a = tape.hadamard(x, x).unwrap();
            let f = tape.sum(a);
            let c = tape.leaf(Tensor::from_vec(vec![3.0, 4.0]));
            let b = tape.hadamard(c, x).unwrap();
            let g = tape.sum(b);
            let loss = match with_both {
                0 => f,
                1 => g,
                _ => tape.add(f, g).unwrap(),
            };
            let grads = tape.backward(loss).unwrap();
            grads.get(x).unwrap().data().to_vec()
        };
        let gf = build(0);
        let gg = build(1);
        let gboth = build(2);
        for i in 0..2 {
            assert!((gboth[i] - (gf[i] + gg[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_passes_bit_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.var(Tensor::from_vec(vec![0.3, -0.7, 0.11]));
            let t = tape.tanh(x);
            let h = tape.hadamard(t, x).unwrap();
            let loss = tape.sum(h);
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).data()[0].to_bits(),
                grads
                    .get(x)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn softmax_cross_entropy_matches_manual() {
        let mut tape = Tape::new();
        let logits = tape.var(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let target = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap());
        let loss = tape.softmax_cross_entropy(logits, target).unwrap();
        assert!((tape.value(loss).data()[0] - (2.0_f64).ln()).abs() < 1e-12);
        let grads = tape.backward(loss).unwrap();
        // softmax = [0.5, 0.5]; grad = softmax - target
        assert!((grads.get(logits).unwrap().data()[0] + 0.5).abs() < 1e-12);
        assert!((grads.get(logits).unwrap().data()[1] - 0.5).abs() < 1e-12);
    }
}
