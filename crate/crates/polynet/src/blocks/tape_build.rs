//! Tape-graph construction for block forwards.
//!
//! Mirrors the direct forwards in `blocks` op for op, so the recorded forward
//! value is bit-identical to [`Block::forward`], a cross-implementation
//! check the tests rely on.

use super::{Activation, Block, BlockParams, ProductNet, Stabilizer, INSTANCE_NORM_EPS};
use crate::autodiff::{NodeId, Tape};
use crate::{Error, Result};

fn stabilize(tape: &mut Tape, term: NodeId, mode: Stabilizer) -> Result<NodeId> {
    Ok(match mode {
        Stabilizer::None => term,
        Stabilizer::Tanh => tape.tanh(term),
        Stabilizer::InstanceNorm => tape.instance_norm_rows(term, INSTANCE_NORM_EPS)?,
    })
}

fn activate(tape: &mut Tape, out: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::None => out,
        Activation::Relu => tape.relu(out),
        Activation::Tanh => tape.tanh(out),
        Activation::Sigmoid => tape.sigmoid(out),
    }
}

/// Record one block's forward onto the tape. `param_ids` are tape variables
/// aligned with `block.params().named()` order.
pub fn build_block_forward(
    tape: &mut Tape,
    block: &Block,
    param_ids: &[NodeId],
    z: NodeId,
) -> Result<NodeId> {
    let spec = block.spec();
    let n = spec.order;
    let expect = block.params().named().len();
    if param_ids.len() != expect {
        return Err(Error::InvalidArgument(format!(
            "block wants {expect} parameter nodes, got {}",
            param_ids.len()
        )));
    }
    let out = match block.params() {
        BlockParams::Ccp(_) => {
            // layout: U1..UN, C, beta
            let u = &param_ids[..n];
            let c = param_ids[n];
            let beta = param_ids[n + 1];
            let mut x = tape.matmul(z, u[0])?;
            for &un in &u[1..] {
                let zu = tape.matmul(z, un)?;
                let t = tape.hadamard(zu, x)?;
                let t = stabilize(tape, t, spec.stabilizer)?;
                x = tape.add(t, x)?;
            }
            let ct = tape.transpose(c)?;
            let xc = tape.matmul(x, ct)?;
            tape.broadcast_add_row(xc, beta)?
        }
        BlockParams::Ncp(_) | BlockParams::NcpSkip(_) => {
            // layout: A1..AN, S2..SN, B1..BN, b1..bN, C, beta
            let skip = matches!(block.params(), BlockParams::NcpSkip(_));
            let a = &param_ids[..n];
            let s = &param_ids[n..2 * n - 1];
            let b = &param_ids[2 * n - 1..3 * n - 1];
            let bias = &param_ids[3 * n - 1..4 * n - 1];
            let c = param_ids[4 * n - 1];
            let beta = param_ids[4 * n];
            let w = spec.bias_dim;
            let k = spec.rank;
            let mut btb = Vec::with_capacity(n);
            for i in 0..n {
                let row = tape.reshape(bias[i], &[1, w])?;
                let prod = tape.matmul(row, b[i])?;
                btb.push(tape.reshape(prod, &[k])?);
            }
            let za = tape.matmul(z, a[0])?;
            let mut x = tape.mul_row(za, btb[0])?;
            for i in 1..n {
                let xs = tape.matmul(x, s[i - 1])?;
                let inner = tape.broadcast_add_row(xs, btb[i])?;
                let za = tape.matmul(z, a[i])?;
                let t = tape.hadamard(za, inner)?;
                let t = stabilize(tape, t, spec.stabilizer)?;
                x = if skip { tape.add(t, x)? } else { t };
            }
            let ct = tape.transpose(c)?;
            let xc = tape.matmul(x, ct)?;
            tape.broadcast_add_row(xc, beta)?
        }
        BlockParams::HighOrderResidual(_) => {
            let c = param_ids[0];
            let ct = tape.transpose(c)?;
            let cz = tape.matmul(z, ct)?;
            let mut acc = tape.add(z, cz)?;
            let mut term = cz;
            for _ in 2..=n {
                term = tape.hadamard(term, z)?;
                let st = stabilize(tape, term, spec.stabilizer)?;
                acc = tape.add(acc, st)?;
            }
            acc
        }
    };
    Ok(activate(tape, out, spec.activation))
}

/// Register every net parameter as a tape variable and record the chained
/// forward. Returns the output node and the parameter nodes in
/// [`ProductNet::named_params`] order.
pub fn build_product_forward(
    tape: &mut Tape,
    net: &ProductNet,
    z: NodeId,
) -> Result<(NodeId, Vec<NodeId>)> {
    let mut all_ids = Vec::new();
    let mut x = z;
    for block in net.blocks() {
        let ids: Vec<NodeId> = block
            .params()
            .named()
            .into_iter()
            .map(|(_, t, _)| tape.var(t.clone()))
            .collect();
        x = build_block_forward(tape, block, &ids, x)?;
        all_ids.extend(ids);
    }
    Ok((x, all_ids))
}
