//! Central-difference gradient checking.

use super::{NodeId, Tape};
use crate::{Error, Result, Tensor};

/// Step chosen for f64 central differences: truncation error ~step^2 and
/// roundoff ~eps/step meet near 1e-6.
pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// Absolute differences below this floor always pass.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub param: usize,
    pub max_abs_err: f64,
    /// Max over elements of |analytic - numeric| / max(|analytic|, |numeric|),
    /// with differences under [`ABS_FLOOR`] counted as 0.
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Compare analytic gradients of a scalar-valued graph against central
/// finite differences, element by element.
///
/// `build` must construct the loss from the given parameter nodes; it is
/// invoked once for the analytic pass and twice per parameter element for
/// the numeric one.
pub fn grad_check<F>(build: &F, params: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.var(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        let v = tape.value(loss);
        if v.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "grad_check needs a scalar loss, got shape {:?}",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = params.iter().map(|t| tape.var(t.clone())).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "grad_check needs a scalar loss, got shape {:?}",
            tape.value(loss).shape()
        )));
    }
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = params
        .iter()
        .zip(&ids)
        .map(|(p, &id)| grads.take_or_zeros(id, p.shape()))
        .collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    let mut overall_rel = 0.0_f64;
    for (pi, analytic_grad) in analytic.iter().enumerate() {
        let mut max_abs = 0.0_f64;
        let mut max_rel = 0.0_f64;
        for e in 0..params[pi].len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[e] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic_grad.data()[e];
            let abs = (a - numeric).abs();
            let rel = if abs <= ABS_FLOOR {
                0.0
            } else {
                abs / a.abs().max(numeric.abs())
            };
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        overall_rel = overall_rel.max(max_rel);
        checks.push(ParamCheck {
            param: pi,
            max_abs_err: max_abs,
            max_rel_err: max_rel,
            passed: max_rel < tolerance,
        });
    }

    Ok(GradCheckReport {
        max_rel_err: overall_rel,
        passed: checks.iter().all(|c| c.passed),
        params: checks,
    })
}
