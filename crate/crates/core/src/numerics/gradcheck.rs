//! Finite-difference validation of reverse-mode gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamStore, Tensor2};

/// Outcome of a gradient check: the worst relative error and where it was.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
}

/// Compares analytic gradients against central finite differences for every
/// parameter entry in `store`.
///
/// `loss_fn` must return the scalar loss and the gradient per parameter for
/// the given store; only the loss value is used at perturbed points. The
/// relative error denominator is `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(store: &ParamStore, eps: f64, loss_fn: F) -> Result<GradCheck>
where
    F: Fn(&ParamStore) -> Result<(f64, BTreeMap<String, Tensor2>)>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::config(format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    if store.is_empty() {
        return Err(Error::config("gradient check on a zero-parameter model".to_string()));
    }
    let (loss0, grads) = loss_fn(store)?;
    if !loss0.is_finite() {
        return Err(Error::numeric(format!(
            "loss is non-finite ({loss0}) at the unperturbed parameters"
        )));
    }

    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
    };
    for name in store.names() {
        let analytic = grads
            .get(name)
            .ok_or_else(|| Error::numeric(format!("no gradient returned for parameter {name}")))?;
        let len = store.get(name)?.data.len();
        for idx in 0..len {
            let eval = |delta: f64| -> Result<f64> {
                let mut s = store.clone();
                s.get_mut(name)?.data[idx] += delta;
                let (loss, _) = loss_fn(&s)?;
                if !loss.is_finite() {
                    return Err(Error::numeric(format!(
                        "loss is non-finite ({loss}) perturbing {name}[{idx}] by {delta:+e}"
                    )));
                }
                Ok(loss)
            };
            let fd = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let an = analytic.data[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.to_string();
                report.worst_index = idx;
            }
        }
    }
    Ok(report)
}

/// [`grad_check`] for a loss expressed as a tape-building closure.
pub fn grad_check_graph<F>(store: &ParamStore, eps: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    grad_check(store, eps, |s| {
        let mut g = Graph::new();
        let loss = build(&mut g, s)?;
        g.backward(loss)?;
        Ok((g.scalar_value(loss), g.grads()))
    })
}
