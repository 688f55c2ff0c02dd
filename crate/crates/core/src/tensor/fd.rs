//! Central-difference gradient oracle.
//!
//! The oracle re-evaluates the scalar function through fresh forward passes
//! only; it never reuses the reverse-mode path it is checking. Intended step
//! sizes are `1e-5..=1e-3` (64-bit accumulation); use the top of the range for
//! 32-bit storage so storage quantization stays below the difference signal.

use super::tape::{NodeId, Tape};
use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    /// max over coordinates of |analytic - numeric| / max(|numeric|, 1e-8)
    pub max_rel_error: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst_coord: (usize, usize),
}

/// Check `backward`'s gradient of a scalar function against central
/// differences at `point`. Only inputs with `requires_grad` are perturbed.
pub fn finite_diff_check<T, F>(build: &F, point: &[Tensor<T>], eps: f64) -> Result<FdReport>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    if !point.iter().any(|t| t.requires_grad()) {
        return Err(Error::invalid("finite_diff_check", "no input requires grad"));
    }

    // analytic gradients via one reverse pass
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = point.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value_f64(loss).len() != 1 {
        return Err(Error::invalid("finite_diff_check", "function is not scalar-valued"));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = point
        .iter()
        .zip(&ids)
        .map(|(t, &id)| grads.get(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.scalar_value(loss))
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        worst_coord: (0, 0),
    };
    let mut work: Vec<Tensor<T>> = point.to_vec();
    for (ti, t) in point.iter().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        for c in 0..t.numel() {
            let v = t.data()[c].to_f64();
            let vp = T::from_f64(v + eps);
            let vm = T::from_f64(v - eps);
            // measure the step actually representable in storage precision
            let delta = vp.to_f64() - vm.to_f64();
            if delta == 0.0 {
                continue;
            }
            work[ti].data_mut()[c] = vp;
            let fp = eval(&work)?;
            work[ti].data_mut()[c] = vm;
            let fm = eval(&work)?;
            work[ti].data_mut()[c] = t.data()[c];
            let numeric = (fp - fm) / delta;
            let a = analytic[ti][c];
            let rel = (a - numeric).abs() / numeric.abs().max(1e-8);
            if rel > report.max_rel_error {
                report = FdReport {
                    max_rel_error: rel,
                    worst_analytic: a,
                    worst_numeric: numeric,
                    worst_coord: (ti, c),
                };
            }
        }
    }
    Ok(report)
}
