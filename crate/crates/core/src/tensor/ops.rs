//! Tape-free numeric utilities: the real DFT pair (length `L` in, `L/2 + 1`
//! complex coefficients out as separate real/imaginary tensors) and the
//! stabilized log-sum-exp reduction.

use super::kernels::DftPlan;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Real-input DFT along the last axis. Returns (real, imaginary) tensors of
/// shape `[..., L/2 + 1]`.
pub fn rfft<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let shape = x.shape();
    let l = *shape.last().ok_or_else(|| Error::invalid("rfft", "empty shape"))?;
    if l < 2 {
        return Err(Error::invalid("rfft", format!("temporal length {l} < 2")));
    }
    let plan = DftPlan::new(l);
    let rows = x.numel() / l;
    let xf = x.to_f64_vec();
    let mut re = vec![0.0f64; rows * plan.nf];
    let mut im = vec![0.0f64; rows * plan.nf];
    for r in 0..rows {
        plan.rfft_row(
            &xf[r * l..(r + 1) * l],
            &mut re[r * plan.nf..(r + 1) * plan.nf],
            &mut im[r * plan.nf..(r + 1) * plan.nf],
        );
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = plan.nf;
    Ok((
        Tensor::from_f64_vec(out_shape.clone(), re)?,
        Tensor::from_f64_vec(out_shape, im)?,
    ))
}

/// Inverse of [`rfft`] for original temporal length `l`.
pub fn irfft<T: Element>(re: &Tensor<T>, im: &Tensor<T>, l: usize) -> Result<Tensor<T>> {
    if re.shape() != im.shape() {
        return Err(Error::ShapeMismatch {
            op: "irfft",
            lhs: re.shape().to_vec(),
            rhs: im.shape().to_vec(),
        });
    }
    let nf = *re.shape().last().ok_or_else(|| Error::invalid("irfft", "empty shape"))?;
    if nf != l / 2 + 1 {
        return Err(Error::invalid(
            "irfft",
            format!("expected {} frequency bins for length {l}, got {nf}", l / 2 + 1),
        ));
    }
    let plan = DftPlan::new(l);
    let rows = re.numel() / nf;
    let ref_ = re.to_f64_vec();
    let imf = im.to_f64_vec();
    let mut x = vec![0.0f64; rows * l];
    for r in 0..rows {
        plan.irfft_row(
            &ref_[r * nf..(r + 1) * nf],
            &imf[r * nf..(r + 1) * nf],
            &mut x[r * l..(r + 1) * l],
        );
    }
    let mut out_shape = re.shape().to_vec();
    *out_shape.last_mut().unwrap() = l;
    Tensor::from_f64_vec(out_shape, x)
}

/// `log sum_k exp(values[k] / temp)`, stabilized by subtracting the maximum
/// before exponentiation. Finite for any finite input.
pub fn lse_reduce(values: &[f64], temp: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("lse_reduce", "empty value vector"));
    }
    if temp <= 0.0 {
        return Err(Error::invalid("lse_reduce", format!("temperature {temp} must be > 0")));
    }
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / temp;
    let mut acc = 0.0;
    for &v in values {
        acc += (v / temp - m).exp();
    }
    Ok(m + acc.ln())
}

/// In-place stabilized softmax of one lane.
pub fn softmax_slice(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Cosine similarity of two equal-length vectors; errors when either norm
/// vanishes.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na <= 0.0 || nb <= 0.0 {
        return Err(Error::numeric("cosine_similarity", "zero-norm vector"));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}
