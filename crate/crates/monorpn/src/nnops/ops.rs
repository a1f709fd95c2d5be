//! Elementwise activations, output fusion, and the gradient checker.

use super::{OpError, Tensor};

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid_scalar)
}

/// Numerically stable softmax of a slice (max subtraction before exp).
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax along one axis of a tensor.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor, OpError> {
    if axis >= t.rank() {
        return Err(OpError::OutOfRange(format!(
            "axis {axis} out of rank {}",
            t.rank()
        )));
    }
    let shape = t.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = Tensor::zeros(shape.to_vec());
    let mut lane = vec![0.0; axis_len];
    for i in 0..outer {
        for j in 0..inner {
            for (k, slot) in lane.iter_mut().enumerate() {
                *slot = t.data()[(i * axis_len + k) * inner + j];
            }
            let soft = softmax_slice(&lane);
            for (k, v) in soft.iter().enumerate() {
                out.data_mut()[(i * axis_len + k) * inner + j] = *v;
            }
        }
    }
    Ok(out)
}

/// Attention logits fusing the global and local head outputs, one per
/// output index (classification plus the 11 regression outputs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights {
    pub alpha: [f64; 12],
}

impl FusionWeights {
    pub fn uniform(logit: f64) -> Self {
        Self { alpha: [logit; 12] }
    }
}

/// Convex combination of the two head outputs for output `index`:
/// `global * sigmoid(alpha) + local * (1 - sigmoid(alpha))`.
pub fn fuse_outputs(
    global: &Tensor,
    local: &Tensor,
    fw: &FusionWeights,
    index: usize,
) -> Result<Tensor, OpError> {
    if global.shape() != local.shape() {
        return Err(OpError::ShapeMismatch(format!(
            "global {:?} vs local {:?}",
            global.shape(),
            local.shape()
        )));
    }
    if index >= fw.alpha.len() {
        return Err(OpError::OutOfRange(format!("fusion index {index} out of 12")));
    }
    let w = sigmoid_scalar(fw.alpha[index]);
    let mut out = Tensor::zeros(global.shape().to_vec());
    for (o, (g, l)) in out
        .data_mut()
        .iter_mut()
        .zip(global.data().iter().zip(local.data()))
    {
        *o = g * w + l * (1.0 - w);
    }
    Ok(out)
}

/// Compares an analytic gradient against central finite differences of `f`
/// and returns the largest relative component error, where the relative
/// scale is `max(1, |analytic|, |numeric|)`.
pub fn finite_diff_check(
    f: impl Fn(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    assert_eq!(point.len(), analytic.len(), "gradient length must match point length");
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let hi = f(&probe);
        probe[i] = point[i] - step;
        let lo = f(&probe);
        probe[i] = point[i];
        let numeric = (hi - lo) / (2.0 * step);
        let scale = 1.0f64.max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((numeric - analytic[i]).abs() / scale);
    }
    worst
}
