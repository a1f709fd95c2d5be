//! Multi-task loss evaluation with analytic gradients, plus hard-negative
//! mining.
//!
//! Three terms: softmax cross-entropy over classes, a negative-log IoU loss
//! on the decoded 2D box, and smooth-L1 on the 7 transform components of
//! the 3D box. Background boxes contribute only the classification term.
//! Every gradient here is checked against central finite differences in the
//! test suite.

use crate::anchors::{Assignment, TransformVector};
use crate::geometry::{iou_2d, Box2d};
use crate::nnops::softmax_slice;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("class index {index} out of {classes} classes")]
    BadClassIndex { index: usize, classes: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

/// Weights and knobs of the multi-task loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the 2D box term.
    pub lambda1: f64,
    /// Weight of the 3D box term.
    pub lambda2: f64,
    /// Class count including background.
    pub n_classes: usize,
    /// Fraction of highest-loss boxes kept by mining.
    pub mining_fraction: f64,
    /// Floor keeping the IoU loss finite on disjoint boxes.
    pub iou_floor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, n_classes: 4, mining_fraction: 0.2, iou_floor: 1e-6 }
    }
}

/// Loss totals plus the per-box loss vector mining consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub classification: f64,
    pub box_2d: f64,
    pub box_3d: f64,
    pub total: f64,
    pub per_box: Vec<f64>,
}

/// Softmax cross-entropy `-log softmax(logits)[class]` with its gradient
/// with respect to the logits.
pub fn cls_loss(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>), LossError> {
    if class >= logits.len() {
        return Err(LossError::BadClassIndex { index: class, classes: logits.len() });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&x| (x - m).exp()).sum();
    let loss = m + sum.ln() - logits[class];
    let mut grad = softmax_slice(logits);
    grad[class] -= 1.0;
    Ok((loss, grad))
}

/// Negative-log IoU loss on a 2D box, `-log(max(IoU, floor))`, with its
/// gradient with respect to the predicted corners
/// `[x_min, y_min, x_max, y_max]`. On the clamped branch (IoU at or below
/// the floor) the gradient is zero.
pub fn box2d_loss(pred: &Box2d, gt: &Box2d, iou_floor: f64) -> (f64, [f64; 4]) {
    let iou = iou_2d(pred, gt);
    if iou <= iou_floor {
        return (-iou_floor.ln(), [0.0; 4]);
    }
    let loss = -iou.ln();

    let iw = pred.x_max.min(gt.x_max) - pred.x_min.max(gt.x_min);
    let ih = pred.y_max.min(gt.y_max) - pred.y_min.max(gt.y_min);
    let inter = iw * ih;
    let area_pred = pred.area();
    let union = area_pred + gt.area() - inter;

    // d(inter)/d(pred corner): active only where the pred corner is the
    // binding min/max argument
    let di = [
        if pred.x_min > gt.x_min { -ih } else { 0.0 },
        if pred.y_min > gt.y_min { -iw } else { 0.0 },
        if pred.x_max < gt.x_max { ih } else { 0.0 },
        if pred.y_max < gt.y_max { iw } else { 0.0 },
    ];
    let (w, h) = (pred.width(), pred.height());
    let da = [-h, -w, h, w];

    let mut grad = [0.0; 4];
    for i in 0..4 {
        let du = da[i] - di[i];
        let diou = (di[i] * union - inter * du) / (union * union);
        grad[i] = -diou / iou;
    }
    (loss, grad)
}

/// Elementwise smooth-L1 with unit transition point, summed over elements,
/// with its gradient with respect to `pred`.
pub fn smooth_l1(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch(format!(
            "pred has {} elements, target {}",
            pred.len(),
            target.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        if d.abs() < 1.0 {
            loss += 0.5 * d * d;
            grad.push(d);
        } else {
            loss += d.abs() - 0.5;
            grad.push(d.signum());
        }
    }
    Ok((loss, grad))
}

/// Smooth-L1 over the 7 transform components describing the 3D box.
pub fn box3d_loss(
    pred: &TransformVector,
    target: &TransformVector,
) -> Result<(f64, [f64; 7]), LossError> {
    let (loss, grad) = smooth_l1(&pred.components_3d(), &target.components_3d())?;
    let mut g = [0.0; 7];
    g.copy_from_slice(&grad);
    Ok((loss, g))
}

/// Combines per-box terms into the multi-task loss. The classification term
/// averages over all boxes; the box terms average over foreground boxes
/// only (background regression is ignored).
pub fn total_loss(
    cls: &[f64],
    box2d: &[f64],
    box3d: &[f64],
    assignments: &[Assignment],
    cfg: &LossConfig,
) -> Result<LossBreakdown, LossError> {
    let n = assignments.len();
    if cls.len() != n || box2d.len() != n || box3d.len() != n {
        return Err(LossError::LengthMismatch(format!(
            "{} assignments vs {}/{}/{} loss terms",
            n,
            cls.len(),
            box2d.len(),
            box3d.len()
        )));
    }
    if n == 0 {
        return Err(LossError::EmptyInput);
    }
    let n_fg = assignments.iter().filter(|a| a.is_foreground()).count();
    let mut sum_cls = 0.0;
    let mut sum_2d = 0.0;
    let mut sum_3d = 0.0;
    let mut per_box = Vec::with_capacity(n);
    for (i, a) in assignments.iter().enumerate() {
        sum_cls += cls[i];
        if a.is_foreground() {
            sum_2d += box2d[i];
            sum_3d += box3d[i];
            per_box.push(cls[i] + cfg.lambda1 * box2d[i] + cfg.lambda2 * box3d[i]);
        } else {
            per_box.push(cls[i]);
        }
    }
    let classification = sum_cls / n as f64;
    let box_2d = if n_fg > 0 { sum_2d / n_fg as f64 } else { 0.0 };
    let box_3d = if n_fg > 0 { sum_3d / n_fg as f64 } else { 0.0 };
    Ok(LossBreakdown {
        classification,
        box_2d,
        box_3d,
        total: classification + cfg.lambda1 * box_2d + cfg.lambda2 * box_3d,
        per_box,
    })
}

/// Indices of the `max(1, ceil(fraction * n))` highest-loss boxes, ties
/// broken toward the lower index, returned in ascending order.
pub fn hard_negative_mining(losses: &[f64], fraction: f64) -> Result<Vec<usize>, LossError> {
    if losses.is_empty() {
        return Err(LossError::EmptyInput);
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(LossError::InvalidConfig(format!("mining fraction {fraction} not in (0, 1]")));
    }
    let k = ((fraction * losses.len() as f64).ceil() as usize).max(1).min(losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| {
        losses[b].partial_cmp(&losses[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut picked: Vec<usize> = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
