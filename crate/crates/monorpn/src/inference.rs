//! From raw head outputs to final detections.
//!
//! The pipeline runs a global (plain convolution) and a local (depth-aware
//! convolution) head over a feature map, fuses the 12 outputs per head with
//! attention weights, decodes per-anchor boxes, filters by score, applies
//! greedy per-class NMS, and optionally refines each detection's
//! orientation by hill-climbing the L1 distance between its 2D box and the
//! projection of its 3D box.

use crate::anchors::{decode_2d, decode_3d, AnchorError, AnchorGrid, TransformVector};
use crate::geometry::{
    back_project, box_project, iou_2d, wrap_angle, Box2d, CameraCalibration, Dim3,
    GeometryError, ProjectedCenter,
};
use crate::nnops::{
    conv2d, depth_aware_conv, fuse_outputs, softmax_slice, DepthAwareKernelSet, FusionWeights,
    OpError, Tensor,
};
use nalgebra::Vector3;
use thiserror::Error;

pub mod params;

/// The 11 regression output names in head order; index 0 of the heads is
/// the classification output.
pub const REGRESSION_OUTPUTS: usize = 11;
/// Classification plus regression.
pub const HEAD_OUTPUTS: usize = 12;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("orientation refinement exceeded {0} iterations")]
    IterationCap(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Raw per-anchor network outputs: a classification map of shape
/// `[n_anchors, n_classes, h, w]` and 11 regression maps stacked as
/// `[11, n_anchors, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputMaps {
    cls: Tensor,
    reg: Tensor,
}

impl OutputMaps {
    pub fn new(cls: Tensor, reg: Tensor) -> Result<Self, InferenceError> {
        if cls.rank() != 4 {
            return Err(InferenceError::ShapeMismatch(format!(
                "classification map must be [n_a, n_c, h, w], got {:?}",
                cls.shape()
            )));
        }
        if reg.rank() != 4 || reg.shape()[0] != REGRESSION_OUTPUTS {
            return Err(InferenceError::ShapeMismatch(format!(
                "regression maps must be [11, n_a, h, w], got {:?}",
                reg.shape()
            )));
        }
        if reg.shape()[1] != cls.shape()[0]
            || reg.shape()[2] != cls.shape()[2]
            || reg.shape()[3] != cls.shape()[3]
        {
            return Err(InferenceError::ShapeMismatch(format!(
                "classification {:?} and regression {:?} maps disagree",
                cls.shape(),
                reg.shape()
            )));
        }
        Ok(Self { cls, reg })
    }

    /// Assembles output maps from the 12 fused head outputs: output 0 has
    /// `n_a * n_c` channels, outputs 1..12 have `n_a` channels each.
    pub fn from_head_outputs(outputs: &[Tensor], n_anchors: usize) -> Result<Self, InferenceError> {
        if outputs.len() != HEAD_OUTPUTS {
            return Err(InferenceError::ShapeMismatch(format!(
                "expected {HEAD_OUTPUTS} head outputs, got {}",
                outputs.len()
            )));
        }
        let (h, w) = (outputs[0].shape()[1], outputs[0].shape()[2]);
        let cls_ch = outputs[0].shape()[0];
        if n_anchors == 0 || cls_ch % n_anchors != 0 {
            return Err(InferenceError::ShapeMismatch(format!(
                "classification channels {cls_ch} not divisible by {n_anchors} anchors"
            )));
        }
        let n_classes = cls_ch / n_anchors;
        let cls = outputs[0].clone().reshape(vec![n_anchors, n_classes, h, w])?;
        let mut reg = Tensor::zeros(vec![REGRESSION_OUTPUTS, n_anchors, h, w]);
        for (k, out) in outputs[1..].iter().enumerate() {
            if out.shape() != [n_anchors, h, w] {
                return Err(InferenceError::ShapeMismatch(format!(
                    "regression output {} has shape {:?}, expected [{n_anchors}, {h}, {w}]",
                    k + 1,
                    out.shape()
                )));
            }
            let n = out.len();
            reg.data_mut()[k * n..(k + 1) * n].copy_from_slice(out.data());
        }
        Self::new(cls, reg)
    }

    pub fn n_anchors(&self) -> usize {
        self.cls.shape()[0]
    }

    pub fn n_classes(&self) -> usize {
        self.cls.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.cls.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.cls.shape()[3]
    }

    /// Total box count, `w * h * n_anchors`.
    pub fn n_boxes(&self) -> usize {
        self.width() * self.height() * self.n_anchors()
    }

    pub fn class_logits(&self, template: usize, y: usize, x: usize) -> Vec<f64> {
        (0..self.n_classes()).map(|c| self.cls.at(&[template, c, y, x])).collect()
    }

    pub fn transform(&self, template: usize, y: usize, x: usize) -> TransformVector {
        let mut v = [0.0; REGRESSION_OUTPUTS];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = self.reg.at(&[k, template, y, x]);
        }
        TransformVector::from_array(&v)
    }

    pub fn set_class_logit(&mut self, template: usize, class: usize, y: usize, x: usize, v: f64) {
        self.cls.set(&[template, class, y, x], v);
    }

    pub fn set_transform(&mut self, template: usize, y: usize, x: usize, t: &TransformVector) {
        for (k, v) in t.to_array().iter().enumerate() {
            self.reg.set(&[k, template, y, x], *v);
        }
    }

    pub fn cls_map(&self) -> &Tensor {
        &self.cls
    }

    pub fn reg_maps(&self) -> &Tensor {
        &self.reg
    }
}

/// One decoded detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// 1-based class index; background never surfaces as a detection.
    pub class: usize,
    /// Softmax probability of `class`.
    pub score: f64,
    /// Index of the anchor this detection decoded from.
    pub anchor: usize,
    pub box2d: Box2d,
    pub center_p: ProjectedCenter,
    pub dims: Dim3,
    pub theta_obs: f64,
    /// Back-projected camera-space center.
    pub center_cam: Vector3<f64>,
}

impl Detection {
    /// Global yaw of the detection's 3D box.
    pub fn yaw(&self) -> f64 {
        wrap_angle(self.theta_obs + self.center_cam.x.atan2(self.center_cam.z))
    }
}

/// Step schedule of the orientation refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostOptConfig {
    /// Initial step in radians.
    pub sigma: f64,
    /// Termination step in radians.
    pub beta: f64,
    /// Step decay factor.
    pub gamma: f64,
}

impl Default for PostOptConfig {
    fn default() -> Self {
        Self { sigma: 0.3 * std::f64::consts::PI, beta: 0.01, gamma: 0.5 }
    }
}

impl PostOptConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.sigma > self.beta && self.beta > 0.0) {
            return Err(InferenceError::InvalidConfig(format!(
                "need sigma > beta > 0, got sigma {} beta {}",
                self.sigma, self.beta
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(InferenceError::InvalidConfig(format!(
                "decay {} must lie in (0, 1)",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Decodes every anchor's best non-background class and box. Anchors whose
/// arg-max class is background, whose score falls below `score_thresh`, or
/// whose decoded depth is non-positive are dropped.
pub fn decode_detections(
    maps: &OutputMaps,
    grid: &AnchorGrid,
    calib: &CameraCalibration,
    score_thresh: f64,
) -> Result<Vec<Detection>, InferenceError> {
    if maps.n_anchors() != grid.n_templates()
        || maps.height() != grid.feat_h
        || maps.width() != grid.feat_w
    {
        return Err(InferenceError::ShapeMismatch(format!(
            "maps ({} anchors, {}x{}) vs grid ({} templates, {}x{})",
            maps.n_anchors(),
            maps.width(),
            maps.height(),
            grid.n_templates(),
            grid.feat_w,
            grid.feat_h
        )));
    }
    let n_a = grid.n_templates();
    let mut out = Vec::new();
    for (idx, anchor) in grid.spanned.iter().enumerate() {
        let cell = idx / n_a;
        let (x, y) = (cell % grid.feat_w, cell / grid.feat_w);
        let logits = maps.class_logits(anchor.template, y, x);
        let probs = softmax_slice(&logits);
        let (best, &score) = probs
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
            .expect("class axis is non-empty");
        if best == 0 || score < score_thresh {
            continue;
        }
        let t = maps.transform(anchor.template, y, x);
        let tpl = &grid.templates[anchor.template];
        let box2d = decode_2d(anchor, tpl, &t);
        let (center_p, dims, theta_obs) = decode_3d(anchor, tpl, &t)?;
        if center_p.z <= 0.0 {
            continue;
        }
        let center_cam = back_project(calib, &center_p)?;
        out.push(Detection {
            class: best,
            score,
            anchor: idx,
            box2d,
            center_p,
            dims,
            theta_obs,
            center_cam,
        });
    }
    Ok(out)
}

fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b].score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(dets[a].anchor.cmp(&dets[b].anchor))
    });
    order
}

/// Greedy per-class non-maximum suppression in the 2D image space: walk
/// detections by descending score (ties toward the lower anchor index) and
/// keep a box iff its IoU with every kept box of the same class stays at or
/// below `iou_thresh`.
pub fn nms_2d(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for &i in &score_order(dets) {
        let candidate = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class == candidate.class && iou_2d(&k.box2d, &candidate.box2d) > iou_thresh);
        if !suppressed {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Result of the orientation refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaOpt {
    /// Refined global yaw.
    pub yaw: f64,
    /// Refined observation angle consistent with the detection center.
    pub theta_obs: f64,
    /// L1 distance at the starting yaw (before any probing).
    pub initial_l1: f64,
    /// L1 distance at the returned yaw.
    pub final_l1: f64,
    /// Loop passes executed.
    pub iterations: usize,
    /// Step decays executed.
    pub decays: usize,
}

/// Sum of absolute differences over the four box coordinates.
pub fn box_l1(a: &Box2d, b: &Box2d) -> f64 {
    (a.x_min - b.x_min).abs()
        + (a.y_min - b.y_min).abs()
        + (a.x_max - b.x_max).abs()
        + (a.y_max - b.y_max).abs()
}

const THETA_ITERATION_CAP: usize = 1000;

/// Hill-climbs the detection's yaw so the projected 3D box agrees with its
/// 2D box under the L1 corner distance.
///
/// Per step the two probes `yaw +/- sigma` are scored; when neither
/// strictly improves on the best seen loss the step decays by `gamma`,
/// otherwise the better probe is accepted. The loop runs while
/// `sigma >= beta`. The best-seen loss is seeded at `yaw - sigma`, so the
/// very first pass decays unless the `+sigma` probe strictly improves on
/// the seed.
pub fn optimize_theta(
    det: &Detection,
    calib: &CameraCalibration,
    cfg: &PostOptConfig,
) -> Result<ThetaOpt, InferenceError> {
    cfg.validate()?;
    let project = |yaw: f64| -> Result<f64, InferenceError> {
        let b = box_project(calib, &det.center_p, &det.dims, yaw)?;
        Ok(box_l1(&det.box2d, &b))
    };
    let mut yaw = det.yaw();
    let initial_l1 = project(yaw)?;
    let mut sigma = cfg.sigma;
    let mut eta = project(yaw - sigma)?;
    let mut iterations = 0usize;
    let mut decays = 0usize;
    while sigma >= cfg.beta {
        iterations += 1;
        if iterations > THETA_ITERATION_CAP {
            return Err(InferenceError::IterationCap(THETA_ITERATION_CAP));
        }
        let loss_minus = project(yaw - sigma)?;
        let loss_plus = project(yaw + sigma)?;
        if loss_minus.min(loss_plus) >= eta {
            sigma *= cfg.gamma;
            decays += 1;
        } else if loss_minus < loss_plus {
            yaw -= sigma;
            eta = loss_minus;
        } else {
            yaw += sigma;
            eta = loss_plus;
        }
    }
    let final_l1 = project(yaw)?;
    Ok(ThetaOpt {
        yaw: wrap_angle(yaw),
        theta_obs: wrap_angle(yaw - det.center_cam.x.atan2(det.center_cam.z)),
        initial_l1,
        final_l1,
        iterations,
        decays,
    })
}

/// Scans the L1-vs-yaw landscape of a box against `target` and reports
/// whether it has a single basin: every strict local minimum of the curve
/// sampled over `yaw_ref +/- window` lies within `tol` of `yaw_ref`.
///
/// A 2D box constrains a cuboid's yaw only up to reflection-like partner
/// orientations (for example the near-exact partner about the footprint
/// diagonal, `2*atan(w/l)` away) plus shallow corner-switch minima, so
/// hill-climbing the consistency loss recovers the true yaw only on
/// single-basin instances. Yaws whose projection fails count as not
/// single-basin.
pub fn yaw_single_basin(
    calib: &CameraCalibration,
    pc: &ProjectedCenter,
    dims: &Dim3,
    target: &Box2d,
    yaw_ref: f64,
    window: f64,
    tol: f64,
) -> bool {
    let step = 0.02;
    let n = (2.0 * window / step).ceil() as usize;
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let yaw = yaw_ref - window + k as f64 * step;
        match box_project(calib, pc, dims, yaw) {
            Ok(b) => values.push(box_l1(target, &b)),
            Err(_) => return false,
        }
    }
    for i in 1..values.len().saturating_sub(1) {
        if values[i] < values[i - 1] && values[i] < values[i + 1] {
            let yaw = yaw_ref - window + i as f64 * step;
            if wrap_angle(yaw - yaw_ref).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Parameters of one plain-convolution head output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvHead {
    /// Kernels of shape `[out_ch, in_ch, kh, kw]`; odd kernel sizes keep
    /// same-padding well defined.
    pub kernels: Tensor,
    pub bias: Vec<f64>,
}

/// All learned parameters the pipeline consumes: 12 global conv outputs, 12
/// local depth-aware outputs, and the fusion attention logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub global: Vec<ConvHead>,
    pub local: Vec<DepthAwareKernelSet>,
    pub fusion: FusionWeights,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.global.len() != HEAD_OUTPUTS || self.local.len() != HEAD_OUTPUTS {
            return Err(InferenceError::ShapeMismatch(format!(
                "need {HEAD_OUTPUTS} outputs per path, got {} global / {} local",
                self.global.len(),
                self.local.len()
            )));
        }
        for (i, (g, l)) in self.global.iter().zip(&self.local).enumerate() {
            if g.kernels.shape()[0] != l.out_channels()
                || g.kernels.shape()[1] != l.in_channels()
            {
                return Err(InferenceError::ShapeMismatch(format!(
                    "output {i}: global {:?} vs local [{}, {}] channels",
                    &g.kernels.shape()[..2],
                    l.out_channels(),
                    l.in_channels()
                )));
            }
        }
        Ok(())
    }

    /// Anchor count implied by the regression outputs.
    pub fn n_anchors(&self) -> usize {
        self.global[1].kernels.shape()[0]
    }
}

/// Inference-time knobs, defaulting to score threshold 0.75, NMS IoU 0.4,
/// and orientation refinement enabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub post_opt: Option<PostOptConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { score_thresh: 0.75, nms_iou: 0.4, post_opt: Some(PostOptConfig::default()) }
    }
}

fn same_pad(k: usize) -> Result<usize, InferenceError> {
    if k % 2 == 0 {
        return Err(InferenceError::ShapeMismatch(format!(
            "kernel size {k} must be odd for same padding"
        )));
    }
    Ok((k - 1) / 2)
}

/// Runs both head paths over a feature map and fuses their 12 outputs.
pub fn run_heads(
    features: &Tensor,
    params: &PipelineParams,
) -> Result<Vec<Tensor>, InferenceError> {
    params.validate()?;
    let mut fused = Vec::with_capacity(HEAD_OUTPUTS);
    for i in 0..HEAD_OUTPUTS {
        let g_head = &params.global[i];
        let l_head = &params.local[i];
        let pad = same_pad(g_head.kernels.shape()[2])?;
        let global = conv2d(features, &g_head.kernels, &g_head.bias, 1, pad, 1)?;
        let (kh, _) = l_head.kernel_size();
        let local = depth_aware_conv(features, l_head, 1, same_pad(kh)?)?;
        fused.push(fuse_outputs(&global, &local, &params.fusion, i)?);
    }
    Ok(fused)
}

/// Full inference pass: heads, fusion, decoding, score filter, NMS, and
/// optional orientation refinement. Output is sorted by descending score
/// (ties toward the lower anchor index).
pub fn run_pipeline(
    features: &Tensor,
    params: &PipelineParams,
    grid: &AnchorGrid,
    calib: &CameraCalibration,
    cfg: &PipelineConfig,
) -> Result<Vec<Detection>, InferenceError> {
    let fused = run_heads(features, params)?;
    let maps = OutputMaps::from_head_outputs(&fused, params.n_anchors())?;
    let dets = decode_detections(&maps, grid, calib, cfg.score_thresh)?;
    let mut kept = nms_2d(&dets, cfg.nms_iou);
    if let Some(post) = &cfg.post_opt {
        for det in &mut kept {
            let refined = optimize_theta(det, calib, post)?;
            det.theta_obs = refined.theta_obs;
        }
    }
    let order = score_order(&kept);
    Ok(order.into_iter().map(|i| kept[i].clone()).collect())
}
