//! Anchor templates shared between the 2D and 3D detection spaces.
//!
//! A template carries a 2D pixel shape plus 3D priors (projected depth,
//! metric dimensions, observation angle) estimated from ground-truth
//! statistics. Templates are spanned over a feature grid, matched to ground
//! truth by 2D IoU, and regressed through the transform defined in
//! [`decode_2d`] / [`decode_3d`] and its exact inverse [`encode_targets`].

use crate::geometry::{iou_2d, wrap_angle, Box2d, Dim3, ProjectedCenter};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("invalid anchor configuration: {0}")]
    InvalidConfig(String),
    #[error("prior computation needs at least one ground truth")]
    EmptyDataset,
    #[error("template {0} has no 3D prior")]
    MissingPrior(usize),
    #[error("degenerate ground truth: {0}")]
    DegenerateGroundTruth(String),
    #[error("prior table line {line}: {msg}")]
    Table { line: usize, msg: String },
}

/// 3D priors attached to an anchor template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior3d {
    /// Mean projected depth in meters.
    pub z_p: f64,
    /// Mean metric dimensions.
    pub dims: Dim3,
    /// Circular-mean observation angle, wrapped to `[-pi, pi)`.
    pub theta: f64,
}

/// Anchor template: a 2D pixel shape, optionally with 3D priors filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorTemplate {
    pub w2d: f64,
    pub h2d: f64,
    pub prior: Option<Prior3d>,
}

impl AnchorTemplate {
    pub fn new(w2d: f64, h2d: f64) -> Self {
        Self { w2d, h2d, prior: None }
    }

    pub fn with_prior(w2d: f64, h2d: f64, prior: Prior3d) -> Self {
        Self { w2d, h2d, prior: Some(prior) }
    }

    fn prior(&self, index: usize) -> Result<&Prior3d, AnchorError> {
        self.prior.as_ref().ok_or(AnchorError::MissingPrior(index))
    }
}

/// A template instantiated at a pixel location of the feature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpannedAnchor {
    pub template: usize,
    /// Pixel center `x`.
    pub x: f64,
    /// Pixel center `y`.
    pub y: f64,
}

/// The 11 regression outputs of one box: 4 for the 2D box, 3 for the
/// projected center, 3 for the metric dimensions (log scale) and 1 for the
/// orientation offset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransformVector {
    pub x2d: f64,
    pub y2d: f64,
    pub w2d: f64,
    pub h2d: f64,
    pub x_p: f64,
    pub y_p: f64,
    pub z_p: f64,
    pub w3d: f64,
    pub h3d: f64,
    pub l3d: f64,
    pub theta: f64,
}

impl TransformVector {
    pub fn zero() -> Self {
        Self::default()
    }

    /// The 7 components describing the 3D box, in output order.
    pub fn components_3d(&self) -> [f64; 7] {
        [self.x_p, self.y_p, self.z_p, self.w3d, self.h3d, self.l3d, self.theta]
    }

    pub fn to_array(&self) -> [f64; 11] {
        [
            self.x2d, self.y2d, self.w2d, self.h2d, self.x_p, self.y_p, self.z_p, self.w3d,
            self.h3d, self.l3d, self.theta,
        ]
    }

    pub fn from_array(v: &[f64; 11]) -> Self {
        Self {
            x2d: v[0],
            y2d: v[1],
            w2d: v[2],
            h2d: v[3],
            x_p: v[4],
            y_p: v[5],
            z_p: v[6],
            w3d: v[7],
            h3d: v[8],
            l3d: v[9],
            theta: v[10],
        }
    }
}

/// Ground-truth box with the projected 3D parameters the priors are
/// computed from. `class` is 1-based; 0 is reserved for background.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub class: usize,
    pub box2d: Box2d,
    pub z_p: f64,
    pub dims: Dim3,
    pub theta_obs: f64,
}

/// Anchor-to-ground-truth assignment. `class == 0` (background) if and only
/// if `gt` is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub anchor: usize,
    pub class: usize,
    pub gt: Option<usize>,
    pub iou: f64,
}

impl Assignment {
    pub fn is_foreground(&self) -> bool {
        self.gt.is_some()
    }
}

/// Per-template prior statistics: how many ground truths matched, and
/// whether the global fallback mean had to be used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateStat {
    pub matches: usize,
    pub fallback: bool,
}

pub type PriorReport = Vec<TemplateStat>;

/// Generates the template set: `count` scales `base * rate^i`, each crossed
/// with every aspect ratio. The scale is the anchor height and the width is
/// `height * ratio`; order is scale-major. The 3D priors are left unset.
pub fn generate_templates(
    base: f64,
    rate: f64,
    count: usize,
    ratios: &[f64],
) -> Result<Vec<AnchorTemplate>, AnchorError> {
    if base <= 0.0 || !base.is_finite() {
        return Err(AnchorError::InvalidConfig(format!("base scale {base} must be positive")));
    }
    if rate <= 1.0 || !rate.is_finite() {
        return Err(AnchorError::InvalidConfig(format!("scale rate {rate} must exceed 1")));
    }
    if count == 0 {
        return Err(AnchorError::InvalidConfig("scale count must be at least 1".into()));
    }
    if ratios.is_empty() || ratios.iter().any(|r| *r <= 0.0 || !r.is_finite()) {
        return Err(AnchorError::InvalidConfig("aspect ratios must be positive".into()));
    }
    let mut templates = Vec::with_capacity(count * ratios.len());
    for i in 0..count {
        let scale = base * rate.powi(i as i32);
        for &ratio in ratios {
            templates.push(AnchorTemplate::new(scale * ratio, scale));
        }
    }
    Ok(templates)
}

/// Instantiates every template at every cell of a `feat_w x feat_h` grid.
/// Centers sit at cell centers, `(i + 0.5) * stride`. Ordering is row-major
/// over cells with the template index varying fastest.
pub fn span_anchors(
    templates: &[AnchorTemplate],
    feat_w: usize,
    feat_h: usize,
    stride: f64,
) -> Vec<SpannedAnchor> {
    let mut out = Vec::with_capacity(feat_w * feat_h * templates.len());
    for y in 0..feat_h {
        for x in 0..feat_w {
            for t in 0..templates.len() {
                out.push(SpannedAnchor {
                    template: t,
                    x: (x as f64 + 0.5) * stride,
                    y: (y as f64 + 0.5) * stride,
                });
            }
        }
    }
    out
}

/// Templates spanned over a fixed feature grid; the unit the detector heads
/// and the prior computation both work against.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub templates: Vec<AnchorTemplate>,
    pub spanned: Vec<SpannedAnchor>,
    pub feat_w: usize,
    pub feat_h: usize,
    pub stride: f64,
}

impl AnchorGrid {
    pub fn new(templates: Vec<AnchorTemplate>, feat_w: usize, feat_h: usize, stride: f64) -> Self {
        let spanned = span_anchors(&templates, feat_w, feat_h, stride);
        Self { templates, spanned, feat_w, feat_h, stride }
    }

    pub fn n_templates(&self) -> usize {
        self.templates.len()
    }

    pub fn len(&self) -> usize {
        self.spanned.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spanned.is_empty()
    }
}

/// The 2D box a spanned anchor covers before any regression is applied.
pub fn anchor_box(anchor: &SpannedAnchor, tpl: &AnchorTemplate) -> Box2d {
    Box2d::from_center_size(anchor.x, anchor.y, tpl.w2d, tpl.h2d)
}

#[derive(Default, Clone, Copy)]
struct PriorAccumulator {
    z: f64,
    w: f64,
    h: f64,
    l: f64,
    sin: f64,
    cos: f64,
    n: usize,
}

impl PriorAccumulator {
    fn add(&mut self, gt: &GroundTruth) {
        self.z += gt.z_p;
        self.w += gt.dims.w;
        self.h += gt.dims.h;
        self.l += gt.dims.l;
        self.sin += gt.theta_obs.sin();
        self.cos += gt.theta_obs.cos();
        self.n += 1;
    }

    fn mean(&self) -> Prior3d {
        let n = self.n as f64;
        Prior3d {
            z_p: self.z / n,
            dims: Dim3::new(self.w / n, self.h / n, self.l / n),
            // circular mean keeps wrapped angles from cancelling
            theta: wrap_angle(self.sin.atan2(self.cos)),
        }
    }
}

/// Fills 3D priors per template as the mean over every (spanned anchor,
/// ground truth) pair whose 2D IoU reaches `iou_thresh`. Templates that
/// match nothing fall back to the mean over all ground truths and are
/// flagged in the report.
pub fn compute_priors(
    templates: &[AnchorTemplate],
    spanned: &[SpannedAnchor],
    gts: &[GroundTruth],
    iou_thresh: f64,
) -> Result<(Vec<AnchorTemplate>, PriorReport), AnchorError> {
    if gts.is_empty() {
        return Err(AnchorError::EmptyDataset);
    }
    let mut acc = vec![PriorAccumulator::default(); templates.len()];
    for anchor in spanned {
        let abox = anchor_box(anchor, &templates[anchor.template]);
        for gt in gts {
            if iou_2d(&abox, &gt.box2d) >= iou_thresh {
                acc[anchor.template].add(gt);
            }
        }
    }
    let mut global = PriorAccumulator::default();
    for gt in gts {
        global.add(gt);
    }
    let mut filled = Vec::with_capacity(templates.len());
    let mut report = Vec::with_capacity(templates.len());
    for (tpl, a) in templates.iter().zip(&acc) {
        let (prior, fallback) = if a.n > 0 { (a.mean(), false) } else { (global.mean(), true) };
        filled.push(AnchorTemplate::with_prior(tpl.w2d, tpl.h2d, prior));
        report.push(TemplateStat { matches: a.n, fallback });
    }
    Ok((filled, report))
}

/// Applies a 2D transform to an anchor: offsets scaled by the template
/// size, log-scale width/height.
pub fn decode_2d(anchor: &SpannedAnchor, tpl: &AnchorTemplate, t: &TransformVector) -> Box2d {
    let cx = anchor.x + t.x2d * tpl.w2d;
    let cy = anchor.y + t.y2d * tpl.h2d;
    let w = t.w2d.exp() * tpl.w2d;
    let h = t.h2d.exp() * tpl.h2d;
    Box2d::from_center_size(cx, cy, w, h)
}

/// Applies a 3D transform: projected-center offsets scaled by the 2D
/// template size, additive depth, log-scale dimensions, additive angle
/// wrapped to `[-pi, pi)`.
pub fn decode_3d(
    anchor: &SpannedAnchor,
    tpl: &AnchorTemplate,
    t: &TransformVector,
) -> Result<(ProjectedCenter, Dim3, f64), AnchorError> {
    let prior = tpl.prior(anchor.template)?;
    let pc = ProjectedCenter::new(
        anchor.x + t.x_p * tpl.w2d,
        anchor.y + t.y_p * tpl.h2d,
        t.z_p + prior.z_p,
    );
    let dims = Dim3::new(
        t.w3d.exp() * prior.dims.w,
        t.h3d.exp() * prior.dims.h,
        t.l3d.exp() * prior.dims.l,
    );
    Ok((pc, dims, wrap_angle(t.theta + prior.theta)))
}

/// Exact algebraic inverse of [`decode_2d`] and [`decode_3d`]: the
/// transform that regresses this anchor onto the given ground truth.
///
/// The angle component is a raw difference (no wrapping); wrapping happens
/// at decode time.
pub fn encode_targets(
    anchor: &SpannedAnchor,
    tpl: &AnchorTemplate,
    gt2d: &Box2d,
    gt_pc: &ProjectedCenter,
    gt_dims: &Dim3,
    gt_theta: f64,
) -> Result<TransformVector, AnchorError> {
    let prior = tpl.prior(anchor.template)?;
    if gt2d.width() <= 0.0 || gt2d.height() <= 0.0 {
        return Err(AnchorError::DegenerateGroundTruth(format!(
            "2D box {:.3}x{:.3} has non-positive size",
            gt2d.width(),
            gt2d.height()
        )));
    }
    if gt_dims.w <= 0.0 || gt_dims.h <= 0.0 || gt_dims.l <= 0.0 {
        return Err(AnchorError::DegenerateGroundTruth(format!(
            "3D dims {:?} must be positive",
            gt_dims
        )));
    }
    Ok(TransformVector {
        x2d: (gt2d.center_x() - anchor.x) / tpl.w2d,
        y2d: (gt2d.center_y() - anchor.y) / tpl.h2d,
        w2d: (gt2d.width() / tpl.w2d).ln(),
        h2d: (gt2d.height() / tpl.h2d).ln(),
        x_p: (gt_pc.x - anchor.x) / tpl.w2d,
        y_p: (gt_pc.y - anchor.y) / tpl.h2d,
        z_p: gt_pc.z - prior.z_p,
        w3d: (gt_dims.w / prior.dims.w).ln(),
        h3d: (gt_dims.h / prior.dims.h).ln(),
        l3d: (gt_dims.l / prior.dims.l).ln(),
        theta: gt_theta - prior.theta,
    })
}

/// Assigns each anchor its highest-IoU ground truth when that IoU reaches
/// `thresh`, otherwise background. Ties break toward the lower ground-truth
/// index.
pub fn match_anchors(
    spanned: &[SpannedAnchor],
    templates: &[AnchorTemplate],
    gts: &[GroundTruth],
    thresh: f64,
) -> Vec<Assignment> {
    spanned
        .iter()
        .enumerate()
        .map(|(i, anchor)| {
            let abox = anchor_box(anchor, &templates[anchor.template]);
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in gts.iter().enumerate() {
                let iou = iou_2d(&abox, &gt.box2d);
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, iou)) if iou >= thresh => {
                    Assignment { anchor: i, class: gts[j].class, gt: Some(j), iou }
                }
                Some((_, iou)) => Assignment { anchor: i, class: 0, gt: None, iou },
                None => Assignment { anchor: i, class: 0, gt: None, iou: 0.0 },
            }
        })
        .collect()
}

const PRIOR_TABLE_MAGIC: &str = "monorpn-priors";
const PRIOR_TABLE_VERSION: u32 = 1;

/// Serializes templates and their priors as a versioned plain-text table,
/// one line per template: id, 2D size, depth prior, dimension priors, angle
/// prior, and the number of matched ground truths. Numbers use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_prior_table(
    templates: &[AnchorTemplate],
    report: &PriorReport,
) -> Result<String, AnchorError> {
    let mut out = format!("{PRIOR_TABLE_MAGIC} {PRIOR_TABLE_VERSION}\n{}\n", templates.len());
    out.push_str("# id w2d h2d z_p w3d h3d l3d theta matches\n");
    for (i, tpl) in templates.iter().enumerate() {
        let p = tpl.prior(i)?;
        let matches = report.get(i).map_or(0, |s| s.matches);
        out.push_str(&format!(
            "{i} {} {} {} {} {} {} {} {matches}\n",
            tpl.w2d, tpl.h2d, p.z_p, p.dims.w, p.dims.h, p.dims.l, p.theta
        ));
    }
    Ok(out)
}

/// Parses a prior table written by [`write_prior_table`].
pub fn parse_prior_table(text: &str) -> Result<(Vec<AnchorTemplate>, PriorReport), AnchorError> {
    let err = |line: usize, msg: String| AnchorError::Table { line, msg };
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (n0, header) = lines.next().ok_or_else(|| err(1, "empty table".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(PRIOR_TABLE_MAGIC) {
        return Err(err(n0 + 1, format!("expected `{PRIOR_TABLE_MAGIC}` header")));
    }
    match parts.next().map(str::parse::<u32>) {
        Some(Ok(PRIOR_TABLE_VERSION)) => {}
        other => return Err(err(n0 + 1, format!("unsupported table version {other:?}"))),
    }
    let (n1, count_line) = lines.next().ok_or_else(|| err(n0 + 1, "missing count".into()))?;
    let count: usize =
        count_line.trim().parse().map_err(|e| err(n1 + 1, format!("bad count: {e}")))?;
    let mut templates = Vec::with_capacity(count);
    let mut report = Vec::with_capacity(count);
    for (n, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(err(n + 1, format!("expected 9 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64, AnchorError> {
            fields[k].parse().map_err(|e| err(n + 1, format!("field {k}: {e}")))
        };
        let id: usize =
            fields[0].parse().map_err(|e| err(n + 1, format!("bad template id: {e}")))?;
        if id != templates.len() {
            return Err(err(n + 1, format!("template id {id} out of order")));
        }
        let matches: usize =
            fields[8].parse().map_err(|e| err(n + 1, format!("bad match count: {e}")))?;
        templates.push(AnchorTemplate::with_prior(
            num(1)?,
            num(2)?,
            Prior3d { z_p: num(3)?, dims: Dim3::new(num(4)?, num(5)?, num(6)?), theta: num(7)? },
        ));
        report.push(TemplateStat { matches, fallback: matches == 0 });
    }
    if templates.len() != count {
        return Err(err(0, format!("expected {count} templates, found {}", templates.len())));
    }
    Ok((templates, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn car_prior() -> Prior3d {
        Prior3d { z_p: 40.0, dims: Dim3::new(1.6, 1.5, 3.9), theta: -0.08 }
    }

    fn template() -> AnchorTemplate {
        AnchorTemplate::with_prior(48.0, 36.0, car_prior())
    }

    fn anchor() -> SpannedAnchor {
        SpannedAnchor { template: 0, x: 120.0, y: 88.0 }
    }

    #[test]
    fn template_generation_matches_configured_counts() {
        let templates = generate_templates(30.0, 1.265, 12, &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(templates.len(), 36);
        // first scale with unit ratio is square
        assert_eq!(templates[1].w2d, 30.0);
        assert_eq!(templates[1].h2d, 30.0);
        // last scale evaluates the power series
        let last = templates[35].h2d;
        assert!((last - 398.2).abs() < 0.1, "{last}");
        assert!(templates.iter().all(|t| t.prior.is_none()));
    }

    #[test]
    fn template_generation_rejects_bad_config() {
        assert!(generate_templates(0.0, 1.3, 3, &[1.0]).is_err());
        assert!(generate_templates(30.0, 1.0, 3, &[1.0]).is_err());
        assert!(generate_templates(30.0, 1.3, 0, &[1.0]).is_err());
        assert!(generate_templates(30.0, 1.3, 3, &[]).is_err());
        assert!(generate_templates(30.0, 1.3, 3, &[-0.5]).is_err());
    }

    #[test]
    fn spanning_counts_and_centers() {
        let templates = generate_templates(30.0, 1.265, 12, &[0.5, 1.0, 1.5]).unwrap();
        assert_eq!(span_anchors(&templates, 1, 1, 16.0).len(), 36);
        assert_eq!(span_anchors(&templates, 32, 16, 16.0).len(), 18_432);
        let spanned = span_anchors(&templates, 8, 8, 16.0);
        // grid cell (2, 3), template-minor ordering
        let a = &spanned[(3 * 8 + 2) * 36];
        assert_eq!((a.x, a.y), (40.0, 56.0));
        assert_eq!(a.template, 0);
    }

    #[test]
    fn priors_from_single_matching_ground_truth() {
        let templates = vec![AnchorTemplate::new(48.0, 36.0)];
        let spanned = span_anchors(&templates, 4, 4, 16.0);
        let gt = GroundTruth {
            class: 1,
            box2d: Box2d::from_center_size(40.0, 40.0, 48.0, 36.0),
            z_p: 22.0,
            dims: Dim3::new(1.6, 1.5, 3.9),
            theta_obs: 0.4,
        };
        let (filled, report) = compute_priors(&templates, &spanned, &[gt.clone()], 0.5).unwrap();
        let p = filled[0].prior.unwrap();
        // every matching pair sees the same ground truth, so the mean is it
        assert!((p.z_p - 22.0).abs() < 1e-12);
        assert!((p.dims.w - gt.dims.w).abs() < 1e-12);
        assert!((p.dims.l - gt.dims.l).abs() < 1e-12);
        assert!((p.theta - 0.4).abs() < 1e-12);
        assert!(report[0].matches >= 1 && !report[0].fallback);
    }

    #[test]
    fn priors_average_multiple_matches() {
        let templates = vec![AnchorTemplate::new(48.0, 36.0)];
        // single anchor position so each gt is counted once
        let spanned = vec![SpannedAnchor { template: 0, x: 40.0, y: 40.0 }];
        let mk = |z: f64| GroundTruth {
            class: 1,
            box2d: Box2d::from_center_size(40.0, 40.0, 48.0, 36.0),
            z_p: z,
            dims: Dim3::new(1.0, 1.0, 1.0),
            theta_obs: 0.0,
        };
        let (filled, _) = compute_priors(&templates, &spanned, &[mk(10.0), mk(20.0)], 0.5).unwrap();
        assert_eq!(filled[0].prior.unwrap().z_p, 15.0);
    }

    #[test]
    fn priors_fall_back_to_global_mean() {
        let templates = vec![AnchorTemplate::new(48.0, 36.0), AnchorTemplate::new(800.0, 800.0)];
        let spanned = span_anchors(&templates, 4, 4, 16.0);
        let gt = GroundTruth {
            class: 1,
            box2d: Box2d::from_center_size(40.0, 40.0, 48.0, 36.0),
            z_p: 31.0,
            dims: Dim3::new(1.6, 1.5, 3.9),
            theta_obs: -0.2,
        };
        let (filled, report) = compute_priors(&templates, &spanned, &[gt], 0.5).unwrap();
        assert!(!report[0].fallback);
        assert!(report[1].fallback);
        assert_eq!(report[1].matches, 0);
        // fallback equals the mean over all ground truths (here: the only one)
        assert_eq!(filled[1].prior.unwrap().z_p, 31.0);
    }

    #[test]
    fn priors_need_ground_truth() {
        let templates = vec![AnchorTemplate::new(48.0, 36.0)];
        let spanned = span_anchors(&templates, 2, 2, 16.0);
        assert_eq!(
            compute_priors(&templates, &spanned, &[], 0.5).unwrap_err(),
            AnchorError::EmptyDataset
        );
    }

    #[test]
    fn priors_permutation_invariant() {
        let templates = generate_templates(30.0, 1.4, 4, &[0.5, 1.0]).unwrap();
        let spanned = span_anchors(&templates, 6, 6, 16.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut gts: Vec<GroundTruth> = (0..12)
            .map(|i| GroundTruth {
                class: 1 + i % 3,
                box2d: Box2d::from_center_size(
                    rng.gen_range(10.0..90.0),
                    rng.gen_range(10.0..90.0),
                    rng.gen_range(20.0..80.0),
                    rng.gen_range(20.0..80.0),
                ),
                z_p: rng.gen_range(5.0..60.0),
                dims: Dim3::new(
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.5..2.5),
                    rng.gen_range(0.5..5.0),
                ),
                theta_obs: rng.gen_range(-3.1..3.1),
            })
            .collect();
        let (a, _) = compute_priors(&templates, &spanned, &gts, 0.5).unwrap();
        gts.reverse();
        let (b, _) = compute_priors(&templates, &spanned, &gts, 0.5).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            let (pa, pb) = (ta.prior.unwrap(), tb.prior.unwrap());
            assert!((pa.z_p - pb.z_p).abs() < 1e-9);
            assert!((pa.theta - pb.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_2d_zero_transform_is_fixed_point() {
        let b = decode_2d(&anchor(), &template(), &TransformVector::zero());
        assert_eq!(b, Box2d::from_center_size(120.0, 88.0, 48.0, 36.0));
    }

    #[test]
    fn decode_2d_log_width() {
        let t = TransformVector { w2d: 2.0_f64.ln(), ..TransformVector::zero() };
        let b = decode_2d(&anchor(), &template(), &t);
        assert!((b.width() - 96.0).abs() < 1e-9);
        assert!((b.center_x() - 120.0).abs() < 1e-9);
    }

    #[test]
    fn decode_3d_zero_transform_returns_priors() {
        let (pc, dims, theta) = decode_3d(&anchor(), &template(), &TransformVector::zero()).unwrap();
        assert_eq!(pc, ProjectedCenter::new(120.0, 88.0, 40.0));
        assert_eq!(dims, car_prior().dims);
        assert_eq!(theta, car_prior().theta);
    }

    #[test]
    fn decode_3d_additive_depth_and_log_dims() {
        let t = TransformVector { z_p: 2.0, w3d: 1.5_f64.ln(), ..TransformVector::zero() };
        let (pc, dims, _) = decode_3d(&anchor(), &template(), &t).unwrap();
        assert_eq!(pc.z, 42.0);
        assert!((dims.w - 2.4).abs() < 1e-12);
    }

    #[test]
    fn decode_3d_requires_prior() {
        let tpl = AnchorTemplate::new(48.0, 36.0);
        assert_eq!(
            decode_3d(&anchor(), &tpl, &TransformVector::zero()).unwrap_err(),
            AnchorError::MissingPrior(0)
        );
    }

    #[test]
    fn encode_matches_priors_gives_zero_vector() {
        let gt2d = Box2d::from_center_size(120.0, 88.0, 48.0, 36.0);
        let pc = ProjectedCenter::new(120.0, 88.0, 40.0);
        let t = encode_targets(&anchor(), &template(), &gt2d, &pc, &car_prior().dims, -0.08)
            .unwrap();
        for v in t.to_array() {
            assert!(v.abs() < 1e-12, "{t:?}");
        }
    }

    #[test]
    fn encode_additive_depth_inverse() {
        let gt2d = Box2d::from_center_size(100.0, 80.0, 50.0, 40.0);
        let pc = ProjectedCenter::new(118.0, 86.0, 35.0);
        let t = encode_targets(&anchor(), &template(), &gt2d, &pc, &Dim3::new(1.0, 1.0, 1.0), 0.0)
            .unwrap();
        assert_eq!(t.z_p, -5.0);
    }

    #[test]
    fn encode_rejects_degenerate_ground_truth() {
        let pc = ProjectedCenter::new(0.0, 0.0, 10.0);
        let flat = Box2d::new(0.0, 0.0, 10.0, 0.0);
        assert!(matches!(
            encode_targets(&anchor(), &template(), &flat, &pc, &Dim3::new(1.0, 1.0, 1.0), 0.0),
            Err(AnchorError::DegenerateGroundTruth(_))
        ));
        let ok2d = Box2d::new(0.0, 0.0, 10.0, 10.0);
        assert!(matches!(
            encode_targets(&anchor(), &template(), &ok2d, &pc, &Dim3::new(0.0, 1.0, 1.0), 0.0),
            Err(AnchorError::DegenerateGroundTruth(_))
        ));
    }

    #[test]
    fn encode_decode_roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let anchor = anchor();
        let tpl = template();
        for _ in 0..1000 {
            let t = TransformVector {
                x2d: rng.gen_range(-1.0..1.0),
                y2d: rng.gen_range(-1.0..1.0),
                w2d: rng.gen_range(-1.0..1.0),
                h2d: rng.gen_range(-1.0..1.0),
                x_p: rng.gen_range(-1.0..1.0),
                y_p: rng.gen_range(-1.0..1.0),
                z_p: rng.gen_range(-10.0..10.0),
                w3d: rng.gen_range(-0.7..0.7),
                h3d: rng.gen_range(-0.7..0.7),
                l3d: rng.gen_range(-0.7..0.7),
                theta: rng.gen_range(-1.0..1.0),
            };
            let b = decode_2d(&anchor, &tpl, &t);
            let (pc, dims, theta) = decode_3d(&anchor, &tpl, &t).unwrap();
            let back = encode_targets(&anchor, &tpl, &b, &pc, &dims, theta).unwrap();
            for (x, y) in t.to_array().iter().zip(back.to_array()) {
                let err = (x - y).abs() / x.abs().max(1.0);
                assert!(err < 1e-9, "{t:?} vs {back:?}");
            }
        }
    }

    #[test]
    fn matching_thresholds_and_ties() {
        let templates = vec![AnchorTemplate::new(40.0, 40.0)];
        let spanned = vec![SpannedAnchor { template: 0, x: 20.0, y: 20.0 }];
        // no ground truths: background
        let a = match_anchors(&spanned, &templates, &[], 0.5);
        assert_eq!(a[0], Assignment { anchor: 0, class: 0, gt: None, iou: 0.0 });

        let mk = |cx: f64, class: usize| GroundTruth {
            class,
            box2d: Box2d::from_center_size(cx, 20.0, 40.0, 40.0),
            z_p: 10.0,
            dims: Dim3::new(1.0, 1.0, 1.0),
            theta_obs: 0.0,
        };
        // two overlapping gts: highest IoU wins
        let gts = vec![mk(24.0, 1), mk(34.0, 2)];
        let a = match_anchors(&spanned, &templates, &gts, 0.5);
        assert_eq!(a[0].gt, Some(0));
        assert_eq!(a[0].class, 1);
        assert!(a[0].iou >= 0.5);
        // exact tie breaks toward the lower index
        let gts = vec![mk(24.0, 1), mk(24.0, 2)];
        let a = match_anchors(&spanned, &templates, &gts, 0.5);
        assert_eq!(a[0].gt, Some(0));
        // just-below-threshold IoU stays background
        let gts = vec![mk(45.0, 1)];
        let a = match_anchors(&spanned, &templates, &gts, 0.5);
        assert_eq!(a[0].class, 0);
        assert_eq!(a[0].gt, None);
        assert!(a[0].iou < 0.5);
    }

    #[test]
    fn prior_table_roundtrip_is_bit_exact() {
        let templates = generate_templates(30.0, 1.265, 12, &[0.5, 1.0, 1.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let filled: Vec<AnchorTemplate> = templates
            .iter()
            .map(|t| {
                AnchorTemplate::with_prior(
                    t.w2d,
                    t.h2d,
                    Prior3d {
                        z_p: rng.gen_range(4.0..70.0),
                        dims: Dim3::new(
                            rng.gen_range(0.3..3.0),
                            rng.gen_range(0.3..3.0),
                            rng.gen_range(0.3..6.0),
                        ),
                        theta: rng.gen_range(-3.14..3.14),
                    },
                )
            })
            .collect();
        let report: PriorReport = (0..filled.len())
            .map(|i| TemplateStat { matches: i % 5, fallback: i % 5 == 0 })
            .collect();
        let text = write_prior_table(&filled, &report).unwrap();
        let (parsed, parsed_report) = parse_prior_table(&text).unwrap();
        assert_eq!(parsed, filled);
        assert_eq!(parsed_report, report);
        // serialization is bit-stable
        assert_eq!(write_prior_table(&parsed, &parsed_report).unwrap(), text);
    }

    #[test]
    fn prior_table_parse_errors_carry_line_numbers() {
        assert!(matches!(parse_prior_table(""), Err(AnchorError::Table { .. })));
        let bad = "monorpn-priors 1\n1\n0 30 30 40 1.6 1.5 3.9\n";
        match parse_prior_table(bad) {
            Err(AnchorError::Table { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected table error, got {other:?}"),
        }
    }
}
