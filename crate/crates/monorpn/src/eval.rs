//! KITTI-protocol average precision for the 2D, bird's-eye-view, and 3D
//! detection tasks under easy/moderate/hard difficulty filtering.
//!
//! Matching is greedy over detections in descending score order: each
//! detection takes the highest-IoU unmatched counted ground truth at or
//! above the task threshold; detections that only overlap ignored ground
//! truth (DontCare regions or boxes harder than the current difficulty) are
//! neither true nor false positives. AP interpolates precision at 11 (or
//! optionally 40) recall points.

use crate::geometry::{iou_2d, iou_3d, iou_bev};
use crate::kitti::{parse_label_file, KittiError, KittiObject};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    File { path: String, source: KittiError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evaluation task, selecting which IoU the matcher uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Detection2d,
    BirdsEyeView,
    Detection3d,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Detection2d, Task::BirdsEyeView, Task::Detection3d];

    pub fn name(&self) -> &'static str {
        match self {
            Task::Detection2d => "2d",
            Task::BirdsEyeView => "bev",
            Task::Detection3d => "3d",
        }
    }
}

/// Ground-truth admission rule for one difficulty setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyFilter {
    /// Minimum 2D box height in pixels.
    pub min_height: f64,
    /// Maximum occlusion level.
    pub max_occlusion: i32,
    /// Maximum truncation fraction.
    pub max_truncation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn filter(&self) -> DifficultyFilter {
        match self {
            Difficulty::Easy => {
                DifficultyFilter { min_height: 40.0, max_occlusion: 0, max_truncation: 0.15 }
            }
            Difficulty::Moderate => {
                DifficultyFilter { min_height: 25.0, max_occlusion: 1, max_truncation: 0.30 }
            }
            Difficulty::Hard => {
                DifficultyFilter { min_height: 25.0, max_occlusion: 2, max_truncation: 0.50 }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }
}

impl DifficultyFilter {
    /// Whether a ground-truth object counts at this difficulty.
    pub fn admits(&self, o: &KittiObject) -> bool {
        o.bbox.height() >= self.min_height
            && o.occlusion <= self.max_occlusion
            && o.truncation <= self.max_truncation
    }
}

/// Ground-truth role during matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtKind {
    /// Counts toward recall; matching one is a true positive.
    Counted,
    /// Matching one is neutral (DontCare or harder than the difficulty).
    Ignored,
}

/// Outcome per detection, in the given (score-descending) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetFlag {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Greedy matcher. Detections are presumed sorted by descending score;
/// `iou(d, g)` scores detection `d` against ground truth `g`. Counted
/// ground truths are matched at most once; ignored ones may absorb any
/// number of detections.
pub fn match_detections(
    n_dets: usize,
    gts: &[GtKind],
    iou: impl Fn(usize, usize) -> f64,
    thresh: f64,
) -> Vec<DetFlag> {
    let mut gt_used = vec![false; gts.len()];
    let mut flags = Vec::with_capacity(n_dets);
    for d in 0..n_dets {
        let mut best: Option<(usize, f64)> = None;
        for (g, kind) in gts.iter().enumerate() {
            if *kind != GtKind::Counted || gt_used[g] {
                continue;
            }
            let v = iou(d, g);
            if v >= thresh && best.map_or(true, |(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_used[g] = true;
            flags.push(DetFlag::TruePositive);
            continue;
        }
        let neutral = gts
            .iter()
            .enumerate()
            .any(|(g, kind)| *kind == GtKind::Ignored && iou(d, g) >= thresh);
        flags.push(if neutral { DetFlag::Ignored } else { DetFlag::FalsePositive });
    }
    flags
}

/// Recall-point count for interpolated AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpPoints {
    /// `r = 0, 0.1, ..., 1.0`.
    Eleven,
    /// `r = 1/40, 2/40, ..., 1.0`.
    Forty,
}

/// Interpolated average precision. `flags` must follow descending score
/// order; ignored detections contribute to neither precision nor recall.
/// With no counted ground truths the AP is defined as 0.
pub fn average_precision(flags: &[DetFlag], num_gt: usize, points: InterpPoints) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut curve: Vec<(f64, f64)> = Vec::new(); // (recall, precision)
    let mut tp = 0usize;
    let mut fp = 0usize;
    for f in flags {
        match f {
            DetFlag::TruePositive => tp += 1,
            DetFlag::FalsePositive => fp += 1,
            DetFlag::Ignored => continue,
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    let max_prec_at = |r: f64| -> f64 {
        curve
            .iter()
            .filter(|(recall, _)| *recall >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    };
    match points {
        InterpPoints::Eleven => {
            (0..=10).map(|i| max_prec_at(i as f64 / 10.0)).sum::<f64>() / 11.0
        }
        InterpPoints::Forty => {
            (1..=40).map(|i| max_prec_at(i as f64 / 40.0)).sum::<f64>() / 40.0
        }
    }
}

/// Evaluation settings: which classes, per-class IoU criteria, and the
/// recall interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub classes: Vec<String>,
    /// Per-class IoU criterion; classes not listed fall back to
    /// [`default_iou_criterion`].
    pub iou_overrides: Vec<(String, f64)>,
    pub points: InterpPoints,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            iou_overrides: Vec::new(),
            points: InterpPoints::Eleven,
        }
    }
}

/// The standard criteria: 0.7 for cars, 0.5 otherwise.
pub fn default_iou_criterion(class: &str) -> f64 {
    if class.eq_ignore_ascii_case("car") {
        0.7
    } else {
        0.5
    }
}

impl EvalConfig {
    pub fn iou_criterion(&self, class: &str) -> f64 {
        self.iou_overrides
            .iter()
            .find(|(c, _)| c == class)
            .map(|(_, t)| *t)
            .unwrap_or_else(|| default_iou_criterion(class))
    }
}

/// One image's ground truth and detections.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub gts: Vec<KittiObject>,
    pub dets: Vec<KittiObject>,
}

/// One report row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub task: Task,
    pub class: String,
    pub difficulty: Difficulty,
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn get(&self, task: Task, class: &str, difficulty: Difficulty) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.class == class && r.difficulty == difficulty)
    }

    /// Human-readable aligned table.
    pub fn text_table(&self) -> String {
        let mut out = String::from("task  class        difficulty        ap   num_gt  num_det\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<5} {:<12} {:<10} {:>7.4} {:>8} {:>8}",
                r.task.name(),
                r.class,
                r.difficulty.name(),
                r.ap,
                r.num_gt,
                r.num_det
            );
        }
        out
    }

    /// Flat machine-readable table: one `task class difficulty ap` row per
    /// line, tab separated.
    pub fn machine_table(&self) -> String {
        let mut out = String::from("task\tclass\tdifficulty\tap\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}",
                r.task.name(),
                r.class,
                r.difficulty.name(),
                r.ap
            );
        }
        out
    }
}

fn task_iou(task: Task, det: &KittiObject, gt: &KittiObject) -> f64 {
    match task {
        Task::Detection2d => iou_2d(&det.bbox, &gt.bbox),
        Task::BirdsEyeView => iou_bev(&det.box3d(), &gt.box3d()),
        Task::Detection3d => iou_3d(&det.box3d(), &gt.box3d()),
    }
}

/// Scores one class/difficulty/task triple over a scene. Returns the
/// per-detection `(score, flag)` pairs plus the counted ground-truth total.
fn match_scene(
    scene: &Scene,
    class: &str,
    task: Task,
    difficulty: Difficulty,
    thresh: f64,
) -> (Vec<(f64, DetFlag)>, usize) {
    let filter = difficulty.filter();
    // same-class ground truth, split by difficulty; DontCare is ignored
    let mut gts: Vec<(&KittiObject, GtKind)> = Vec::new();
    for g in &scene.gts {
        if g.class_name == class {
            let kind = if filter.admits(g) { GtKind::Counted } else { GtKind::Ignored };
            gts.push((g, kind));
        } else if g.is_dont_care() {
            gts.push((g, GtKind::Ignored));
        }
    }
    let num_gt = gts.iter().filter(|(_, k)| *k == GtKind::Counted).count();

    let mut dets: Vec<&KittiObject> =
        scene.dets.iter().filter(|d| d.class_name == class).collect();
    dets.sort_by(|a, b| {
        b.score
            .unwrap_or(0.0)
            .partial_cmp(&a.score.unwrap_or(0.0))
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let kinds: Vec<GtKind> = gts.iter().map(|(_, k)| *k).collect();
    let flags = match_detections(
        dets.len(),
        &kinds,
        |d, g| {
            let (gt, kind) = gts[g];
            // DontCare regions carry no 3D annotation; their neutral
            // overlap is always measured on the image plane
            if kind == GtKind::Ignored && gt.is_dont_care() {
                iou_2d(&dets[d].bbox, &gt.bbox)
            } else {
                task_iou(task, dets[d], gt)
            }
        },
        thresh,
    );
    let scored =
        dets.iter().zip(flags).map(|(d, f)| (d.score.unwrap_or(0.0), f)).collect();
    (scored, num_gt)
}

/// Evaluates scenes for every task, class, and difficulty.
pub fn evaluate_scenes(scenes: &[Scene], cfg: &EvalConfig) -> EvalReport {
    let mut rows = Vec::new();
    for task in Task::ALL {
        for class in &cfg.classes {
            let thresh = cfg.iou_criterion(class);
            for difficulty in Difficulty::ALL {
                let mut pooled: Vec<(f64, DetFlag, String)> = Vec::new();
                let mut num_gt = 0usize;
                // deterministic scene order: sort by id
                let mut ordered: Vec<&Scene> = scenes.iter().collect();
                ordered.sort_by(|a, b| a.id.cmp(&b.id));
                for scene in ordered {
                    let (scored, n) = match_scene(scene, class, task, difficulty, thresh);
                    num_gt += n;
                    pooled.extend(
                        scored.into_iter().map(|(s, f)| (s, f, scene.id.clone())),
                    );
                }
                pooled.sort_by(|a, b| {
                    b.0.partial_cmp(&a.0)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.2.cmp(&b.2))
                });
                let flags: Vec<DetFlag> = pooled.iter().map(|(_, f, _)| *f).collect();
                let ap = average_precision(&flags, num_gt, cfg.points);
                rows.push(EvalRow {
                    task,
                    class: class.clone(),
                    difficulty,
                    ap,
                    num_gt,
                    num_det: flags.len(),
                });
            }
        }
    }
    EvalReport { rows }
}

/// Loads matching label files from a ground-truth and a results directory
/// and evaluates them. Every `*.txt` under `gt_dir` defines a scene; a
/// missing results file means zero detections for that scene.
pub fn evaluate_dirs(
    results_dir: &Path,
    gt_dir: &Path,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let mut scenes: BTreeMap<String, Scene> = BTreeMap::new();
    for entry in std::fs::read_dir(gt_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("txt") {
            continue;
        }
        let id = path.file_stem().unwrap().to_string_lossy().to_string();
        let gts = read_labels(&path)?;
        let det_path = results_dir.join(format!("{id}.txt"));
        let dets = if det_path.exists() { read_labels(&det_path)? } else { Vec::new() };
        scenes.insert(id.clone(), Scene { id, gts, dets });
    }
    let scenes: Vec<Scene> = scenes.into_values().collect();
    Ok(evaluate_scenes(&scenes, cfg))
}

fn read_labels(path: &Path) -> Result<Vec<KittiObject>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    parse_label_file(&text)
        .map_err(|source| EvalError::File { path: path.display().to_string(), source })
}
