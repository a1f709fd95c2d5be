//! KITTI label and calibration I/O plus the coordinate conventions that go
//! with them.
//!
//! Labels are the usual 15-field (ground truth) or 16-field (results,
//! trailing score) whitespace-separated lines. Calibration files carry a
//! `P2:` record with the 12 row-major entries of the left color camera's
//! projection matrix. KITTI stores box dimensions as `h w l` and locations
//! at the bottom face center with Y pointing down; conversions to the
//! internal `[w, h, l]` / geometric-center convention live here.

use crate::geometry::{wrap_angle, Box2d, Box3d, CameraCalibration, Dim3, GeometryError};
use crate::inference::Detection;
use nalgebra::Vector3;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("line {line}, field {field}: {msg}")]
    Parse { line: usize, field: usize, msg: String },
    #[error("missing record: {0}")]
    MissingRecord(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One KITTI label line. Field order and units follow the devkit: type,
/// truncation, occlusion, alpha, 2D bbox (left top right bottom, pixels),
/// dimensions `h w l` (meters), location `x y z` (bottom center, camera
/// frame, meters), rotation_y (radians), optional score.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiObject {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub bbox: Box2d,
    /// Metric size in KITTI order: height, width, length.
    pub dims_hwl: [f64; 3],
    /// Bottom-face center in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiObject {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == "DontCare"
    }

    /// Internal dimensions in `[w, h, l]` order.
    pub fn dims(&self) -> Dim3 {
        Dim3::new(self.dims_hwl[1], self.dims_hwl[0], self.dims_hwl[2])
    }

    /// Geometric cuboid center (KITTI stores the bottom-face center).
    pub fn center(&self) -> Vector3<f64> {
        bottom_center_to_center(&self.location, self.dims_hwl[0])
    }

    /// The camera-space 3D box this label describes.
    pub fn box3d(&self) -> Box3d {
        Box3d::from_yaw(self.center(), self.dims(), self.rotation_y)
    }

    /// Parses one label line. `line_no` is 1-based and only used for error
    /// reporting.
    pub fn parse_line(line: &str, line_no: usize) -> Result<Self, KittiError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(KittiError::Parse {
                line: line_no,
                field: fields.len(),
                msg: format!("expected 15 or 16 fields, found {}", fields.len()),
            });
        }
        let num = |idx: usize| -> Result<f64, KittiError> {
            fields[idx].parse().map_err(|e| KittiError::Parse {
                line: line_no,
                field: idx,
                msg: format!("`{}`: {e}", fields[idx]),
            })
        };
        let occlusion = fields[2].parse::<f64>().map_err(|e| KittiError::Parse {
            line: line_no,
            field: 2,
            msg: format!("`{}`: {e}", fields[2]),
        })? as i32;
        Ok(Self {
            class_name: fields[0].to_string(),
            truncation: num(1)?,
            occlusion,
            alpha: num(3)?,
            bbox: Box2d::new(num(4)?, num(5)?, num(6)?, num(7)?),
            dims_hwl: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        })
    }

    /// Formats the object as a label line at 6 decimal places (occlusion
    /// stays integral, the score is appended when present).
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.6} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            self.class_name,
            self.truncation,
            self.occlusion,
            self.alpha,
            self.bbox.x_min,
            self.bbox.y_min,
            self.bbox.x_max,
            self.bbox.y_max,
            self.dims_hwl[0],
            self.dims_hwl[1],
            self.dims_hwl[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y,
        );
        if let Some(score) = self.score {
            s.push_str(&format!(" {score:.6}"));
        }
        s
    }
}

/// Parses a whole label file, one object per non-empty line.
pub fn parse_label_file(text: &str) -> Result<Vec<KittiObject>, KittiError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| KittiObject::parse_line(l, i + 1))
        .collect()
}

/// Serializes objects as a label/result file.
pub fn write_label_file(objects: &[KittiObject]) -> String {
    let mut out = String::new();
    for o in objects {
        out.push_str(&o.to_line());
        out.push('\n');
    }
    out
}

/// Extracts the `P2:` projection matrix from a calibration file.
pub fn parse_calib_file(text: &str) -> Result<CameraCalibration, KittiError> {
    for (i, line) in text.lines().enumerate() {
        let Some(rest) = line.strip_prefix("P2:") else {
            continue;
        };
        let values: Vec<&str> = rest.split_whitespace().collect();
        if values.len() != 12 {
            return Err(KittiError::Parse {
                line: i + 1,
                field: values.len(),
                msg: format!("P2 record needs 12 values, found {}", values.len()),
            });
        }
        let mut p = [0.0; 12];
        for (k, v) in values.iter().enumerate() {
            p[k] = v.parse().map_err(|e| KittiError::Parse {
                line: i + 1,
                field: k,
                msg: format!("`{v}`: {e}"),
            })?;
        }
        return Ok(CameraCalibration::from_row_major(&p)?);
    }
    Err(KittiError::MissingRecord("P2".into()))
}

/// Observation angle to global yaw: `ry = alpha + atan2(x, z)`, wrapped.
pub fn alpha_to_ry(alpha: f64, x: f64, z: f64) -> Result<f64, KittiError> {
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z).into());
    }
    Ok(wrap_angle(alpha + x.atan2(z)))
}

/// Global yaw to observation angle: `alpha = ry - atan2(x, z)`, wrapped.
pub fn ry_to_alpha(ry: f64, x: f64, z: f64) -> Result<f64, KittiError> {
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z).into());
    }
    Ok(wrap_angle(ry - x.atan2(z)))
}

/// Bottom-face center to geometric center; camera Y points down, so the
/// center sits half a height above (numerically below) the bottom.
pub fn bottom_center_to_center(location: &[f64; 3], h: f64) -> Vector3<f64> {
    Vector3::new(location[0], location[1] - h / 2.0, location[2])
}

/// Geometric center back to the KITTI bottom-face center.
pub fn center_to_bottom_center(center: &Vector3<f64>, h: f64) -> [f64; 3] {
    [center.x, center.y + h / 2.0, center.z]
}

/// Converts a decoded detection into a KITTI result object. Truncation and
/// occlusion are set to -1 as the devkit expects for detections.
pub fn detection_to_object(
    det: &Detection,
    calib: &CameraCalibration,
    class_names: &[String],
) -> Result<KittiObject, KittiError> {
    let center = crate::geometry::back_project(calib, &det.center_p)?;
    let ry = alpha_to_ry(det.theta_obs, center.x, center.z)?;
    let name = class_names
        .get(det.class.wrapping_sub(1))
        .cloned()
        .unwrap_or_else(|| format!("Class{}", det.class));
    Ok(KittiObject {
        class_name: name,
        truncation: -1.0,
        occlusion: -1,
        alpha: det.theta_obs,
        bbox: det.box2d,
        dims_hwl: [det.dims.h, det.dims.w, det.dims.l],
        location: center_to_bottom_center(&center, det.dims.h),
        rotation_y: ry,
        score: Some(det.score),
    })
}

/// Writes detections in KITTI submission format (16 fields, score last).
pub fn write_results(
    dets: &[Detection],
    calib: &CameraCalibration,
    class_names: &[String],
) -> Result<String, KittiError> {
    let objects: Vec<KittiObject> = dets
        .iter()
        .map(|d| detection_to_object(d, calib, class_names))
        .collect::<Result<_, _>>()?;
    Ok(write_label_file(&objects))
}

/// Every knob of the batch workflows, with defaults matching the reference
/// operating point: 36 anchors from 12 scales (30 px growing by 1.265x) and
/// 3 aspect ratios, 32 row bins, score threshold 0.75, NMS IoU 0.4,
/// refinement schedule (0.3*pi, 0.01, 0.5), unit loss weights, 20% mining.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub anchor_base: f64,
    pub anchor_rate: f64,
    pub anchor_scales: usize,
    pub anchor_ratios: Vec<f64>,
    pub bins: usize,
    pub stride: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub score_thresh: f64,
    pub nms_iou: f64,
    pub post_opt: bool,
    pub sigma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mining_fraction: f64,
    pub iou_floor: f64,
    pub match_iou: f64,
    pub classes: Vec<String>,
    pub eval_forty_point: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            anchor_base: 30.0,
            anchor_rate: 1.265,
            anchor_scales: 12,
            anchor_ratios: vec![0.5, 1.0, 1.5],
            bins: 32,
            stride: 16.0,
            image_width: 1696,
            image_height: 512,
            score_thresh: 0.75,
            nms_iou: 0.4,
            post_opt: true,
            sigma: 0.3 * std::f64::consts::PI,
            beta: 0.01,
            gamma: 0.5,
            lambda1: 1.0,
            lambda2: 1.0,
            mining_fraction: 0.2,
            iou_floor: 1e-6,
            match_iou: 0.5,
            classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            eval_forty_point: false,
        }
    }
}

impl RunConfig {
    /// Parses a flat `key = value` config. Unknown keys are errors; every
    /// omitted key keeps its default.
    pub fn parse(text: &str) -> Result<Self, KittiError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| KittiError::Config { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            let fnum = || -> Result<f64, KittiError> {
                value.parse().map_err(|e| err(format!("{key}: `{value}`: {e}")))
            };
            let unum = || -> Result<usize, KittiError> {
                value.parse().map_err(|e| err(format!("{key}: `{value}`: {e}")))
            };
            let bool_val = || -> Result<bool, KittiError> {
                value.parse().map_err(|e| err(format!("{key}: `{value}`: {e}")))
            };
            match key {
                "anchor_base" => cfg.anchor_base = fnum()?,
                "anchor_rate" => cfg.anchor_rate = fnum()?,
                "anchor_scales" => cfg.anchor_scales = unum()?,
                "anchor_ratios" => {
                    cfg.anchor_ratios = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| err(format!("anchor_ratios: {e}")))?;
                }
                "bins" => cfg.bins = unum()?,
                "stride" => cfg.stride = fnum()?,
                "image_width" => cfg.image_width = unum()?,
                "image_height" => cfg.image_height = unum()?,
                "score_thresh" => cfg.score_thresh = fnum()?,
                "nms_iou" => cfg.nms_iou = fnum()?,
                "post_opt" => cfg.post_opt = bool_val()?,
                "sigma" => cfg.sigma = fnum()?,
                "beta" => cfg.beta = fnum()?,
                "gamma" => cfg.gamma = fnum()?,
                "lambda1" => cfg.lambda1 = fnum()?,
                "lambda2" => cfg.lambda2 = fnum()?,
                "mining_fraction" => cfg.mining_fraction = fnum()?,
                "iou_floor" => cfg.iou_floor = fnum()?,
                "match_iou" => cfg.match_iou = fnum()?,
                "classes" => {
                    cfg.classes = value.split(',').map(|v| v.trim().to_string()).collect();
                }
                "eval_forty_point" => cfg.eval_forty_point = bool_val()?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let ratios =
            self.anchor_ratios.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        format!(
            "anchor_base = {}\nanchor_rate = {}\nanchor_scales = {}\nanchor_ratios = {ratios}\n\
             bins = {}\nstride = {}\nimage_width = {}\nimage_height = {}\n\
             score_thresh = {}\nnms_iou = {}\npost_opt = {}\nsigma = {}\nbeta = {}\ngamma = {}\n\
             lambda1 = {}\nlambda2 = {}\nmining_fraction = {}\niou_floor = {}\nmatch_iou = {}\n\
             classes = {}\neval_forty_point = {}\n",
            self.anchor_base,
            self.anchor_rate,
            self.anchor_scales,
            self.bins,
            self.stride,
            self.image_width,
            self.image_height,
            self.score_thresh,
            self.nms_iou,
            self.post_opt,
            self.sigma,
            self.beta,
            self.gamma,
            self.lambda1,
            self.lambda2,
            self.mining_fraction,
            self.iou_floor,
            self.match_iou,
            self.classes.join(","),
            self.eval_forty_point,
        )
    }

    pub fn load(path: &Path) -> Result<Self, KittiError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// 1-based class index of a name, if configured.
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name).map(|i| i + 1)
    }
}

/// Writes a file without ever leaving a partial result behind: the content
/// goes to a sibling temp file first and is renamed into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)
}
