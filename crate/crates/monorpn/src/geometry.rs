//! Camera projection geometry and box overlap computations.
//!
//! Everything here is a pure function of its inputs: projection and
//! back-projection through a 3x4 camera matrix, projection of 3D cuboid
//! corners into a tight 2D box, and the three IoU variants used by the
//! detector (axis-aligned 2D, rotated bird's-eye-view footprints, full 3D
//! volume).

use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};
use thiserror::Error;

/// Vertices closer than this to a clip edge are treated as lying on it.
pub const EDGE_TOLERANCE: f64 = 1e-9;

/// Residual allowed when validating `P_inv * pad(P) = I` at construction.
const INVERSE_RESIDUAL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("projected depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("box corner behind camera (depth {0})")]
    CornerBehindCamera(f64),
    #[error("padded projection matrix is singular or ill-conditioned")]
    SingularMatrix,
}

/// Wraps an angle to `[-pi, pi)`. Angles already in range pass through
/// unchanged.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-std::f64::consts::PI..std::f64::consts::PI).contains(&theta) {
        return theta;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let t = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if t >= std::f64::consts::PI {
        -std::f64::consts::PI
    } else {
        t
    }
}

/// A 3x4 camera projection matrix together with its padded 4x4 inverse.
///
/// Rows 0-1 of `P` are in pixel units, row 2 is metric depth. The inverse is
/// taken after padding `P` with a bottom row `[0, 0, 0, 1]` and is what
/// back-projection and corner placement use.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraCalibration {
    p: Matrix3x4<f64>,
    p_inv: Matrix4<f64>,
}

impl CameraCalibration {
    pub fn new(p: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        let mut padded = Matrix4::identity();
        padded.fixed_view_mut::<3, 4>(0, 0).copy_from(&p);
        let p_inv = padded.try_inverse().ok_or(GeometryError::SingularMatrix)?;
        let residual = (p_inv * padded - Matrix4::identity()).abs().max();
        if !residual.is_finite() || residual > INVERSE_RESIDUAL {
            return Err(GeometryError::SingularMatrix);
        }
        Ok(Self { p, p_inv })
    }

    /// Row-major 12-element construction, matching the KITTI calib layout.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self, GeometryError> {
        Ok(Self::new(Matrix3x4::from_row_slice(values))?)
    }

    /// Ideal pinhole with focal lengths `(fx, fy)` and principal point `(cx, cy)`.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        let p = Matrix3x4::from_row_slice(&[
            fx, 0.0, cx, 0.0, //
            0.0, fy, cy, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        ]);
        Self::new(p).expect("pinhole matrix with positive focal lengths is invertible")
    }

    pub fn projection(&self) -> &Matrix3x4<f64> {
        &self.p
    }

    pub fn padded_inverse(&self) -> &Matrix4<f64> {
        &self.p_inv
    }
}

/// Pixel location of a projected 3D point plus its metric depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedCenter {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl ProjectedCenter {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// Axis-aligned 2D box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2d {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2d {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x_min: cx - w / 2.0,
            y_min: cy - h / 2.0,
            x_max: cx + w / 2.0,
            y_max: cy + h / 2.0,
        }
    }

    pub fn center_x(&self) -> f64 {
        (self.x_min + self.x_max) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        (self.y_min + self.y_max) / 2.0
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Metric box dimensions: width, height, length.
///
/// Note KITTI labels store these as `h, w, l`; the reordering happens at
/// parse time, everything internal uses this struct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dim3 {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl Dim3 {
    pub fn new(w: f64, h: f64, l: f64) -> Self {
        Self { w, h, l }
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }
}

/// 3D box in camera coordinates: geometric cuboid center, dimensions, and
/// observation angle (orientation relative to the viewing ray).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3d {
    pub center: Vector3<f64>,
    pub dims: Dim3,
    pub theta_obs: f64,
}

impl Box3d {
    pub fn new(center: Vector3<f64>, dims: Dim3, theta_obs: f64) -> Self {
        Self { center, dims, theta_obs: wrap_angle(theta_obs) }
    }

    /// Builds a box from its global yaw (rotation about the camera Y axis).
    pub fn from_yaw(center: Vector3<f64>, dims: Dim3, yaw: f64) -> Self {
        let theta_obs = wrap_angle(yaw - center.x.atan2(center.z));
        Self { center, dims, theta_obs }
    }

    /// Global yaw about the camera Y axis, `theta_obs + atan2(x, z)`.
    pub fn yaw(&self) -> f64 {
        wrap_angle(self.theta_obs + self.center.x.atan2(self.center.z))
    }

    /// Vertical extent `(y_min, y_max)`; camera Y points down.
    pub fn y_extent(&self) -> (f64, f64) {
        (self.center.y - self.dims.h / 2.0, self.center.y + self.dims.h / 2.0)
    }

    /// Footprint in the X-Z ground plane as a CCW quad.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw().sin_cos();
        let hl = self.dims.l / 2.0;
        let hw = self.dims.w / 2.0;
        // local coordinates: `a` along the length axis, `t` across it
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[a, t]| {
            [
                c * a + s * t + self.center.x, //
                -s * a + c * t + self.center.z,
            ]
        })
    }
}

/// The 8 cuboid corners in camera space plus their image projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerSet {
    pub cam: [Vector3<f64>; 8],
    pub image: [[f64; 2]; 8],
    pub depths: [f64; 8],
}

// Corner sign patterns: x scaled by l/2, y by h/2, z by w/2.
const CORNER_X: [f64; 8] = [-1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
const CORNER_Y: [f64; 8] = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
const CORNER_Z: [f64; 8] = [-1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, -1.0];

/// Projects a 3D point into pixel coordinates plus depth.
pub fn project_center(
    calib: &CameraCalibration,
    p: &Vector3<f64>,
) -> Result<ProjectedCenter, GeometryError> {
    let h = calib.p * Vector4::new(p.x, p.y, p.z, 1.0);
    let z = h.z;
    if z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(z));
    }
    Ok(ProjectedCenter { x: h.x / z, y: h.y / z, z })
}

/// Recovers the camera-space point from a projected center.
pub fn back_project(
    calib: &CameraCalibration,
    pc: &ProjectedCenter,
) -> Result<Vector3<f64>, GeometryError> {
    if pc.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(pc.z));
    }
    let v = calib.p_inv * Vector4::new(pc.x * pc.z, pc.y * pc.z, pc.z, 1.0);
    Ok(Vector3::new(v.x, v.y, v.z))
}

/// Places the 8 cuboid corners (yaw rotation about Y, translation to the
/// back-projected center) and projects them through the camera.
pub fn box_corners(
    calib: &CameraCalibration,
    pc: &ProjectedCenter,
    dims: &Dim3,
    yaw: f64,
) -> Result<CornerSet, GeometryError> {
    let center = back_project(calib, pc)?;
    let (s, c) = yaw.sin_cos();
    let mut cam = [Vector3::zeros(); 8];
    let mut image = [[0.0; 2]; 8];
    let mut depths = [0.0; 8];
    for i in 0..8 {
        let x0 = CORNER_X[i] * dims.l / 2.0;
        let y0 = CORNER_Y[i] * dims.h / 2.0;
        let z0 = CORNER_Z[i] * dims.w / 2.0;
        let corner = Vector3::new(c * x0 + s * z0, y0, -s * x0 + c * z0) + center;
        let h = calib.p * Vector4::new(corner.x, corner.y, corner.z, 1.0);
        if h.z <= 0.0 {
            return Err(GeometryError::CornerBehindCamera(h.z));
        }
        cam[i] = corner;
        image[i] = [h.x / h.z, h.y / h.z];
        depths[i] = h.z;
    }
    Ok(CornerSet { cam, image, depths })
}

/// Tight axis-aligned image box over the 8 projected cuboid corners.
pub fn box_project(
    calib: &CameraCalibration,
    pc: &ProjectedCenter,
    dims: &Dim3,
    yaw: f64,
) -> Result<Box2d, GeometryError> {
    let corners = box_corners(calib, pc, dims, yaw)?;
    let mut b = Box2d::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for [u, v] in corners.image {
        b.x_min = b.x_min.min(u);
        b.y_min = b.y_min.min(v);
        b.x_max = b.x_max.max(u);
        b.y_max = b.y_max.max(v);
    }
    Ok(b)
}

/// Axis-aligned intersection-over-union. Degenerate unions yield 0.
pub fn iou_2d(a: &Box2d, b: &Box2d) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn cross(o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn edge_intersection(p1: &[f64; 2], p2: &[f64; 2], c1: &[f64; 2], c2: &[f64; 2]) -> [f64; 2] {
    let dc = [c1[0] - c2[0], c1[1] - c2[1]];
    let dp = [p1[0] - p2[0], p1[1] - p2[1]];
    let n1 = c1[0] * c2[1] - c1[1] * c2[0];
    let n2 = p1[0] * p2[1] - p1[1] * p2[0];
    // direct division keeps axis-aligned intersections exact
    let den = dc[0] * dp[1] - dc[1] * dp[0];
    [(n1 * dp[0] - n2 * dc[0]) / den, (n1 * dp[1] - n2 * dc[1]) / den]
}

/// Sutherland-Hodgman clip of a convex `subject` polygon by a convex CCW
/// `clip` polygon. Points within [`EDGE_TOLERANCE`] of an edge count as
/// inside.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let c1 = clip[if i == 0 { clip.len() - 1 } else { i - 1 }];
        let c2 = clip[i];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let s = input[if j == 0 { input.len() - 1 } else { j - 1 }];
            let e = input[j];
            let s_in = cross(&c1, &c2, &s) >= -EDGE_TOLERANCE;
            let e_in = cross(&c1, &c2, &e) >= -EDGE_TOLERANCE;
            if e_in {
                if !s_in {
                    output.push(edge_intersection(&s, &e, &c1, &c2));
                }
                output.push(e);
            } else if s_in {
                output.push(edge_intersection(&s, &e, &c1, &c2));
            }
        }
    }
    output
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(pts: &[[f64; 2]]) -> f64 {
    if pts.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let j = (i + 1) % pts.len();
        acc += pts[i][0] * pts[j][1] - pts[j][0] * pts[i][1];
    }
    acc.abs() / 2.0
}

/// Overlap area of the two ground-plane footprints.
pub fn bev_intersection_area(a: &Box3d, b: &Box3d) -> f64 {
    let inter = clip_convex(&a.footprint(), &b.footprint());
    polygon_area(&inter)
}

/// IoU of the yaw-rotated rectangles the boxes span in the X-Z plane.
pub fn iou_bev(a: &Box3d, b: &Box3d) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.dims.l * a.dims.w + b.dims.l * b.dims.w - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Volumetric IoU: footprint overlap times vertical extent overlap.
pub fn iou_3d(a: &Box3d, b: &Box3d) -> f64 {
    let (a_lo, a_hi) = a.y_extent();
    let (b_lo, b_hi) = b.y_extent();
    let dy = (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0);
    let inter = bev_intersection_area(a, b) * dy;
    let union = a.dims.volume() + b.dims.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
