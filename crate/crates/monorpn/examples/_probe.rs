use monorpn::geometry::*;
use monorpn::inference::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// True when the L1-vs-yaw landscape over the reachable window around the
/// true yaw has a single basin: every strict local minimum of the sampled
/// curve sits within `tol` of the truth.
fn single_basin(
    calib: &CameraCalibration,
    pc: &ProjectedCenter,
    dims: &Dim3,
    yaw_true: f64,
    target: &Box2d,
    window: f64,
    tol: f64,
) -> bool {
    let step = 0.02;
    let n = (2.0 * window / step) as i64;
    let mut values = Vec::with_capacity(n as usize + 1);
    for k in 0..=n {
        let yaw = yaw_true - window + k as f64 * step;
        match box_project(calib, pc, dims, yaw) {
            Ok(b) => values.push(box_l1(target, &b)),
            Err(_) => return false,
        }
    }
    for i in 1..values.len() - 1 {
        if values[i] < values[i - 1] && values[i] < values[i + 1] {
            let yaw = yaw_true - window + i as f64 * step;
            if wrap_angle(yaw - yaw_true).abs() > tol {
                return false;
            }
        }
    }
    true
}

fn main() {
    let calib = CameraCalibration::pinhole(721.5377, 721.5377, 609.5593, 172.854);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tried = 0usize;
    let (mut captures, mut kept, mut iters) = (0usize, 0usize, 0usize);
    let mut worst_err = 0.0f64;
    let start = std::time::Instant::now();
    while kept < 2000 && tried < 100_000 {
        tried += 1;
        let z = rng.gen_range(8.0..45.0);
        let x = rng.gen_range(-0.4 * z..0.4 * z);
        let y = rng.gen_range(0.8..1.8);
        let center = Vector3::new(x, y, z);
        let pc = project_center(&calib, &center).unwrap();
        let dims = Dim3::new(
            rng.gen_range(1.5..1.8),
            rng.gen_range(1.3..1.8),
            rng.gen_range(3.4..4.5),
        );
        let yaw_true: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let yaw_start = yaw_true + rng.gen_range(-0.4..0.4);
        let Ok(box2d) = box_project(&calib, &pc, &dims, yaw_true) else {
            continue;
        };
        if !single_basin(&calib, &pc, &dims, yaw_true, &box2d, 1.45, 0.04) {
            continue;
        }
        kept += 1;
        let det = Detection {
            class: 1,
            score: 0.9,
            anchor: 0,
            box2d,
            center_p: pc,
            dims,
            theta_obs: wrap_angle(yaw_start - center.x.atan2(center.z)),
            center_cam: center,
        };
        let r = optimize_theta(&det, &calib, &PostOptConfig::default()).unwrap();
        let err = wrap_angle(r.yaw - yaw_true).abs();
        worst_err = worst_err.max(err);
        if err >= 0.02 {
            captures += 1;
            println!("  capture: err {err:.4} final {:.2} init {:.2}", r.final_l1, r.initial_l1);
        }
        iters += r.iterations;
    }
    println!(
        "single-basin: kept {kept}/{tried} captures {captures} worst_err {worst_err:.4} mean iters {:.1} ({:.2}s)",
        iters as f64 / kept.max(1) as f64,
        start.elapsed().as_secs_f64()
    );
}
