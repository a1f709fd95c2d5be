//! Built-in invariant battery behind `monorpn selftest`.
//!
//! Each check is a cheap, seeded re-statement of a core invariant: inverse
//! identities, the depth-aware convolution equivalences, loss gradient
//! agreement with finite differences, and evaluation sanity. The battery
//! prints one line per check and reports overall success.

use crate::anchors::{
    decode_2d, decode_3d, encode_targets, AnchorTemplate, Prior3d, SpannedAnchor, TransformVector,
};
use crate::eval::{average_precision, DetFlag, InterpPoints};
use crate::geometry::{
    back_project, box_project, iou_2d, iou_bev, project_center, wrap_angle, Box2d, Box3d,
    CameraCalibration, Dim3, ProjectedCenter,
};
use crate::inference::{box_l1, optimize_theta, yaw_single_basin, Detection, PostOptConfig};
use crate::kitti::{alpha_to_ry, ry_to_alpha};
use crate::losses::{cls_loss, smooth_l1};
use crate::nnops::{
    conv2d, depth_aware_conv, depth_aware_conv_reference, finite_diff_check, flop_count,
    softmax_slice, ConvOp, DepthAwareKernelSet, Tensor,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = (&'static str, fn() -> Result<(), String>);

fn check(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn test_calib() -> CameraCalibration {
    CameraCalibration::pinhole(721.5377, 721.5377, 609.5593, 172.854)
}

fn projection_roundtrip() -> Result<(), String> {
    let calib = test_calib();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let p = Vector3::new(
            rng.gen_range(-30.0..30.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(0.5..80.0),
        );
        let pc = project_center(&calib, &p).map_err(|e| e.to_string())?;
        let q = back_project(&calib, &pc).map_err(|e| e.to_string())?;
        check((q - p).norm() <= 1e-9 * p.norm().max(1.0), "projection roundtrip drifted")?;
    }
    Ok(())
}

fn encode_decode_inverse() -> Result<(), String> {
    let tpl = AnchorTemplate::with_prior(
        48.0,
        36.0,
        Prior3d { z_p: 30.0, dims: Dim3::new(1.6, 1.5, 3.9), theta: 0.1 },
    );
    let anchor = SpannedAnchor { template: 0, x: 100.0, y: 80.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
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
        let (pc, dims, theta) = decode_3d(&anchor, &tpl, &t).map_err(|e| e.to_string())?;
        let back =
            encode_targets(&anchor, &tpl, &b, &pc, &dims, theta).map_err(|e| e.to_string())?;
        for (a, b) in t.to_array().iter().zip(back.to_array()) {
            check((a - b).abs() / a.abs().max(1.0) < 1e-9, "encode/decode inverse drifted")?;
        }
    }
    Ok(())
}

fn depth_aware_equivalences() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = Tensor::from_fn(vec![2, 10, 7], |_| rng.gen_range(-1.0..1.0));
    let bank = Tensor::from_fn(vec![3, 2, 3, 3], |_| rng.gen_range(-1.0..1.0));
    let bias: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let plain = conv2d(&input, &bank, &bias, 1, 1, 1).map_err(|e| e.to_string())?;
    for b in [1, 2, 5, 10] {
        let ks = DepthAwareKernelSet::new(vec![bank.clone(); b], bias.clone())
            .map_err(|e| e.to_string())?;
        let reference = depth_aware_conv_reference(&input, &ks, 1, 1).map_err(|e| e.to_string())?;
        let fast = depth_aware_conv(&input, &ks, 1, 1).map_err(|e| e.to_string())?;
        check(reference.bits_eq(&plain), "reference path diverged from plain convolution")?;
        check(fast.bits_eq(&plain), "fast path diverged from plain convolution")?;
    }
    Ok(())
}

fn depth_aware_paths_bit_identical() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let c = rng.gen_range(1..3);
        let o = rng.gen_range(1..3);
        let h = rng.gen_range(4..12);
        let w = rng.gen_range(4..10);
        let input = Tensor::from_fn(vec![c, h, w], |_| rng.gen_range(-1.0..1.0));
        let bins = rng.gen_range(1..=h.min(4));
        let banks: Vec<Tensor> = (0..bins)
            .map(|_| Tensor::from_fn(vec![o, c, 3, 3], |_| rng.gen_range(-1.0..1.0)))
            .collect();
        let bias: Vec<f64> = (0..o).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let ks = DepthAwareKernelSet::new(banks, bias).map_err(|e| e.to_string())?;
        let a = depth_aware_conv_reference(&input, &ks, 1, 1).map_err(|e| e.to_string())?;
        let b = depth_aware_conv(&input, &ks, 1, 1).map_err(|e| e.to_string())?;
        check(a.bits_eq(&b), "execution paths disagree")?;
    }
    Ok(())
}

fn flop_parity() -> Result<(), String> {
    let base = flop_count(&ConvOp::Standard {
        in_channels: 64,
        out_channels: 32,
        out_h: 32,
        out_w: 106,
        kernel_h: 3,
        kernel_w: 3,
    });
    for bins in [1, 4, 8, 16, 32] {
        let da = flop_count(&ConvOp::DepthAware {
            in_channels: 64,
            out_channels: 32,
            out_h: 32,
            out_w: 106,
            kernel_h: 3,
            kernel_w: 3,
            bins,
        });
        check(da == base, "multiply-add parity broken")?;
    }
    Ok(())
}

fn softmax_properties() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let xs: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let s = softmax_slice(&xs);
        let sum: f64 = s.iter().sum();
        check((sum - 1.0).abs() < 1e-12, "softmax does not normalize")?;
        let shifted: Vec<f64> = xs.iter().map(|x| x + 55.5).collect();
        for (a, b) in s.iter().zip(softmax_slice(&shifted)) {
            check((a - b).abs() < 1e-12, "softmax not shift invariant")?;
        }
    }
    check(cls_loss(&[0.0; 4], 0).unwrap().0 == 4.0_f64.ln(), "uniform loss is not ln 4")?;
    Ok(())
}

fn gradients_match_finite_differences() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let class = rng.gen_range(0..4);
        let (_, grad) = cls_loss(&logits, class).map_err(|e| e.to_string())?;
        let err =
            finite_diff_check(|v| cls_loss(v, class).unwrap().0, &logits, &grad, 1e-5);
        check(err < 1e-4, "classification gradient mismatch")?;

        let target: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let pred: Vec<f64> = target.iter().map(|t| t + rng.gen_range(-2.0..2.0)).collect();
        if pred.iter().zip(&target).any(|(p, t)| ((p - t).abs() - 1.0).abs() < 1e-4) {
            continue;
        }
        let (_, grad) = smooth_l1(&pred, &target).map_err(|e| e.to_string())?;
        let err =
            finite_diff_check(|v| smooth_l1(v, &target).unwrap().0, &pred, &grad, 1e-6);
        check(err < 1e-4, "smooth-L1 gradient mismatch")?;
    }
    Ok(())
}

fn bev_matches_flat_iou() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (cx1, cz1) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let (cx2, cz2) = (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let d1 = Dim3::new(rng.gen_range(0.3..3.0), 1.0, rng.gen_range(0.3..3.0));
        let d2 = Dim3::new(rng.gen_range(0.3..3.0), 1.0, rng.gen_range(0.3..3.0));
        let bev = iou_bev(
            &Box3d::from_yaw(Vector3::new(cx1, 0.0, cz1), d1, 0.0),
            &Box3d::from_yaw(Vector3::new(cx2, 0.0, cz2), d2, 0.0),
        );
        let flat = iou_2d(
            &Box2d::from_center_size(cx1, cz1, d1.l, d1.w),
            &Box2d::from_center_size(cx2, cz2, d2.l, d2.w),
        );
        check((bev - flat).abs() < 1e-12, "unrotated footprint IoU mismatch")?;
    }
    Ok(())
}

fn angle_conversions_invert() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let alpha = rng.gen_range(-3.1..3.1);
        let x = rng.gen_range(-30.0..30.0);
        let z = rng.gen_range(0.5..80.0);
        let ry = alpha_to_ry(alpha, x, z).map_err(|e| e.to_string())?;
        let back = ry_to_alpha(ry, x, z).map_err(|e| e.to_string())?;
        check(wrap_angle(back - alpha).abs() < 1e-12, "angle conversion drifted")?;
    }
    Ok(())
}

fn orientation_refinement_converges() -> Result<(), String> {
    let calib = test_calib();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut done = 0;
    while done < 20 {
        let center = Vector3::new(
            rng.gen_range(-8.0..8.0),
            rng.gen_range(0.8..1.8),
            rng.gen_range(12.0..45.0),
        );
        let pc = project_center(&calib, &center).map_err(|e| e.to_string())?;
        let dims = Dim3::new(1.6, 1.5, 3.9);
        let yaw_true = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let yaw_start = yaw_true + rng.gen_range(-0.4..0.4);
        let box2d = box_project(&calib, &pc, &dims, yaw_true).map_err(|e| e.to_string())?;
        // convergence to the true yaw is only well-posed when the 2D box
        // pins the orientation to one basin
        if !yaw_single_basin(&calib, &pc, &dims, &box2d, yaw_true, 1.45, 0.04) {
            continue;
        }
        done += 1;
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
        let r = optimize_theta(&det, &calib, &PostOptConfig::default())
            .map_err(|e| e.to_string())?;
        check(wrap_angle(r.yaw - yaw_true).abs() < 0.02, "refined yaw off target")?;
        check(r.final_l1 <= r.initial_l1 + 1e-12, "refinement increased the loss")?;
        let projected =
            box_project(&calib, &pc, &dims, r.yaw).map_err(|e| e.to_string())?;
        check(box_l1(&det.box2d, &projected) == r.final_l1, "reported loss mismatch")?;
    }
    Ok(())
}

fn perfect_detector_ap_is_one() -> Result<(), String> {
    let flags = vec![DetFlag::TruePositive; 7];
    check(average_precision(&flags, 7, InterpPoints::Eleven) == 1.0, "11-point AP not 1")?;
    check(average_precision(&flags, 7, InterpPoints::Forty) == 1.0, "40-point AP not 1")?;
    check(average_precision(&[], 3, InterpPoints::Eleven) == 0.0, "empty detector AP not 0")?;
    Ok(())
}

fn decode_fixed_point() -> Result<(), String> {
    let tpl = AnchorTemplate::with_prior(
        64.0,
        48.0,
        Prior3d { z_p: 25.0, dims: Dim3::new(1.6, 1.5, 3.9), theta: -0.05 },
    );
    let anchor = SpannedAnchor { template: 0, x: 40.0, y: 56.0 };
    let b = decode_2d(&anchor, &tpl, &TransformVector::zero());
    check(b == Box2d::from_center_size(40.0, 56.0, 64.0, 48.0), "2D fixed point broken")?;
    let (pc, dims, theta) =
        decode_3d(&anchor, &tpl, &TransformVector::zero()).map_err(|e| e.to_string())?;
    check(pc == ProjectedCenter::new(40.0, 56.0, 25.0), "3D center fixed point broken")?;
    check(dims == Dim3::new(1.6, 1.5, 3.9), "3D dims fixed point broken")?;
    check(theta == -0.05, "3D angle fixed point broken")?;
    Ok(())
}

const CHECKS: &[Check] = &[
    ("projection roundtrip", projection_roundtrip),
    ("encode/decode inverse", encode_decode_inverse),
    ("decode zero-transform fixed point", decode_fixed_point),
    ("depth-aware conv equivalences", depth_aware_equivalences),
    ("depth-aware paths bit-identical", depth_aware_paths_bit_identical),
    ("multiply-add parity", flop_parity),
    ("softmax properties", softmax_properties),
    ("loss gradients vs finite differences", gradients_match_finite_differences),
    ("BEV IoU vs flat IoU on unrotated boxes", bev_matches_flat_iou),
    ("alpha/rotation_y conversions", angle_conversions_invert),
    ("orientation refinement convergence", orientation_refinement_converges),
    ("average precision sanity", perfect_detector_ap_is_one),
];

/// Runs every check, printing one `ok`/`FAIL` line per check. Returns true
/// when all pass.
pub fn run() -> bool {
    let mut all_ok = true;
    for (name, f) in CHECKS {
        match f() {
            Ok(()) => println!("ok   {name}"),
            Err(msg) => {
                all_ok = false;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if all_ok {
        println!("selftest: {} checks passed", CHECKS.len());
    }
    all_ok
}

#[cfg(test)]
mod tests {
    #[test]
    fn battery_is_green() {
        assert!(super::run());
    }
}
