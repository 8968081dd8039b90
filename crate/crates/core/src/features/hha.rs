//! Simplified three-channel depth encoding: disparity, height above ground,
//! and angle of the surface normal with gravity.
//!
//! The camera looks horizontally; image rows grow downward, and gravity
//! points along +y in camera coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraGeom {
    pub focal_px: f64,
    pub baseline_m: f64,
    /// Image row of the horizon (principal point row).
    pub horizon_row: f64,
    pub meters_per_unit: f64,
    /// Camera height above the ground plane.
    pub camera_height_m: f64,
    /// Heights are clamped to `[0, max_height_m]` before scaling.
    pub max_height_m: f64,
    /// Raw depth values are disparities (pixels) rather than distances.
    #[serde(default)]
    pub depth_is_disparity: bool,
}

impl CameraGeom {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_height_m > 0.0) {
            return Err(Error::Config("max_height_m must be positive".into()));
        }
        if !(self.focal_px > 0.0 && self.baseline_m > 0.0 && self.meters_per_unit > 0.0) {
            return Err(Error::Config(
                "focal length, baseline and unit scale must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Metric depth of a raw value, `None` when the pixel is invalid.
    pub fn metric_depth(&self, raw: f64) -> Option<f64> {
        if !(raw.is_finite() && raw > 0.0) {
            return None;
        }
        Some(if self.depth_is_disparity {
            self.focal_px * self.baseline_m / (raw * self.meters_per_unit)
        } else {
            raw * self.meters_per_unit
        })
    }

    pub fn disparity_channel(&self, z: f64) -> f64 {
        let d = self.focal_px * self.baseline_m / z;
        d / (1.0 + d)
    }

    pub fn height_above_ground(&self, row: f64, z: f64) -> f64 {
        self.camera_height_m - (row - self.horizon_row) * z / self.focal_px
    }
}

/// Neighbours whose depth differs from the centre pixel by more than this
/// factor lie across an occlusion edge and are left out of the normal.
pub const DEPTH_EDGE_RATIO: f64 = 1.5;

/// Encodes a `[H, W]` depth map as `[H, W, 3]` with every channel in [0, 1].
/// Invalid (non-positive) depth pixels encode to zeros.
pub fn depth_to_hha(depth: &Tensor, camera: &CameraGeom) -> Result<Tensor> {
    camera.validate()?;
    if depth.rank() != 2 {
        return Err(Error::Dimension(format!(
            "depth must be [H, W], got {:?}",
            depth.dims()
        )));
    }
    let (h, w) = (depth.dims()[0], depth.dims()[1]);
    let cx = w as f64 / 2.0;
    let z: Vec<Option<f64>> = depth.data().iter().map(|&v| camera.metric_depth(v)).collect();
    let point = |u: usize, v: usize| -> Option<[f64; 3]> {
        z[v * w + u].map(|zz| {
            [
                (u as f64 - cx) * zz / camera.focal_px,
                (v as f64 - camera.horizon_row) * zz / camera.focal_px,
                zz,
            ]
        })
    };
    // Central difference where both neighbours are valid and on the same
    // surface, one-sided otherwise.
    let same_surface =
        |n: Option<[f64; 3]>, here: [f64; 3]| n.filter(|q| q[2].max(here[2]) <= DEPTH_EDGE_RATIO * q[2].min(here[2]));
    let tangent = |prev: Option<[f64; 3]>, here: [f64; 3], next: Option<[f64; 3]>| match (
        same_surface(prev, here),
        same_surface(next, here),
    ) {
        (Some(a), Some(b)) => Some(sub(b, a)),
        (None, Some(b)) => Some(sub(b, here)),
        (Some(a), None) => Some(sub(here, a)),
        (None, None) => None,
    };

    let mut out = vec![0.0; h * w * 3];
    for v in 0..h {
        for u in 0..w {
            let Some(p) = point(u, v) else { continue };
            let zz = p[2];
            let o = (v * w + u) * 3;
            out[o] = camera.disparity_channel(zz);
            out[o + 1] = camera.height_above_ground(v as f64, zz).clamp(0.0, camera.max_height_m) / camera.max_height_m;
            let left = if u > 0 { point(u - 1, v) } else { None };
            let right = if u + 1 < w { point(u + 1, v) } else { None };
            let up = if v > 0 { point(u, v - 1) } else { None };
            let down = if v + 1 < h { point(u, v + 1) } else { None };
            out[o + 2] = match (tangent(left, p, right), tangent(up, p, down)) {
                (Some(tu), Some(tv)) => normal_gravity_angle(tu, tv, p),
                _ => 0.5,
            };
        }
    }
    Tensor::new(vec![h, w, 3], out)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Angle between the camera-facing surface normal and gravity, scaled from
/// [0, π] to [0, 1].
fn normal_gravity_angle(tu: [f64; 3], tv: [f64; 3], p: [f64; 3]) -> f64 {
    let mut n = [
        tu[1] * tv[2] - tu[2] * tv[1],
        tu[2] * tv[0] - tu[0] * tv[2],
        tu[0] * tv[1] - tu[1] * tv[0],
    ];
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return 0.5;
    }
    if n[0] * p[0] + n[1] * p[1] + n[2] * p[2] > 0.0 {
        n = [-n[0], -n[1], -n[2]];
    }
    let cos = (n[1] / norm).clamp(-1.0, 1.0);
    cos.acos() / std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn camera() -> CameraGeom {
        CameraGeom {
            focal_px: 50.0,
            baseline_m: 0.5,
            horizon_row: 10.0,
            meters_per_unit: 1.0,
            camera_height_m: 1.5,
            max_height_m: 3.0,
            depth_is_disparity: false,
        }
    }

    #[test]
    fn frontal_wall_is_perpendicular_to_gravity() {
        let d = Tensor::filled(&[12, 16], 4.0);
        let hha = depth_to_hha(&d, &camera()).unwrap();
        for v in 0..12 {
            for u in 0..16 {
                assert!((hha.get3(v, u, 2) - 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_depth_encodes_to_zero() {
        let d = Tensor::zeros(&[5, 6]);
        let hha = depth_to_hha(&d, &camera()).unwrap();
        assert!(hha.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ramp_heights_match_ground_plane_geometry() {
        // Depth grows by row; height = cam_h - (v - horizon) * z / f.
        let cam = camera();
        let (h, w) = (20, 4);
        let mut data = vec![0.0; h * w];
        for v in 0..h {
            for u in 0..w {
                data[v * w + u] = 1.0 + 0.5 * v as f64;
            }
        }
        let hha = depth_to_hha(&Tensor::new(vec![h, w], data).unwrap(), &cam).unwrap();
        for v in 0..h {
            let z = 1.0 + 0.5 * v as f64;
            let expected = ((1.5 - (v as f64 - 10.0) * z / 50.0).clamp(0.0, 3.0)) / 3.0;
            for u in 0..w {
                assert!((hha.get3(v, u, 1) - expected).abs() < 1e-6, "row {v}");
            }
        }
        // Row 0, z = 1: 1.5 + 10/50 = 1.7 m -> 1.7/3.
        assert!((hha.get3(0, 0, 1) - 1.7 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ground_plane_normal_points_up() {
        // Points on y = cam_h: z = f * cam_h / (v - horizon) for rows below the horizon.
        let cam = camera();
        let (h, w) = (30, 8);
        let mut data = vec![0.0; h * w];
        for v in 11..h {
            for u in 0..w {
                data[v * w + u] = cam.focal_px * cam.camera_height_m / (v as f64 - cam.horizon_row);
            }
        }
        let hha = depth_to_hha(&Tensor::new(vec![h, w], data).unwrap(), &cam).unwrap();
        for v in 12..h - 1 {
            assert!((hha.get3(v, 3, 2) - 1.0).abs() < 1e-9);
            assert!(hha.get3(v, 3, 1).abs() < 1e-9);
        }
        assert_eq!(hha.get3(5, 3, 0), 0.0);
    }

    #[test]
    fn disparity_input_equals_metric_input() {
        let mut cam = camera();
        let metric = Tensor::filled(&[4, 4], 5.0);
        let a = depth_to_hha(&metric, &cam).unwrap();
        cam.depth_is_disparity = true;
        let disp = Tensor::filled(&[4, 4], 50.0 * 0.5 / 5.0);
        let b = depth_to_hha(&disp, &cam).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn box_on_wall_encodes_the_same_at_any_column() {
        let (h, w) = (12, 30);
        let render = |x0: usize| {
            let mut data = vec![12.0; h * w];
            for v in 3..8 {
                for u in x0..x0 + 6 {
                    data[v * w + u] = 2.5;
                }
            }
            depth_to_hha(&Tensor::new(vec![h, w], data).unwrap(), &camera()).unwrap()
        };
        let (a, b) = (render(2), render(19));
        for v in 3..8 {
            for k in 0..6 {
                for c in 0..3 {
                    assert_eq!(a.get3(v, 2 + k, c), b.get3(v, 19 + k, c), "row {v} col {k} ch {c}");
                }
            }
        }
    }

    #[test]
    fn non_positive_max_height_is_config_error() {
        let mut cam = camera();
        cam.max_height_m = 0.0;
        assert!(matches!(
            depth_to_hha(&Tensor::filled(&[2, 2], 1.0), &cam),
            Err(Error::Config(_))
        ));
    }

    proptest! {
        #[test]
        fn channels_in_unit_range(depths in proptest::collection::vec(prop_oneof![Just(0.0), 0.2f64..40.0], 48)) {
            let hha = depth_to_hha(&Tensor::new(vec![6, 8], depths).unwrap(), &camera()).unwrap();
            prop_assert!(hha.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn disparity_channel_strictly_decreasing(a in 0.05f64..100.0, b in 0.05f64..100.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let cam = camera();
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(cam.disparity_channel(near) > cam.disparity_channel(far));
        }
    }
}
