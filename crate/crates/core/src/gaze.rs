//! Gaze trace processing: device-to-image mapping, Gaussian fixation maps,
//! box pooling, frame alignment and per-candidate gaze features.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{pixel_span, track_window, BBox, Track};
use crate::numkit::Tensor;

/// Affine description of the recording device. Gaze estimates arrive in
/// centimetres relative to the camera; the display's top-left corner sits at
/// `-cam_offset` in that frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub px_per_cm_x: f64,
    pub px_per_cm_y: f64,
    pub cam_offset_x_cm: f64,
    pub cam_offset_y_cm: f64,
    pub display_to_image_scale_x: f64,
    pub display_to_image_scale_y: f64,
    pub display_origin_x: f64,
    pub display_origin_y: f64,
}

impl DeviceConfig {
    pub fn identity() -> Self {
        DeviceConfig {
            px_per_cm_x: 1.0,
            px_per_cm_y: 1.0,
            cam_offset_x_cm: 0.0,
            cam_offset_y_cm: 0.0,
            display_to_image_scale_x: 1.0,
            display_to_image_scale_y: 1.0,
            display_origin_x: 0.0,
            display_origin_y: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.px_per_cm_x,
            self.px_per_cm_y,
            self.display_to_image_scale_x,
            self.display_to_image_scale_y,
        ];
        if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("device scales must be positive".into()));
        }
        Ok(())
    }
}

/// Maps a camera-frame gaze estimate (cm) to video-image pixels.
pub fn camera_to_image(gx_cm: f64, gy_cm: f64, device: &DeviceConfig) -> (f64, f64) {
    let dx = (gx_cm + device.cam_offset_x_cm) * device.px_per_cm_x;
    let dy = (gy_cm + device.cam_offset_y_cm) * device.px_per_cm_y;
    (
        device.display_origin_x + device.display_to_image_scale_x * dx,
        device.display_origin_y + device.display_to_image_scale_y * dy,
    )
}

/// Inverse of [`camera_to_image`].
pub fn image_to_camera(px: f64, py: f64, device: &DeviceConfig) -> (f64, f64) {
    let dx = (px - device.display_origin_x) / device.display_to_image_scale_x;
    let dy = (py - device.display_origin_y) / device.display_to_image_scale_y;
    (
        dx / device.px_per_cm_x - device.cam_offset_x_cm,
        dy / device.px_per_cm_y - device.cam_offset_y_cm,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64, bool)", into = "(f64, f64, f64, bool)")]
pub struct GazeSample {
    pub t: f64,
    pub gx_cm: f64,
    pub gy_cm: f64,
    pub valid: bool,
}

impl From<(f64, f64, f64, bool)> for GazeSample {
    fn from((t, gx_cm, gy_cm, valid): (f64, f64, f64, bool)) -> Self {
        GazeSample { t, gx_cm, gy_cm, valid }
    }
}

impl From<GazeSample> for (f64, f64, f64, bool) {
    fn from(s: GazeSample) -> Self {
        (s.t, s.gx_cm, s.gy_cm, s.valid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeTrace {
    pub device: DeviceConfig,
    pub samples: Vec<GazeSample>,
}

impl GazeTrace {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        if self.samples.is_empty() {
            return Err(Error::Contract("gaze trace has no samples".into()));
        }
        if self.samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Contract("gaze timestamps must increase strictly".into()));
        }
        if !self.samples.iter().any(|s| s.valid) {
            return Err(Error::Contract("gaze trace has no valid sample".into()));
        }
        if self
            .samples
            .iter()
            .any(|s| !(s.t.is_finite() && s.gx_cm.is_finite() && s.gy_cm.is_finite()))
        {
            return Err(Error::Numeric("non-finite gaze sample".into()));
        }
        Ok(())
    }

    /// Image-pixel position of sample `i`.
    pub fn image_point(&self, i: usize) -> (f64, f64) {
        let s = &self.samples[i];
        camera_to_image(s.gx_cm, s.gy_cm, &self.device)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let trace: GazeTrace = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        trace.validate()?;
        Ok(trace)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazePooling {
    AvgOverFrames,
    MaxOverFrames,
    TimestampMatch,
}

impl std::str::FromStr for GazePooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" | "avg_over_frames" => Ok(GazePooling::AvgOverFrames),
            "max" | "max_over_frames" => Ok(GazePooling::MaxOverFrames),
            "timestamp_match" | "concat" => Ok(GazePooling::TimestampMatch),
            other => Err(Error::Config(format!("unknown gaze pooling `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeConfig {
    /// Gaussian σ as a fraction of `min(image_w, image_h)`.
    pub sigma_frac: f64,
    pub pooling: GazePooling,
}

impl Default for GazeConfig {
    fn default() -> Self {
        GazeConfig {
            sigma_frac: 0.10,
            pooling: GazePooling::MaxOverFrames,
        }
    }
}

impl GazeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_frac > 0.0 && self.sigma_frac <= 0.5) {
            return Err(Error::Config(format!(
                "sigma_frac {} outside (0, 0.5]",
                self.sigma_frac
            )));
        }
        Ok(())
    }

    pub fn sigma(&self, image_w: usize, image_h: usize) -> f64 {
        self.sigma_frac * image_w.min(image_h) as f64
    }
}

/// Dimension of the gaze feature for a pooling mode and track length.
pub fn gaze_feature_dim(pooling: GazePooling, track_len: usize) -> usize {
    match pooling {
        GazePooling::TimestampMatch => track_len,
        GazePooling::AvgOverFrames | GazePooling::MaxOverFrames => 1,
    }
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

/// Peak-normalized isotropic Gaussian around `(px, py)` sampled at pixel
/// centers, `[H, W]`.
pub fn gaze_heatmap(px: f64, py: f64, image_w: usize, image_h: usize, cfg: &GazeConfig) -> Result<Tensor> {
    cfg.validate()?;
    if image_w == 0 || image_h == 0 {
        return Err(Error::Geometry("image dimensions must be positive".into()));
    }
    let sigma = cfg.sigma(image_w, image_h);
    let mut data = Vec::with_capacity(image_w * image_h);
    for y in 0..image_h {
        let dy = y as f64 + 0.5 - py;
        for x in 0..image_w {
            let dx = x as f64 + 0.5 - px;
            data.push(gaussian(dx * dx + dy * dy, sigma));
        }
    }
    Tensor::new(vec![image_h, image_w], data)
}

/// Mean of `heatmap` over the pixels whose centers fall inside `bbox`.
pub fn pool_box(heatmap: &Tensor, bbox: &BBox) -> Result<f64> {
    if heatmap.rank() != 2 {
        return Err(Error::Dimension("heatmap must be [H, W]".into()));
    }
    let (h, w) = (heatmap.dims()[0], heatmap.dims()[1]);
    let b = bbox.clamp(w, h)?;
    let (x0, x1) = pixel_span(b.x_min, b.x_max, w);
    let (y0, y1) = pixel_span(b.y_min, b.y_max, h);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::Geometry(format!("box {bbox:?} covers no pixel center")));
    }
    let mut sum = 0.0;
    for y in y0..y1 {
        sum += heatmap.row(y)[x0..x1].iter().sum::<f64>();
    }
    Ok(sum / ((x1 - x0) * (y1 - y0)) as f64)
}

/// [`pool_box`] of the Gaussian map without materializing it; uses the
/// separability of the kernel.
pub fn pool_gaussian(px: f64, py: f64, sigma: f64, bbox: &BBox, image_w: usize, image_h: usize) -> Result<f64> {
    let b = bbox.clamp(image_w, image_h)?;
    let (x0, x1) = pixel_span(b.x_min, b.x_max, image_w);
    let (y0, y1) = pixel_span(b.y_min, b.y_max, image_h);
    if x0 >= x1 || y0 >= y1 {
        return Err(Error::Geometry(format!("box {bbox:?} covers no pixel center")));
    }
    let sx: f64 = (x0..x1)
        .map(|x| {
            let d = x as f64 + 0.5 - px;
            gaussian(d * d, sigma)
        })
        .sum();
    let sy: f64 = (y0..y1)
        .map(|y| {
            let d = y as f64 + 0.5 - py;
            gaussian(d * d, sigma)
        })
        .sum();
    Ok(sx * sy / ((x1 - x0) * (y1 - y0)) as f64)
}

/// For each frame, the index of the valid sample nearest in time within
/// `tolerance` (default: half the smallest frame spacing), or `None` for a
/// gap. Samples are used at most once and in order; ties go to the earlier
/// sample.
pub fn align_trace(trace: &GazeTrace, frame_timestamps: &[f64], tolerance: Option<f64>) -> Result<Vec<Option<usize>>> {
    if trace.samples.is_empty() {
        return Err(Error::Contract("empty gaze trace".into()));
    }
    if frame_timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Contract("frame timestamps must increase".into()));
    }
    let tol = tolerance.unwrap_or_else(|| {
        frame_timestamps
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
            / 2.0
    });
    let valid: Vec<usize> = (0..trace.samples.len()).filter(|&i| trace.samples[i].valid).collect();
    let mut start = 0usize;
    let mut out = Vec::with_capacity(frame_timestamps.len());
    for &ft in frame_timestamps {
        let rest = &valid[start..];
        let p = rest.partition_point(|&i| trace.samples[i].t < ft);
        let mut best: Option<(usize, f64)> = None;
        for k in [p.checked_sub(1), Some(p)].into_iter().flatten() {
            let Some(&i) = rest.get(k) else { continue };
            let d = (trace.samples[i].t - ft).abs();
            if d <= tol && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        match best {
            Some((k, _)) => {
                out.push(Some(rest[k]));
                start += k + 1;
            }
            None => out.push(None),
        }
    }
    Ok(out)
}

/// Per-frame pooled gaze over the last `track_len` frames of a clip, using
/// the track box of each frame. `aligned` comes from [`align_trace`] over all
/// frames of the clip. Gap frames contribute 0.
pub fn per_frame_gaze(
    trace: &GazeTrace,
    aligned: &[Option<usize>],
    track: &Track,
    image_w: usize,
    image_h: usize,
    cfg: &GazeConfig,
    track_len: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if aligned.is_empty() || track.is_empty() || track_len == 0 {
        return Err(Error::Contract("gaze feature needs at least one frame".into()));
    }
    let sigma = cfg.sigma(image_w, image_h);
    track_window(aligned.len(), track.len(), track_len)
        .into_iter()
        .map(|(f, t)| match aligned[f] {
            Some(i) => {
                let (px, py) = trace.image_point(i);
                pool_gaussian(px, py, sigma, &track.boxes[t], image_w, image_h)
            }
            None => Ok(0.0),
        })
        .collect()
}

/// Reduces per-frame pooled values according to the pooling mode.
pub fn pool_frames(per_frame: &[f64], pooling: GazePooling) -> Vec<f64> {
    match pooling {
        GazePooling::TimestampMatch => per_frame.to_vec(),
        GazePooling::AvgOverFrames => {
            vec![per_frame.iter().sum::<f64>() / per_frame.len().max(1) as f64]
        }
        GazePooling::MaxOverFrames => vec![per_frame.iter().cloned().fold(0.0, f64::max)],
    }
}

/// Gaze feature `f_gaze` of one candidate track.
#[allow(clippy::too_many_arguments)]
pub fn gaze_feature(
    trace: &GazeTrace,
    frame_timestamps: &[f64],
    track: &Track,
    image_w: usize,
    image_h: usize,
    cfg: &GazeConfig,
    track_len: usize,
) -> Result<Vec<f64>> {
    let aligned = align_trace(trace, frame_timestamps, None)?;
    let per_frame = per_frame_gaze(trace, &aligned, track, image_w, image_h, cfg, track_len)?;
    Ok(pool_frames(&per_frame, cfg.pooling))
}
