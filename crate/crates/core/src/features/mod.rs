//! Per-candidate and whole-frame feature encoding.

pub mod ftb;
pub mod hha;
pub mod patch;
pub mod track;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Tensor;

pub use ftb::{decode_ftb, encode_ftb, load_features, save_features, FeatureMap};
pub use hha::{depth_to_hha, CameraGeom};
pub use patch::{patch_feature, pixel_span};
pub use track::{assemble_track_features, track_window, Track};

/// Axis-aligned box in continuous pixel coordinates, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Geometry(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn full_image(image_w: usize, image_h: usize) -> BBox {
        BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: image_w as f64,
            y_max: image_h as f64,
        }
    }

    pub fn is_inside(&self, image_w: usize, image_h: usize) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= image_w as f64 && self.y_max <= image_h as f64
    }

    /// Intersection with the image rectangle; an empty result is an error.
    pub fn clamp(&self, image_w: usize, image_h: usize) -> Result<BBox> {
        let b = BBox {
            x_min: self.x_min.max(0.0),
            y_min: self.y_min.max(0.0),
            x_max: self.x_max.min(image_w as f64),
            y_max: self.y_max.min(image_h as f64),
        };
        b.validate()
            .map_err(|_| Error::Geometry(format!("box {self:?} has no area inside the image")))?;
        Ok(b)
    }
}

/// Normalized 8-d spatial configuration
/// `[x_min, y_min, x_max, y_max, x_center, y_center, w, h]`, x terms divided
/// by the image width and y terms by the image height.
pub fn spatial_feature(b: &BBox, image_w: usize, image_h: usize) -> Result<[f64; 8]> {
    b.validate()?;
    if image_w == 0 || image_h == 0 {
        return Err(Error::Geometry("image dimensions must be positive".into()));
    }
    let (w, h) = (image_w as f64, image_h as f64);
    let (xc, yc) = b.center();
    Ok([
        b.x_min / w,
        b.y_min / h,
        b.x_max / w,
        b.y_max / h,
        xc / w,
        yc / h,
        b.width() / w,
        b.height() / h,
    ])
}

/// Appearance, depth and flow of one video frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameChannels {
    /// `[H, W, 3]`, values in [0, 1].
    pub appearance: Tensor,
    /// `[H, W]`, meters or disparity depending on the camera description.
    pub depth: Tensor,
    /// `[H, W, 2]`, pixels per frame.
    pub flow: Tensor,
}

impl FrameChannels {
    pub fn new(appearance: Tensor, depth: Tensor, flow: Tensor) -> Result<Self> {
        let f = FrameChannels {
            appearance,
            depth,
            flow,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn height(&self) -> usize {
        self.depth.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.depth.dims()[1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth.rank() != 2 {
            return Err(Error::Dimension(format!(
                "depth must be [H, W], got {:?}",
                self.depth.dims()
            )));
        }
        let (h, w) = (self.height(), self.width());
        if self.appearance.dims() != [h, w, 3] {
            return Err(Error::Dimension(format!(
                "appearance {:?} does not match depth [{h}, {w}]",
                self.appearance.dims()
            )));
        }
        if self.flow.dims() != [h, w, 2] {
            return Err(Error::Dimension(format!(
                "flow {:?} does not match depth [{h}, {w}]",
                self.flow.dims()
            )));
        }
        if self.appearance.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("appearance values outside [0, 1]".into()));
        }
        Ok(())
    }
}
