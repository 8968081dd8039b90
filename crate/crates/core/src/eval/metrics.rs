use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::BBox;

/// Intersection over union. Disjoint boxes give 0.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    Ok(inter / (a.area() + b.area() - inter))
}

/// Default overlap a top-K box must strictly exceed.
pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccAtK {
    pub k: usize,
    /// Percentage of scenes with a hit in the top K.
    pub percent: f64,
    /// Set when K exceeded some scene's candidate count and was clamped.
    pub clamped: bool,
}

/// Acc@K over scenes. `ranked[s]` lists scene `s`'s boxes best first.
/// A scene is a hit when one of its first `min(K, M)` boxes has IoU strictly
/// greater than `threshold` with `gts[s]`.
pub fn acc_at_k(ranked: &[Vec<BBox>], gts: &[BBox], k: usize, threshold: f64) -> Result<AccAtK> {
    if k == 0 {
        return Err(Error::Contract("K must be at least 1".into()));
    }
    if ranked.len() != gts.len() {
        return Err(Error::Contract(format!(
            "{} ranked lists for {} ground-truth boxes",
            ranked.len(),
            gts.len()
        )));
    }
    if ranked.is_empty() {
        return Err(Error::Contract("no scenes to evaluate".into()));
    }
    let mut hits = 0usize;
    let mut clamped = false;
    for (boxes, gt) in ranked.iter().zip(gts) {
        if boxes.is_empty() {
            return Err(Error::Contract("empty ranked list".into()));
        }
        clamped |= k > boxes.len();
        let mut hit = false;
        for b in boxes.iter().take(k) {
            hit |= iou(b, gt)? > threshold;
        }
        hits += usize::from(hit);
    }
    Ok(AccAtK {
        k,
        percent: 100.0 * hits as f64 / ranked.len() as f64,
        clamped,
    })
}
