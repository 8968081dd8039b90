use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Boxes of one object over consecutive frames, oldest first; the last box
/// belongs to the current frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub boxes: Vec<BBox>,
    /// Set when some boxes had to be clamped to the image.
    #[serde(default)]
    pub clamped: bool,
}

impl Track {
    pub fn new(boxes: Vec<BBox>) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::Contract("empty track".into()));
        }
        for b in &boxes {
            b.validate()?;
        }
        Ok(Track { boxes, clamped: false })
    }

    pub fn identity(b: BBox, len: usize) -> Self {
        Track {
            boxes: vec![b; len.max(1)],
            clamped: false,
        }
    }

    pub fn current(&self) -> &BBox {
        self.boxes.last().expect("tracks are non-empty")
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// `(frame index, track index)` pairs for the last `len` frames of a clip
/// of `num_frames`, oldest first. Frames or track entries that do not reach
/// back far enough repeat the earliest available one.
pub fn track_window(num_frames: usize, track_len: usize, len: usize) -> Vec<(usize, usize)> {
    debug_assert!(num_frames >= 1 && track_len >= 1 && len >= 1);
    (0..len)
        .map(|k| {
            let back = len - 1 - k;
            let frame = (num_frames - 1).saturating_sub(back);
            let entry = (track_len - 1).saturating_sub(back);
            (frame, entry)
        })
        .collect()
}

/// Applies `extractor` to each of the last `len` frames over the matching
/// track box and returns the features oldest to newest.
pub fn assemble_track_features<F, E>(frames: &[F], track: &Track, len: usize, mut extractor: E) -> Result<Vec<Vec<f64>>>
where
    E: FnMut(&F, &BBox) -> Result<Vec<f64>>,
{
    if track.is_empty() {
        return Err(Error::Contract("empty track".into()));
    }
    if frames.is_empty() {
        return Err(Error::Contract("no frames".into()));
    }
    if len == 0 {
        return Err(Error::Config("track length must be at least 1".into()));
    }
    track_window(frames.len(), track.len(), len)
        .into_iter()
        .map(|(f, t)| extractor(&frames[f], &track.boxes[t]))
        .collect()
}
