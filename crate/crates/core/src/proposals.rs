//! Candidate boxes: ingestion, synthetic generation around the ground truth,
//! and per-candidate tracks.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::iou;
use crate::features::{BBox, Track};

/// Default number of candidates per scene.
pub const DEFAULT_M: usize = 30;
const MAX_TRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Ingested,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub boxes: Vec<BBox>,
    pub source: ProposalSource,
    /// Position of the planted positive, for synthetic sets.
    #[serde(default)]
    pub positive_index: Option<usize>,
}

impl CandidateSet {
    /// Wraps externally produced boxes, clamping them to the image.
    pub fn ingested(boxes: &[BBox], image_w: usize, image_h: usize) -> Result<Self> {
        if boxes.is_empty() {
            return Err(Error::Contract("proposal list is empty".into()));
        }
        let boxes = boxes
            .iter()
            .map(|b| b.clamp(image_w, image_h))
            .collect::<Result<Vec<_>>>()?;
        Ok(CandidateSet {
            boxes,
            source: ProposalSource::Ingested,
            positive_index: None,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Reads a JSON array of `[x_min, y_min, x_max, y_max]`.
pub fn load_proposals(path: impl AsRef<Path>) -> Result<Vec<BBox>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Box perturbation: log-normal scale and normal center shift, both as
/// fractions of the box size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub scale_sd: f64,
    pub shift_sd: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            scale_sd: 0.1,
            shift_sd: 0.1,
        }
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Config(format!("jitter: {e}")))
}

fn jitter_box(b: &BBox, j: &Jitter, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Result<Option<BBox>> {
    let (scale, shift) = (normal(j.scale_sd)?, normal(j.shift_sd)?);
    let (cx, cy) = b.center();
    let cx = cx + shift.sample(rng) * b.width();
    let cy = cy + shift.sample(rng) * b.height();
    let bw = b.width() * scale.sample(rng).exp();
    let bh = b.height() * scale.sample(rng).exp();
    let raw = BBox {
        x_min: cx - bw / 2.0,
        y_min: cy - bh / 2.0,
        x_max: cx + bw / 2.0,
        y_max: cy + bh / 2.0,
    };
    Ok(raw.clamp(w, h).ok())
}

/// A perturbed copy of `b` overlapping it with IoU > 0.5 (and, for
/// `avoid`, IoU < 0.5 with that box).
fn jittered_positive(
    b: &BBox,
    avoid: Option<&BBox>,
    j: &Jitter,
    w: usize,
    h: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<BBox>> {
    for _ in 0..MAX_TRIES {
        let Some(c) = jitter_box(b, j, w, h, rng)? else {
            continue;
        };
        let ok_self = iou(&c, b)? > 0.5;
        let ok_avoid = match avoid {
            Some(a) => iou(&c, a)? < 0.5,
            None => true,
        };
        if ok_self && ok_avoid {
            return Ok(Some(c));
        }
    }
    Ok(None)
}

fn random_negative(gt: &BBox, w: usize, h: usize, rng: &mut ChaCha8Rng) -> Result<BBox> {
    let (wf, hf) = (w as f64, h as f64);
    let (min_w, min_h) = ((wf * 0.05).max(1.0), (hf * 0.05).max(1.0));
    for _ in 0..MAX_TRIES {
        let bw = rng.gen_range(min_w..=(wf * 0.5).max(min_w));
        let bh = rng.gen_range(min_h..=(hf * 0.5).max(min_h));
        let x = rng.gen_range(0.0..=(wf - bw));
        let y = rng.gen_range(0.0..=(hf - bh));
        let b = BBox::new(x, y, x + bw, y + bh)?;
        if iou(&b, gt)? < 0.5 {
            return Ok(b);
        }
    }
    Err(Error::Generation(format!(
        "could not place a negative box away from {gt:?} in a {w}x{h} image"
    )))
}

/// `M` candidates: one jittered positive with IoU > 0.5 against `gt`, then
/// uniform random boxes with IoU < 0.5, shuffled.
pub fn generate_candidates(
    gt: &BBox,
    m: usize,
    jitter: Jitter,
    image_w: usize,
    image_h: usize,
    seed: u64,
) -> Result<CandidateSet> {
    generate_candidates_with_objects(gt, &[], m, jitter, image_w, image_h, seed)
}

/// Like [`generate_candidates`], but every box in `objects` that does not
/// overlap the ground truth also receives one jittered candidate before the
/// random fill, so that other objects compete with the target.
pub fn generate_candidates_with_objects(
    gt: &BBox,
    objects: &[BBox],
    m: usize,
    jitter: Jitter,
    image_w: usize,
    image_h: usize,
    seed: u64,
) -> Result<CandidateSet> {
    if m < 2 {
        return Err(Error::Contract(format!("need at least 2 candidates, got {m}")));
    }
    let gt = gt.clamp(image_w, image_h)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positive = jittered_positive(&gt, None, &jitter, image_w, image_h, &mut rng)?
        .ok_or_else(|| Error::Generation(format!("no jittered box overlaps {gt:?} enough")))?;
    let mut boxes = vec![positive];
    for o in objects {
        if boxes.len() == m {
            break;
        }
        let o = o.clamp(image_w, image_h)?;
        if iou(&o, &gt)? >= 0.5 {
            continue;
        }
        if let Some(c) = jittered_positive(&o, Some(&gt), &jitter, image_w, image_h, &mut rng)? {
            boxes.push(c);
        }
    }
    while boxes.len() < m {
        boxes.push(random_negative(&gt, image_w, image_h, &mut rng)?);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let positive_index = order.iter().position(|&i| i == 0);
    Ok(CandidateSet {
        boxes: order.iter().map(|&i| boxes[i]).collect(),
        source: ProposalSource::Synthetic,
        positive_index,
    })
}

/// Scripted straight-line motion of a synthetic object; `bbox` is its box on
/// the final frame and `velocity` is in pixels per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMotion {
    pub bbox: BBox,
    pub velocity: (f64, f64),
}

impl ObjectMotion {
    /// Box `back` frames before the final one.
    pub fn box_at(&self, back: usize) -> BBox {
        let k = back as f64;
        self.bbox.translate(-k * self.velocity.0, -k * self.velocity.1)
    }
}

/// Tracks over the last `num_frames` frames. A candidate follows the
/// velocity of the scripted object it overlaps most; without overlap (or
/// without a script) the box is repeated.
pub fn build_tracks(
    candidates: &CandidateSet,
    motion: Option<&[ObjectMotion]>,
    num_frames: usize,
    image_w: usize,
    image_h: usize,
) -> Result<Vec<Track>> {
    if num_frames == 0 {
        return Err(Error::Contract("tracks need at least one frame".into()));
    }
    candidates
        .boxes
        .iter()
        .map(|b| {
            let mut best: Option<(f64, (f64, f64))> = None;
            for o in motion.unwrap_or(&[]) {
                let v = iou(b, &o.bbox)?;
                if v > 0.0 && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, o.velocity));
                }
            }
            let Some((_, (vx, vy))) = best else {
                return Ok(Track::identity(*b, num_frames));
            };
            let mut clamped = false;
            let mut boxes = Vec::with_capacity(num_frames);
            // Newest first, so a box that leaves the image entirely can fall
            // back to the next newer one.
            for back in 0..num_frames {
                let k = back as f64;
                let moved = b.translate(-k * vx, -k * vy);
                if moved.is_inside(image_w, image_h) {
                    boxes.push(moved);
                    continue;
                }
                clamped = true;
                boxes.push(match moved.clamp(image_w, image_h) {
                    Ok(c) => c,
                    Err(_) => boxes.last().copied().unwrap_or(*b),
                });
            }
            boxes.reverse();
            let mut t = Track::new(boxes)?;
            t.clamped = clamped;
            Ok(t)
        })
        .collect()
}
