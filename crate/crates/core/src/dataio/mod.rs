//! Scene records, dataset manifests, expression quality control, the
//! synthetic scene generator and train/eval splitting.

pub mod manifest;
pub mod qc;
pub mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BBox, CameraGeom, FrameChannels};
use crate::gaze::GazeTrace;
use crate::proposals::ObjectMotion;

pub use manifest::{load_manifest, save_dataset, validate_manifest, ManifestReport, SceneCheck, MANIFEST_VERSION};
pub use qc::{validate_expression, QcReport, QcViolation, UNIMPLEMENTED_RULES};
pub use synth::{generate_scene, generate_synthetic, synthetic_device, Ambiguity, SynthSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectRole {
    Target,
    Distractor,
    Other,
}

/// Scripted object of a synthetic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub color: String,
    pub depth_m: f64,
    pub motion: ObjectMotion,
    pub role: ObjectRole,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub id: String,
    pub frames: Vec<FrameChannels>,
    /// Seconds, one per frame, strictly increasing.
    pub timestamps: Vec<f64>,
    pub gaze: GazeTrace,
    pub proposals: Option<Vec<BBox>>,
    /// Referred object on the final frame.
    pub gt: BBox,
    pub expression: String,
    /// Synthetic scenes only.
    pub objects: Option<Vec<SceneObject>>,
    /// Synthetic scenes only: the ambiguity the scene was built with.
    pub ambiguity: Option<Ambiguity>,
}

impl SceneRecord {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Scripted motion of every object, if known.
    pub fn object_motion(&self) -> Option<Vec<ObjectMotion>> {
        self.objects.as_ref().map(|o| o.iter().map(|o| o.motion).collect())
    }

    /// Checks every record invariant; errors name the scene and field.
    pub fn validate(&self, image_w: usize, image_h: usize) -> Result<()> {
        let schema = |field: &str, message: String| Error::Schema {
            scene: self.id.clone(),
            field: field.to_string(),
            message,
        };
        if !valid_id(&self.id) {
            return Err(schema("id", "ids use ASCII letters, digits, '-', '_' and '.'".into()));
        }
        if self.frames.is_empty() {
            return Err(schema("frames", "no frames".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate().map_err(|e| schema("frames", format!("frame {i}: {e}")))?;
            if (f.width(), f.height()) != (image_w, image_h) {
                return Err(schema(
                    "frames",
                    format!(
                        "frame {i} is {}x{}, dataset is {image_w}x{image_h}",
                        f.width(),
                        f.height()
                    ),
                ));
            }
        }
        if self.timestamps.len() != self.frames.len() {
            return Err(schema(
                "timestamps",
                format!("{} timestamps for {} frames", self.timestamps.len(), self.frames.len()),
            ));
        }
        if self.timestamps.iter().any(|t| !t.is_finite()) || self.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(schema("timestamps", "must be finite and strictly increasing".into()));
        }
        self.gaze.validate().map_err(|e| schema("gaze", e.to_string()))?;
        if !self.gt.is_inside(image_w, image_h) {
            return Err(schema("gt_box", format!("{:?} outside the image", self.gt)));
        }
        if let Some(p) = &self.proposals {
            if p.is_empty() {
                return Err(schema("proposals", "empty proposal list".into()));
            }
        }
        let qc = validate_expression(&self.expression);
        if !qc.pass {
            return Err(Error::Qc {
                scene: self.id.clone(),
                violations: qc.summary(),
            });
        }
        Ok(())
    }
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_w: usize,
    pub image_h: usize,
    pub fps: f64,
    pub camera: CameraGeom,
    pub scenes: Vec<SceneRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.scenes {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Schema {
                    scene: s.id.clone(),
                    field: "id".into(),
                    message: "duplicate scene id".into(),
                });
            }
            s.validate(self.image_w, self.image_h)?;
        }
        Ok(())
    }

    pub fn scene(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id)
    }

    /// Same header, scenes chosen by index.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            image_w: self.image_w,
            image_h: self.image_h,
            fps: self.fps,
            camera: self.camera,
            scenes: indices.iter().map(|&i| self.scenes[i].clone()).collect(),
        }
    }
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Seeded permutation of `0..n`; the first `⌈fraction·n⌉` indices train,
/// the rest evaluate. Both sides keep at least one scene.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract(format!("splitting needs at least 2 scenes, got {n}")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} outside (0, 1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let eval = idx.split_off(n_train);
    Ok((idx, eval))
}

pub fn split_dataset(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, eval) = split_indices(dataset.scenes.len(), fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&eval)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_scenes_split_eight_two() {
        let (a, b) = split_indices(10, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(split_indices(10, 0.8, 3).unwrap(), (a, b));
    }

    #[test]
    fn tiny_inputs() {
        assert!(matches!(split_indices(1, 0.8, 0), Err(Error::Contract(_))));
        assert!(matches!(split_indices(5, 1.0, 0), Err(Error::Config(_))));
        let (a, b) = split_indices(2, 0.8, 0).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
    }

    #[test]
    fn ids() {
        assert!(valid_id("scene_0001.b"));
        assert!(!valid_id("../x"));
        assert!(!valid_id(".hidden"));
        assert!(!valid_id(""));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..300, seed in any::<u64>(), f in 0.05f64..0.95) {
            let (a, b) = split_indices(n, f, seed).unwrap();
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let want = ((f * n as f64).ceil() as usize).clamp(1, n - 1);
            prop_assert_eq!(a.len(), want);
        }
    }
}
