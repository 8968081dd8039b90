//! Turns scenes and candidate boxes into model inputs.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, SceneRecord};
use crate::error::{Error, Result};
use crate::features::{assemble_track_features, depth_to_hha, patch_feature, spatial_feature, BBox, CameraGeom, Track};
use crate::gaze::{align_trace, per_frame_gaze, pool_frames, GazeConfig};
use crate::language::{build_vocab, Vocab};
use crate::model::{CandidateFeatures, GlobalFeatures, Modalities, ModelConfig, TrainExample};
use crate::numkit::Tensor;
use crate::proposals::{build_tracks, generate_candidates_with_objects, CandidateSet, Jitter, ObjectMotion, DEFAULT_M};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Patch grid side for appearance, depth and flow statistics.
    pub grid: usize,
    /// Frames fed to each visual encoder, ending at the annotated frame.
    pub track_len: usize,
    pub gaze: GazeConfig,
    /// Candidates per scene when the scene has no ingested proposals.
    pub num_candidates: usize,
    pub jitter: Jitter,
    pub candidate_seed: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            grid: 4,
            track_len: 8,
            gaze: GazeConfig::default(),
            num_candidates: DEFAULT_M,
            jitter: Jitter::default(),
            candidate_seed: 0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.track_len == 0 {
            return Err(Error::Config("grid and track_len must be positive".into()));
        }
        self.gaze.validate()
    }

    pub fn image_dim(&self) -> usize {
        self.grid * self.grid * 3 * 2
    }

    pub fn depth_dim(&self) -> usize {
        self.grid * self.grid * 3 * 2
    }

    pub fn motion_dim(&self) -> usize {
        self.grid * self.grid * 2 * 2
    }

    /// Model configuration with default sizes whose inputs match these
    /// features.
    pub fn model_config(&self, vocab_size: usize, modalities: Modalities) -> ModelConfig {
        let mut c = ModelConfig::new(vocab_size, self.image_dim(), self.depth_dim(), self.motion_dim());
        c.track_len = self.track_len;
        c.gaze_pooling = self.gaze.pooling;
        c.modalities = modalities;
        c
    }

    /// Overwrites the feature-dependent fields of `config`.
    pub fn apply_to(&self, config: &mut ModelConfig) {
        config.track_len = self.track_len;
        config.image_dim = self.image_dim();
        config.depth_dim = self.depth_dim();
        config.motion_dim = self.motion_dim();
        config.gaze_pooling = self.gaze.pooling;
    }
}

/// Per-frame channel stacks of a scene, ready for box queries.
pub struct PreparedScene<'a> {
    pub scene: &'a SceneRecord,
    pub image_w: usize,
    pub image_h: usize,
    hha: Vec<Tensor>,
    aligned: Vec<Option<usize>>,
    pub global: Arc<GlobalFeatures>,
}

pub fn prepare_scene<'a>(
    scene: &'a SceneRecord,
    camera: &CameraGeom,
    image_w: usize,
    image_h: usize,
    cfg: &FeatureConfig,
) -> Result<PreparedScene<'a>> {
    cfg.validate()?;
    let hha = scene
        .frames
        .iter()
        .map(|f| depth_to_hha(&f.depth, camera))
        .collect::<Result<Vec<_>>>()?;
    let aligned = align_trace(&scene.gaze, &scene.timestamps, None)?;
    let mut p = PreparedScene {
        scene,
        image_w,
        image_h,
        hha,
        aligned,
        global: Arc::default(),
    };
    let full = Track::identity(BBox::full_image(image_w, image_h), 1);
    let (image, depth, motion) = p.visual_sequences(&full, cfg)?;
    p.global = Arc::new(GlobalFeatures { image, depth, motion });
    Ok(p)
}

type Sequences = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>);

impl PreparedScene<'_> {
    fn visual_sequences(&self, track: &Track, cfg: &FeatureConfig) -> Result<Sequences> {
        let frames = &self.scene.frames;
        let g = cfg.grid;
        let image = assemble_track_features(frames, track, cfg.track_len, |f, b| patch_feature(&f.appearance, b, g))?;
        let depth = assemble_track_features(&self.hha, track, cfg.track_len, |t, b| patch_feature(t, b, g))?;
        let motion = assemble_track_features(frames, track, cfg.track_len, |f, b| patch_feature(&f.flow, b, g))?;
        Ok((image, depth, motion))
    }

    /// Features of one candidate following `track`.
    pub fn features(&self, track: &Track, cfg: &FeatureConfig) -> Result<CandidateFeatures> {
        let (image, depth, motion) = self.visual_sequences(track, cfg)?;
        let per_frame = per_frame_gaze(
            &self.scene.gaze,
            &self.aligned,
            track,
            self.image_w,
            self.image_h,
            &cfg.gaze,
            cfg.track_len,
        )?;
        Ok(CandidateFeatures {
            image,
            depth,
            motion,
            gaze: pool_frames(&per_frame, cfg.gaze.pooling),
            spatial: spatial_feature(track.current(), self.image_w, self.image_h)?,
            global: Arc::clone(&self.global),
        })
    }

    /// Tracks over the clip for `boxes`, using the scripted motion if the
    /// scene has one.
    pub fn tracks(&self, boxes: &CandidateSet) -> Result<Vec<Track>> {
        let motion: Option<Vec<ObjectMotion>> = self.scene.object_motion();
        build_tracks(
            boxes,
            motion.as_deref(),
            self.scene.num_frames(),
            self.image_w,
            self.image_h,
        )
    }

    pub fn candidate_features(&self, boxes: &CandidateSet, cfg: &FeatureConfig) -> Result<Vec<CandidateFeatures>> {
        self.tracks(boxes)?.iter().map(|t| self.features(t, cfg)).collect()
    }

    pub fn box_features(&self, b: &BBox, cfg: &FeatureConfig) -> Result<CandidateFeatures> {
        let set = CandidateSet::ingested(&[*b], self.image_w, self.image_h)?;
        let mut f = self.candidate_features(&set, cfg)?;
        Ok(f.remove(0))
    }
}

/// Stable 64-bit FNV-1a of a scene id, used to derive per-scene seeds.
pub fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Ingested proposals when the scene has them, otherwise `M` synthetic
/// candidates with one planted positive and one box per other object.
pub fn scene_candidates(
    scene: &SceneRecord,
    image_w: usize,
    image_h: usize,
    cfg: &FeatureConfig,
) -> Result<CandidateSet> {
    if let Some(p) = &scene.proposals {
        return CandidateSet::ingested(p, image_w, image_h);
    }
    let others: Vec<BBox> = scene
        .objects
        .iter()
        .flatten()
        .map(|o| o.motion.bbox)
        .filter(|b| *b != scene.gt)
        .collect();
    generate_candidates_with_objects(
        &scene.gt,
        &others,
        cfg.num_candidates,
        cfg.jitter,
        image_w,
        image_h,
        cfg.candidate_seed ^ id_hash(&scene.id),
    )
}

/// Vocabulary of every expression in `dataset`.
pub fn dataset_vocab(dataset: &Dataset) -> Result<Vocab> {
    let corpus: Vec<&str> = dataset.scenes.iter().map(|s| s.expression.as_str()).collect();
    build_vocab(&corpus, 1)
}

/// One example per scene: the ground-truth box paired with its expression.
pub fn training_examples(dataset: &Dataset, vocab: &Vocab, cfg: &FeatureConfig) -> Result<Vec<TrainExample>> {
    dataset
        .scenes
        .par_iter()
        .map(|s| {
            let example = || -> Result<TrainExample> {
                let prep = prepare_scene(s, &dataset.camera, dataset.image_w, dataset.image_h, cfg)?;
                Ok(TrainExample {
                    features: prep.box_features(&s.gt, cfg)?,
                    expression: vocab.encode(&s.expression)?,
                })
            };
            example().map_err(|e| e.in_scene(&s.id))
        })
        .collect::<Result<Vec<_>>>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, Ambiguity, SynthSpec};
    use crate::gaze::GazePooling;

    fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn twin_features(mode: Ambiguity, pooling: GazePooling) -> Vec<(CandidateFeatures, CandidateFeatures)> {
        let spec = SynthSpec {
            num_scenes: 10,
            ambiguity: mode,
            gaze_noise: 0.0,
            invalid_rate: 0.0,
            ..SynthSpec::default()
        };
        let ds = generate_synthetic(&spec, 21).unwrap();
        let mut cfg = FeatureConfig::default();
        cfg.gaze.pooling = pooling;
        ds.scenes
            .iter()
            .map(|s| {
                let prep = prepare_scene(s, &ds.camera, ds.image_w, ds.image_h, &cfg).unwrap();
                let o = s.objects.as_ref().unwrap();
                (
                    prep.box_features(&o[0].motion.bbox, &cfg).unwrap(),
                    prep.box_features(&o[1].motion.bbox, &cfg).unwrap(),
                )
            })
            .collect()
    }

    /// Largest target/twin difference per channel: image, depth, motion, gaze.
    fn channel_gaps(t: &CandidateFeatures, d: &CandidateFeatures) -> [f64; 4] {
        [
            max_diff(&t.image, &d.image),
            max_diff(&t.depth, &d.depth),
            max_diff(&t.motion, &d.motion),
            max_diff(std::slice::from_ref(&t.gaze), std::slice::from_ref(&d.gaze)),
        ]
    }

    #[test]
    fn twins_differ_only_in_their_modality() {
        for (mode, channel) in [(Ambiguity::Motion, 2), (Ambiguity::Depth, 1), (Ambiguity::Gaze, 3)] {
            for pooling in [GazePooling::TimestampMatch, GazePooling::AvgOverFrames] {
                for (t, d) in twin_features(mode, pooling) {
                    let gaps = channel_gaps(&t, &d);
                    for (c, g) in gaps.iter().enumerate() {
                        if c == channel {
                            assert!(*g > 1e-3, "{mode:?}: channel {c} should separate the twins");
                        } else {
                            assert!(*g < 1e-6, "{mode:?}: channel {c} differs by {g}");
                        }
                    }
                    assert_ne!(t.spatial, d.spatial);
                }
            }
        }
    }

    #[test]
    fn dimensions_match_model_config() {
        let ds = generate_synthetic(
            &SynthSpec {
                num_scenes: 2,
                ..SynthSpec::default()
            },
            0,
        )
        .unwrap();
        for pooling in [GazePooling::TimestampMatch, GazePooling::MaxOverFrames] {
            let mut cfg = FeatureConfig::default();
            cfg.gaze.pooling = pooling;
            let vocab = dataset_vocab(&ds).unwrap();
            let ex = training_examples(&ds, &vocab, &cfg).unwrap();
            let mc = cfg.model_config(vocab.len(), Modalities::IDOG);
            for e in &ex {
                e.features.check(&mc).unwrap();
            }
        }
    }

    #[test]
    fn synthetic_candidates_are_reproducible() {
        let ds = generate_synthetic(
            &SynthSpec {
                num_scenes: 3,
                ambiguity: Ambiguity::Motion,
                ..SynthSpec::default()
            },
            4,
        )
        .unwrap();
        let cfg = FeatureConfig::default();
        for s in &ds.scenes {
            let a = scene_candidates(s, 64, 48, &cfg).unwrap();
            assert_eq!(a, scene_candidates(s, 64, 48, &cfg).unwrap());
            assert_eq!(a.len(), 30);
            let p = a.positive_index.unwrap();
            assert!(crate::eval::iou(&a.boxes[p], &s.gt).unwrap() > 0.5);
            // The twin gets its own candidate.
            let twin = s.objects.as_ref().unwrap()[1].motion.bbox;
            assert!(a.boxes.iter().any(|b| crate::eval::iou(b, &twin).unwrap() > 0.5));
        }
    }

    #[test]
    fn id_hash_is_stable() {
        assert_eq!(id_hash(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(id_hash("a"), 0xaf63_dc4c_8601_ec8c);
    }
}
