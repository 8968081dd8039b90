//! Dataset manifest: a JSON index with inline annotations and relative
//! references to per-scene frame containers (`FTB1`), gaze traces and
//! optional proposal lists.
//!
//! ```json
//! {
//!   "version": 1, "image_w": 64, "image_h": 48, "fps": 15.0,
//!   "camera": { ... },
//!   "scenes": [{
//!     "id": "s0000", "frames": "scenes/s0000.frames.ftb",
//!     "timestamps": [0.0, ...], "gaze": "scenes/s0000.gaze.json",
//!     "proposals": "scenes/s0000.proposals.json",
//!     "gt_box": [x_min, y_min, x_max, y_max], "expression": "..."
//!   }]
//! }
//! ```
//!
//! Frame containers hold `frame{i}.appearance` `[H, W, 3]`,
//! `frame{i}.depth` `[H, W]` and `frame{i}.flow` `[H, W, 2]` for each frame.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::qc::{validate_expression, QcReport, UNIMPLEMENTED_RULES};
use super::synth::Ambiguity;
use super::{Dataset, SceneObject, SceneRecord};
use crate::error::{Error, Result};
use crate::features::{load_features, save_features, BBox, CameraGeom, FrameChannels};
use crate::gaze::GazeTrace;
use crate::numkit::Tensor;
use crate::proposals::load_proposals;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const HEADER: &str = "<manifest>";
const CHANNELS: [&str; 3] = ["appearance", "depth", "flow"];

/// Default camera when a manifest does not describe one.
pub fn default_camera() -> CameraGeom {
    CameraGeom {
        focal_px: 60.0,
        baseline_m: 0.1,
        horizon_row: 24.0,
        meters_per_unit: 1.0,
        camera_height_m: 1.5,
        max_height_m: 3.0,
        depth_is_disparity: false,
    }
}

pub const DEFAULT_FPS: f64 = 15.0;

#[derive(Serialize)]
struct HeaderOut<'a> {
    version: u32,
    image_w: usize,
    image_h: usize,
    fps: f64,
    camera: &'a CameraGeom,
    scenes: Vec<SceneOut<'a>>,
}

#[derive(Serialize)]
struct SceneOut<'a> {
    id: &'a str,
    frames: String,
    timestamps: &'a [f64],
    gaze: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    proposals: Option<String>,
    gt_box: BBox,
    expression: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    objects: Option<&'a [SceneObject]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ambiguity: Option<Ambiguity>,
}

fn frame_entry(i: usize, channel: &str) -> String {
    format!("frame{i}.{channel}")
}

/// Writes `dir/manifest.json` and one frame container and gaze file per
/// scene under `dir/scenes/`. Output bytes depend only on the dataset.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    dataset.validate()?;
    let dir = dir.as_ref();
    let scene_dir = dir.join("scenes");
    std::fs::create_dir_all(&scene_dir).map_err(|e| Error::io(&scene_dir, e))?;
    let mut scenes = Vec::with_capacity(dataset.scenes.len());
    for s in &dataset.scenes {
        let frames_rel = format!("scenes/{}.frames.ftb", s.id);
        let gaze_rel = format!("scenes/{}.gaze.json", s.id);
        let mut entries = Vec::with_capacity(3 * s.frames.len());
        for (i, f) in s.frames.iter().enumerate() {
            entries.push((frame_entry(i, "appearance"), f.appearance.clone()));
            entries.push((frame_entry(i, "depth"), f.depth.clone()));
            entries.push((frame_entry(i, "flow"), f.flow.clone()));
        }
        save_features(dir.join(&frames_rel), &entries)?;
        s.gaze.save(dir.join(&gaze_rel))?;
        let proposals = match &s.proposals {
            Some(p) => {
                let rel = format!("scenes/{}.proposals.json", s.id);
                write_json(&dir.join(&rel), p)?;
                Some(rel)
            }
            None => None,
        };
        scenes.push(SceneOut {
            id: &s.id,
            frames: frames_rel,
            timestamps: &s.timestamps,
            gaze: gaze_rel,
            proposals,
            gt_box: s.gt,
            expression: &s.expression,
            objects: s.objects.as_deref(),
            ambiguity: s.ambiguity,
        });
    }
    let header = HeaderOut {
        version: MANIFEST_VERSION,
        image_w: dataset.image_w,
        image_h: dataset.image_h,
        fps: dataset.fps,
        camera: &dataset.camera,
        scenes,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &header)?;
    Ok(path)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn schema(scene: &str, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        scene: scene.to_string(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, scene: &str, name: &str) -> Result<Option<T>> {
    match obj.get(name) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => T::deserialize(v)
            .map(Some)
            .map_err(|e| schema(scene, name, e.to_string())),
    }
}

fn required<T: DeserializeOwned>(obj: &Map<String, Value>, scene: &str, name: &str) -> Result<T> {
    field(obj, scene, name)?.ok_or_else(|| schema(scene, name, "missing"))
}

struct Header {
    dir: PathBuf,
    image_w: usize,
    image_h: usize,
    fps: f64,
    camera: CameraGeom,
    scenes: Vec<Value>,
}

fn read_header(path: &Path) -> Result<Header> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let Value::Object(obj) = root else {
        return Err(schema(HEADER, "<root>", "manifest must be a JSON object"));
    };
    let version: u32 = required(&obj, HEADER, "version")?;
    if version != MANIFEST_VERSION {
        return Err(schema(HEADER, "version", format!("unsupported version {version}")));
    }
    let image_w: usize = required(&obj, HEADER, "image_w")?;
    let image_h: usize = required(&obj, HEADER, "image_h")?;
    if image_w == 0 || image_h == 0 {
        return Err(schema(HEADER, "image_w", "image dimensions must be positive"));
    }
    let fps: f64 = field(&obj, HEADER, "fps")?.unwrap_or(DEFAULT_FPS);
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(schema(HEADER, "fps", "must be positive"));
    }
    let camera: CameraGeom = field(&obj, HEADER, "camera")?.unwrap_or_else(default_camera);
    camera.validate().map_err(|e| schema(HEADER, "camera", e.to_string()))?;
    let scenes: Vec<Value> = required(&obj, HEADER, "scenes")?;
    Ok(Header {
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        image_w,
        image_h,
        fps,
        camera,
        scenes,
    })
}

fn scene_id(value: &Value, index: usize) -> String {
    value
        .get("id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("#{index}"))
}

fn load_frames(path: &Path, id: &str) -> Result<Vec<FrameChannels>> {
    let map = load_features(path).map_err(|e| match e {
        Error::Io { .. } => e,
        other => other.in_scene(id),
    })?;
    if map.is_empty() || map.len() % 3 != 0 {
        return Err(schema(
            id,
            "frames",
            format!("{} tensors, expected 3 per frame", map.len()),
        ));
    }
    let mut tensors: Vec<Option<Tensor>> = vec![None; map.len()];
    for (name, t) in map {
        let slot = name
            .strip_prefix("frame")
            .and_then(|rest| rest.split_once('.'))
            .and_then(|(i, ch)| Some((i.parse::<usize>().ok()?, CHANNELS.iter().position(|c| *c == ch)?)))
            .map(|(i, c)| 3 * i + c)
            .filter(|&k| k < tensors.len())
            .ok_or_else(|| schema(id, "frames", format!("unexpected entry `{name}`")))?;
        if tensors[slot].replace(t).is_some() {
            return Err(schema(id, "frames", format!("duplicate entry `{name}`")));
        }
    }
    tensors
        .chunks(3)
        .enumerate()
        .map(|(i, c)| match c {
            [Some(a), Some(d), Some(f)] => FrameChannels::new(a.clone(), d.clone(), f.clone())
                .map_err(|e| schema(id, "frames", format!("frame {i}: {e}"))),
            _ => Err(schema(id, "frames", format!("frame {i} is missing a channel"))),
        })
        .collect()
}

fn load_scene(h: &Header, value: &Value, index: usize) -> Result<SceneRecord> {
    let id = scene_id(value, index);
    let Value::Object(obj) = value else {
        return Err(schema(&id, "<scene>", "scene entry must be a JSON object"));
    };
    let id: String = required(obj, &id, "id")?;
    let expression: String = required(obj, &id, "expression")?;
    let qc = validate_expression(&expression);
    if !qc.pass {
        return Err(Error::Qc {
            scene: id,
            violations: qc.summary(),
        });
    }
    let gt: BBox = required(obj, &id, "gt_box")?;
    let frames_rel: String = required(obj, &id, "frames")?;
    let gaze_rel: String = required(obj, &id, "gaze")?;
    let proposals_rel: Option<String> = field(obj, &id, "proposals")?;
    let timestamps: Option<Vec<f64>> = field(obj, &id, "timestamps")?;
    let objects: Option<Vec<SceneObject>> = field(obj, &id, "objects")?;
    let ambiguity: Option<Ambiguity> = field(obj, &id, "ambiguity")?;

    let frames = load_frames(&h.dir.join(&frames_rel), &id)?;
    let gaze_path = h.dir.join(&gaze_rel);
    let gaze = GazeTrace::load(&gaze_path).map_err(|e| match e {
        Error::Io { .. } => e,
        other => schema(&id, "gaze", other.to_string()),
    })?;
    let proposals = match proposals_rel {
        Some(rel) => Some(load_proposals(h.dir.join(rel)).map_err(|e| match e {
            Error::Io { .. } => e,
            other => schema(&id, "proposals", other.to_string()),
        })?),
        None => None,
    };
    let timestamps = timestamps.unwrap_or_else(|| (0..frames.len()).map(|i| i as f64 / h.fps).collect());
    let record = SceneRecord {
        id,
        frames,
        timestamps,
        gaze,
        proposals,
        gt,
        expression,
        objects,
        ambiguity,
    };
    record.validate(h.image_w, h.image_h)?;
    Ok(record)
}

/// Loads and validates a whole dataset; fails on the first bad scene.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let h = read_header(path.as_ref())?;
    let scenes = h
        .scenes
        .iter()
        .enumerate()
        .map(|(i, v)| load_scene(&h, v, i))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        image_w: h.image_w,
        image_h: h.image_h,
        fps: h.fps,
        camera: h.camera,
        scenes,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneCheck {
    pub id: String,
    pub qc: QcReport,
    /// First load or schema problem, QC aside.
    pub error: Option<String>,
}

impl SceneCheck {
    pub fn ok(&self) -> bool {
        self.qc.pass && self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestReport {
    pub pass: bool,
    pub scenes: Vec<SceneCheck>,
    pub unimplemented_rules: Vec<String>,
}

/// Checks every scene and collects the problems instead of stopping at the
/// first one. Errors only when the manifest itself cannot be read.
pub fn validate_manifest(path: impl AsRef<Path>) -> Result<ManifestReport> {
    let h = read_header(path.as_ref())?;
    let scenes: Vec<SceneCheck> = h
        .scenes
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let id = scene_id(v, i);
            let text = v.get("expression").and_then(Value::as_str).unwrap_or("");
            let qc = validate_expression(text);
            let error = match load_scene(&h, v, i) {
                Ok(_) | Err(Error::Qc { .. }) => None,
                Err(e) => Some(e.to_string()),
            };
            SceneCheck { id, qc, error }
        })
        .collect();
    Ok(ManifestReport {
        pass: scenes.iter().all(SceneCheck::ok),
        scenes,
        unimplemented_rules: UNIMPLEMENTED_RULES.iter().map(|s| s.to_string()).collect(),
    })
}
