//! Checkpoints are an `FTB1` file holding one entry per parameter group
//! plus a JSON sidecar at `<path>.json` with the configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::OrParams;
use crate::error::{Error, Result};
use crate::features::{load_features, save_features};
use crate::numkit::ParamSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Caller-defined settings kept alongside the weights.
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the weights (as `f32`) and the sidecar.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &OrParams, extra: serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    let entries: Vec<_> = params.groups().into_iter().map(|(n, t)| (n, t.clone())).collect();
    save_features(path, &entries)?;
    let meta = CheckpointMeta {
        config: params.config.clone(),
        extra,
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&side, e))?;
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

/// Reads a checkpoint and validates every tensor against the configuration.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(OrParams, CheckpointMeta)> {
    let path = path.as_ref();
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
    let mut params = OrParams::zeros(&meta.config)?;
    let mut entries = load_features(path)?;
    let mut groups = params.groups_mut();
    if entries.len() != groups.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, configuration needs {}",
            entries.len(),
            groups.len()
        )));
    }
    for ((name, slot), (ename, t)) in groups.iter_mut().zip(entries.drain(..)) {
        if *name != ename || slot.dims() != t.dims() {
            return Err(Error::Config(format!(
                "checkpoint tensor `{ename}` {:?} does not match `{name}` {:?}",
                t.dims(),
                slot.dims()
            )));
        }
        **slot = t;
    }
    drop(groups);
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tensor;

    fn config() -> ModelConfig {
        let mut c = ModelConfig::new(9, 4, 4, 2);
        c.visual_hidden = 3;
        c.fusion_hidden = 5;
        c.lang_hidden = 4;
        c.embed_dim = 3;
        c
    }

    #[test]
    fn round_trip_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ftb");
        let p = OrParams::init(&config(), 1).unwrap();
        save_checkpoint(&path, &p, serde_json::json!({"note": 1})).unwrap();
        let (q, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.extra["note"], 1);
        assert_eq!(q.config, p.config);
        for ((_, a), (_, b)) in p.groups().iter().zip(q.groups()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ftb");
        let p = OrParams::init(&config(), 2).unwrap();
        save_checkpoint(&path, &p, serde_json::Value::Null).unwrap();
        let mut c = config();
        c.fusion_hidden = 6;
        let meta = CheckpointMeta {
            config: c,
            extra: serde_json::Value::Null,
        };
        std::fs::write(sidecar_path(&path), serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Config(_))));

        let mut bad = p.clone();
        bad.r = Tensor::zeros(&[3]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(dir.path().join("nope")),
            Err(Error::Io { .. })
        ));
    }
}
