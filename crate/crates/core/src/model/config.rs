use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaze::{gaze_feature_dim, GazePooling};

/// Which visual modalities feed the network. Spatial configuration and
/// language are always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Modalities {
    pub image: bool,
    pub depth: bool,
    pub motion: bool,
    pub gaze: bool,
}

impl Modalities {
    pub const I: Modalities = Modalities {
        image: true,
        depth: false,
        motion: false,
        gaze: false,
    };
    pub const ID: Modalities = Modalities {
        image: true,
        depth: true,
        motion: false,
        gaze: false,
    };
    pub const IO: Modalities = Modalities {
        image: true,
        depth: false,
        motion: true,
        gaze: false,
    };
    pub const IDO: Modalities = Modalities {
        image: true,
        depth: true,
        motion: true,
        gaze: false,
    };
    pub const IDOG: Modalities = Modalities {
        image: true,
        depth: true,
        motion: true,
        gaze: true,
    };

    pub fn with_gaze(self, gaze: bool) -> Self {
        Modalities { gaze, ..self }
    }
}

impl FromStr for Modalities {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut m = Modalities {
            image: false,
            depth: false,
            motion: false,
            gaze: false,
        };
        let s = s.trim();
        if s.is_empty() || s == "-" {
            return Ok(m);
        }
        for ch in s.chars().filter(|c| !matches!(c, ',' | '+')) {
            let flag = match ch.to_ascii_uppercase() {
                'I' => &mut m.image,
                'D' => &mut m.depth,
                'O' => &mut m.motion,
                'G' => &mut m.gaze,
                _ => return Err(Error::Config(format!("unknown modality `{ch}` in `{s}`"))),
            };
            if *flag {
                return Err(Error::Config(format!("modality `{ch}` repeated in `{s}`")));
            }
            *flag = true;
        }
        Ok(m)
    }
}

impl TryFrom<String> for Modalities {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Modalities> for String {
    fn from(m: Modalities) -> Self {
        m.to_string()
    }
}

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        for (on, c) in [
            (self.image, 'I'),
            (self.depth, 'D'),
            (self.motion, 'O'),
            (self.gaze, 'G'),
        ] {
            if on {
                s.push(c);
            }
        }
        if s.is_empty() {
            s.push('-');
        }
        f.write_str(&s)
    }
}

/// The seven per-modality recurrent encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VisualStream {
    ImageLocal,
    ImageGlobal,
    DepthLocal,
    DepthGlobal,
    MotionLocal,
    MotionGlobal,
    Gaze,
}

impl VisualStream {
    pub const ALL: [VisualStream; 7] = [
        VisualStream::ImageLocal,
        VisualStream::ImageGlobal,
        VisualStream::DepthLocal,
        VisualStream::DepthGlobal,
        VisualStream::MotionLocal,
        VisualStream::MotionGlobal,
        VisualStream::Gaze,
    ];

    /// Streams concatenated into the local fusion input, in order.
    pub const LOCAL: [VisualStream; 4] = [
        VisualStream::ImageLocal,
        VisualStream::DepthLocal,
        VisualStream::MotionLocal,
        VisualStream::Gaze,
    ];

    /// Streams concatenated into the global fusion input, in order.
    pub const GLOBAL: [VisualStream; 3] = [
        VisualStream::ImageGlobal,
        VisualStream::DepthGlobal,
        VisualStream::MotionGlobal,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            VisualStream::ImageLocal => "lstm_image_local",
            VisualStream::ImageGlobal => "lstm_image_global",
            VisualStream::DepthLocal => "lstm_depth_local",
            VisualStream::DepthGlobal => "lstm_depth_global",
            VisualStream::MotionLocal => "lstm_motion_local",
            VisualStream::MotionGlobal => "lstm_motion_global",
            VisualStream::Gaze => "lstm_gaze",
        }
    }

    pub fn enabled(self, m: &Modalities) -> bool {
        match self {
            VisualStream::ImageLocal | VisualStream::ImageGlobal => m.image,
            VisualStream::DepthLocal | VisualStream::DepthGlobal => m.depth,
            VisualStream::MotionLocal | VisualStream::MotionGlobal => m.motion,
            VisualStream::Gaze => m.gaze,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub lang_hidden: usize,
    pub visual_hidden: usize,
    pub fusion_hidden: usize,
    /// Number of past frames fed to each visual encoder.
    pub track_len: usize,
    /// Per-frame feature sizes of the appearance, depth and motion streams.
    pub image_dim: usize,
    pub depth_dim: usize,
    pub motion_dim: usize,
    pub gaze_pooling: GazePooling,
    pub modalities: Modalities,
    #[serde(default)]
    pub freeze_embedding: bool,
}

pub const SPATIAL_DIM: usize = 8;

impl ModelConfig {
    /// Defaults for a vocabulary and per-frame feature sizes: hidden size 64,
    /// embeddings of 32, one frame, max-pooled gaze, all modalities.
    pub fn new(vocab_size: usize, image_dim: usize, depth_dim: usize, motion_dim: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            lang_hidden: 64,
            visual_hidden: 64,
            fusion_hidden: 64,
            track_len: 1,
            image_dim,
            depth_dim,
            motion_dim,
            gaze_pooling: GazePooling::MaxOverFrames,
            modalities: Modalities::IDOG,
            freeze_embedding: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("lang_hidden", self.lang_hidden),
            ("visual_hidden", self.visual_hidden),
            ("fusion_hidden", self.fusion_hidden),
            ("track_len", self.track_len),
            ("image_dim", self.image_dim),
            ("depth_dim", self.depth_dim),
            ("motion_dim", self.motion_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.vocab_size <= crate::language::RESERVED.len() {
            return Err(Error::Config("vocabulary has no words".into()));
        }
        Ok(())
    }

    pub fn gaze_dim(&self) -> usize {
        gaze_feature_dim(self.gaze_pooling, self.track_len)
    }

    /// Input size of a visual encoder.
    pub fn stream_input_dim(&self, s: VisualStream) -> usize {
        match s {
            VisualStream::ImageLocal | VisualStream::ImageGlobal => self.image_dim,
            VisualStream::DepthLocal | VisualStream::DepthGlobal => self.depth_dim,
            VisualStream::MotionLocal | VisualStream::MotionGlobal => self.motion_dim,
            VisualStream::Gaze => 1,
        }
    }

    /// Number of steps a visual encoder runs for.
    pub fn stream_steps(&self, s: VisualStream) -> usize {
        match s {
            VisualStream::Gaze => self.gaze_dim(),
            _ => self.track_len,
        }
    }

    pub fn local_static_dim(&self) -> usize {
        let n = VisualStream::LOCAL
            .iter()
            .filter(|s| s.enabled(&self.modalities))
            .count();
        n * self.visual_hidden + SPATIAL_DIM
    }

    pub fn global_static_dim(&self) -> usize {
        let n = VisualStream::GLOBAL
            .iter()
            .filter(|s| s.enabled(&self.modalities))
            .count();
        n * self.visual_hidden
    }

    pub fn local_fusion_input(&self) -> usize {
        self.lang_hidden + self.local_static_dim()
    }

    pub fn global_fusion_input(&self) -> usize {
        self.lang_hidden + self.global_static_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_strings() {
        assert_eq!("IDOG".parse::<Modalities>().unwrap(), Modalities::IDOG);
        assert_eq!("i,o".parse::<Modalities>().unwrap(), Modalities::IO);
        assert_eq!(Modalities::ID.to_string(), "ID");
        assert!("IX".parse::<Modalities>().is_err());
        assert!("II".parse::<Modalities>().is_err());
        let json = serde_json::to_string(&Modalities::IO).unwrap();
        assert_eq!(json, "\"IO\"");
    }

    #[test]
    fn ablation_changes_fusion_dims() {
        let mut c = ModelConfig::new(20, 96, 96, 64);
        let full = (c.local_fusion_input(), c.global_fusion_input());
        c.modalities = Modalities::IO;
        assert_eq!(c.local_fusion_input(), full.0 - 2 * c.visual_hidden);
        assert_eq!(c.global_fusion_input(), full.1 - c.visual_hidden);
        c.modalities = Modalities::I;
        assert_eq!(c.local_fusion_input(), c.lang_hidden + c.visual_hidden + SPATIAL_DIM);
    }
}
