//! Ranking every evaluation scene's candidates and scoring the top boxes.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{acc_at_k, iou, AccAtK, IOU_THRESHOLD};
use crate::dataio::{Dataset, SceneRecord};
use crate::error::{Error, Result};
use crate::features::BBox;
use crate::language::Vocab;
use crate::model::{rank_candidates, sort_scores, CandidateFeatures, CandidateScore, OrParams};
use crate::pipeline::{prepare_scene, scene_candidates, FeatureConfig};
use crate::proposals::CandidateSet;

/// Anything that can rank a scene's candidate boxes for its expression.
pub trait CandidateScorer: Sync {
    /// Whether [`CandidateScorer::rank`] reads `features`; if not, feature
    /// extraction is skipped and an empty slice is passed.
    fn needs_features(&self) -> bool {
        true
    }

    /// Candidate indices with scores, best first.
    fn rank(
        &self,
        scene: &SceneRecord,
        candidates: &CandidateSet,
        features: &[CandidateFeatures],
    ) -> Result<Vec<CandidateScore>>;
}

/// The trained generative model.
pub struct ModelScorer<'a> {
    pub params: &'a OrParams,
    pub vocab: &'a Vocab,
}

impl CandidateScorer for ModelScorer<'_> {
    fn rank(
        &self,
        scene: &SceneRecord,
        _: &CandidateSet,
        features: &[CandidateFeatures],
    ) -> Result<Vec<CandidateScore>> {
        let expr = self.vocab.encode(&scene.expression)?;
        rank_candidates(self.params, features, &expr)
    }
}

/// Scores each box by its IoU with the ground truth, or by the negated IoU.
pub struct IouOracle {
    pub negate: bool,
}

impl CandidateScorer for IouOracle {
    fn needs_features(&self) -> bool {
        false
    }

    fn rank(
        &self,
        scene: &SceneRecord,
        candidates: &CandidateSet,
        _: &[CandidateFeatures],
    ) -> Result<Vec<CandidateScore>> {
        let sign = if self.negate { -1.0 } else { 1.0 };
        let mut s = candidates
            .boxes
            .iter()
            .enumerate()
            .map(|(index, b)| {
                Ok(CandidateScore {
                    index,
                    log_score: sign * iou(b, &scene.gt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        sort_scores(&mut s);
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneResult {
    pub id: String,
    pub gt: BBox,
    pub top1: BBox,
    pub top1_iou: f64,
    pub num_candidates: usize,
    /// 1-based rank of the planted positive, when there is one.
    pub positive_rank: Option<usize>,
    /// Candidate boxes best first.
    pub ranked: Vec<BBox>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub modalities: String,
    pub seed: u64,
    /// Largest candidate count over the scenes.
    pub m: usize,
    pub iou_threshold: f64,
    pub num_scenes: usize,
    /// Acc@1 in percent.
    pub acc_at_1: f64,
    pub acc: Vec<AccAtK>,
    pub scenes: Vec<SceneResult>,
}

/// Identification of a benchmark run, copied into its report.
#[derive(Clone, Debug, Default)]
pub struct RunLabel {
    pub modalities: String,
    pub seed: u64,
}

fn evaluate_scene<S: CandidateScorer + ?Sized>(
    scorer: &S,
    dataset: &Dataset,
    scene: &SceneRecord,
    cfg: &FeatureConfig,
) -> Result<SceneResult> {
    let (w, h) = (dataset.image_w, dataset.image_h);
    let candidates = scene_candidates(scene, w, h, cfg)?;
    let features = if scorer.needs_features() {
        prepare_scene(scene, &dataset.camera, w, h, cfg)?.candidate_features(&candidates, cfg)?
    } else {
        Vec::new()
    };
    let order = scorer.rank(scene, &candidates, &features)?;
    if order.len() != candidates.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} candidates",
            order.len(),
            candidates.len()
        )));
    }
    let ranked: Vec<BBox> = order.iter().map(|s| candidates.boxes[s.index]).collect();
    let positive_rank = candidates
        .positive_index
        .and_then(|p| order.iter().position(|s| s.index == p))
        .map(|r| r + 1);
    Ok(SceneResult {
        id: scene.id.clone(),
        gt: scene.gt,
        top1: ranked[0],
        top1_iou: iou(&ranked[0], &scene.gt)?,
        num_candidates: ranked.len(),
        positive_rank,
        ranked,
    })
}

/// Ranks the candidates of every scene and reports Acc@K for each `ks`.
/// Scenes run in parallel; results keep dataset order.
pub fn run_benchmark<S: CandidateScorer + ?Sized>(
    scorer: &S,
    dataset: &Dataset,
    cfg: &FeatureConfig,
    ks: &[usize],
    label: &RunLabel,
) -> Result<BenchmarkReport> {
    if dataset.scenes.is_empty() {
        return Err(Error::Contract("no scenes to evaluate".into()));
    }
    if ks.is_empty() {
        return Err(Error::Contract("no K values requested".into()));
    }
    let scenes = dataset
        .scenes
        .par_iter()
        .map(|s| evaluate_scene(scorer, dataset, s, cfg).map_err(|e| e.in_scene(&s.id)))
        .collect::<Result<Vec<_>>>()?;
    let ranked: Vec<Vec<BBox>> = scenes.iter().map(|s| s.ranked.clone()).collect();
    let gts: Vec<BBox> = scenes.iter().map(|s| s.gt).collect();
    let mut acc = Vec::with_capacity(ks.len());
    for &k in ks {
        let a = acc_at_k(&ranked, &gts, k, IOU_THRESHOLD)?;
        if a.clamped {
            log::warn!("K = {k} exceeds the candidate count of some scenes; clamped");
        }
        acc.push(a);
    }
    Ok(BenchmarkReport {
        modalities: label.modalities.clone(),
        seed: label.seed,
        m: scenes.iter().map(|s| s.num_candidates).max().unwrap_or(0),
        iou_threshold: IOU_THRESHOLD,
        num_scenes: scenes.len(),
        acc_at_1: acc_at_k(&ranked, &gts, 1, IOU_THRESHOLD)?.percent,
        acc,
        scenes,
    })
}

impl BenchmarkReport {
    /// Acc@K values in the order requested, in percent.
    pub fn percents(&self) -> Vec<f64> {
        self.acc.iter().map(|a| a.percent).collect()
    }

    /// True when Acc@K never decreases as K grows.
    pub fn is_monotone(&self) -> bool {
        let mut v: Vec<&AccAtK> = self.acc.iter().collect();
        v.sort_by_key(|a| a.k);
        v.windows(2).all(|w| w[1].percent >= w[0].percent)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("<report>", e))
    }

    /// Aligned plain-text summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "modalities  {}", self.modalities);
        let _ = writeln!(s, "seed        {}", self.seed);
        let _ = writeln!(s, "scenes      {}", self.num_scenes);
        let _ = writeln!(s, "M           {}", self.m);
        let _ = writeln!(s, "{:<8}{:>10}", "K", "Acc@K");
        for a in &self.acc {
            let mark = if a.clamped { " (clamped)" } else { "" };
            let _ = writeln!(s, "{:<8}{:>10.3}{mark}", a.k, a.percent);
        }
        s
    }
}

/// Writes the final frame of `scene` as a binary PPM with the predicted box
/// outlined in red and the ground truth in green.
pub fn write_overlay(scene: &SceneRecord, predicted: &BBox, path: impl AsRef<Path>) -> Result<()> {
    let frame = scene
        .frames
        .last()
        .ok_or_else(|| Error::Contract("scene has no frames".into()))?;
    let (w, h) = (frame.width(), frame.height());
    let mut rgb: Vec<u8> = frame
        .appearance
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    draw_outline(&mut rgb, w, h, &scene.gt, [0, 255, 0]);
    draw_outline(&mut rgb, w, h, predicted, [255, 0, 0]);
    write_ppm(path.as_ref(), w, h, &rgb)
}

pub(crate) fn draw_outline(rgb: &mut [u8], w: usize, h: usize, b: &BBox, color: [u8; 3]) {
    let Ok(b) = b.clamp(w, h) else { return };
    let x0 = (b.x_min.floor() as usize).min(w - 1);
    let x1 = ((b.x_max.ceil() as usize).max(1) - 1).min(w - 1);
    let y0 = (b.y_min.floor() as usize).min(h - 1);
    let y1 = ((b.y_max.ceil() as usize).max(1) - 1).min(h - 1);
    let mut put = |x: usize, y: usize| {
        let k = 3 * (y * w + x);
        rgb[k..k + 3].copy_from_slice(&color);
    };
    for x in x0..=x1 {
        put(x, y0);
        put(x, y1);
    }
    for y in y0..=y1 {
        put(x0, y);
        put(x1, y);
    }
}

pub(crate) fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, Ambiguity, SynthSpec};

    fn data() -> Dataset {
        let spec = SynthSpec {
            num_scenes: 6,
            ambiguity: Ambiguity::Mixed,
            ..SynthSpec::default()
        };
        generate_synthetic(&spec, 2).unwrap()
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let ds = data();
        let cfg = FeatureConfig::default();
        let label = RunLabel::default();
        let r = run_benchmark(&IouOracle { negate: false }, &ds, &cfg, &[1, 2, 5], &label).unwrap();
        assert_eq!(r.acc_at_1, 100.0);
        assert!(r.scenes.iter().all(|s| s.positive_rank == Some(1)));
        assert_eq!(r.m, 30);
        let r = run_benchmark(&IouOracle { negate: true }, &ds, &cfg, &[1, 30], &label).unwrap();
        assert_eq!(r.acc_at_1, 0.0);
        assert_eq!(r.acc[1].percent, 100.0);
        assert!(r.is_monotone());
    }

    #[test]
    fn model_runs_are_reproducible() {
        let ds = data();
        let cfg = FeatureConfig {
            grid: 2,
            track_len: 2,
            ..FeatureConfig::default()
        };
        let vocab = crate::pipeline::dataset_vocab(&ds).unwrap();
        let mut mc = cfg.model_config(vocab.len(), crate::model::Modalities::IDOG);
        mc.embed_dim = 4;
        mc.lang_hidden = 4;
        mc.visual_hidden = 4;
        mc.fusion_hidden = 4;
        let params = OrParams::init(&mc, 3).unwrap();
        let scorer = ModelScorer {
            params: &params,
            vocab: &vocab,
        };
        let label = RunLabel {
            modalities: "IDOG".into(),
            seed: 3,
        };
        let a = run_benchmark(&scorer, &ds, &cfg, &[1, 2, 5], &label).unwrap();
        let b = run_benchmark(&scorer, &ds, &cfg, &[1, 2, 5], &label).unwrap();
        assert_eq!(a, b);
        assert!(a.is_monotone());
        assert!(a.to_text().contains("Acc@K"));
        let json: serde_json::Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert!(json["acc_at_1"].is_number());
    }

    #[test]
    fn overlay_is_a_ppm_with_both_colors() {
        let ds = data();
        let s = &ds.scenes[0];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.ppm");
        let pred = BBox::new(2.0, 2.0, 10.0, 9.0).unwrap();
        write_overlay(s, &pred, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P6\n64 48\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = |x: usize, y: usize| {
            let k = header.len() + 3 * (y * 64 + x);
            [bytes[k], bytes[k + 1], bytes[k + 2]]
        };
        assert_eq!(px(2, 2), [255, 0, 0]);
        assert_eq!(px(9, 8), [255, 0, 0]);
        assert_eq!(px(s.gt.x_min as usize, s.gt.y_min as usize + 1), [0, 255, 0]);
    }
}
