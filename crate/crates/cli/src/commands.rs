use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use gazeref::dataio::{
    generate_synthetic, load_manifest, save_dataset, split_dataset, validate_manifest, Dataset, SynthSpec,
};
use gazeref::eval::{ablation_report, run_benchmark, write_overlay, AblationSetup, ModelScorer, ModelSizes, RunLabel};
use gazeref::gaze::{gaze_heatmap, GazeConfig, GazeTrace};
use gazeref::language::Vocab;
use gazeref::model::{
    load_checkpoint, rank_candidates, save_checkpoint, train as fit, Modalities, OrParams, TrainHyper, TrainLog,
};
use gazeref::pipeline::{dataset_vocab, prepare_scene, scene_candidates, training_examples, FeatureConfig};

use crate::CliError;

type CliResult<T = ()> = Result<T, CliError>;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialize") + "\n"
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

/// Comma-separated list argument.
#[derive(Clone, Debug)]
pub struct List<T>(Vec<T>);

fn parse_sets(s: &str) -> Result<List<Modalities>, String> {
    parse_list(s).map(List)
}

fn parse_ks(s: &str) -> Result<List<usize>, String> {
    let ks: Vec<usize> = parse_list(s)?;
    if ks.is_empty() || ks.contains(&0) {
        return Err("K values must be positive".into());
    }
    Ok(List(ks))
}

fn parse_seeds(s: &str) -> Result<List<u64>, String> {
    let v: Vec<u64> = parse_list(s)?;
    if v.is_empty() {
        return Err("at least one seed is required".into());
    }
    Ok(List(v))
}

/// Settings of `train` and `ablate`, read from `--config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub features: FeatureConfig,
    pub sizes: ModelSizes,
    pub modalities: Modalities,
    pub hyper: TrainHyper,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Initialization seed of `train`.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let setup = AblationSetup::default();
        TrainConfig {
            features: setup.features,
            sizes: setup.sizes,
            modalities: Modalities::IDOG,
            hyper: setup.hyper,
            train_fraction: setup.train_fraction,
            split_seed: setup.split_seed,
            seed: 0,
        }
    }
}

fn load_train_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let cfg: TrainConfig = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    cfg.features.validate()?;
    cfg.hyper.validate()?;
    Ok(cfg)
}

/// What a checkpoint needs besides its weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointExtra {
    vocab: Vocab,
    features: FeatureConfig,
    manifest: String,
    train_fraction: f64,
    split_seed: u64,
    seed: u64,
    train_log: TrainLog,
}

fn open_checkpoint(path: &Path) -> CliResult<(OrParams, CheckpointExtra)> {
    let (params, meta) = load_checkpoint(path)?;
    let extra: CheckpointExtra = serde_json::from_value(meta.extra)
        .map_err(|e| CliError::Data(format!("{}: checkpoint settings: {e}", path.display())))?;
    Ok((params, extra))
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON generator spec; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the manifest and scene files.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's scene count.
    #[arg(long)]
    num_scenes: Option<usize>,
    /// Overrides the spec's ambiguity mode.
    #[arg(long)]
    ambiguity: Option<gazeref::dataio::Ambiguity>,
}

pub fn synth(a: SynthArgs) -> CliResult {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(n) = a.num_scenes {
        spec.num_scenes = n;
    }
    if let Some(m) = a.ambiguity {
        spec.ambiguity = m;
    }
    let ds = generate_synthetic(&spec, a.seed)?;
    let manifest = save_dataset(&ds, &a.out)?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON training settings; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path; settings go to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Train on every scene instead of the training split.
    #[arg(long)]
    all_scenes: bool,
}

pub fn train(a: TrainArgs) -> CliResult {
    let cfg = load_train_config(a.config.as_deref())?;
    let ds = load_manifest(&a.manifest)?;
    let train_ds = if a.all_scenes {
        ds
    } else {
        split_dataset(&ds, cfg.train_fraction, cfg.split_seed)?.0
    };
    let vocab = dataset_vocab(&train_ds)?;
    let examples = training_examples(&train_ds, &vocab, &cfg.features)?;
    let config = cfg.sizes.config(&cfg.features, vocab.len(), cfg.modalities);
    let mut params = OrParams::init(&config, cfg.seed)?;
    let hyper = TrainHyper {
        seed: cfg.seed,
        ..cfg.hyper.clone()
    };
    let log = fit(&mut params, &examples, &hyper)?;
    let final_loss = log.epoch_loss.last().copied().unwrap_or(f64::NAN);
    let extra = CheckpointExtra {
        vocab,
        features: cfg.features.clone(),
        manifest: a.manifest.display().to_string(),
        train_fraction: cfg.train_fraction,
        split_seed: cfg.split_seed,
        seed: cfg.seed,
        train_log: log,
    };
    let extra = serde_json::to_value(&extra).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    save_checkpoint(&a.out, &params, extra)?;
    println!(
        "{}",
        serde_json::json!({ "checkpoint": a.out.display().to_string(), "train_scenes": examples.len(), "final_loss": final_loss })
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Defaults to the manifest the checkpoint was trained on.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    scene: String,
    #[arg(long)]
    expr: String,
}

#[derive(Serialize)]
struct Ranked {
    rank: usize,
    index: usize,
    #[serde(rename = "box")]
    bbox: gazeref::features::BBox,
    log_score: f64,
}

pub fn score(a: ScoreArgs) -> CliResult {
    let (params, extra) = open_checkpoint(&a.ckpt)?;
    let manifest = a.manifest.unwrap_or_else(|| PathBuf::from(&extra.manifest));
    let ds = load_manifest(&manifest)?;
    let scene = ds
        .scene(&a.scene)
        .ok_or_else(|| CliError::Data(format!("scene `{}` not in {}", a.scene, manifest.display())))?;
    let expr = extra.vocab.encode(&a.expr)?;
    let prep = prepare_scene(scene, &ds.camera, ds.image_w, ds.image_h, &extra.features)?;
    let candidates = scene_candidates(scene, ds.image_w, ds.image_h, &extra.features)?;
    let feats = prep.candidate_features(&candidates, &extra.features)?;
    let ranked: Vec<Ranked> = rank_candidates(&params, &feats, &expr)?
        .into_iter()
        .enumerate()
        .map(|(r, s)| Ranked {
            rank: r + 1,
            index: s.index,
            bbox: candidates.boxes[s.index],
            log_score: s.log_score,
        })
        .collect();
    print!("{}", to_json(&ranked));
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Candidates per scene without ingested proposals.
    #[arg(long = "M", default_value_t = 30)]
    m: usize,
    #[arg(long, value_parser = parse_ks, default_value = "1,2,5")]
    k: List<usize>,
    /// Evaluate every scene instead of the checkpoint's evaluation split.
    #[arg(long)]
    all_scenes: bool,
    /// Directory for report.json, report.txt and, with --overlays, PPM images.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, requires = "out")]
    overlays: bool,
}

fn eval_split(ds: Dataset, extra: &CheckpointExtra, all: bool) -> CliResult<Dataset> {
    Ok(if all {
        ds
    } else {
        split_dataset(&ds, extra.train_fraction, extra.split_seed)?.1
    })
}

pub fn eval(a: EvalArgs) -> CliResult {
    if a.m < 2 {
        return Err(CliError::Usage("--M must be at least 2".into()));
    }
    let (params, extra) = open_checkpoint(&a.ckpt)?;
    let ds = eval_split(load_manifest(&a.manifest)?, &extra, a.all_scenes)?;
    let features = FeatureConfig {
        num_candidates: a.m,
        ..extra.features.clone()
    };
    let label = RunLabel {
        modalities: params.config.modalities.to_string(),
        seed: extra.seed,
    };
    let ks = &a.k.0;
    let report = run_benchmark(
        &ModelScorer {
            params: &params,
            vocab: &extra.vocab,
        },
        &ds,
        &features,
        ks,
        &label,
    )?;
    let json = to_json(&report);
    if let Some(out) = &a.out {
        write_file(&out.join("report.json"), &json)?;
        write_file(&out.join("report.txt"), report.to_text())?;
        if a.overlays {
            let dir = out.join("overlays");
            std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            for (scene, r) in ds.scenes.iter().zip(&report.scenes) {
                write_overlay(scene, &r.top1, dir.join(format!("{}.ppm", scene.id)))?;
            }
        }
    }
    print!("{json}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated modality sets, e.g. I,IO,IDO,IDOG.
    #[arg(long, value_parser = parse_sets, default_value = "I,IO,IDO,IDOG")]
    sets: List<Modalities>,
    #[arg(long, value_parser = parse_seeds, default_value = "1,2,3,4,5")]
    seeds: List<u64>,
    /// JSON training settings shared by every run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Baseline set for the deltas; image-only by default.
    #[arg(long)]
    baseline: Option<Modalities>,
    /// Directory for ablation.json and ablation.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn ablate(a: AblateArgs) -> CliResult {
    let cfg = load_train_config(a.config.as_deref())?;
    let sets = a.sets.0;
    if sets.len() < 2 {
        return Err(CliError::Usage("--sets needs at least two modality sets".into()));
    }
    let seeds = a.seeds.0;
    let ds = load_manifest(&a.manifest)?;
    let setup = AblationSetup {
        features: cfg.features,
        sizes: cfg.sizes,
        hyper: cfg.hyper,
        train_fraction: cfg.train_fraction,
        split_seed: cfg.split_seed,
        baseline: a.baseline,
    };
    let report = ablation_report(&ds, &sets, &seeds, &setup)?;
    let json = to_json(&report);
    if let Some(out) = &a.out {
        write_file(&out.join("ablation.json"), &json)?;
        write_file(&out.join("ablation.txt"), report.to_text())?;
    }
    eprint!("{}", report.to_text());
    print!("{json}");
    Ok(())
}

#[derive(Args, Debug)]
pub struct GazemapArgs {
    /// Gaze trace JSON.
    #[arg(long)]
    trace: PathBuf,
    /// Output PPM image.
    #[arg(long)]
    out: PathBuf,
    /// Draw over the final frame of this scene (needs --scene).
    #[arg(long, requires = "scene")]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    scene: Option<String>,
    /// Canvas size without a manifest.
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 48)]
    height: usize,
    /// Gaussian σ as a fraction of the smaller image side.
    #[arg(long, default_value_t = 0.1)]
    sigma_frac: f64,
}

pub fn gazemap(a: GazemapArgs) -> CliResult {
    let trace = GazeTrace::load(&a.trace)?;
    let (w, h, base) = match (&a.manifest, &a.scene) {
        (Some(m), Some(id)) => {
            let ds = load_manifest(m)?;
            let s = ds
                .scene(id)
                .ok_or_else(|| CliError::Data(format!("scene `{id}` not in {}", m.display())))?;
            let last = s.frames.last().expect("validated scenes have frames");
            (ds.image_w, ds.image_h, last.appearance.data().to_vec())
        }
        _ => (a.width, a.height, vec![0.5; a.width * a.height * 3]),
    };
    if w == 0 || h == 0 {
        return Err(CliError::Usage("image size must be positive".into()));
    }
    let cfg = GazeConfig {
        sigma_frac: a.sigma_frac,
        ..GazeConfig::default()
    };
    let mut heat = vec![0.0f64; w * h];
    for i in (0..trace.samples.len()).filter(|&i| trace.samples[i].valid) {
        let (px, py) = trace.image_point(i);
        let map = gaze_heatmap(px, py, w, h, &cfg)?;
        for (acc, v) in heat.iter_mut().zip(map.data()) {
            *acc = acc.max(*v);
        }
    }
    let mut rgb = Vec::with_capacity(w * h * 3);
    for (k, &t) in heat.iter().enumerate() {
        let alpha = 0.7 * t;
        for (c, target) in [1.0, 0.0, 0.0].iter().enumerate() {
            let v = (1.0 - alpha) * base[3 * k + c] + alpha * target;
            rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.extend_from_slice(&rgb);
    write_file(&a.out, bytes)
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
}

pub fn validate(a: ValidateArgs) -> CliResult {
    let report = validate_manifest(&a.manifest)?;
    print!("{}", to_json(&report));
    if report.pass {
        return Ok(());
    }
    let mut failed = 0;
    for s in report.scenes.iter().filter(|s| !s.ok()) {
        failed += 1;
        for v in &s.qc.violations {
            eprintln!("qc[{}]: scene {}: {}", v.rule, s.id, v.message);
        }
        if let Some(e) = &s.error {
            eprintln!("load: scene {}: {e}", s.id);
        }
    }
    Err(CliError::Data(format!(
        "{failed} of {} scenes failed validation",
        report.scenes.len()
    )))
}
