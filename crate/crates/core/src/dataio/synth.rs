//! Deterministic synthetic clips of colored boxes over a striped wall.
//!
//! In an ambiguity mode the target has a twin of the same size, color and
//! row, so the two are told apart only through one modality: flow
//! direction, depth layer, or where the viewer looks. The background varies
//! by row only and objects never touch, which makes every non-distinguishing
//! feature of the twins equal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::default_camera;
use super::{Dataset, ObjectRole, SceneObject, SceneRecord};
use crate::error::{Error, Result};
use crate::features::{BBox, FrameChannels};
use crate::gaze::{image_to_camera, DeviceConfig, GazeSample, GazeTrace};
use crate::numkit::Tensor;
use crate::proposals::ObjectMotion;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ambiguity {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "motion-only")]
    Motion,
    #[serde(rename = "depth-only")]
    Depth,
    #[serde(rename = "gaze-only")]
    Gaze,
    /// Each scene draws one of the other four modes.
    #[serde(rename = "mixed")]
    Mixed,
}

impl std::str::FromStr for Ambiguity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ambiguity::None),
            "motion" | "motion-only" => Ok(Ambiguity::Motion),
            "depth" | "depth-only" => Ok(Ambiguity::Depth),
            "gaze" | "gaze-only" => Ok(Ambiguity::Gaze),
            "mixed" => Ok(Ambiguity::Mixed),
            other => Err(Error::Config(format!("unknown ambiguity mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_scenes: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub frames: usize,
    pub fps: f64,
    pub ambiguity: Ambiguity,
    /// Fixation noise sd as a fraction of `min(image_w, image_h)`.
    pub gaze_noise: f64,
    /// Probability that a frame's gaze samples land on empty background.
    pub outlier_rate: f64,
    /// Probability that a gaze sample is flagged invalid.
    pub invalid_rate: f64,
    pub gaze_samples_per_frame: usize,
    /// Share of gaze-ambiguous scenes whose expression names the twin the
    /// viewer is not looking at.
    pub contrast_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_scenes: 20,
            image_w: 64,
            image_h: 48,
            frames: 8,
            fps: 15.0,
            ambiguity: Ambiguity::None,
            gaze_noise: 0.02,
            outlier_rate: 0.0,
            invalid_rate: 0.02,
            gaze_samples_per_frame: 2,
            contrast_rate: 0.5,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_scenes == 0 {
            return Err(Error::Config("num_scenes must be at least 1".into()));
        }
        if self.image_w < 16 || self.image_h < 16 {
            return Err(Error::Config("synthetic canvas must be at least 16x16".into()));
        }
        if self.frames == 0 || self.gaze_samples_per_frame == 0 {
            return Err(Error::Config(
                "frames and gaze samples per frame must be positive".into(),
            ));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config("fps must be positive".into()));
        }
        if !(self.gaze_noise >= 0.0 && self.gaze_noise.is_finite()) {
            return Err(Error::Config("gaze_noise must be non-negative".into()));
        }
        for (name, r) in [
            ("outlier_rate", self.outlier_rate),
            ("invalid_rate", self.invalid_rate),
            ("contrast_rate", self.contrast_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} {r} outside [0, 1]")));
            }
        }
        if self.invalid_rate >= 1.0 {
            return Err(Error::Config("invalid_rate must be below 1".into()));
        }
        Ok(())
    }

    fn min_side(&self) -> f64 {
        self.image_w.min(self.image_h) as f64
    }
}

pub const COLORS: [(&str, [u8; 3]); 8] = [
    ("red", [220, 30, 30]),
    ("green", [30, 190, 40]),
    ("blue", [30, 60, 220]),
    ("yellow", [230, 220, 30]),
    ("purple", [140, 40, 170]),
    ("orange", [245, 140, 20]),
    ("cyan", [30, 210, 220]),
    ("pink", [245, 120, 190]),
];

pub const NEAR_M: f64 = 2.5;
pub const FAR_M: f64 = 6.0;
pub const WALL_M: f64 = 12.0;
const GAP_PX: f64 = 2.0;
const BORDER_PX: f64 = 1.0;
const PLACEMENT_ATTEMPTS: usize = 400;
/// Gaze σ used to keep outlier fixations away from objects.
const OUTLIER_SIGMA_FRAC: f64 = 0.1;

/// Recording device of synthetic gaze: camera at the top centre of a
/// display that shows the video at 10 px/cm.
pub fn synthetic_device(image_w: usize) -> DeviceConfig {
    DeviceConfig {
        px_per_cm_x: 10.0,
        px_per_cm_y: 10.0,
        cam_offset_x_cm: image_w as f64 / 20.0,
        cam_offset_y_cm: 0.0,
        display_to_image_scale_x: 1.0,
        display_to_image_scale_y: 1.0,
        display_origin_x: 0.0,
        display_origin_y: 0.0,
    }
}

fn channel(v: u8) -> f64 {
    (v as f32 / 255.0) as f64
}

struct Planned {
    color: usize,
    size: (f64, f64),
    velocity: (f64, f64),
    depth_m: f64,
    role: ObjectRole,
}

fn separated(a: &BBox, b: &BBox) -> bool {
    a.x_max + GAP_PX <= b.x_min
        || b.x_max + GAP_PX <= a.x_min
        || a.y_max + GAP_PX <= b.y_min
        || b.y_max + GAP_PX <= a.y_min
}

/// Range of final-frame minimum coordinates keeping the object inside the
/// border on every frame.
fn coordinate_range(size: f64, extent: usize, v: f64, frames: usize) -> Option<(i64, i64)> {
    let travel = v * (frames - 1) as f64;
    let lo = BORDER_PX + travel.max(0.0);
    let hi = extent as f64 - BORDER_PX - size + travel.min(0.0);
    (lo <= hi).then_some((lo as i64, hi as i64))
}

fn place(plan: &[Planned], spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Option<Vec<ObjectMotion>> {
    let frames = spec.frames;
    'attempt: for _ in 0..PLACEMENT_ATTEMPTS {
        let mut placed: Vec<ObjectMotion> = Vec::with_capacity(plan.len());
        for p in plan {
            let (w, h) = p.size;
            let (xlo, xhi) = coordinate_range(w, spec.image_w, p.velocity.0, frames)?;
            let (ylo, yhi) = coordinate_range(h, spec.image_h, p.velocity.1, frames)?;
            let mut ok = None;
            for _ in 0..40 {
                let x = rng.gen_range(xlo..=xhi) as f64;
                // The twin shares the target's row.
                let y = match (p.role, placed.first()) {
                    (ObjectRole::Distractor, Some(t)) => t.bbox.y_min,
                    _ => rng.gen_range(ylo..=yhi) as f64,
                };
                let m = ObjectMotion {
                    bbox: BBox::new(x, y, x + w, y + h).ok()?,
                    velocity: p.velocity,
                };
                let clear = placed
                    .iter()
                    .all(|o| (0..frames).all(|back| separated(&o.box_at(back), &m.box_at(back))));
                if clear {
                    ok = Some(m);
                    break;
                }
            }
            match ok {
                Some(m) => placed.push(m),
                None => continue 'attempt,
            }
        }
        return Some(placed);
    }
    None
}

fn step(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-1i32..=1) as f64
}

fn layer(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        NEAR_M
    } else {
        FAR_M
    }
}

/// Builds scene `index`; the scene depends only on `(spec, seed + index)`.
pub fn generate_scene(spec: &SynthSpec, seed: u64, index: usize) -> Result<SceneRecord> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let mode = match spec.ambiguity {
        Ambiguity::Mixed => *[Ambiguity::None, Ambiguity::Motion, Ambiguity::Depth, Ambiguity::Gaze]
            .choose(&mut rng)
            .expect("non-empty"),
        m => m,
    };
    let twin = mode != Ambiguity::None;
    let n_objects = rng.gen_range(2..=4);
    let mut palette: Vec<usize> = (0..COLORS.len()).collect();
    palette.shuffle(&mut rng);

    let (w, h) = (spec.image_w as f64, spec.image_h as f64);
    let size = |rng: &mut ChaCha8Rng| -> (f64, f64) {
        let sw = rng.gen_range((0.12 * w).round().max(3.0) as i64..=(0.2 * w).round().max(3.0) as i64);
        let sh = rng.gen_range((0.14 * h).round().max(3.0) as i64..=(0.22 * h).round().max(3.0) as i64);
        (sw as f64, sh as f64)
    };

    let target_size = size(&mut rng);
    let (target_v, twin_v) = match mode {
        Ambiguity::Motion => {
            let s = rng.gen_range(1i32..=2) as f64 * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            ((s, 0.0), (-s, 0.0))
        }
        Ambiguity::Depth | Ambiguity::Gaze => {
            let vy = step(&mut rng);
            ((0.0, vy), (0.0, vy))
        }
        _ => {
            let v = (step(&mut rng), step(&mut rng));
            (v, v)
        }
    };
    let target_depth = layer(&mut rng);
    let twin_depth = match mode {
        Ambiguity::Depth if target_depth == NEAR_M => FAR_M,
        Ambiguity::Depth => NEAR_M,
        _ => target_depth,
    };

    let mut plan = vec![Planned {
        color: palette[0],
        size: target_size,
        velocity: target_v,
        depth_m: target_depth,
        role: ObjectRole::Target,
    }];
    if twin {
        plan.push(Planned {
            color: palette[0],
            size: target_size,
            velocity: twin_v,
            depth_m: twin_depth,
            role: ObjectRole::Distractor,
        });
    }
    let mut next_color = 1;
    while plan.len() < n_objects {
        let s = size(&mut rng);
        let v = (step(&mut rng), step(&mut rng));
        let d = layer(&mut rng);
        plan.push(Planned {
            color: palette[next_color],
            size: s,
            velocity: v,
            depth_m: d,
            role: ObjectRole::Other,
        });
        next_color += 1;
    }

    let motions = place(&plan, spec, &mut rng).ok_or_else(|| {
        Error::Generation(format!(
            "cannot place {} objects on a {}x{} canvas over {} frames",
            plan.len(),
            spec.image_w,
            spec.image_h,
            spec.frames
        ))
    })?;

    let frames = render(spec, &plan, &motions, &mut rng)?;
    let timestamps: Vec<f64> = (0..spec.frames).map(|i| i as f64 / spec.fps).collect();

    let color_name = COLORS[plan[0].color].0;
    let contrast = mode == Ambiguity::Gaze && rng.gen_bool(spec.contrast_rate);
    let expression = match mode {
        Ambiguity::None | Ambiguity::Mixed => {
            let side = if motions[0].bbox.center().0 < w / 2.0 {
                "left"
            } else {
                "right"
            };
            format!("the {color_name} box on the {side}")
        }
        Ambiguity::Motion => {
            let dir = if target_v.0 < 0.0 { "left" } else { "right" };
            format!("the {color_name} box moving {dir}")
        }
        Ambiguity::Depth => {
            let d = if target_depth == NEAR_M { "near" } else { "far" };
            format!("the {color_name} box that is {d}")
        }
        Ambiguity::Gaze if contrast => format!("the {color_name} box i am not looking at"),
        Ambiguity::Gaze => format!("the {color_name} box i am looking at"),
    };

    // Where the viewer looks on the final-minus-`back` frame.
    let fixation = |back: usize| -> (f64, f64) {
        let t = motions[0].box_at(back).center();
        match mode {
            Ambiguity::Motion | Ambiguity::Depth => {
                let d = motions[1].box_at(back).center();
                ((t.0 + d.0) / 2.0, (t.1 + d.1) / 2.0)
            }
            Ambiguity::Gaze if contrast => motions[1].box_at(back).center(),
            _ => t,
        }
    };
    let gaze = synth_gaze(spec, &motions, fixation, &mut rng)?;

    let objects = plan
        .iter()
        .zip(&motions)
        .map(|(p, m)| SceneObject {
            color: COLORS[p.color].0.to_string(),
            depth_m: p.depth_m,
            motion: *m,
            role: p.role,
        })
        .collect();

    Ok(SceneRecord {
        id: format!("s{index:05}"),
        frames,
        timestamps,
        gaze,
        proposals: None,
        gt: motions[0].bbox,
        expression,
        objects: Some(objects),
        ambiguity: Some(mode),
    })
}

fn render(
    spec: &SynthSpec,
    plan: &[Planned],
    motions: &[ObjectMotion],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FrameChannels>> {
    let (w, h) = (spec.image_w, spec.image_h);
    let stripes: Vec<f64> = (0..h).map(|_| channel(rng.gen_range(70u8..=150))).collect();
    let mut out = Vec::with_capacity(spec.frames);
    for i in 0..spec.frames {
        let back = spec.frames - 1 - i;
        let mut app = Vec::with_capacity(h * w * 3);
        for &g in &stripes {
            for _ in 0..w {
                app.extend_from_slice(&[g, g, g]);
            }
        }
        let mut depth = vec![WALL_M; h * w];
        let mut flow = vec![0.0; h * w * 2];
        for (p, m) in plan.iter().zip(motions) {
            // Integer boxes: pixel centres x + 0.5 inside [x_min, x_max).
            let b = m.box_at(back);
            let rgb = COLORS[p.color].1.map(channel);
            for y in b.y_min as usize..b.y_max as usize {
                for x in b.x_min as usize..b.x_max as usize {
                    let k = y * w + x;
                    app[3 * k..3 * k + 3].copy_from_slice(&rgb);
                    depth[k] = p.depth_m;
                    flow[2 * k] = m.velocity.0;
                    flow[2 * k + 1] = m.velocity.1;
                }
            }
        }
        out.push(FrameChannels::new(
            Tensor::new(vec![h, w, 3], app)?,
            Tensor::new(vec![h, w], depth)?,
            Tensor::new(vec![h, w, 2], flow)?,
        )?);
    }
    Ok(out)
}

fn box_distance(b: &BBox, p: (f64, f64)) -> f64 {
    let dx = (b.x_min - p.0).max(p.0 - b.x_max).max(0.0);
    let dy = (b.y_min - p.1).max(p.1 - b.y_max).max(0.0);
    dx.hypot(dy)
}

fn synth_gaze<F>(spec: &SynthSpec, motions: &[ObjectMotion], fixation: F, rng: &mut ChaCha8Rng) -> Result<GazeTrace>
where
    F: Fn(usize) -> (f64, f64),
{
    let device = synthetic_device(spec.image_w);
    let (w, h) = (spec.image_w as f64, spec.image_h as f64);
    let noise = Normal::new(0.0, spec.gaze_noise * spec.min_side()).map_err(|e| Error::Config(e.to_string()))?;
    let clearance = 3.0 * OUTLIER_SIGMA_FRAC * spec.min_side();
    let spf = spec.gaze_samples_per_frame;
    let dt = 1.0 / (spec.fps * spf as f64);
    let mut samples = Vec::with_capacity(spec.frames * spf);
    for i in 0..spec.frames {
        let back = spec.frames - 1 - i;
        let outlier = rng.gen_bool(spec.outlier_rate);
        let away = outlier.then(|| {
            (0..200)
                .map(|_| (rng.gen_range(0.0..w), rng.gen_range(0.0..h)))
                .find(|&p| motions.iter().all(|m| box_distance(&m.box_at(back), p) >= clearance))
                .unwrap_or((w / 2.0, -clearance))
        });
        for k in 0..spf {
            let t = (i * spf + k) as f64 * dt + rng.gen_range(-0.1..0.1) * dt;
            let (px, py) = match away {
                Some(p) => p,
                None => {
                    let (fx, fy) = fixation(back);
                    (fx + noise.sample(rng), fy + noise.sample(rng))
                }
            };
            let (gx_cm, gy_cm) = image_to_camera(px, py, &device);
            let valid = !rng.gen_bool(spec.invalid_rate);
            samples.push(GazeSample { t, gx_cm, gy_cm, valid });
        }
    }
    if !samples.iter().any(|s| s.valid) {
        samples[0].valid = true;
    }
    let trace = GazeTrace { device, samples };
    trace.validate()?;
    Ok(trace)
}

/// Generates `spec.num_scenes` scenes in parallel; scene `i` is seeded with
/// `seed + i`, so the result does not depend on the thread count.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let scenes = (0..spec.num_scenes)
        .into_par_iter()
        .map(|i| generate_scene(spec, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let mut camera = default_camera();
    camera.horizon_row = spec.image_h as f64 / 2.0;
    let ds = Dataset {
        image_w: spec.image_w,
        image_h: spec.image_h,
        fps: spec.fps,
        camera,
        scenes,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::validate_expression;

    fn spec(ambiguity: Ambiguity) -> SynthSpec {
        SynthSpec {
            num_scenes: 12,
            ambiguity,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn none_mode_colors_are_unique() {
        let ds = generate_synthetic(&spec(Ambiguity::None), 5).unwrap();
        for s in &ds.scenes {
            let objs = s.objects.as_ref().unwrap();
            assert!((2..=4).contains(&objs.len()));
            let target = &objs[0];
            assert_eq!(target.role, ObjectRole::Target);
            assert!(s.expression.contains(&target.color));
            assert_eq!(objs.iter().filter(|o| o.color == target.color).count(), 1);
            assert!(validate_expression(&s.expression).pass);
        }
    }

    #[test]
    fn twins_share_everything_but_their_mode() {
        for mode in [Ambiguity::Motion, Ambiguity::Depth, Ambiguity::Gaze] {
            let ds = generate_synthetic(&spec(mode), 9).unwrap();
            for s in &ds.scenes {
                let o = s.objects.as_ref().unwrap();
                let (t, d) = (&o[0], &o[1]);
                assert_eq!(d.role, ObjectRole::Distractor);
                assert_eq!(t.color, d.color);
                assert_eq!(t.motion.bbox.width(), d.motion.bbox.width());
                assert_eq!(t.motion.bbox.y_min, d.motion.bbox.y_min);
                assert_eq!(t.depth_m == d.depth_m, mode != Ambiguity::Depth);
                if mode == Ambiguity::Motion {
                    assert_eq!(t.motion.velocity.0, -d.motion.velocity.0);
                    assert_ne!(t.motion.velocity.0, 0.0);
                } else {
                    assert_eq!(t.motion.velocity, d.motion.velocity);
                }
                assert!(o[2..].iter().all(|x| x.color != t.color));
            }
        }
    }

    #[test]
    fn objects_stay_inside_and_apart() {
        let ds = generate_synthetic(&spec(Ambiguity::Mixed), 1).unwrap();
        for s in &ds.scenes {
            let o = s.objects.as_ref().unwrap();
            for back in 0..8 {
                for (i, a) in o.iter().enumerate() {
                    assert!(a.motion.box_at(back).is_inside(64, 48));
                    for b in &o[i + 1..] {
                        assert!(separated(&a.motion.box_at(back), &b.motion.box_at(back)));
                    }
                }
            }
        }
    }

    #[test]
    fn rendering_matches_script() {
        let s = generate_scene(&spec(Ambiguity::Motion), 3, 0).unwrap();
        let t = &s.objects.as_ref().unwrap()[0];
        for (i, f) in s.frames.iter().enumerate() {
            let b = t.motion.box_at(7 - i);
            let (x, y) = (b.x_min as usize, b.y_min as usize);
            assert_eq!(f.depth.get2(y, x), t.depth_m);
            assert_eq!(f.flow.get3(y, x, 0), t.motion.velocity.0);
            assert_eq!(f.depth.get2(0, 0), WALL_M);
        }
    }

    #[test]
    fn values_survive_f32() {
        let s = generate_scene(&spec(Ambiguity::Depth), 3, 2).unwrap();
        for f in &s.frames {
            for t in [&f.appearance, &f.depth, &f.flow] {
                assert!(t.data().iter().all(|&v| (v as f32) as f64 == v));
            }
        }
    }

    #[test]
    fn same_seed_same_scenes() {
        let a = generate_synthetic(&spec(Ambiguity::Mixed), 77).unwrap();
        let b = generate_synthetic(&spec(Ambiguity::Mixed), 77).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&spec(Ambiguity::Mixed), 78).unwrap();
        assert_ne!(a, c);
        // Scene i only depends on seed + i.
        assert_eq!(a.scenes[1].frames, c.scenes[0].frames);
    }

    #[test]
    fn gaze_fixates_target_without_noise() {
        let sp = SynthSpec {
            gaze_noise: 0.0,
            invalid_rate: 0.0,
            ..spec(Ambiguity::None)
        };
        let s = generate_scene(&sp, 4, 0).unwrap();
        let t = s.objects.as_ref().unwrap()[0].motion;
        assert_eq!(s.gaze.samples.len(), 16);
        for i in 0..8 {
            let (px, py) = s.gaze.image_point(2 * i);
            let c = t.box_at(7 - i).center();
            assert!((px - c.0).abs() < 1e-9 && (py - c.1).abs() < 1e-9);
        }
    }

    #[test]
    fn outliers_avoid_objects() {
        let sp = SynthSpec {
            outlier_rate: 1.0,
            ..spec(Ambiguity::Gaze)
        };
        let s = generate_scene(&sp, 4, 0).unwrap();
        let o = s.objects.as_ref().unwrap();
        for i in 0..s.gaze.samples.len() {
            let p = s.gaze.image_point(i);
            let back = 7 - i / 2;
            assert!(o.iter().all(|m| box_distance(&m.motion.box_at(back), p) >= 14.0 - 1e-9));
        }
    }

    #[test]
    fn crowded_canvas_is_a_generation_error() {
        let sp = SynthSpec {
            image_w: 16,
            image_h: 16,
            frames: 30,
            ambiguity: Ambiguity::Motion,
            ..SynthSpec::default()
        };
        assert!(matches!(generate_synthetic(&sp, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn spec_parsing() {
        let s: SynthSpec = serde_json::from_str(r#"{"num_scenes": 3, "ambiguity": "motion-only"}"#).unwrap();
        assert_eq!((s.num_scenes, s.ambiguity, s.frames), (3, Ambiguity::Motion, 8));
        assert!(serde_json::from_str::<SynthSpec>(r#"{"scenes": 3}"#).is_err());
        assert_eq!("gaze".parse::<Ambiguity>().unwrap(), Ambiguity::Gaze);
    }
}
