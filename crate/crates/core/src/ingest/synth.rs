//! Deterministic synthetic street scenes with full ground truth.
//!
//! Pedestrians walk along horizontal sidewalk lanes at constant speed. A
//! crossing pedestrian slows down and rotates its body toward the road during
//! the frames leading up to its onset, then walks straight toward the camera
//! (down the image) from the onset frame on. Keypoints come from a kinematic
//! gait model; crops are rendered procedurally so every pedestrian has its own
//! clothing colors.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::formats::{GtBox, KeypointRecord};
use crate::ingest::{FrameSource, IngestError};
use crate::types::{coco, BBox, Detection, IntentLabel, Keypoint, RgbImage, Skeleton17, Visibility};

/// Frames before onset during which a crossing pedestrian turns and slows.
pub const PRE_CROSSING_FRAMES: u32 = 20;

const LANES: [f64; 5] = [180.0, 280.0, 380.0, 480.0, 580.0];
const ROAD_Y: f64 = 600.0;
const WALL_Y: f64 = 100.0;
const PLACEMENT_ATTEMPTS: usize = 500;
const MIN_LIFETIME: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pedestrians: usize,
    pub frame_count: u32,
    pub crossing_fraction: f64,
    pub detection_dropout: f64,
    pub noise_px: f64,
    pub seed: u64,
    #[serde(default = "default_width")]
    pub image_width: u32,
    #[serde(default = "default_height")]
    pub image_height: u32,
    /// Probability that an individual keypoint is reported absent.
    #[serde(default)]
    pub keypoint_dropout: f64,
}

fn default_width() -> u32 {
    1280
}

fn default_height() -> u32 {
    720
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pedestrians: 10,
            frame_count: 300,
            crossing_fraction: 0.5,
            detection_dropout: 0.0,
            noise_px: 0.0,
            seed: 1,
            image_width: default_width(),
            image_height: default_height(),
            keypoint_dropout: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |msg: &str| Err(IngestError::InvalidConfig(msg.to_string()));
        if self.n_pedestrians == 0 {
            return bad("n_pedestrians must be positive");
        }
        if self.frame_count < MIN_LIFETIME {
            return bad("frame_count must be at least 20");
        }
        if !(0.0..=1.0).contains(&self.crossing_fraction) {
            return bad("crossing_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.detection_dropout) {
            return bad("detection_dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.keypoint_dropout) {
            return bad("keypoint_dropout must lie in [0, 1)");
        }
        if !(self.noise_px >= 0.0 && self.noise_px.is_finite()) {
            return bad("noise_px must be a finite non-negative number");
        }
        if self.image_width < 320 || self.image_height < 720 {
            return bad("image must be at least 320x720");
        }
        if self.crossing_count() > 0 && self.frame_count < 60 {
            return bad("crossing pedestrians need at least 60 frames");
        }
        Ok(())
    }

    /// Number of crossing pedestrians: `floor(fraction * n + 0.5)`.
    pub fn crossing_count(&self) -> usize {
        ((self.crossing_fraction * self.n_pedestrians as f64) + 0.5).floor() as usize
    }
}

/// One pedestrian in one ground-truth frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub pedestrian_id: u32,
    pub bbox: BBox,
    pub skeleton: Skeleton17,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGroundTruth {
    pub image_width: u32,
    pub image_height: u32,
    pub frame_count: u32,
    /// Indexed by frame.
    pub frames: Vec<Vec<GtObject>>,
    /// Sorted by pedestrian id.
    pub labels: Vec<IntentLabel>,
}

impl SceneGroundTruth {
    pub fn boxes(&self) -> Vec<GtBox> {
        self.frames
            .iter()
            .enumerate()
            .flat_map(|(f, objs)| {
                objs.iter().map(move |o| GtBox {
                    frame: f as u32,
                    pedestrian_id: o.pedestrian_id,
                    bbox: o.bbox,
                })
            })
            .collect()
    }

    pub fn label(&self, pedestrian_id: u32) -> Option<&IntentLabel> {
        self.labels.iter().find(|l| l.pedestrian_id == pedestrian_id)
    }
}

/// Clothing colors of one pedestrian.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Look {
    shirt: [u8; 3],
    pants: [u8; 3],
    skin: [u8; 3],
    hair: [u8; 3],
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0).round() as u8,
        ((g + m) * 255.0).round() as u8,
        ((b + m) * 255.0).round() as u8,
    ]
}

impl Look {
    /// Shading is a pure function of the pedestrian id.
    fn for_id(id: u32) -> Self {
        const GOLDEN: f64 = 0.618_033_988_749_895;
        const SKIN: [[u8; 3]; 4] = [[224, 186, 160], [198, 146, 110], [141, 96, 66], [92, 62, 45]];
        const HAIR: [[u8; 3]; 3] = [[30, 24, 20], [90, 60, 30], [200, 170, 110]];
        let hue = id as f64 * GOLDEN;
        Look {
            shirt: hsv(hue, 0.75, 0.9),
            pants: hsv(hue + 0.5, 0.6, 0.45),
            skin: SKIN[id as usize % SKIN.len()],
            hair: HAIR[id as usize % HAIR.len()],
        }
    }
}

/// Kinematic state of a pedestrian in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Pose {
    foot_x: f64,
    foot_y: f64,
    /// Ground-plane heading: 0 = image right, pi/2 = toward the camera.
    heading: f64,
    /// Gait phase in radians.
    phase: f64,
    height: f64,
}

/// Body-frame joint (forward, left, up) in body heights, projected to pixels.
fn project(p: &Pose, forward: f64, left: f64, up: f64) -> (f64, f64) {
    let (s, c) = p.heading.sin_cos();
    let dx = forward * c + left * s;
    let depth = forward * s - left * c;
    (p.foot_x + dx * p.height, p.foot_y + (0.3 * depth - up) * p.height)
}

fn depth_of(p: &Pose, forward: f64, left: f64) -> f64 {
    let (s, c) = p.heading.sin_cos();
    forward * s - left * c
}

struct Joints {
    kp: [(f64, f64); 17],
    depth: [f64; 17],
    head: (f64, f64),
}

fn joints(p: &Pose) -> Joints {
    const ANKLE_SWING: f64 = 0.18;
    const ARM_SWING: f64 = 0.12;
    let mut body = [(0.0, 0.0, 0.0); 17];
    body[coco::NOSE] = (0.05, 0.0, 0.92);
    body[coco::LEFT_EYE] = (0.045, 0.025, 0.94);
    body[coco::RIGHT_EYE] = (0.045, -0.025, 0.94);
    body[coco::LEFT_EAR] = (0.0, 0.055, 0.93);
    body[coco::RIGHT_EAR] = (0.0, -0.055, 0.93);
    for (side, sign, phase) in [(0usize, 1.0, p.phase), (1usize, -1.0, p.phase + PI)] {
        let swing = phase.sin();
        let lift = 0.03 * phase.cos().max(0.0);
        body[coco::LEFT_SHOULDER + side] = (0.0, 0.11 * sign, 0.80);
        body[coco::LEFT_ELBOW + side] = (-0.5 * ARM_SWING * swing, 0.13 * sign, 0.63);
        body[coco::LEFT_WRIST + side] = (-ARM_SWING * swing, 0.14 * sign, 0.47);
        body[coco::LEFT_HIP + side] = (0.0, 0.08 * sign, 0.50);
        body[coco::LEFT_KNEE + side] = (0.5 * ANKLE_SWING * swing, 0.07 * sign, 0.27 + lift);
        body[coco::LEFT_ANKLE + side] = (ANKLE_SWING * swing, 0.07 * sign, 0.02 + lift);
    }
    let mut kp = [(0.0, 0.0); 17];
    let mut depth = [0.0; 17];
    for k in 0..17 {
        let (f, l, u) = body[k];
        kp[k] = project(p, f, l, u);
        depth[k] = depth_of(p, f, l);
    }
    Joints {
        kp,
        depth,
        head: project(p, 0.0, 0.0, 0.93),
    }
}

fn bbox_of(p: &Pose, j: &Joints) -> BBox {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in j.kp.iter() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let h = p.height;
    let (hx, hy) = j.head;
    x0 = x0.min(hx - 0.075 * h);
    x1 = x1.max(hx + 0.075 * h);
    y0 = y0.min(hy - 0.08 * h);
    let (x0, x1) = (x0 - 0.06 * h, x1 + 0.06 * h);
    let y1 = y1 + 0.03 * h;
    BBox::new(x0, y0, x1 - x0, y1 - y0).expect("gait box has positive extent")
}

fn skeleton_of(j: &Joints) -> Skeleton17 {
    let mut points = [Keypoint::ABSENT; 17];
    for k in 0..17 {
        let face = k <= coco::RIGHT_EAR;
        let visibility = if face && j.depth[k] < -0.02 {
            Visibility::Occluded
        } else {
            Visibility::Visible
        };
        points[k] = Keypoint {
            x: j.kp[k].0,
            y: j.kp[k].1,
            visibility,
        };
    }
    Skeleton17::new(points)
}

#[derive(Debug, Clone)]
struct Walker {
    id: u32,
    start_frame: u32,
    poses: Vec<Pose>,
    boxes: Vec<BBox>,
    onset: Option<u32>,
    look: Look,
}

impl Walker {
    fn frames(&self) -> std::ops::Range<u32> {
        self.start_frame..self.start_frame + self.poses.len() as u32
    }

    fn pose(&self, frame: u32) -> Option<&Pose> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.poses.get(i as usize))
    }

    fn bbox(&self, frame: u32) -> Option<&BBox> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.boxes.get(i as usize))
    }
}

struct Plan {
    start_frame: u32,
    x0: f64,
    lane: usize,
    direction: f64,
    speed: f64,
    height: f64,
    phase0: f64,
    onset: Option<u32>,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn simulate(cfg: &SynthConfig, plan: &Plan) -> (Vec<Pose>, Vec<BBox>) {
    let (w, h) = (cfg.image_width as f64, cfg.image_height as f64);
    let base_heading = if plan.direction > 0.0 { 0.0 } else { PI };
    let turn = if plan.direction > 0.0 { FRAC_PI_2 } else { -FRAC_PI_2 };
    let stride = 0.75 * plan.height;
    let mut pose = Pose {
        foot_x: plan.x0,
        foot_y: LANES[plan.lane],
        heading: base_heading,
        phase: plan.phase0,
        height: plan.height,
    };
    let mut poses = Vec::new();
    let mut boxes = Vec::new();
    let mut frame = plan.start_frame;
    while frame < cfg.frame_count {
        let (heading, speed_factor, crossing_now) = match plan.onset {
            Some(onset) => {
                let pre_start = onset as f64 - PRE_CROSSING_FRAMES as f64;
                let t = frame as f64;
                let turn_s = smoothstep((t - pre_start) / (PRE_CROSSING_FRAMES as f64 + 4.0));
                let slow_s = smoothstep((t - pre_start) / PRE_CROSSING_FRAMES as f64);
                if frame >= onset {
                    (base_heading + turn, 1.0, true)
                } else {
                    (base_heading + turn * turn_s, 1.0 - 0.35 * slow_s, false)
                }
            }
            None => (base_heading, 1.0, false),
        };
        pose.heading = heading;
        let j = joints(&pose);
        let b = bbox_of(&pose, &j);
        if b.x() < 0.0 || b.y() < 0.0 || b.right() > w || b.bottom() > h {
            break;
        }
        poses.push(pose);
        boxes.push(b);
        let step = plan.speed * speed_factor;
        if crossing_now {
            pose.foot_y += 0.6 * step;
        } else {
            pose.foot_x += plan.direction * step;
        }
        pose.phase = (pose.phase + TAU * step / stride).rem_euclid(TAU);
        frame += 1;
    }
    (poses, boxes)
}

fn collides(a: &Walker, b: &Walker) -> bool {
    let lo = a.frames().start.max(b.frames().start);
    let hi = a.frames().end.min(b.frames().end);
    (lo..hi).any(|f| a.bbox(f).unwrap().intersects(b.bbox(f).unwrap()))
}

fn uniform(rng: &mut ChaCha8Rng, amplitude: f64) -> f64 {
    if amplitude > 0.0 {
        rng.gen_range(-amplitude..=amplitude)
    } else {
        0.0
    }
}

/// Generated scene: ground truth, derived detection/keypoint streams and a
/// procedural renderer for pedestrian crops.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub ground_truth: SceneGroundTruth,
    pub detections: Vec<Detection>,
    pub keypoints: Vec<KeypointRecord>,
    walkers: Vec<Walker>,
}

/// Generates a scene. Output is a pure function of `cfg`.
pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene, IngestError> {
    cfg.validate()?;
    let mut layout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_pedestrians;
    let mut ids: Vec<u32> = (1..=n as u32).collect();
    // Fisher-Yates with the layout stream; first `crossing_count` ids cross.
    for i in (1..ids.len()).rev() {
        let j = layout_rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let crossing: std::collections::BTreeSet<u32> = ids[..cfg.crossing_count()].iter().copied().collect();

    let w = cfg.image_width as f64;
    let mut walkers: Vec<Walker> = Vec::with_capacity(n);
    for id in 1..=n as u32 {
        let is_crossing = crossing.contains(&id);
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let direction = if layout_rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let start_frame = if id <= 3 {
                0
            } else {
                layout_rng.gen_range(0..=cfg.frame_count / 2)
            };
            let lane = if is_crossing {
                layout_rng.gen_range(3..LANES.len())
            } else {
                layout_rng.gen_range(0..LANES.len())
            };
            let x0 = if direction > 0.0 {
                layout_rng.gen_range(60.0..w * 0.55)
            } else {
                layout_rng.gen_range(w * 0.45..w - 60.0)
            };
            let speed = layout_rng.gen_range(1.4..2.2);
            let height = layout_rng.gen_range(62.0..80.0);
            let phase0 = layout_rng.gen_range(0.0..TAU);
            let onset = if is_crossing {
                let lo = start_frame + 28;
                let hi = (start_frame + 90).min(cfg.frame_count.saturating_sub(12));
                if lo > hi {
                    continue;
                }
                Some(layout_rng.gen_range(lo..=hi))
            } else {
                None
            };
            let plan = Plan {
                start_frame,
                x0,
                lane,
                direction,
                speed,
                height,
                phase0,
                onset,
            };
            let (poses, boxes) = simulate(cfg, &plan);
            let lifetime = poses.len() as u32;
            if lifetime < MIN_LIFETIME.min(cfg.frame_count - start_frame) || lifetime == 0 {
                continue;
            }
            // A crossing pedestrian must still be in view a few frames past onset.
            if let Some(onset) = onset {
                if start_frame + lifetime < onset + 8 {
                    continue;
                }
            }
            let walker = Walker {
                id,
                start_frame,
                poses,
                boxes,
                onset,
                look: Look::for_id(id),
            };
            if walkers.iter().any(|o| collides(o, &walker)) {
                continue;
            }
            placed = Some(walker);
            break;
        }
        match placed {
            Some(wk) => walkers.push(wk),
            None => {
                return Err(IngestError::InvalidConfig(format!(
                    "could not place pedestrian {id} without overlap; scene too crowded"
                )))
            }
        }
    }

    let mut frames = vec![Vec::new(); cfg.frame_count as usize];
    for wk in &walkers {
        for (i, (pose, b)) in wk.poses.iter().zip(&wk.boxes).enumerate() {
            let f = wk.start_frame as usize + i;
            frames[f].push(GtObject {
                pedestrian_id: wk.id,
                bbox: *b,
                skeleton: skeleton_of(&joints(pose)),
            });
        }
    }
    let labels = walkers
        .iter()
        .map(|wk| match wk.onset {
            Some(onset) => IntentLabel::crossing(wk.id, onset),
            None => IntentLabel::not_crossing(wk.id),
        })
        .collect();
    let ground_truth = SceneGroundTruth {
        image_width: cfg.image_width,
        image_height: cfg.image_height,
        frame_count: cfg.frame_count,
        frames,
        labels,
    };

    let mut det_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_0001);
    let mut kp_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0B5E_55ED_CAFE_0002);
    let mut detections = Vec::new();
    let mut keypoints = Vec::new();
    for (f, objs) in ground_truth.frames.iter().enumerate() {
        for o in objs {
            let dropped = det_rng.gen::<f64>() < cfg.detection_dropout;
            let a = cfg.noise_px;
            let (dx, dy, dw, dh) = (
                uniform(&mut det_rng, a),
                uniform(&mut det_rng, a),
                uniform(&mut det_rng, a),
                uniform(&mut det_rng, a),
            );
            let confidence = (det_rng.gen_range(0.6..1.0) * 1000.0_f64).round() / 1000.0;
            if !dropped {
                let b = &o.bbox;
                let bbox = BBox::new(b.x() + dx, b.y() + dy, (b.w() + dw).max(1.0), (b.h() + dh).max(1.0))
                    .expect("noisy box stays valid");
                detections.push(Detection::new(f as u32, bbox, confidence, 0).expect("confidence in range"));
            }
            let mut skeleton = o.skeleton;
            for p in skeleton.points.iter_mut() {
                let drop = kp_rng.gen::<f64>() < cfg.keypoint_dropout;
                let (nx, ny) = (uniform(&mut kp_rng, 0.5 * a), uniform(&mut kp_rng, 0.5 * a));
                if drop {
                    *p = Keypoint::ABSENT;
                } else {
                    p.x += nx;
                    p.y += ny;
                }
            }
            keypoints.push(KeypointRecord {
                frame: f as u32,
                pedestrian_id: o.pedestrian_id,
                skeleton,
            });
        }
    }

    Ok(SynthScene {
        config: cfg.clone(),
        ground_truth,
        detections,
        keypoints,
        walkers,
    })
}

struct Capsule {
    a: (f64, f64),
    b: (f64, f64),
    r: f64,
    color: [u8; 3],
}

impl Capsule {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (ax, ay) = self.a;
        let (bx, by) = self.b;
        let (vx, vy) = (bx - ax, by - ay);
        let len2 = vx * vx + vy * vy;
        let t = if len2 > 0.0 {
            (((x - ax) * vx + (y - ay) * vy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (ax + t * vx - x, ay + t * vy - y);
        px * px + py * py <= self.r * self.r
    }
}

fn body_shapes(pose: &Pose, look: &Look) -> Vec<Capsule> {
    let j = joints(pose);
    let h = pose.height;
    let k = &j.kp;
    let mid = |a: usize, b: usize| ((k[a].0 + k[b].0) / 2.0, (k[a].1 + k[b].1) / 2.0);
    let cap = |a, b, r: f64, color| Capsule { a, b, r: r * h, color };
    let mut v = Vec::with_capacity(14);
    // far side first so the near side paints over it
    let mut sides = [(0usize, j.depth[coco::LEFT_HIP]), (1usize, j.depth[coco::RIGHT_HIP])];
    sides.sort_by(|a, b| a.1.total_cmp(&b.1));
    for &(s, _) in &sides {
        v.push(cap(k[coco::LEFT_HIP + s], k[coco::LEFT_KNEE + s], 0.05, look.pants));
        v.push(cap(k[coco::LEFT_KNEE + s], k[coco::LEFT_ANKLE + s], 0.04, look.pants));
    }
    v.push(cap(k[coco::LEFT_HIP], k[coco::RIGHT_HIP], 0.06, look.pants));
    v.push(cap(mid(coco::LEFT_SHOULDER, coco::RIGHT_SHOULDER), mid(coco::LEFT_HIP, coco::RIGHT_HIP), 0.1, look.shirt));
    v.push(cap(k[coco::LEFT_SHOULDER], k[coco::RIGHT_SHOULDER], 0.055, look.shirt));
    for &(s, _) in &sides {
        v.push(cap(k[coco::LEFT_SHOULDER + s], k[coco::LEFT_ELBOW + s], 0.035, look.shirt));
        v.push(cap(k[coco::LEFT_ELBOW + s], k[coco::LEFT_WRIST + s], 0.03, look.skin));
    }
    let (hx, hy) = j.head;
    v.push(cap((hx, hy), (hx, hy), 0.075, look.skin));
    v.push(cap((hx, hy - 0.035 * h), (hx, hy - 0.035 * h), 0.055, look.hair));
    v
}

fn background(x: f64, y: f64) -> [u8; 3] {
    if y < WALL_Y {
        [128, 116, 104]
    } else if y < ROAD_Y {
        let joint = x.rem_euclid(80.0) < 2.0 || (y - WALL_Y).rem_euclid(60.0) < 2.0;
        if joint {
            [140, 140, 136]
        } else {
            [166, 166, 160]
        }
    } else {
        let marking = (650.0..656.0).contains(&y) && x.rem_euclid(120.0) < 60.0;
        if marking {
            [235, 235, 235]
        } else {
            [66, 66, 72]
        }
    }
}

impl SynthScene {
    pub fn gt_boxes(&self) -> Vec<GtBox> {
        self.ground_truth.boxes()
    }

    fn shapes_in(&self, frame: u32, region: &BBox) -> Vec<Capsule> {
        let mut near: Vec<&Walker> = self
            .walkers
            .iter()
            .filter(|wk| wk.bbox(frame).is_some_and(|b| b.intersects(region)))
            .collect();
        near.sort_by(|a, b| {
            let ya = a.pose(frame).unwrap().foot_y;
            let yb = b.pose(frame).unwrap().foot_y;
            ya.total_cmp(&yb).then(a.id.cmp(&b.id))
        });
        near.iter()
            .flat_map(|wk| body_shapes(wk.pose(frame).unwrap(), &wk.look))
            .collect()
    }

    fn shade(shapes: &[Capsule], x: f64, y: f64) -> [u8; 3] {
        shapes
            .iter()
            .rev()
            .find(|c| c.contains(x, y))
            .map(|c| c.color)
            .unwrap_or_else(|| background(x, y))
    }

    /// Renders the `bbox` region of `frame` into a `size x size` crop.
    pub fn render_crop(&self, frame: u32, bbox: &BBox, size: usize) -> RgbImage {
        let shapes = self.shapes_in(frame, bbox);
        let mut img = RgbImage::new(size, size);
        for j in 0..size {
            let y = bbox.y() + (j as f64 + 0.5) / size as f64 * bbox.h();
            for i in 0..size {
                let x = bbox.x() + (i as f64 + 0.5) / size as f64 * bbox.w();
                img.put(i, j, Self::shade(&shapes, x, y));
            }
        }
        img
    }

    /// Full-resolution frame.
    pub fn render_frame(&self, frame: u32) -> RgbImage {
        let (w, h) = (self.config.image_width as usize, self.config.image_height as usize);
        let full = BBox::new(0.0, 0.0, w as f64, h as f64).expect("image has positive size");
        let shapes = self.shapes_in(frame, &full);
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.put(x, y, Self::shade(&shapes, x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        img
    }
}

impl FrameSource for SynthScene {
    fn crop(&self, frame: u32, bbox: &BBox, size: usize) -> RgbImage {
        self.render_crop(frame, bbox, size)
    }
}
