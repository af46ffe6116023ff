//! Deterministic fixtures shared by unit, integration and acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifiers::Prediction;
use crate::ingest::GtBox;
use crate::skeleton::{skeleton_features, window_features};
use crate::tracker::TrackedBox;
use crate::types::{coco, BBox, Detection, Keypoint, Skeleton17};

/// Feature vector of [`full_skeleton`], one `value mask` line per slot.
pub const GOLDEN_FEATURES: &str = include_str!("../tests/data/golden_features_396.txt");

/// A slightly asymmetric standing pose with every COCO point visible.
pub fn full_skeleton() -> (Skeleton17, BBox) {
    let mut pts = [Keypoint::ABSENT; 17];
    let set = |pts: &mut [Keypoint; 17], i: usize, x: f64, y: f64| pts[i] = Keypoint::visible(x, y);
    set(&mut pts, coco::NOSE, 50.0, 12.0);
    set(&mut pts, coco::LEFT_SHOULDER, 62.0, 30.0);
    set(&mut pts, coco::RIGHT_SHOULDER, 38.5, 31.0);
    set(&mut pts, coco::LEFT_HIP, 58.0, 75.0);
    set(&mut pts, coco::RIGHT_HIP, 41.0, 76.5);
    set(&mut pts, coco::LEFT_KNEE, 60.5, 105.0);
    set(&mut pts, coco::RIGHT_KNEE, 37.0, 104.0);
    set(&mut pts, coco::LEFT_ANKLE, 63.0, 135.0);
    set(&mut pts, coco::RIGHT_ANKLE, 34.0, 137.0);
    (Skeleton17::new(pts), BBox::new(25.0, 5.0, 50.0, 140.0).expect("positive size"))
}

/// Parses [`GOLDEN_FEATURES`] into `(value, valid)` pairs.
pub fn golden_features() -> Vec<(f64, bool)> {
    GOLDEN_FEATURES
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (v, m) = l.split_once(' ').expect("value and mask");
            (v.parse().expect("numeric value"), m == "1")
        })
        .collect()
}

/// Frames per window in [`skeletal_fixture`].
pub const SKELETAL_FIXTURE_WINDOW: usize = 14;

/// Skeletal windows (`14 x 396` values each) whose label is the sign of
/// feature 0, the horizontal offset from neck to left shoulder.
///
/// Each sample is one random standing pose jittered over 14 frames; the
/// shoulder offset keeps its sign in every frame.
pub fn skeletal_fixture(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let half = side * rng.gen_range(4.0..12.0);
        let (nx, ny) = (rng.gen_range(100.0..300.0), rng.gen_range(50.0..150.0));
        let mut base = [(0.0, 0.0); 8];
        base[0] = (nx + half, ny + rng.gen_range(-2.0..2.0));
        base[1] = (nx - half, ny - (base[0].1 - ny));
        for (k, dy) in [(2usize, 45.0), (4, 75.0), (6, 105.0)] {
            base[k] = (nx + 0.8 * half + rng.gen_range(-6.0..6.0), ny + dy + rng.gen_range(-6.0..6.0));
            base[k + 1] = (nx - 0.8 * half + rng.gen_range(-6.0..6.0), ny + dy + rng.gen_range(-6.0..6.0));
        }
        let bbox = BBox::new(nx - 30.0, ny - 20.0, 60.0, 140.0).expect("positive size");
        let idx = [
            coco::LEFT_SHOULDER,
            coco::RIGHT_SHOULDER,
            coco::LEFT_HIP,
            coco::RIGHT_HIP,
            coco::LEFT_KNEE,
            coco::RIGHT_KNEE,
            coco::LEFT_ANKLE,
            coco::RIGHT_ANKLE,
        ];
        let frames: Vec<_> = (0..SKELETAL_FIXTURE_WINDOW)
            .map(|_| {
                let mut pts = [Keypoint::ABSENT; 17];
                // shoulders move together so the neck stays their midpoint
                let (jx, jy) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
                for (k, &c) in idx.iter().enumerate() {
                    let (x, y) = base[k];
                    pts[c] = if k < 2 {
                        Keypoint::visible(x + jx, y + jy)
                    } else {
                        Keypoint::visible(x + rng.gen_range(-1.5..1.5), y + rng.gen_range(-1.5..1.5))
                    };
                }
                skeleton_features(&Skeleton17::new(pts), &bbox).expect("full skeleton").1
            })
            .collect();
        let w = window_features(&frames, SKELETAL_FIXTURE_WINDOW).expect("non-empty");
        ys.push(frames.last().expect("non-empty").values()[0] > 0.0);
        xs.push(w.flattened());
    }
    (xs, ys)
}

/// One pedestrian walking right at 2 px/frame for `frames` frames, with no
/// detections during `gap` (a half-open frame range).
pub fn occlusion_fixture(frames: u32, gap: std::ops::Range<u32>) -> (Vec<Detection>, Vec<GtBox>) {
    let mut dets = Vec::new();
    let mut gt = Vec::new();
    for f in 0..frames {
        let b = BBox::new(100.0 + 2.0 * f as f64, 300.0, 30.0, 70.0).expect("positive size");
        gt.push(GtBox {
            frame: f,
            pedestrian_id: 1,
            bbox: b,
        });
        if !gap.contains(&f) {
            dets.push(Detection::new(f, b, 0.9, 0).expect("valid detection"));
        }
    }
    (dets, gt)
}

/// 100 ground-truth boxes (two pedestrians, 50 frames) tracked perfectly
/// except for one identity switch on pedestrian 2 at frame 25.
pub fn mota_switch_fixture() -> (Vec<TrackedBox>, Vec<GtBox>) {
    let mut tracks = Vec::new();
    let mut gt = Vec::new();
    for f in 0..50u32 {
        for p in 1..=2u32 {
            let b = BBox::new(100.0 * p as f64 + f as f64, 200.0, 30.0, 60.0).expect("positive size");
            gt.push(GtBox {
                frame: f,
                pedestrian_id: p,
                bbox: b,
            });
            let track_id = if p == 2 && f >= 25 { 7 } else { p };
            tracks.push(TrackedBox { frame: f, track_id, bbox: b });
        }
    }
    (tracks, gt)
}

/// Onset at 0-based frame 16 (the 17th frame) with a predictor that says
/// crossing from 0-based frame 9 (the 10th frame) on.
pub fn frame17_fixture() -> (Vec<Prediction>, u32) {
    let preds = (0..30u32)
        .map(|f| Prediction::new(f, 1, if f >= 9 { 0.9 } else { 0.1 }))
        .collect();
    (preds, 16)
}
