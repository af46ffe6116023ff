//! 9-point skeleton reduction, the 396-value geometric feature vector,
//! per-track feature windows and skeleton overlays.

pub mod features;
pub mod overlay;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{coco, joint9, BBox, Keypoint, Skeleton17, Skeleton9, Visibility, SKELETON9_POINTS};

pub use features::{
    feature_layout, features_396, format_features, mirror_features, mirror_map, parse_features,
    parse_features_str, window_features, window_features_at, FeatureRow, FeatureSlot, FeatureWindow, MirrorOp,
    PAIR_COUNT, TRIPLE_COUNT,
};
pub use overlay::{render_early_fusion, LEFT_COLOR, NECK_COLOR, OVERLAY_SIZE, RIGHT_COLOR};

/// Minimum number of present points (of 9) for a skeleton to count as found.
pub const MIN_KEYPOINTS: usize = 4;

/// Torso lengths below this are treated as collapsed.
pub const MIN_TORSO: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("only {present} of 9 skeleton points present (need {MIN_KEYPOINTS})")]
    TooFewKeypoints { present: usize },
    #[error("skeleton has zero torso length and zero box diagonal")]
    DegenerateSkeleton,
    #[error("track has no frames with features")]
    EmptyTrack,
    #[error("empty crop")]
    EmptyCrop,
    #[error("window length must be positive")]
    ZeroWindow,
}

/// COCO index feeding each non-neck joint9 slot.
const SOURCES: [(usize, usize); 8] = [
    (joint9::LEFT_SHOULDER, coco::LEFT_SHOULDER),
    (joint9::RIGHT_SHOULDER, coco::RIGHT_SHOULDER),
    (joint9::LEFT_HIP, coco::LEFT_HIP),
    (joint9::RIGHT_HIP, coco::RIGHT_HIP),
    (joint9::LEFT_KNEE, coco::LEFT_KNEE),
    (joint9::RIGHT_KNEE, coco::RIGHT_KNEE),
    (joint9::LEFT_ANKLE, coco::LEFT_ANKLE),
    (joint9::RIGHT_ANKLE, coco::RIGHT_ANKLE),
];

/// Standing pose in box-relative coordinates (0..1 across, 0..1 down), used
/// to fill missing points. Facing the camera, so the person's left side is on
/// the image right.
pub const CANONICAL_POSE: [(f64, f64); SKELETON9_POINTS] = [
    (0.5, 0.2),
    (0.65, 0.2),
    (0.35, 0.2),
    (0.6, 0.5),
    (0.4, 0.5),
    (0.6, 0.72),
    (0.4, 0.72),
    (0.6, 0.95),
    (0.4, 0.95),
];

/// Number of the 9 skeleton points present in a COCO skeleton. The neck
/// counts when both shoulders are present.
pub fn present_points(s: &Skeleton17) -> usize {
    let p = |i: usize| s.points[i].visibility.is_present();
    let neck = p(coco::LEFT_SHOULDER) && p(coco::RIGHT_SHOULDER);
    SOURCES.iter().filter(|(_, c)| p(*c)).count() + neck as usize
}

/// Picks shoulders, hips, knees and ankles, synthesizes the neck as the
/// shoulder midpoint and fills missing points from [`CANONICAL_POSE`]
/// scaled to `bbox` (marked occluded and flagged in `imputed`).
pub fn reduce_keypoints(s: &Skeleton17, bbox: &BBox) -> Result<Skeleton9, FeatureError> {
    let present = present_points(s);
    if present < MIN_KEYPOINTS {
        return Err(FeatureError::TooFewKeypoints { present });
    }
    let mut points = [Keypoint::ABSENT; SKELETON9_POINTS];
    let mut imputed = [false; SKELETON9_POINTS];
    for &(j, c) in &SOURCES {
        let k = s.points[c];
        if k.visibility.is_present() {
            points[j] = k;
        } else {
            let (u, v) = CANONICAL_POSE[j];
            points[j] = Keypoint {
                x: bbox.x() + u * bbox.w(),
                y: bbox.y() + v * bbox.h(),
                visibility: Visibility::Occluded,
            };
            imputed[j] = true;
        }
    }
    let (l, r) = (points[joint9::LEFT_SHOULDER], points[joint9::RIGHT_SHOULDER]);
    let neck_imputed = imputed[joint9::LEFT_SHOULDER] || imputed[joint9::RIGHT_SHOULDER];
    points[joint9::NECK] = Keypoint {
        x: 0.5 * (l.x + r.x),
        y: 0.5 * (l.y + r.y),
        visibility: if neck_imputed {
            Visibility::Occluded
        } else {
            l.visibility.min(r.visibility)
        },
    };
    imputed[joint9::NECK] = neck_imputed;
    Ok(Skeleton9 {
        points,
        imputed,
        source_bbox: *bbox,
    })
}

/// Skeleton in a body-centric frame: neck at the origin, unit torso length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSkeleton9 {
    pub points: [[f64; 2]; SKELETON9_POINTS],
    /// Pixel length used as the unit.
    pub torso_len: f64,
    /// True when the box diagonal replaced a collapsed torso.
    pub fallback_used: bool,
}

pub fn normalize_skeleton(s: &Skeleton9) -> Result<NormalizedSkeleton9, FeatureError> {
    let p = &s.points;
    let neck = p[joint9::NECK];
    let hip_x = 0.5 * (p[joint9::LEFT_HIP].x + p[joint9::RIGHT_HIP].x);
    let hip_y = 0.5 * (p[joint9::LEFT_HIP].y + p[joint9::RIGHT_HIP].y);
    let torso = (hip_x - neck.x).hypot(hip_y - neck.y);
    let (scale, fallback_used) = if torso >= MIN_TORSO {
        (torso, false)
    } else {
        let d = s.source_bbox.diagonal();
        if !(d >= MIN_TORSO) {
            return Err(FeatureError::DegenerateSkeleton);
        }
        (d, true)
    };
    let mut points = [[0.0; 2]; SKELETON9_POINTS];
    for (out, k) in points.iter_mut().zip(p) {
        *out = [(k.x - neck.x) / scale, (k.y - neck.y) / scale];
    }
    Ok(NormalizedSkeleton9 {
        points,
        torso_len: scale,
        fallback_used,
    })
}

/// Reduction, normalization and feature extraction in one step.
pub fn skeleton_features(s: &Skeleton17, bbox: &BBox) -> Result<(Skeleton9, crate::types::FeatureVector396), FeatureError> {
    let s9 = reduce_keypoints(s, bbox)?;
    let f = features_396(&normalize_skeleton(&s9)?);
    Ok((s9, f))
}

#[cfg(test)]
mod tests {
    use crate::fixtures::full_skeleton;
    use super::*;

    #[test]
    fn neck_is_shoulder_midpoint() {
        let mut pts = [Keypoint::ABSENT; 17];
        pts[coco::LEFT_SHOULDER] = Keypoint::visible(2.0, 0.0);
        pts[coco::RIGHT_SHOULDER] = Keypoint::visible(4.0, 0.0);
        pts[coco::LEFT_HIP] = Keypoint::visible(2.0, 5.0);
        let s = reduce_keypoints(&Skeleton17::new(pts), &BBox::new(0.0, 0.0, 6.0, 10.0).unwrap()).unwrap();
        assert_eq!((s.points[0].x, s.points[0].y), (3.0, 0.0));
        assert!(!s.imputed[joint9::NECK]);
        assert!(s.imputed[joint9::RIGHT_HIP]);
        assert_eq!(s.points[joint9::RIGHT_HIP].visibility, Visibility::Occluded);
        assert_eq!((s.points[joint9::RIGHT_HIP].x, s.points[joint9::RIGHT_HIP].y), (0.4 * 6.0, 5.0));
    }

    #[test]
    fn full_skeleton_needs_no_imputation() {
        let (s, b) = full_skeleton();
        let r = reduce_keypoints(&s, &b).unwrap();
        assert!(r.imputed.iter().all(|i| !i));
        assert!(r.points.iter().all(|k| k.visibility == Visibility::Visible));
    }

    #[test]
    fn three_points_are_too_few() {
        let mut pts = [Keypoint::ABSENT; 17];
        pts[coco::LEFT_HIP] = Keypoint::visible(1.0, 1.0);
        pts[coco::LEFT_KNEE] = Keypoint::visible(1.0, 2.0);
        pts[coco::LEFT_ANKLE] = Keypoint::visible(1.0, 3.0);
        let b = BBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        assert_eq!(
            reduce_keypoints(&Skeleton17::new(pts), &b).unwrap_err(),
            FeatureError::TooFewKeypoints { present: 3 }
        );
        // both shoulders add the neck as a fourth point
        pts[coco::LEFT_ANKLE] = Keypoint::ABSENT;
        pts[coco::LEFT_SHOULDER] = Keypoint::visible(1.0, 0.0);
        pts[coco::RIGHT_SHOULDER] = Keypoint::visible(2.0, 0.0);
        assert_eq!(present_points(&Skeleton17::new(pts)), 5);
    }

    #[test]
    fn normalization_puts_neck_at_origin_with_unit_torso() {
        let (s, b) = full_skeleton();
        let n = normalize_skeleton(&reduce_keypoints(&s, &b).unwrap()).unwrap();
        assert_eq!(n.points[0], [0.0, 0.0]);
        assert!(!n.fallback_used);
        let hx = 0.5 * (n.points[3][0] + n.points[4][0]);
        let hy = 0.5 * (n.points[3][1] + n.points[4][1]);
        assert!((hx.hypot(hy) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scaling_cancels() {
        let (s, b) = full_skeleton();
        let mut s2 = s;
        for k in s2.points.iter_mut() {
            k.x *= 2.0;
            k.y *= 2.0;
        }
        let b2 = b.transformed(2.0, 0.0, 0.0).unwrap();
        let n1 = normalize_skeleton(&reduce_keypoints(&s, &b).unwrap()).unwrap();
        let n2 = normalize_skeleton(&reduce_keypoints(&s2, &b2).unwrap()).unwrap();
        for (a, c) in n1.points.iter().zip(&n2.points) {
            assert!((a[0] - c[0]).abs() < 1e-9 && (a[1] - c[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn collapsed_torso_falls_back_to_diagonal() {
        let b = BBox::new(0.0, 0.0, 3.0, 4.0).unwrap();
        let pts: Vec<Keypoint> = (0..9).map(|_| Keypoint::visible(1.0, 1.0)).collect();
        let s = Skeleton9::from_vec(pts, b).unwrap();
        let n = normalize_skeleton(&s).unwrap();
        assert!(n.fallback_used);
        assert_eq!(n.torso_len, 5.0);
    }
}
