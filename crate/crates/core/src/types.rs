//! Shared domain vocabulary: boxes, keypoints, skeletons, windows and labels.
//!
//! All types are plain values. Constructors validate cardinalities and ranges,
//! so a value that exists is a valid one.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera frame rate used for every frame/time conversion.
pub const FRAME_RATE: f64 = 30.0;

/// Number of keypoints in a COCO skeleton.
pub const COCO_KEYPOINTS: usize = 17;

/// Number of points in the reduced pedestrian skeleton.
pub const SKELETON9_POINTS: usize = 9;

/// Length of a per-frame skeletal feature vector.
pub const FEATURE_LEN: usize = 396;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("invalid bounding box (w = {w}, h = {h}); width and height must be positive and finite")]
    InvalidBox { w: f64, h: f64 },
    #[error("{what}: expected {expected} elements, got {got}")]
    Cardinality {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("visibility flag {0} is not one of 0, 1, 2")]
    BadVisibility(i64),
    #[error("confidence {0} outside [0, 1]")]
    BadConfidence(f64),
    #[error("pedestrian {0}: onset frame given for a non-crossing label")]
    InconsistentLabel(u32),
    #[error("window frames are not consecutive at position {0}")]
    NonConsecutiveWindow(usize),
}

/// Axis-aligned pixel box, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = CoreError;
    fn try_from(r: RawBox) -> Result<Self, CoreError> {
        BBox::new(r.x, r.y, r.w, r.h)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
        }
    }
}

/// SORT measurement representation of a box: center, area and aspect ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterScale {
    pub cx: f64,
    pub cy: f64,
    /// Area `w * h`.
    pub s: f64,
    /// Aspect ratio `w / h`.
    pub r: f64,
}

impl CenterScale {
    /// Inverse of [`BBox::center_scale`]. Fails when `s` or `r` is not positive.
    pub fn to_bbox(&self) -> Result<BBox, CoreError> {
        if !(self.s > 0.0 && self.r > 0.0) {
            return Err(CoreError::InvalidBox {
                w: f64::NAN,
                h: f64::NAN,
            });
        }
        let w = (self.s * self.r).sqrt();
        let h = self.s / w;
        BBox::new(self.cx - w / 2.0, self.cy - h / 2.0, w, h)
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, CoreError> {
        if !(w > 0.0 && h > 0.0) || !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(CoreError::InvalidBox { w, h });
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn right(&self) -> f64 {
        self.x + self.w
    }
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn center_scale(&self) -> CenterScale {
        CenterScale {
            cx: self.x + self.w / 2.0,
            cy: self.y + self.h / 2.0,
            s: self.w * self.h,
            r: self.w / self.h,
        }
    }

    /// Box grown by `frac` of its size on every side (0.1 = 10% larger each way).
    pub fn inflate(&self, frac: f64) -> BBox {
        let dx = self.w * frac;
        let dy = self.h * frac;
        BBox {
            x: self.x - dx,
            y: self.y - dy,
            w: self.w + 2.0 * dx,
            h: self.h + 2.0 * dy,
        }
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    /// Uniformly scaled and translated copy: `p' = p * k + (tx, ty)`.
    pub fn transformed(&self, k: f64, tx: f64, ty: f64) -> Result<BBox, CoreError> {
        BBox::new(self.x * k + tx, self.y * k + ty, self.w * k, self.h * k)
    }
}

/// One detector output row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: i32,
}

impl Detection {
    pub fn new(frame: u32, bbox: BBox, confidence: f64, class_id: i32) -> Result<Self, CoreError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(CoreError::BadConfidence(confidence));
        }
        Ok(Detection {
            frame,
            bbox,
            confidence,
            class_id,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Visibility {
    Absent = 0,
    Occluded = 1,
    Visible = 2,
}

impl Visibility {
    pub fn is_present(self) -> bool {
        self != Visibility::Absent
    }
}

impl TryFrom<i64> for Visibility {
    type Error = CoreError;
    fn try_from(v: i64) -> Result<Self, CoreError> {
        match v {
            0 => Ok(Visibility::Absent),
            1 => Ok(Visibility::Occluded),
            2 => Ok(Visibility::Visible),
            other => Err(CoreError::BadVisibility(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

impl Keypoint {
    pub const ABSENT: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        visibility: Visibility::Absent,
    };

    pub fn visible(x: f64, y: f64) -> Self {
        Keypoint {
            x,
            y,
            visibility: Visibility::Visible,
        }
    }
}

/// COCO keypoint indices.
///
/// | idx | name           | idx | name           |
/// |-----|----------------|-----|----------------|
/// | 0   | nose           | 9   | left_wrist     |
/// | 1   | left_eye       | 10  | right_wrist    |
/// | 2   | right_eye      | 11  | left_hip       |
/// | 3   | left_ear       | 12  | right_hip      |
/// | 4   | right_ear      | 13  | left_knee      |
/// | 5   | left_shoulder  | 14  | right_knee     |
/// | 6   | right_shoulder | 15  | left_ankle     |
/// | 7   | left_elbow     | 16  | right_ankle    |
/// | 8   | right_elbow    |     |                |
pub mod coco {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;

    pub const NAMES: [&str; 17] = [
        "nose",
        "left_eye",
        "right_eye",
        "left_ear",
        "right_ear",
        "left_shoulder",
        "right_shoulder",
        "left_elbow",
        "right_elbow",
        "left_wrist",
        "right_wrist",
        "left_hip",
        "right_hip",
        "left_knee",
        "right_knee",
        "left_ankle",
        "right_ankle",
    ];
}

/// Slot order of [`Skeleton9`].
pub mod joint9 {
    pub const NECK: usize = 0;
    pub const LEFT_SHOULDER: usize = 1;
    pub const RIGHT_SHOULDER: usize = 2;
    pub const LEFT_HIP: usize = 3;
    pub const RIGHT_HIP: usize = 4;
    pub const LEFT_KNEE: usize = 5;
    pub const RIGHT_KNEE: usize = 6;
    pub const LEFT_ANKLE: usize = 7;
    pub const RIGHT_ANKLE: usize = 8;

    pub const NAMES: [&str; 9] = [
        "neck",
        "left_shoulder",
        "right_shoulder",
        "left_hip",
        "right_hip",
        "left_knee",
        "right_knee",
        "left_ankle",
        "right_ankle",
    ];

    /// Left/right swap used when mirroring a skeleton about the vertical axis.
    pub const MIRROR: [usize; 9] = [0, 2, 1, 4, 3, 6, 5, 8, 7];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skeleton17 {
    pub points: [Keypoint; COCO_KEYPOINTS],
}

impl Skeleton17 {
    pub fn new(points: [Keypoint; COCO_KEYPOINTS]) -> Self {
        Skeleton17 { points }
    }

    pub fn from_vec(points: Vec<Keypoint>) -> Result<Self, CoreError> {
        let got = points.len();
        let points: [Keypoint; COCO_KEYPOINTS] = points.try_into().map_err(|_| CoreError::Cardinality {
            what: "Skeleton17",
            expected: COCO_KEYPOINTS,
            got,
        })?;
        Ok(Skeleton17 { points })
    }

    pub fn present_count(&self) -> usize {
        self.points.iter().filter(|p| p.visibility.is_present()).count()
    }
}

/// Reduced pedestrian skeleton in [`joint9`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skeleton9 {
    pub points: [Keypoint; SKELETON9_POINTS],
    /// Slots filled from the canonical pose rather than observed.
    pub imputed: [bool; SKELETON9_POINTS],
    pub source_bbox: BBox,
}

impl Skeleton9 {
    pub fn from_vec(points: Vec<Keypoint>, source_bbox: BBox) -> Result<Self, CoreError> {
        let got = points.len();
        let points: [Keypoint; SKELETON9_POINTS] = points.try_into().map_err(|_| CoreError::Cardinality {
            what: "Skeleton9",
            expected: SKELETON9_POINTS,
            got,
        })?;
        Ok(Skeleton9 {
            points,
            imputed: [false; SKELETON9_POINTS],
            source_bbox,
        })
    }
}

/// 396 skeletal features of one frame plus a per-slot validity mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector396 {
    values: Vec<f64>,
    valid_mask: Vec<bool>,
}

impl FeatureVector396 {
    pub fn new(values: Vec<f64>, valid_mask: Vec<bool>) -> Result<Self, CoreError> {
        for (what, got) in [("feature values", values.len()), ("feature mask", valid_mask.len())] {
            if got != FEATURE_LEN {
                return Err(CoreError::Cardinality {
                    what,
                    expected: FEATURE_LEN,
                    got,
                });
            }
        }
        Ok(FeatureVector396 { values, valid_mask })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    /// Values with invalid slots zeroed.
    pub fn masked_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.valid_mask)
            .map(|(&v, &ok)| if ok { v } else { 0.0 })
    }
}

/// Interleaved RGB8 image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = RgbImage::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, CoreError> {
        if data.len() != width * height * 3 {
            return Err(CoreError::Cardinality {
                what: "RGB buffer",
                expected: width * height * 3,
                got: data.len(),
            });
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }
    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Horizontal mirror.
    pub fn flipped_horizontal(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.put(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Nearest-neighbour resample of the `bbox` region (clamped to the image).
    pub fn crop_resized(&self, bbox: &BBox, size: usize) -> RgbImage {
        let mut out = RgbImage::new(size, size);
        if self.is_empty() {
            return out;
        }
        for j in 0..size {
            let sy = bbox.y() + (j as f64 + 0.5) / size as f64 * bbox.h();
            let sy = (sy.floor().max(0.0) as usize).min(self.height - 1);
            for i in 0..size {
                let sx = bbox.x() + (i as f64 + 0.5) / size as f64 * bbox.w();
                let sx = (sx.floor().max(0.0) as usize).min(self.width - 1);
                out.put(i, j, self.get(sx, sy));
            }
        }
        out
    }
}

/// Ground-truth crossing intent of one pedestrian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentLabel {
    pub pedestrian_id: u32,
    onset_frame: Option<u32>,
}

impl IntentLabel {
    pub fn new(pedestrian_id: u32, crossing: bool, onset_frame: Option<u32>) -> Result<Self, CoreError> {
        match (crossing, onset_frame) {
            (false, Some(_)) => Err(CoreError::InconsistentLabel(pedestrian_id)),
            // A crossing label without onset carries no anticipation target.
            (true, None) => Err(CoreError::InconsistentLabel(pedestrian_id)),
            _ => Ok(IntentLabel {
                pedestrian_id,
                onset_frame,
            }),
        }
    }

    pub fn crossing(pedestrian_id: u32, onset: u32) -> Self {
        IntentLabel {
            pedestrian_id,
            onset_frame: Some(onset),
        }
    }

    pub fn not_crossing(pedestrian_id: u32) -> Self {
        IntentLabel {
            pedestrian_id,
            onset_frame: None,
        }
    }

    pub fn is_crossing(&self) -> bool {
        self.onset_frame.is_some()
    }

    pub fn onset_frame(&self) -> Option<u32> {
        self.onset_frame
    }
}

/// Binary intent class. Crossing is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intent {
    NotCrossing,
    Crossing,
}

impl Intent {
    pub fn is_crossing(self) -> bool {
        self == Intent::Crossing
    }

    pub fn from_bool(crossing: bool) -> Self {
        if crossing {
            Intent::Crossing
        } else {
            Intent::NotCrossing
        }
    }
}

/// One slot of a [`SequenceWindow`].
#[derive(Debug, Clone)]
pub struct WindowFrame {
    /// Nominal frame index of the slot. Slots before the track start are
    /// negative-offset copies of the first observed frame.
    pub frame: i64,
    /// Frame the content was taken from.
    pub source_frame: u32,
    pub crop: Arc<RgbImage>,
    pub skeleton: Option<Skeleton9>,
    pub features: Option<Arc<FeatureVector396>>,
}

/// Fixed-length per-track observation window ending at the prediction frame.
#[derive(Debug, Clone)]
pub struct SequenceWindow {
    pub track_id: u32,
    frames: Vec<WindowFrame>,
}

impl SequenceWindow {
    pub fn new(track_id: u32, frames: Vec<WindowFrame>, window_len: usize) -> Result<Self, CoreError> {
        if frames.len() != window_len {
            return Err(CoreError::Cardinality {
                what: "SequenceWindow",
                expected: window_len,
                got: frames.len(),
            });
        }
        if let Some(i) = frames.windows(2).position(|w| w[1].frame != w[0].frame + 1) {
            return Err(CoreError::NonConsecutiveWindow(i + 1));
        }
        Ok(SequenceWindow { track_id, frames })
    }

    pub fn frames(&self) -> &[WindowFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame the window predicts for (its last slot).
    pub fn end_frame(&self) -> u32 {
        self.frames.last().map(|f| f.source_frame).unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn center_scale_of_square() {
        let b = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert_eq!(
            b.center_scale(),
            CenterScale {
                cx: 1.0,
                cy: 1.0,
                s: 4.0,
                r: 1.0
            }
        );
    }

    #[test]
    fn center_scale_hand_arithmetic() {
        let b = BBox::new(10.0, 20.0, 4.0, 2.0).unwrap();
        let cs = b.center_scale();
        assert_eq!((cs.cx, cs.cy, cs.s, cs.r), (12.0, 21.0, 8.0, 2.0));
    }

    #[test]
    fn center_scale_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let b = BBox::new(
                rng.gen_range(-500.0..500.0),
                rng.gen_range(-500.0..500.0),
                rng.gen_range(0.5..300.0),
                rng.gen_range(0.5..300.0),
            )
            .unwrap();
            let back = b.center_scale().to_bbox().unwrap();
            for (a, e) in [(back.x(), b.x()), (back.y(), b.y()), (back.w(), b.w()), (back.h(), b.h())] {
                assert!((a - e).abs() <= 1e-9 * (1.0 + e.abs()), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rejects_wrong_cardinalities() {
        assert!(Skeleton17::from_vec(vec![Keypoint::ABSENT; 16]).is_err());
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Skeleton9::from_vec(vec![Keypoint::ABSENT; 10], b).is_err());
        assert!(FeatureVector396::new(vec![0.0; 395], vec![true; 396]).is_err());
        assert!(FeatureVector396::new(vec![0.0; 396], vec![true; 396]).is_ok());
    }

    #[test]
    fn label_consistency() {
        assert!(IntentLabel::new(8, false, Some(12)).is_err());
        assert!(IntentLabel::new(8, false, None).unwrap().onset_frame().is_none());
        assert_eq!(IntentLabel::new(7, true, Some(17)).unwrap().onset_frame(), Some(17));
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let b = BBox::new(0.1, 1.0 / 3.0, std::f64::consts::PI, 2.5e-7).unwrap();
        let bytes = bincode::serialize(&b).unwrap();
        let back: BBox = bincode::deserialize(&bytes).unwrap();
        assert_eq!(b.x().to_bits(), back.x().to_bits());
        assert_eq!(b.y().to_bits(), back.y().to_bits());
        assert_eq!(b.w().to_bits(), back.w().to_bits());
        assert_eq!(b.h().to_bits(), back.h().to_bits());
        let bad = bincode::serialize(&RawBox {
            x: 0.0,
            y: 0.0,
            w: -1.0,
            h: 1.0,
        })
        .unwrap();
        assert!(bincode::deserialize::<BBox>(&bad).is_err());
    }
}
