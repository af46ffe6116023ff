//! Identity assignment over per-frame detections.
//!
//! Two association modes share one loop: `sort` (Kalman prediction, IoU cost,
//! Hungarian matching) and `deepsort_lite`, which blends the IoU cost with the
//! cosine distance between the detection's color histogram and the track's
//! descriptor gallery, and keeps unmatched tracks alive much longer so an
//! identity survives short occlusions.

pub mod appearance;
pub mod hungarian;
pub mod kalman;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FrameSource;
use crate::types::{BBox, Detection, RgbImage};

pub use appearance::{appearance_descriptor, cosine_distance};
pub use hungarian::hungarian_min_cost;
pub use kalman::{kalman_predict, kalman_update, KalmanNoise, TrackState};

/// Side of the crops handed to the appearance model.
pub const APPEARANCE_CROP: usize = 64;

pub(crate) const FORBIDDEN: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum TrackerError {
    #[error("frame {got} presented after frame {last}")]
    OutOfOrderFrame { last: u32, got: u32 },
    #[error("detection from frame {got} passed to step for frame {expected}")]
    MixedFrames { expected: u32, got: u32 },
    #[error("{crops} crops supplied for {detections} detections")]
    CropCountMismatch { detections: usize, crops: usize },
    #[error("empty crop")]
    EmptyCrop,
    #[error("covariance lost positive definiteness (min eigenvalue {min_eigenvalue})")]
    NumericalBlowup { min_eigenvalue: f64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    Sort,
    #[serde(alias = "deepsort")]
    DeepsortLite,
}

impl std::str::FromStr for TrackerMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sort" => Ok(TrackerMode::Sort),
            "deepsort" | "deepsort_lite" => Ok(TrackerMode::DeepsortLite),
            other => Err(format!("unknown tracker mode {other:?} (expected sort or deepsort)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub mode: TrackerMode,
    pub iou_threshold: f64,
    /// Frames a track may go unmatched before it is dropped.
    pub max_age: u32,
    pub min_hits: u32,
    /// Weight of the IoU term in the deepsort_lite cost.
    pub appearance_weight: f64,
    pub noise: KalmanNoise,
}

impl TrackerConfig {
    pub fn sort() -> Self {
        TrackerConfig {
            mode: TrackerMode::Sort,
            iou_threshold: 0.3,
            max_age: 1,
            min_hits: 3,
            appearance_weight: 0.5,
            noise: KalmanNoise::default(),
        }
    }

    pub fn deepsort_lite() -> Self {
        TrackerConfig {
            mode: TrackerMode::DeepsortLite,
            max_age: 30,
            ..TrackerConfig::sort()
        }
    }

    pub fn for_mode(mode: TrackerMode) -> Self {
        match mode {
            TrackerMode::Sort => TrackerConfig::sort(),
            TrackerMode::DeepsortLite => TrackerConfig::deepsort_lite(),
        }
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(TrackerError::InvalidConfig("iou_threshold must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.appearance_weight) {
            return Err(TrackerError::InvalidConfig("appearance_weight must lie in [0, 1]".into()));
        }
        if self.min_hits == 0 {
            return Err(TrackerError::InvalidConfig("min_hits must be positive".into()));
        }
        Ok(())
    }
}

/// One tracker output row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedBox {
    pub frame: u32,
    pub track_id: u32,
    pub bbox: BBox,
}

/// Intersection over union. Symmetric, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.x().max(b.x())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y().max(b.y())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
struct Track {
    state: TrackState,
    confirmed: bool,
    /// Matched frames not yet emitted because the track was tentative.
    pending: Vec<TrackedBox>,
}

/// Stateful multi-object tracker. Feed frames in increasing order.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u32,
    first_frame: Option<u32>,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Tracker {
            config,
            tracks: Vec::new(),
            next_id: 1,
            first_frame: None,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live tracks, confirmed or tentative.
    pub fn states(&self) -> impl Iterator<Item = &TrackState> {
        self.tracks.iter().map(|t| &t.state)
    }

    /// Processes one frame.
    ///
    /// Returns boxes of confirmed tracks matched in this frame. When a track
    /// is confirmed, the boxes of its earlier tentative frames are returned as
    /// well, so the output may contain rows for past frames. A track is
    /// confirmed once it has `min_hits` measurements, or immediately on its
    /// first re-match while the sequence is still within its first
    /// `min_hits` frames. A track is never emitted in the frame it was born.
    /// `crops` must hold one crop per detection in `deepsort_lite` mode and is
    /// ignored otherwise.
    pub fn track_step(
        &mut self,
        frame: u32,
        detections: &[Detection],
        crops: &[RgbImage],
    ) -> Result<Vec<TrackedBox>, TrackerError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackerError::OutOfOrderFrame { last, got: frame });
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame != frame) {
            return Err(TrackerError::MixedFrames {
                expected: frame,
                got: d.frame,
            });
        }
        let deep = self.config.mode == TrackerMode::DeepsortLite;
        if deep && crops.len() != detections.len() {
            return Err(TrackerError::CropCountMismatch {
                detections: detections.len(),
                crops: crops.len(),
            });
        }
        let steps = self.last_frame.map_or(1, |last| frame - last);
        let first = *self.first_frame.get_or_insert(frame);
        self.last_frame = Some(frame);
        let frames_seen = frame - first + 1;

        let noise = self.config.noise;
        for t in &mut self.tracks {
            for _ in 0..steps {
                t.state = kalman_predict(&t.state, &noise)?;
            }
        }

        let descriptors: Vec<Vec<f64>> = if deep {
            crops.iter().map(appearance_descriptor).collect::<Result<_, _>>()?
        } else {
            Vec::new()
        };

        let (n_trk, n_det) = (self.tracks.len(), detections.len());
        let mut ious = vec![0.0; n_trk * n_det];
        let mut cost = vec![FORBIDDEN; n_trk * n_det];
        let lambda = self.config.appearance_weight;
        for (i, t) in self.tracks.iter().enumerate() {
            let Some(pred) = t.state.bbox() else { continue };
            for (j, d) in detections.iter().enumerate() {
                let o = iou(&pred, &d.bbox);
                ious[i * n_det + j] = o;
                if o < self.config.iou_threshold {
                    continue;
                }
                cost[i * n_det + j] = if deep {
                    let app = t
                        .state
                        .descriptor_gallery
                        .iter()
                        .map(|g| cosine_distance(g, &descriptors[j]))
                        .fold(1.0, f64::min);
                    lambda * (1.0 - o) + (1.0 - lambda) * app
                } else {
                    1.0 - o
                };
            }
        }
        let matches: Vec<(usize, usize)> = hungarian_min_cost(&cost, n_trk, n_det)
            .into_iter()
            .filter(|&(i, j)| cost[i * n_det + j] < FORBIDDEN)
            .collect();

        let mut out = Vec::new();
        let mut det_matched = vec![false; n_det];
        for &(i, j) in &matches {
            det_matched[j] = true;
            let det = &detections[j];
            let t = &mut self.tracks[i];
            t.state = kalman_update(&t.state, &det.bbox, &noise)?;
            if deep {
                t.state.push_descriptor(descriptors[j].clone());
            }
            let row = TrackedBox {
                frame,
                track_id: t.state.track_id,
                bbox: det.bbox,
            };
            if !t.confirmed && (t.state.hits >= self.config.min_hits || frames_seen <= self.config.min_hits) {
                t.confirmed = true;
                out.append(&mut t.pending);
            }
            if t.confirmed {
                out.push(row);
            } else {
                t.pending.push(row);
            }
        }

        let max_age = self.config.max_age;
        self.tracks.retain(|t| t.state.time_since_update <= max_age);

        for (j, det) in detections.iter().enumerate() {
            if det_matched[j] {
                continue;
            }
            let id = self.next_id;
            self.next_id += 1;
            let mut state = TrackState::new(id, &det.bbox, &noise);
            if deep {
                state.push_descriptor(descriptors[j].clone());
            }
            self.tracks.push(Track {
                state,
                confirmed: false,
                pending: vec![TrackedBox {
                    frame,
                    track_id: id,
                    bbox: det.bbox,
                }],
            });
        }

        out.sort_by_key(|r| (r.frame, r.track_id));
        Ok(out)
    }
}

/// Runs a tracker over a whole detection stream.
///
/// Every frame from 0 through `last_frame` (default: last detection frame) is
/// stepped, including frames without detections. Output is sorted by
/// `(frame, track_id)`.
pub fn run_tracker(
    config: TrackerConfig,
    detections: &[Detection],
    last_frame: Option<u32>,
    frames: &dyn FrameSource,
) -> Result<Vec<TrackedBox>, TrackerError> {
    let mut tracker = Tracker::new(config)?;
    let last = last_frame.or_else(|| detections.iter().map(|d| d.frame).max());
    let Some(last) = last else { return Ok(Vec::new()) };
    let mut by_frame: Vec<Vec<Detection>> = vec![Vec::new(); last as usize + 1];
    for d in detections.iter().filter(|d| d.frame <= last) {
        by_frame[d.frame as usize].push(*d);
    }
    let deep = config.mode == TrackerMode::DeepsortLite;
    let mut out = Vec::new();
    for (f, dets) in by_frame.iter().enumerate() {
        let crops: Vec<RgbImage> = if deep {
            dets.iter()
                .map(|d| frames.crop(f as u32, &d.bbox, APPEARANCE_CROP))
                .collect()
        } else {
            Vec::new()
        };
        out.extend(tracker.track_step(f as u32, dets, &crops)?);
    }
    out.sort_by_key(|r| (r.frame, r.track_id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BlankFrames;

    fn det(frame: u32, x: f64, y: f64) -> Detection {
        Detection::new(frame, BBox::new(x, y, 20.0, 40.0).unwrap(), 0.9, 0).unwrap()
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox::new(1.0, 0.0, 2.0, 2.0).unwrap();
        let far = BBox::new(10.0, 10.0, 2.0, 2.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &far), 0.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn first_detection_is_tentative() {
        let mut t = Tracker::new(TrackerConfig::sort()).unwrap();
        let out = t.track_step(0, &[det(0, 0.0, 0.0)], &[]).unwrap();
        assert!(out.is_empty());
        assert_eq!(t.states().map(|s| s.track_id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn grace_period_backfills_birth_frame() {
        let mut t = Tracker::new(TrackerConfig::sort()).unwrap();
        t.track_step(0, &[det(0, 0.0, 0.0)], &[]).unwrap();
        let out = t.track_step(1, &[det(1, 1.0, 0.0)], &[]).unwrap();
        assert_eq!(out.iter().map(|r| (r.frame, r.track_id)).collect::<Vec<_>>(), vec![(0, 1), (1, 1)]);
    }

    #[test]
    fn late_track_confirms_after_min_hits() {
        let mut t = Tracker::new(TrackerConfig::sort()).unwrap();
        for f in 0..5 {
            t.track_step(f, &[det(f, 0.0, 0.0)], &[]).unwrap();
        }
        // second object appears at frame 5, outside the grace period
        let mut emitted = Vec::new();
        for f in 5..9 {
            let out = t.track_step(f, &[det(f, 0.0, 0.0), det(f, 200.0, 0.0)], &[]).unwrap();
            emitted.push(out.iter().filter(|r| r.track_id == 2).map(|r| r.frame).collect::<Vec<_>>());
        }
        assert_eq!(emitted, vec![vec![], vec![], vec![5, 6, 7], vec![8]]);
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut t = Tracker::new(TrackerConfig::sort()).unwrap();
        t.track_step(3, &[], &[]).unwrap();
        assert_eq!(
            t.track_step(3, &[], &[]).unwrap_err(),
            TrackerError::OutOfOrderFrame { last: 3, got: 3 }
        );
        assert!(matches!(
            t.track_step(4, &[det(5, 0.0, 0.0)], &[]),
            Err(TrackerError::MixedFrames { .. })
        ));
    }

    #[test]
    fn deepsort_requires_crops() {
        let mut t = Tracker::new(TrackerConfig::deepsort_lite()).unwrap();
        assert!(matches!(
            t.track_step(0, &[det(0, 0.0, 0.0)], &[]),
            Err(TrackerError::CropCountMismatch { .. })
        ));
    }

    #[test]
    fn sort_drops_track_after_gap() {
        let mut dets = Vec::new();
        for f in 0..20u32 {
            if !(8..11).contains(&f) {
                dets.push(det(f, f as f64, 0.0));
            }
        }
        let out = run_tracker(TrackerConfig::sort(), &dets, None, &BlankFrames).unwrap();
        let ids: std::collections::BTreeSet<u32> = out.iter().map(|r| r.track_id).collect();
        assert_eq!(ids.len(), 2);
        let out = run_tracker(TrackerConfig::deepsort_lite(), &dets, None, &BlankFrames).unwrap();
        let ids: std::collections::BTreeSet<u32> = out.iter().map(|r| r.track_id).collect();
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("sort".parse::<TrackerMode>().unwrap(), TrackerMode::Sort);
        assert_eq!("deepsort".parse::<TrackerMode>().unwrap(), TrackerMode::DeepsortLite);
        assert!("kalman".parse::<TrackerMode>().is_err());
    }
}
