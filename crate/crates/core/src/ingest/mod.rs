//! File ingestion and synthetic scene generation.

pub mod formats;
pub mod synth;

use std::path::PathBuf;

use thiserror::Error;

use crate::types::{BBox, RgbImage};

pub use formats::{
    format_detections, format_gt, format_keypoints, format_labels, format_tracks, parse_detections,
    parse_detections_str, parse_gt, parse_gt_str, parse_keypoints, parse_keypoints_str, parse_labels,
    parse_labels_str, parse_tracks, parse_tracks_str, GtBox, KeypointRecord, DETECTION_CONFIDENCE_THRESHOLD,
};
pub use synth::{synth_scene, GtObject, SceneGroundTruth, SynthConfig, SynthScene};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: visibility {value} is not one of 0, 1, 2")]
    BadVisibility { line: usize, value: f64 },
    #[error("line {line}: pedestrian {pedestrian} is not crossing but has an onset frame")]
    InconsistentLabel { line: usize, pedestrian: u32 },
    #[error("invalid synthetic scene config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Supplies pedestrian crops for a frame.
pub trait FrameSource: Sync {
    /// The `bbox` region of `frame`, resampled to `size x size`.
    fn crop(&self, frame: u32, bbox: &BBox, size: usize) -> RgbImage;
}

/// Uniform gray frames, for runs without imagery.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlankFrames;

impl FrameSource for BlankFrames {
    fn crop(&self, _frame: u32, _bbox: &BBox, size: usize) -> RgbImage {
        RgbImage::filled(size, size, [128, 128, 128])
    }
}

/// Directory of raw interleaved RGB8 frames named `{frame:06}.rgb`.
///
/// Missing or short files are treated as blank frames.
#[derive(Debug, Clone)]
pub struct RawFrameDir {
    pub dir: PathBuf,
    pub width: usize,
    pub height: usize,
}

impl RawFrameDir {
    pub fn load(&self, frame: u32) -> Option<RgbImage> {
        let path = self.dir.join(format!("{frame:06}.rgb"));
        let data = std::fs::read(path).ok()?;
        RgbImage::from_raw(self.width, self.height, data).ok()
    }
}

impl FrameSource for RawFrameDir {
    fn crop(&self, frame: u32, bbox: &BBox, size: usize) -> RgbImage {
        match self.load(frame) {
            Some(img) => img.crop_resized(bbox, size),
            None => BlankFrames.crop(frame, bbox, size),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_frames_crop_like_renderer() {
        let scene = synth_scene(&SynthConfig {
            n_pedestrians: 3,
            frame_count: 30,
            crossing_fraction: 0.0,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let frame = scene.render_frame(5);
        std::fs::write(dir.path().join("000005.rgb"), frame.as_raw()).unwrap();
        let src = RawFrameDir {
            dir: dir.path().to_path_buf(),
            width: frame.width(),
            height: frame.height(),
        };
        let b = scene.ground_truth.frames[5][0].bbox;
        let from_file = src.crop(5, &b, 32);
        let direct = scene.render_crop(5, &b, 32);
        let same = from_file.pixels().zip(direct.pixels()).filter(|(a, b)| a == b).count();
        // nearest-neighbour sampling of the full frame vs direct sampling
        assert!(same as f64 > 0.8 * 32.0 * 32.0, "{same}");
        assert_eq!(src.crop(6, &b, 8), BlankFrames.crop(6, &b, 8));
    }
}
