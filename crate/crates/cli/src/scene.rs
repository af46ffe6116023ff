//! Scene directories: detections.csv, keypoints.csv, gt.csv, labels.csv and,
//! for generated scenes, synth.json (which lets crops be re-rendered).

use std::path::{Path, PathBuf};

use fussi_core::fusion::{SceneInputs, SceneTruth};
use fussi_core::ingest::{
    parse_detections, parse_gt, parse_keypoints, parse_labels, synth_scene, BlankFrames, FrameSource, GtBox,
    KeypointRecord, SynthConfig, SynthScene,
};
use fussi_core::{Detection, IntentLabel};
use serde::{Deserialize, Serialize};

use crate::error::{CmdResult, ResultExt};
use crate::manifest::RunManifest;

pub const DETECTIONS: &str = "detections.csv";
pub const KEYPOINTS: &str = "keypoints.csv";
pub const GT: &str = "gt.csv";
pub const LABELS: &str = "labels.csv";
pub const SYNTH: &str = "synth.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthFile {
    pub manifest: String,
    pub synth: SynthConfig,
}

pub struct Scene {
    pub dir: PathBuf,
    pub detections: Vec<Detection>,
    pub keypoints: Vec<KeypointRecord>,
    pub gt: Vec<GtBox>,
    pub labels: Vec<IntentLabel>,
    pub synth: Option<SynthScene>,
    pub last_frame: Option<u32>,
}

impl Scene {
    /// Loads a scene directory. Only detections.csv is required.
    pub fn load(dir: &Path) -> CmdResult<Scene> {
        let file = |name: &str| dir.join(name);
        let optional = |name: &str| file(name).is_file();
        if !optional(DETECTIONS) {
            return Err(crate::error::Failure::validation(anyhow::anyhow!(
                "{} has no {DETECTIONS}",
                dir.display()
            )));
        }
        let detections = parse_detections(&file(DETECTIONS)).invalid("ingest")?;
        let keypoints = if optional(KEYPOINTS) {
            parse_keypoints(&file(KEYPOINTS)).invalid("ingest")?
        } else {
            Vec::new()
        };
        let gt = if optional(GT) { parse_gt(&file(GT)).invalid("ingest")? } else { Vec::new() };
        let labels = if optional(LABELS) {
            parse_labels(&file(LABELS)).invalid("ingest")?
        } else {
            Vec::new()
        };
        let synth = if optional(SYNTH) {
            let text = std::fs::read_to_string(file(SYNTH)).invalid("ingest")?;
            let f: SynthFile = serde_json::from_str(&text).invalid("ingest")?;
            Some(synth_scene(&f.synth).invalid("ingest")?)
        } else {
            None
        };
        let last_frame = match &synth {
            Some(s) => s.config.frame_count.checked_sub(1),
            None => detections.iter().map(|d| d.frame).chain(gt.iter().map(|g| g.frame)).max(),
        };
        Ok(Scene {
            dir: dir.to_path_buf(),
            detections,
            keypoints,
            gt,
            labels,
            synth,
            last_frame,
        })
    }

    pub fn frames(&self) -> &dyn FrameSource {
        match &self.synth {
            Some(s) => s,
            None => &BlankFrames,
        }
    }

    pub fn inputs(&self) -> SceneInputs<'_> {
        SceneInputs {
            detections: &self.detections,
            keypoints: &self.keypoints,
            frames: self.frames(),
            last_frame: self.last_frame,
        }
    }

    pub fn truth(&self) -> SceneTruth<'_> {
        SceneTruth {
            boxes: &self.gt,
            labels: &self.labels,
        }
    }

    /// Adds digests of the scene files present to `m`.
    pub fn record(&self, m: &mut RunManifest, role: &str) -> CmdResult<()> {
        for name in [DETECTIONS, KEYPOINTS, GT, LABELS, SYNTH] {
            m.input(role, &self.dir.join(name)).runtime("manifest")?;
        }
        Ok(())
    }
}
