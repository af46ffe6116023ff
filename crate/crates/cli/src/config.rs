//! Top-level TOML config. Every key is optional and mirrors a flag; flags
//! take precedence.

use std::path::{Path, PathBuf};

use anyhow::Context;
use fussi_core::classifiers::{ClassifierKind, TrainConfig};
use fussi_core::fusion::FusionMode;
use fussi_core::ingest::SynthConfig;
use fussi_core::tracker::{TrackerConfig, TrackerMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<TrackerMode>,
    pub fusion: Option<FusionMode>,
    pub classifier: Option<ClassifierKind>,
    pub window: Option<usize>,
    pub crop_size: Option<usize>,
    pub include_non_crossing: Option<bool>,
    pub tracker: TrackerSection,
    pub synth: SynthSection,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub iou_threshold: Option<f64>,
    pub max_age: Option<u32>,
    pub min_hits: Option<u32>,
    pub appearance_weight: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub peds: Option<usize>,
    pub frames: Option<u32>,
    pub crossing_fraction: Option<f64>,
    pub dropout: Option<f64>,
    pub noise: Option<f64>,
    pub keypoint_dropout: Option<f64>,
    pub image_width: Option<u32>,
    pub image_height: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn tracker(&self, mode: Option<TrackerMode>) -> TrackerConfig {
        let mut t = TrackerConfig::for_mode(mode.or(self.mode).unwrap_or(TrackerMode::Sort));
        let s = &self.tracker;
        if let Some(v) = s.iou_threshold {
            t.iou_threshold = v;
        }
        if let Some(v) = s.max_age {
            t.max_age = v;
        }
        if let Some(v) = s.min_hits {
            t.min_hits = v;
        }
        if let Some(v) = s.appearance_weight {
            t.appearance_weight = v;
        }
        t
    }

    pub fn synth(&self) -> SynthConfig {
        let s = &self.synth;
        let d = SynthConfig::default();
        SynthConfig {
            n_pedestrians: s.peds.unwrap_or(d.n_pedestrians),
            frame_count: s.frames.unwrap_or(d.frame_count),
            crossing_fraction: s.crossing_fraction.unwrap_or(d.crossing_fraction),
            detection_dropout: s.dropout.unwrap_or(d.detection_dropout),
            noise_px: s.noise.unwrap_or(d.noise_px),
            keypoint_dropout: s.keypoint_dropout.unwrap_or(d.keypoint_dropout),
            image_width: s.image_width.unwrap_or(d.image_width),
            image_height: s.image_height.unwrap_or(d.image_height),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}
