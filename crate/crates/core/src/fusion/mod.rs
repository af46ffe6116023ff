//! End-to-end pipeline: detections to tracks, tracks to per-frame windows in
//! one of four fusion modes, windows to crossing predictions, and the
//! evaluation harness that compares modes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifiers::densenet::{densenet_train, DenseNetConfig};
use crate::classifiers::rnn::{track_chunks, Sequence};
use crate::classifiers::window::{flat_features, track_windows, TrackHistory};
use crate::classifiers::{
    train_bilstm, train_random_forest, ClassifierError, ClassifierKind, IntentModel, Prediction, TrainConfig,
};
use crate::ingest::{FrameSource, GtBox, KeypointRecord};
use crate::metrics::{
    aggregate_m_metrics, average_precision, mota, pr_curve, prf_accuracy, skeleton_coverage, MetricsError,
    MetricsReport, PedestrianPredictions, ANTICIPATION_HORIZON, COVERAGE_SEQUENCE_LEN, MOTA_IOU,
};
use crate::skeleton::{render_early_fusion, skeleton_features};
use crate::tracker::{hungarian_min_cost, iou, run_tracker, TrackedBox, TrackerConfig, TrackerError, FORBIDDEN};
use crate::types::{Detection, IntentLabel, RgbImage, SequenceWindow, Skeleton17, WindowFrame, FEATURE_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Baseline,
    Early,
    Late,
    Combined,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Baseline, FusionMode::Early, FusionMode::Late, FusionMode::Combined];

    /// Skeleton drawn into the crop.
    pub fn overlays(self) -> bool {
        matches!(self, FusionMode::Early | FusionMode::Combined)
    }

    /// Per-frame feature block fed to the classifier head.
    pub fn attaches_features(self) -> bool {
        matches!(self, FusionMode::Late | FusionMode::Combined)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Baseline => "baseline",
            FusionMode::Early => "early",
            FusionMode::Late => "late",
            FusionMode::Combined => "combined",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown fusion mode {s:?} (expected baseline, early, late or combined)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tracker: TrackerConfig,
    pub fusion: FusionMode,
    pub classifier: ClassifierKind,
    pub window: usize,
    /// Side of the square pedestrian crops fed to the dense network.
    pub crop_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tracker: TrackerConfig::sort(),
            fusion: FusionMode::Early,
            classifier: ClassifierKind::Densenet,
            window: 16,
            crop_size: 64,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: String| Err(FusionError::InvalidConfig(m));
        if self.fusion.attaches_features() && self.classifier != ClassifierKind::Densenet {
            return bad(format!(
                "{} fusion needs the densenet classifier (its head takes the feature block)",
                self.fusion.as_str()
            ));
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        if self.classifier == ClassifierKind::Densenet && self.crop_size == 0 {
            return bad("crop_size must be positive".into());
        }
        self.tracker.validate().map_err(FusionError::Track)
    }

    /// Network shape implied by this pipeline, starting from `base`.
    pub fn densenet_config(&self, base: &DenseNetConfig) -> DenseNetConfig {
        DenseNetConfig {
            clip_len: self.window,
            crop_size: self.crop_size,
            late_features: if self.fusion.attaches_features() { self.window * FEATURE_LEN } else { 0 },
            ..base.clone()
        }
    }

    fn uses_crops(&self) -> bool {
        self.classifier == ClassifierKind::Densenet
    }

    fn uses_features(&self) -> bool {
        self.classifier != ClassifierKind::Densenet || self.fusion.attaches_features()
    }
}

/// Pipeline failure tagged with the stage it came from.
#[derive(Debug, Error)]
pub enum FusionError {
    #[error("config: {0}")]
    InvalidConfig(String),
    #[error("track: {0}")]
    Track(#[source] TrackerError),
    #[error("windows: {0}")]
    Windows(#[source] ClassifierError),
    #[error("train: {0}")]
    Train(#[source] ClassifierError),
    #[error("predict: {0}")]
    Predict(#[source] ClassifierError),
    #[error("evaluate: {0}")]
    Evaluate(#[source] MetricsError),
}

/// Inputs of one video.
#[derive(Clone, Copy)]
pub struct SceneInputs<'a> {
    pub detections: &'a [Detection],
    pub keypoints: &'a [KeypointRecord],
    pub frames: &'a dyn FrameSource,
    /// Last frame to step the tracker through.
    pub last_frame: Option<u32>,
}

/// Ground truth of one video.
#[derive(Debug, Clone, Copy)]
pub struct SceneTruth<'a> {
    pub boxes: &'a [GtBox],
    pub labels: &'a [IntentLabel],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub detections: usize,
    pub tracked_boxes: usize,
    pub tracks: usize,
    pub windows: usize,
    pub skeletons_found: usize,
    /// Track-frames without a usable skeleton; their crops pass through
    /// un-overlaid and their feature rows are zero.
    pub skeleton_misses: usize,
    pub predictions: usize,
    /// Skeleton found per frame of each track, in frame order.
    #[serde(skip)]
    pub found: BTreeMap<u32, Vec<bool>>,
}

impl Diagnostics {
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("detections", self.detections),
            ("tracked_boxes", self.tracked_boxes),
            ("tracks", self.tracks),
            ("windows", self.windows),
            ("skeletons_found", self.skeletons_found),
            ("skeleton_misses", self.skeleton_misses),
            ("predictions", self.predictions),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

/// Number of present keypoints of `s` inside `b`.
fn keypoints_inside(s: &Skeleton17, b: &crate::types::BBox) -> usize {
    s.points.iter().filter(|k| k.visibility.is_present() && b.contains(k.x, k.y)).count()
}

/// Skeleton record for each box of one frame. Each record goes to at most
/// one box, preferring the pairs with the most keypoints inside the box.
pub fn associate_skeletons<'a>(boxes: &[TrackedBox], records: &[&'a KeypointRecord]) -> Vec<Option<&'a KeypointRecord>> {
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        for (j, r) in records.iter().enumerate() {
            let n = keypoints_inside(&r.skeleton, &b.bbox);
            if n > 0 {
                pairs.push((n, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; boxes.len()];
    let mut used = vec![false; records.len()];
    for (_, i, j) in pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(records[j]);
            used[j] = true;
        }
    }
    out
}

/// Skeleton found (at least four of the nine source points) per tracked box,
/// by track id in frame order.
pub fn skeleton_found(tracks: &[TrackedBox], keypoints: &[KeypointRecord]) -> BTreeMap<u32, Vec<bool>> {
    let mut kp_by_frame: HashMap<u32, Vec<&KeypointRecord>> = HashMap::new();
    for r in keypoints {
        kp_by_frame.entry(r.frame).or_default().push(r);
    }
    let mut by_frame: BTreeMap<u32, Vec<TrackedBox>> = BTreeMap::new();
    for t in tracks {
        by_frame.entry(t.frame).or_default().push(*t);
    }
    let mut out: BTreeMap<u32, Vec<bool>> = BTreeMap::new();
    for (f, boxes) in &by_frame {
        let recs = kp_by_frame.get(f).map(Vec::as_slice).unwrap_or(&[]);
        for (b, rec) in boxes.iter().zip(associate_skeletons(boxes, recs)) {
            let ok = rec.is_some_and(|r| skeleton_features(&r.skeleton, &b.bbox).is_ok());
            out.entry(b.track_id).or_default().push(ok);
        }
    }
    out
}

/// One window per tracked box, grouped by track id then frame.
pub fn build_windows(
    tracks: &[TrackedBox],
    keypoints: &[KeypointRecord],
    frames: &dyn FrameSource,
    cfg: &PipelineConfig,
) -> Result<(Vec<SequenceWindow>, Diagnostics), FusionError> {
    cfg.validate()?;
    let mut kp_by_frame: HashMap<u32, Vec<&KeypointRecord>> = HashMap::new();
    for r in keypoints {
        kp_by_frame.entry(r.frame).or_default().push(r);
    }
    let mut by_frame: BTreeMap<u32, Vec<TrackedBox>> = BTreeMap::new();
    for t in tracks {
        by_frame.entry(t.frame).or_default().push(*t);
    }
    let blank = Arc::new(RgbImage::new(1, 1));
    let mut diag = Diagnostics {
        tracked_boxes: tracks.len(),
        ..Diagnostics::default()
    };
    let mut histories: BTreeMap<u32, Vec<WindowFrame>> = BTreeMap::new();
    for (&f, boxes) in &by_frame {
        let recs = kp_by_frame.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let matched = associate_skeletons(boxes, recs);
        for (b, rec) in boxes.iter().zip(matched) {
            let fitted = rec.and_then(|r| skeleton_features(&r.skeleton, &b.bbox).ok());
            diag.found.entry(b.track_id).or_default().push(fitted.is_some());
            match fitted {
                Some(_) => diag.skeletons_found += 1,
                None => diag.skeleton_misses += 1,
            }
            let crop = if cfg.uses_crops() {
                let raw = frames.crop(f, &b.bbox, cfg.crop_size);
                match (&fitted, cfg.fusion.overlays()) {
                    (Some((s9, _)), true) => {
                        Arc::new(render_early_fusion(&raw, s9, &b.bbox).map_err(|e| {
                            FusionError::Windows(ClassifierError::ShapeMismatch(e.to_string()))
                        })?)
                    }
                    _ => Arc::new(raw),
                }
            } else {
                blank.clone()
            };
            let (skeleton, features) = match fitted {
                Some((s9, fv)) => (Some(s9), cfg.uses_features().then(|| Arc::new(fv))),
                None => (None, None),
            };
            histories.entry(b.track_id).or_default().push(WindowFrame {
                frame: f as i64,
                source_frame: f,
                crop,
                skeleton,
                features,
            });
        }
    }
    diag.tracks = histories.len();
    let mut windows = Vec::with_capacity(tracks.len());
    for (track_id, frames) in histories {
        let h = TrackHistory { track_id, frames };
        windows.extend(track_windows(&h, cfg.window).map_err(FusionError::Windows)?);
    }
    diag.windows = windows.len();
    Ok((windows, diag))
}

/// Ground-truth boxes as a perfect tracker output (track id = pedestrian
/// id), sorted by `(frame, track_id)`.
pub fn gt_tracks(gt: &[GtBox]) -> Vec<TrackedBox> {
    let mut t: Vec<TrackedBox> = gt
        .iter()
        .map(|g| TrackedBox {
            frame: g.frame,
            track_id: g.pedestrian_id,
            bbox: g.bbox,
        })
        .collect();
    t.sort_by_key(|r| (r.frame, r.track_id));
    t
}

/// Target of a window ending at `frame`: the pedestrian crosses and its
/// onset is at most `horizon` frames away (or already past).
pub fn window_label(label: Option<&IntentLabel>, frame: u32, horizon: u32) -> bool {
    label
        .and_then(IntentLabel::onset_frame)
        .is_some_and(|o| frame + horizon >= o)
}

/// Labelled training windows of a scene, built on its ground-truth tracks.
pub fn training_windows(
    inputs: &SceneInputs,
    truth: &SceneTruth,
    cfg: &PipelineConfig,
) -> Result<(Vec<SequenceWindow>, Vec<bool>), FusionError> {
    let (windows, _) = build_windows(&gt_tracks(truth.boxes), inputs.keypoints, inputs.frames, cfg)?;
    let labels: HashMap<u32, &IntentLabel> = truth.labels.iter().map(|l| (l.pedestrian_id, l)).collect();
    let y = windows
        .iter()
        .map(|w| window_label(labels.get(&w.track_id).copied(), w.end_frame(), ANTICIPATION_HORIZON))
        .collect();
    Ok((windows, y))
}

/// Trains the configured classifier on the ground-truth tracks of `scenes`.
pub fn train_model(
    scenes: &[(SceneInputs, SceneTruth)],
    cfg: &PipelineConfig,
    train: &TrainConfig,
) -> Result<IntentModel, FusionError> {
    cfg.validate()?;
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    for (inputs, truth) in scenes {
        let (w, y) = training_windows(inputs, truth, cfg)?;
        windows.extend(w);
        labels.extend(y);
    }
    if windows.is_empty() {
        return Err(FusionError::Train(ClassifierError::EmptyDataset));
    }
    match cfg.classifier {
        ClassifierKind::Densenet => {
            let tc = TrainConfig {
                densenet: cfg.densenet_config(&train.densenet),
                ..train.clone()
            };
            let (m, _) = densenet_train(&windows, &labels, &tc).map_err(FusionError::Train)?;
            Ok(IntentModel::DenseNet(m))
        }
        ClassifierKind::Rf => {
            let x: Vec<Vec<f64>> = windows.iter().map(flat_features).collect();
            train_random_forest(&x, &labels, &train.forest, train.seed)
                .map(IntentModel::Forest)
                .map_err(FusionError::Train)
        }
        ClassifierKind::Rnn => {
            let mut seqs: Vec<Sequence> = Vec::new();
            let mut ys = Vec::new();
            for (inputs, truth) in scenes {
                let onsets: HashMap<u32, Option<u32>> =
                    truth.labels.iter().map(|l| (l.pedestrian_id, l.onset_frame())).collect();
                let (w, _) = build_windows(&gt_tracks(truth.boxes), inputs.keypoints, inputs.frames, &PipelineConfig {
                    window: 1,
                    ..*cfg
                })?;
                let mut per_track: BTreeMap<u32, Vec<(u32, Option<Vec<f64>>)>> = BTreeMap::new();
                for win in &w {
                    let f = &win.frames()[0];
                    per_track
                        .entry(win.track_id)
                        .or_default()
                        .push((f.source_frame, f.features.as_ref().map(|v| v.masked_values().collect())));
                }
                for (id, rows) in per_track {
                    for (s, y) in track_chunks(&rows, onsets.get(&id).copied().flatten(), &train.rnn) {
                        seqs.push(s);
                        ys.push(y);
                    }
                }
            }
            train_bilstm(&seqs, &ys, train).map(IntentModel::Rnn).map_err(FusionError::Train)
        }
    }
}

fn check_model(model: &IntentModel, cfg: &PipelineConfig) -> Result<(), FusionError> {
    if model.kind() != cfg.classifier {
        return Err(FusionError::InvalidConfig(format!(
            "model is {} but the pipeline expects {}",
            model.kind().as_str(),
            cfg.classifier.as_str()
        )));
    }
    if model.window_len() != cfg.window {
        return Err(FusionError::InvalidConfig(format!(
            "model window is {} frames but the pipeline uses {}",
            model.window_len(),
            cfg.window
        )));
    }
    if let IntentModel::DenseNet(m) = model {
        if !m.is_trained() {
            return Err(FusionError::Predict(ClassifierError::UntrainedModel));
        }
        if (m.config().late_features > 0) != cfg.fusion.attaches_features() {
            return Err(FusionError::InvalidConfig(format!(
                "model late-feature port does not match {} fusion",
                cfg.fusion.as_str()
            )));
        }
    }
    Ok(())
}

/// Predictions for already-tracked boxes, sorted by `(frame, track_id)`.
pub fn predict_tracks(
    tracks: &[TrackedBox],
    inputs: &SceneInputs,
    model: &IntentModel,
    cfg: &PipelineConfig,
) -> Result<(Vec<Prediction>, Diagnostics), FusionError> {
    check_model(model, cfg)?;
    let (windows, mut diag) = build_windows(tracks, inputs.keypoints, inputs.frames, cfg)?;
    let mut preds = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(64) {
        let probs = model.predict_windows(chunk).map_err(FusionError::Predict)?;
        preds.extend(chunk.iter().zip(probs).map(|(w, p)| Prediction::new(w.end_frame(), w.track_id, p)));
    }
    preds.sort_by_key(|p| (p.frame, p.track_id));
    diag.detections = inputs.detections.len();
    diag.predictions = preds.len();
    Ok((preds, diag))
}

/// Tracker output of a scene.
pub fn track_scene(inputs: &SceneInputs, cfg: &PipelineConfig) -> Result<Vec<TrackedBox>, FusionError> {
    run_tracker(cfg.tracker, inputs.detections, inputs.last_frame, inputs.frames).map_err(FusionError::Track)
}

/// Detections to per-frame predictions.
pub fn run_pipeline(
    inputs: &SceneInputs,
    model: &IntentModel,
    cfg: &PipelineConfig,
) -> Result<(Vec<Prediction>, Vec<TrackedBox>, Diagnostics), FusionError> {
    cfg.validate()?;
    check_model(model, cfg)?;
    let tracks = track_scene(inputs, cfg)?;
    let (preds, diag) = predict_tracks(&tracks, inputs, model, cfg)?;
    Ok((preds, tracks, diag))
}

/// Pedestrian each track follows: the one it is matched to (IoU >= 0.5,
/// Hungarian per frame) most often. Ties go to the lower pedestrian id.
pub fn assign_tracks(tracks: &[TrackedBox], gt: &[GtBox]) -> BTreeMap<u32, u32> {
    let mut frames: BTreeMap<u32, (Vec<&GtBox>, Vec<&TrackedBox>)> = BTreeMap::new();
    for g in gt {
        frames.entry(g.frame).or_default().0.push(g);
    }
    for t in tracks {
        frames.entry(t.frame).or_default().1.push(t);
    }
    let mut votes: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for (gs, ts) in frames.values() {
        if gs.is_empty() || ts.is_empty() {
            continue;
        }
        let cost: Vec<f64> = gs
            .iter()
            .flat_map(|g| {
                ts.iter().map(move |t| {
                    let o = iou(&g.bbox, &t.bbox);
                    if o >= MOTA_IOU {
                        1.0 - o
                    } else {
                        FORBIDDEN
                    }
                })
            })
            .collect();
        for (i, j) in hungarian_min_cost(&cost, gs.len(), ts.len()) {
            if cost[i * ts.len() + j] < FORBIDDEN {
                *votes.entry((ts[j].track_id, gs[i].pedestrian_id)).or_default() += 1;
            }
        }
    }
    let mut best: BTreeMap<u32, (usize, u32)> = BTreeMap::new();
    for (&(t, p), &n) in &votes {
        let e = best.entry(t).or_insert((n, p));
        if n > e.0 {
            *e = (n, p);
        }
    }
    best.into_iter().map(|(t, (_, p))| (t, p)).collect()
}

/// Non-overlapping `COVERAGE_SEQUENCE_LEN`-frame sequences of per-frame
/// skeleton flags, cut from each track in order; remainders are dropped.
pub fn coverage_sequences(found: &BTreeMap<u32, Vec<bool>>) -> Vec<Vec<bool>> {
    found
        .values()
        .flat_map(|v| v.chunks_exact(COVERAGE_SEQUENCE_LEN).map(<[bool]>::to_vec))
        .collect()
}

/// Scores predictions against ground truth.
///
/// Tracks are tied to pedestrians with [`assign_tracks`]; without ground
/// truth boxes, track ids are taken to be pedestrian ids. Predictions of
/// tracks that never match a pedestrian are left out of the classification
/// figures. When two tracks of one pedestrian predict the
/// same frame, the lower track id is used for M1/M2/M3.
pub fn evaluate_run(
    label: &str,
    preds: &[Prediction],
    tracks: &[TrackedBox],
    diag: Option<&Diagnostics>,
    truth: &SceneTruth,
    include_non_crossing: bool,
) -> Result<MetricsReport, FusionError> {
    let owner = if truth.boxes.is_empty() {
        preds.iter().map(|p| (p.track_id, p.track_id)).collect()
    } else {
        assign_tracks(tracks, truth.boxes)
    };
    let labels: HashMap<u32, &IntentLabel> = truth.labels.iter().map(|l| (l.pedestrian_id, l)).collect();
    let mut scores = Vec::new();
    let mut gts = Vec::new();
    let mut decisions = Vec::new();
    let mut per_ped: BTreeMap<u32, BTreeMap<u32, bool>> = BTreeMap::new();
    let mut ordered: Vec<&Prediction> = preds.iter().collect();
    ordered.sort_by_key(|p| (p.frame, p.track_id));
    for p in ordered {
        let Some(&ped) = owner.get(&p.track_id) else { continue };
        scores.push(p.p_cross);
        gts.push(window_label(labels.get(&ped).copied(), p.frame, ANTICIPATION_HORIZON));
        decisions.push(p.label.is_crossing());
        per_ped.entry(ped).or_default().entry(p.frame).or_insert(p.label.is_crossing());
    }
    let mut report = MetricsReport {
        label: label.to_string(),
        frames: scores.len(),
        positives: gts.iter().filter(|&&g| g).count(),
        ..MetricsReport::default()
    };
    if !scores.is_empty() {
        report.prf = Some(prf_accuracy(&decisions, &gts).map_err(FusionError::Evaluate)?);
    }
    if report.positives > 0 {
        report.ap = Some(average_precision(&scores, &gts).map_err(FusionError::Evaluate)?);
        report.pr_curve = pr_curve(&scores, &gts).map_err(FusionError::Evaluate)?;
    }
    if !truth.boxes.is_empty() {
        report.mota = Some(mota(tracks, truth.boxes, MOTA_IOU).map_err(FusionError::Evaluate)?);
    }
    if let Some(d) = diag {
        let seqs = coverage_sequences(&d.found);
        if !seqs.is_empty() {
            report.coverage = Some(skeleton_coverage(&seqs, COVERAGE_SEQUENCE_LEN).map_err(FusionError::Evaluate)?);
        }
    }
    let peds: Vec<PedestrianPredictions> = truth
        .labels
        .iter()
        .map(|l| PedestrianPredictions {
            pedestrian_id: l.pedestrian_id,
            onset: l.onset_frame(),
            preds: per_ped
                .get(&l.pedestrian_id)
                .map(|m| m.iter().map(|(&f, &c)| (f, c)).collect())
                .unwrap_or_default(),
        })
        .collect();
    match aggregate_m_metrics(&peds, ANTICIPATION_HORIZON, include_non_crossing) {
        Ok(m) => report.m = Some(m),
        Err(MetricsError::EmptyTestSet) => {}
        Err(e) => return Err(FusionError::Evaluate(e)),
    }
    Ok(report)
}

/// Majority label of a training set; ties go to not crossing.
pub fn majority_label(labels: &[bool]) -> bool {
    2 * labels.iter().filter(|&&y| y).count() > labels.len()
}

/// The constant predictor `label` on the same track-frames as `preds`.
pub fn constant_predictions(preds: &[Prediction], label: bool) -> Vec<Prediction> {
    preds
        .iter()
        .map(|p| Prediction::new(p.frame, p.track_id, if label { 1.0 } else { 0.0 }))
        .collect()
}

/// Outcome of one fusion mode over the test scenes.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mode: FusionMode,
    pub report: MetricsReport,
    pub diagnostics: Diagnostics,
    pub predictions: Vec<Vec<Prediction>>,
}

/// Concatenation of per-scene inputs for pooled scoring. Frame and id
/// spaces are kept apart by offsetting each scene.
struct Pooled {
    preds: Vec<Prediction>,
    tracks: Vec<TrackedBox>,
    gt: Vec<GtBox>,
    labels: Vec<IntentLabel>,
    diag: Diagnostics,
}

const SCENE_ID_STRIDE: u32 = 100_000;
const SCENE_FRAME_STRIDE: u32 = 1_000_000;

impl Pooled {
    fn new() -> Self {
        Pooled {
            preds: Vec::new(),
            tracks: Vec::new(),
            gt: Vec::new(),
            labels: Vec::new(),
            diag: Diagnostics::default(),
        }
    }

    fn add(&mut self, k: u32, preds: &[Prediction], tracks: &[TrackedBox], truth: &SceneTruth, diag: &Diagnostics) {
        let (id, fr) = (k * SCENE_ID_STRIDE, k * SCENE_FRAME_STRIDE);
        self.preds
            .extend(preds.iter().map(|p| Prediction::new(p.frame + fr, p.track_id + id, p.p_cross)));
        self.tracks.extend(tracks.iter().map(|t| TrackedBox {
            frame: t.frame + fr,
            track_id: t.track_id + id,
            bbox: t.bbox,
        }));
        self.gt.extend(truth.boxes.iter().map(|g| GtBox {
            frame: g.frame + fr,
            pedestrian_id: g.pedestrian_id + id,
            bbox: g.bbox,
        }));
        self.labels.extend(truth.labels.iter().map(|l| match l.onset_frame() {
            Some(o) => IntentLabel::crossing(l.pedestrian_id + id, o + fr),
            None => IntentLabel::not_crossing(l.pedestrian_id + id),
        }));
        let d = &mut self.diag;
        d.detections += diag.detections;
        d.tracked_boxes += diag.tracked_boxes;
        d.tracks += diag.tracks;
        d.windows += diag.windows;
        d.skeletons_found += diag.skeletons_found;
        d.skeleton_misses += diag.skeleton_misses;
        d.predictions += diag.predictions;
        for (t, v) in &diag.found {
            d.found.insert(t + id, v.clone());
        }
    }

    fn evaluate(&self, label: &str, include_non_crossing: bool) -> Result<MetricsReport, FusionError> {
        let truth = SceneTruth {
            boxes: &self.gt,
            labels: &self.labels,
        };
        evaluate_run(label, &self.preds, &self.tracks, Some(&self.diag), &truth, include_non_crossing)
    }
}

/// Scores per-scene predictions pooled over all test scenes.
pub fn evaluate_scenes(
    label: &str,
    runs: &[(Vec<Prediction>, Vec<TrackedBox>, Diagnostics)],
    truths: &[SceneTruth],
    include_non_crossing: bool,
) -> Result<MetricsReport, FusionError> {
    let mut pool = Pooled::new();
    for (k, ((p, t, d), truth)) in runs.iter().zip(truths).enumerate() {
        pool.add(k as u32, p, t, truth, d);
    }
    pool.evaluate(label, include_non_crossing)
}

/// Trains and evaluates one model per fusion mode. The tracker runs once
/// per test scene and its output is shared by every mode.
pub fn compare_modes(
    train: &[(SceneInputs, SceneTruth)],
    test: &[(SceneInputs, SceneTruth)],
    modes: &[FusionMode],
    base: &PipelineConfig,
    train_cfg: &TrainConfig,
    include_non_crossing: bool,
) -> Result<Vec<ModeResult>, FusionError> {
    let tracks: Vec<Vec<TrackedBox>> = test.iter().map(|(i, _)| track_scene(i, base)).collect::<Result<_, _>>()?;
    let truths: Vec<SceneTruth> = test.iter().map(|(_, t)| *t).collect();
    let mut out = Vec::new();
    for &mode in modes {
        let cfg = PipelineConfig { fusion: mode, ..*base };
        let model = train_model(train, &cfg, train_cfg)?;
        let mut runs = Vec::new();
        for ((inputs, _), t) in test.iter().zip(&tracks) {
            let (p, d) = predict_tracks(t, inputs, &model, &cfg)?;
            runs.push((p, t.clone(), d));
        }
        let report = evaluate_scenes(mode.as_str(), &runs, &truths, include_non_crossing)?;
        let mut diagnostics = Diagnostics::default();
        for (_, _, d) in &runs {
            diagnostics.detections += d.detections;
            diagnostics.tracked_boxes += d.tracked_boxes;
            diagnostics.tracks += d.tracks;
            diagnostics.windows += d.windows;
            diagnostics.skeletons_found += d.skeletons_found;
            diagnostics.skeleton_misses += d.skeleton_misses;
            diagnostics.predictions += d.predictions;
        }
        out.push(ModeResult {
            mode,
            report,
            diagnostics,
            predictions: runs.into_iter().map(|r| r.0).collect(),
        });
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.4}"))
}

/// `mode,ap,precision,recall,accuracy,mota` rows, one per report.
pub fn comparison_table(reports: &[MetricsReport]) -> String {
    let mut s = String::from("mode,ap,precision,recall,accuracy,mota\n");
    for r in reports {
        let p = r.prf.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.label,
            cell(r.ap),
            cell(p.map(|p| p.precision)),
            cell(p.map(|p| p.recall)),
            cell(p.map(|p| p.accuracy)),
            cell(r.mota.map(|m| m.mota)),
        );
    }
    s
}

/// `mode,m1,m2,m3,pedestrians` rows (percentages).
pub fn m_table(reports: &[MetricsReport]) -> String {
    let mut s = String::from("mode,m1,m2,m3,pedestrians\n");
    for r in reports {
        let m = r.m.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.label,
            cell(m.map(|m| m.m1)),
            cell(m.map(|m| m.m2)),
            cell(m.map(|m| m.m3)),
            m.map_or(0, |m| m.pedestrians),
        );
    }
    s
}

#[cfg(test)]
mod tests;
