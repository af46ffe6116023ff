use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fussi_core::classifiers::{
    format_predictions, parse_predictions, ClassifierKind, IntentModel, TrainConfig,
};
use fussi_core::fusion::{
    associate_skeletons, comparison_table, compare_modes, constant_predictions, evaluate_run, evaluate_scenes,
    gt_tracks, m_table, majority_label, run_pipeline, skeleton_found, track_scene, training_windows, Diagnostics,
    FusionMode, PipelineConfig, SceneInputs, SceneTruth,
};
use fussi_core::ingest::{
    format_detections, format_gt, format_keypoints, format_labels, format_tracks, parse_labels, parse_tracks,
    synth_scene, KeypointRecord,
};
use fussi_core::metrics::MetricsReport;
use fussi_core::skeleton::{format_features, skeleton_features, FeatureRow};
use fussi_core::tracker::{run_tracker, TrackedBox, TrackerConfig, TrackerError};
use serde::Serialize;

use crate::args::{EvaluateArgs, FeaturesArgs, ModelArgs, PredictArgs, SynthArgs, TrackArgs, TrainArgs};
use crate::config::FileConfig;
use crate::error::{CmdResult, Failure, ResultExt};
use crate::manifest::{Outputs, RunManifest, Timings};
use crate::scene::{Scene, SynthFile, DETECTIONS, GT, KEYPOINTS, LABELS, SYNTH};

pub const DEFAULT_OUT: &str = "fussi-out";

/// Settings shared by every command.
pub struct Ctx {
    pub file: FileConfig,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub timings: bool,
}

impl Ctx {
    fn seed(&self) -> Option<u64> {
        self.seed.or(self.file.seed)
    }

    fn out(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| self.file.out.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn finish(&self, mut manifest: RunManifest, t: &Timings) -> CmdResult<Outputs> {
        manifest.stages = t.names();
        let out = Outputs::create(&self.out(), &manifest).runtime("output")?;
        if self.timings {
            out.timings(t).runtime("output")?;
        }
        Ok(out)
    }

    fn tracker(&self, mode: Option<fussi_core::tracker::TrackerMode>) -> CmdResult<TrackerConfig> {
        let t = self.file.tracker(mode);
        t.validate().invalid("config")?;
        Ok(t)
    }

    fn train_config(&self, m: &ModelArgs) -> CmdResult<TrainConfig> {
        let mut tc = self.file.train.clone().unwrap_or_default();
        if let Some(s) = self.seed() {
            tc.seed = s;
        }
        if let Some(v) = m.steps {
            tc.steps = v;
        }
        if let Some(v) = m.lr {
            tc.learning_rate = v;
        }
        if let Some(v) = m.batch {
            tc.batch_size = v;
        }
        tc.validate().invalid("config")?;
        Ok(tc)
    }

    fn pipeline(&self, m: &ModelArgs, tracker: TrackerConfig) -> CmdResult<PipelineConfig> {
        let classifier = m.classifier.or(self.file.classifier).unwrap_or(ClassifierKind::Densenet);
        let default_fusion = if classifier == ClassifierKind::Densenet {
            FusionMode::Early
        } else {
            FusionMode::Baseline
        };
        let cfg = PipelineConfig {
            tracker,
            fusion: m.fusion.or(self.file.fusion).unwrap_or(default_fusion),
            classifier,
            window: m.window.or(self.file.window).unwrap_or(classifier.default_window()),
            crop_size: m.crop_size.or(self.file.crop_size).unwrap_or(64),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn tracker_failure(e: TrackerError) -> Failure {
    match e {
        TrackerError::InvalidConfig(_) => Failure::validation(anyhow::Error::new(e).context("track")),
        _ => Failure::runtime(anyhow::Error::new(e).context("track")),
    }
}

pub fn synth(ctx: &Ctx, a: &SynthArgs) -> CmdResult<()> {
    let mut cfg = ctx.file.synth();
    if let Some(s) = ctx.seed() {
        cfg.seed = s;
    }
    if let Some(v) = a.peds {
        cfg.n_pedestrians = v;
    }
    if let Some(v) = a.frames {
        cfg.frame_count = v;
    }
    if let Some(v) = a.crossing_fraction {
        cfg.crossing_fraction = v;
    }
    if let Some(v) = a.dropout {
        cfg.detection_dropout = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_px = v;
    }
    if let Some(v) = a.keypoint_dropout {
        cfg.keypoint_dropout = v;
    }
    cfg.validate().invalid("config")?;
    let mut t = Timings::default();
    let scene = t.time("synth", || synth_scene(&cfg)).runtime("synth")?;
    let manifest = RunManifest::new("synth", &cfg, Some(cfg.seed)).runtime("manifest")?;
    let out = ctx.finish(manifest, &t)?;
    let w = |r: anyhow::Result<PathBuf>| r.runtime("output").map(|_| ());
    w(out.csv(DETECTIONS, &format_detections(&scene.detections)))?;
    w(out.csv(KEYPOINTS, &format_keypoints(&scene.keypoints)))?;
    w(out.csv(GT, &format_gt(&scene.gt_boxes())))?;
    w(out.csv(LABELS, &format_labels(&scene.ground_truth.labels)))?;
    let file = SynthFile {
        manifest: out.digest.clone(),
        synth: cfg,
    };
    let mut json = serde_json::to_string_pretty(&file).runtime("output")?;
    json.push('\n');
    w(out.raw(SYNTH, json.as_bytes()))?;
    println!(
        "synth: {} pedestrians, {} frames, {} detections -> {}",
        scene.config.n_pedestrians,
        scene.config.frame_count,
        scene.detections.len(),
        out.dir.display()
    );
    Ok(())
}

pub fn track(ctx: &Ctx, a: &TrackArgs) -> CmdResult<()> {
    let scene = Scene::load(&a.scene)?;
    let cfg = ctx.tracker(a.mode)?;
    let mut t = Timings::default();
    let tracks = t
        .time("track", || run_tracker(cfg, &scene.detections, scene.last_frame, scene.frames()))
        .map_err(tracker_failure)?;
    let mut manifest = RunManifest::new("track", cfg, ctx.seed()).runtime("manifest")?;
    scene.record(&mut manifest, "scene")?;
    let out = ctx.finish(manifest, &t)?;
    out.csv("tracks.csv", &format_tracks(&tracks)).runtime("output")?;
    let ids: BTreeSet<u32> = tracks.iter().map(|r| r.track_id).collect();
    println!("track: {} boxes in {} tracks -> {}", tracks.len(), ids.len(), out.dir.display());
    Ok(())
}

fn load_or_track(ctx: &Ctx, scene: &Scene, tracks: Option<&Path>, mode: Option<fussi_core::tracker::TrackerMode>) -> CmdResult<(Vec<TrackedBox>, Option<TrackerConfig>)> {
    match tracks {
        Some(p) => Ok((parse_tracks(p).invalid("ingest")?, None)),
        None => {
            let cfg = ctx.tracker(mode)?;
            let t = run_tracker(cfg, &scene.detections, scene.last_frame, scene.frames()).map_err(tracker_failure)?;
            Ok((t, Some(cfg)))
        }
    }
}

pub fn features(ctx: &Ctx, a: &FeaturesArgs) -> CmdResult<()> {
    let scene = Scene::load(&a.scene)?;
    let mut t = Timings::default();
    let (tracks, tracker) = t.time("track", || load_or_track(ctx, &scene, a.tracks.as_deref(), a.mode))?;
    let rows = t.time("features", || feature_rows(&tracks, &scene.keypoints));
    let mut manifest = RunManifest::new("features", tracker, ctx.seed()).runtime("manifest")?;
    scene.record(&mut manifest, "scene")?;
    if let Some(p) = &a.tracks {
        manifest.input("tracks", p).runtime("manifest")?;
    }
    let out = ctx.finish(manifest, &t)?;
    out.csv("features.csv", &format_features(&rows)).runtime("output")?;
    println!(
        "features: {} of {} tracked boxes fitted -> {}",
        rows.len(),
        tracks.len(),
        out.dir.display()
    );
    Ok(())
}

/// Feature rows of the tracked boxes that carry a usable skeleton.
fn feature_rows(tracks: &[TrackedBox], keypoints: &[KeypointRecord]) -> Vec<FeatureRow> {
    let mut by_frame: std::collections::BTreeMap<u32, (Vec<TrackedBox>, Vec<&KeypointRecord>)> = Default::default();
    for tb in tracks {
        by_frame.entry(tb.frame).or_default().0.push(*tb);
    }
    for r in keypoints {
        if let Some(e) = by_frame.get_mut(&r.frame) {
            e.1.push(r);
        }
    }
    let mut rows = Vec::new();
    for (boxes, recs) in by_frame.values() {
        for (b, rec) in boxes.iter().zip(associate_skeletons(boxes, recs)) {
            if let Some(Ok((_, fv))) = rec.map(|r| skeleton_features(&r.skeleton, &b.bbox)) {
                rows.push(FeatureRow {
                    frame: b.frame,
                    track_id: b.track_id,
                    features: fv,
                });
            }
        }
    }
    rows.sort_by_key(|r| (r.frame, r.track_id));
    rows
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    pipeline: &'a PipelineConfig,
    train: &'a TrainConfig,
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> CmdResult<()> {
    let scenes: Vec<Scene> = a.scenes.iter().map(|d| Scene::load(d)).collect::<CmdResult<_>>()?;
    let cfg = ctx.pipeline(&a.model, TrackerConfig::sort())?;
    let tc = ctx.train_config(&a.model)?;
    let pairs: Vec<(SceneInputs, SceneTruth)> = scenes.iter().map(|s| (s.inputs(), s.truth())).collect();
    let mut t = Timings::default();
    let model = t.time("train", || fussi_core::fusion::train_model(&pairs, &cfg, &tc))?;
    let mut manifest = RunManifest::new(
        "train",
        TrainSnapshot {
            pipeline: &cfg,
            train: &tc,
        },
        Some(tc.seed),
    )
    .runtime("manifest")?;
    for (k, s) in scenes.iter().enumerate() {
        s.record(&mut manifest, &format!("scene{k}"))?;
    }
    let out = ctx.finish(manifest, &t)?;
    out.raw("model.bin", &model.to_bytes().runtime("output")?).runtime("output")?;
    out.key_values(
        "model.manifest",
        &format!(
            "model=model.bin\nclassifier={}\nfusion={}\nwindow={}\n",
            cfg.classifier.as_str(),
            cfg.fusion.as_str(),
            cfg.window
        ),
    )
    .runtime("output")?;
    println!(
        "train: {} {} model on {} scenes -> {}",
        cfg.fusion.as_str(),
        cfg.classifier.as_str(),
        scenes.len(),
        out.dir.join("model.bin").display()
    );
    Ok(())
}

pub fn predict(ctx: &Ctx, a: &PredictArgs) -> CmdResult<()> {
    let model = IntentModel::load(&a.model).invalid("model")?;
    let scene = Scene::load(&a.scene)?;
    let tracker = ctx.tracker(a.mode)?;
    let (fusion, crop_size) = match &model {
        IntentModel::DenseNet(m) => {
            let default = if m.config().late_features > 0 { FusionMode::Late } else { FusionMode::Early };
            (a.fusion.or(ctx.file.fusion).unwrap_or(default), m.config().crop_size)
        }
        _ => (a.fusion.or(ctx.file.fusion).unwrap_or(FusionMode::Baseline), 64),
    };
    let cfg = PipelineConfig {
        tracker,
        fusion,
        classifier: model.kind(),
        window: model.window_len(),
        crop_size,
    };
    let mut t = Timings::default();
    let (preds, tracks, diag) = t.time("pipeline", || run_pipeline(&scene.inputs(), &model, &cfg))?;
    let mut manifest = RunManifest::new("predict", cfg, ctx.seed()).runtime("manifest")?;
    scene.record(&mut manifest, "scene")?;
    manifest.input("model", &a.model).runtime("manifest")?;
    let out = ctx.finish(manifest, &t)?;
    out.csv("predictions.csv", &format_predictions(&preds)).runtime("output")?;
    out.csv("tracks.csv", &format_tracks(&tracks)).runtime("output")?;
    out.key_values("diagnostics.txt", &diag.to_key_values()).runtime("output")?;
    println!(
        "predict: {} predictions, {} skeleton misses -> {}",
        preds.len(),
        diag.skeleton_misses,
        out.dir.display()
    );
    Ok(())
}

const METRIC_NAMES: [&str; 5] = ["prf", "ap", "mota", "coverage", "m123"];

fn metric_selection(names: &[String]) -> CmdResult<BTreeSet<&'static str>> {
    if names.is_empty() || names.iter().any(|n| n == "all") {
        return Ok(METRIC_NAMES.into_iter().collect());
    }
    names
        .iter()
        .map(|n| {
            METRIC_NAMES
                .into_iter()
                .find(|m| m == n)
                .ok_or_else(|| Failure::validation(anyhow::anyhow!("--metrics: unknown metric {n:?} (expected one of {})", METRIC_NAMES.join(", "))))
        })
        .collect()
}

fn select(mut r: MetricsReport, keep: &BTreeSet<&str>) -> MetricsReport {
    if !keep.contains("prf") {
        r.prf = None;
    }
    if !keep.contains("ap") {
        r.ap = None;
        r.pr_curve.clear();
    }
    if !keep.contains("mota") {
        r.mota = None;
    }
    if !keep.contains("coverage") {
        r.coverage = None;
    }
    if !keep.contains("m123") {
        r.m = None;
    }
    r
}

#[derive(Serialize)]
struct EvalSnapshot<'a> {
    metrics: Vec<&'a str>,
    include_non_crossing: bool,
}

pub fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> CmdResult<()> {
    if a.mode.as_deref() == Some("all") {
        return evaluate_all(ctx, a);
    }
    if let Some(m) = &a.mode {
        return Err(Failure::validation(anyhow::anyhow!(
            "--mode: evaluate accepts only `all` (got {m:?}); tracker modes belong to track and predict"
        )));
    }
    let keep = metric_selection(&a.metrics)?;
    let include = a.include_non_crossing || ctx.file.include_non_crossing.unwrap_or(false);
    let scene = a.scene.as_deref().map(Scene::load).transpose()?;
    let gt = scene.as_ref().map(|s| s.gt.clone()).unwrap_or_default();
    let labels = match (&a.labels, &scene) {
        (Some(p), _) => parse_labels(p).invalid("ingest")?,
        (None, Some(s)) => s.labels.clone(),
        (None, None) => Vec::new(),
    };
    let tracks = a.tracks.as_deref().map(parse_tracks).transpose().invalid("ingest")?;
    let preds = a.predictions.as_deref().map(parse_predictions).transpose().invalid("ingest")?;
    if tracks.is_none() && preds.is_none() {
        return Err(Failure::validation(anyhow::anyhow!("evaluate needs --tracks and/or --predictions")));
    }
    if preds.is_some() && labels.is_empty() {
        return Err(Failure::validation(anyhow::anyhow!("scoring predictions needs labels (--labels or --scene)")));
    }
    if tracks.is_some() && gt.is_empty() {
        return Err(Failure::validation(anyhow::anyhow!("scoring tracks needs a --scene with gt.csv")));
    }
    let truth = SceneTruth {
        boxes: &gt,
        labels: &labels,
    };
    let mut t = Timings::default();
    let report = t.time("evaluate", || -> CmdResult<MetricsReport> {
        // predictions made on ground-truth tracks need no tracks file
        let assoc = tracks.clone().unwrap_or_else(|| gt_tracks(&gt));
        let diag = scene.as_ref().filter(|s| !s.keypoints.is_empty()).map(|s| Diagnostics {
            found: skeleton_found(&assoc, &s.keypoints),
            ..Diagnostics::default()
        });
        let mut r = evaluate_run("run", preds.as_deref().unwrap_or(&[]), &assoc, diag.as_ref(), &truth, include)?;
        if tracks.is_none() {
            r.mota = None;
        }
        Ok(r)
    })?;
    let report = select(report, &keep);
    let mut manifest = RunManifest::new(
        "evaluate",
        EvalSnapshot {
            metrics: keep.iter().copied().collect(),
            include_non_crossing: include,
        },
        ctx.seed(),
    )
    .runtime("manifest")?;
    if let Some(s) = &scene {
        s.record(&mut manifest, "scene")?;
    }
    for (role, p) in [("tracks", &a.tracks), ("predictions", &a.predictions), ("labels", &a.labels)] {
        if let Some(p) = p {
            manifest.input(role, p).runtime("manifest")?;
        }
    }
    let out = ctx.finish(manifest, &t)?;
    let kv = report.to_key_values();
    out.key_values("report.txt", &kv).runtime("output")?;
    if !report.pr_curve.is_empty() {
        out.csv("pr_curve.csv", &report.pr_curve_csv()).runtime("output")?;
    }
    print!("{kv}");
    Ok(())
}

fn evaluate_all(ctx: &Ctx, a: &EvaluateArgs) -> CmdResult<()> {
    if a.train.is_empty() || a.test.is_empty() {
        return Err(Failure::validation(anyhow::anyhow!("--mode all needs --train and --test scenes")));
    }
    let tracker = ctx.tracker(None)?;
    let base = ctx.pipeline(&a.model, tracker)?;
    if base.classifier != ClassifierKind::Densenet {
        return Err(Failure::validation(anyhow::anyhow!(
            "--mode all compares fusion modes, which needs --classifier densenet"
        )));
    }
    let tc = ctx.train_config(&a.model)?;
    let include = a.include_non_crossing || ctx.file.include_non_crossing.unwrap_or(false);
    let train: Vec<Scene> = a.train.iter().map(|d| Scene::load(d)).collect::<CmdResult<_>>()?;
    let test: Vec<Scene> = a.test.iter().map(|d| Scene::load(d)).collect::<CmdResult<_>>()?;
    let tr: Vec<(SceneInputs, SceneTruth)> = train.iter().map(|s| (s.inputs(), s.truth())).collect();
    let te: Vec<(SceneInputs, SceneTruth)> = test.iter().map(|s| (s.inputs(), s.truth())).collect();
    let mut t = Timings::default();
    let results = t.time("compare", || compare_modes(&tr, &te, &FusionMode::ALL, &base, &tc, include))?;
    let majority = t.time("majority", || -> CmdResult<MetricsReport> {
        let label_cfg = PipelineConfig {
            classifier: ClassifierKind::Rf,
            fusion: FusionMode::Baseline,
            ..base
        };
        let mut labels = Vec::new();
        for (i, tr) in &tr {
            labels.extend(training_windows(i, tr, &label_cfg)?.1);
        }
        let label = majority_label(&labels);
        let mut runs = Vec::new();
        for (k, (inputs, _)) in te.iter().enumerate() {
            let tracks = track_scene(inputs, &base)?;
            let diag = Diagnostics {
                found: skeleton_found(&tracks, inputs.keypoints),
                ..Diagnostics::default()
            };
            runs.push((constant_predictions(&results[0].predictions[k], label), tracks, diag));
        }
        let truths: Vec<SceneTruth> = te.iter().map(|p| p.1).collect();
        Ok(evaluate_scenes("majority", &runs, &truths, include)?)
    })?;
    let mut reports: Vec<MetricsReport> = results.iter().map(|r| r.report.clone()).collect();
    reports.push(majority);
    let mut manifest = RunManifest::new(
        "evaluate-all",
        TrainSnapshot {
            pipeline: &base,
            train: &tc,
        },
        Some(tc.seed),
    )
    .runtime("manifest")?;
    for (k, s) in train.iter().enumerate() {
        s.record(&mut manifest, &format!("train{k}"))?;
    }
    for (k, s) in test.iter().enumerate() {
        s.record(&mut manifest, &format!("test{k}"))?;
    }
    let out = ctx.finish(manifest, &t)?;
    let table = comparison_table(&reports);
    let mt = m_table(&reports);
    out.csv("comparison.csv", &table).runtime("output")?;
    out.csv("m_table.csv", &mt).runtime("output")?;
    for r in &reports {
        out.key_values(&format!("report_{}.txt", r.label), &r.to_key_values()).runtime("output")?;
        if !r.pr_curve.is_empty() {
            out.csv(&format!("pr_curve_{}.csv", r.label), &r.pr_curve_csv()).runtime("output")?;
        }
    }
    print!("{table}\n{mt}");
    Ok(())
}
