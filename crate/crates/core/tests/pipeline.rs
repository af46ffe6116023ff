use fussi_core::classifiers::{ClassifierKind, IntentModel, TrainConfig};
use fussi_core::fusion::{evaluate_run, run_pipeline, train_model, FusionMode, PipelineConfig, SceneInputs, SceneTruth};
use fussi_core::ingest::{
    format_detections, format_gt, format_keypoints, format_labels, format_tracks, parse_detections_str, parse_gt_str,
    parse_keypoints_str, parse_labels_str, parse_tracks_str, synth_scene, SynthConfig, SynthScene,
};
use fussi_core::tracker::TrackerConfig;

fn scene(seed: u64) -> SynthScene {
    synth_scene(&SynthConfig {
        n_pedestrians: 6,
        frame_count: 90,
        noise_px: 1.5,
        detection_dropout: 0.05,
        keypoint_dropout: 0.05,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn inputs(s: &SynthScene) -> SceneInputs<'_> {
    SceneInputs {
        detections: &s.detections,
        keypoints: &s.keypoints,
        frames: s,
        last_frame: Some(s.config.frame_count - 1),
    }
}

#[test]
fn scene_files_round_trip() {
    let s = scene(3);
    assert_eq!(parse_detections_str(&format_detections(&s.detections)).unwrap(), s.detections);
    assert_eq!(parse_keypoints_str(&format_keypoints(&s.keypoints)).unwrap(), s.keypoints);
    assert_eq!(parse_labels_str(&format_labels(&s.ground_truth.labels)).unwrap(), s.ground_truth.labels);
    let gt = s.gt_boxes();
    assert_eq!(parse_gt_str(&format_gt(&gt)).unwrap(), gt);
}

#[test]
fn forest_pipeline_end_to_end() {
    let train: Vec<SynthScene> = (10..13).map(scene).collect();
    let test = scene(20);
    let gts: Vec<_> = train.iter().map(SynthScene::gt_boxes).collect();
    let pairs: Vec<(SceneInputs, SceneTruth)> = train
        .iter()
        .zip(&gts)
        .map(|(s, g)| {
            (
                inputs(s),
                SceneTruth {
                    boxes: g,
                    labels: &s.ground_truth.labels,
                },
            )
        })
        .collect();
    let cfg = PipelineConfig {
        tracker: TrackerConfig::sort(),
        fusion: FusionMode::Baseline,
        classifier: ClassifierKind::Rf,
        window: 14,
        crop_size: 64,
    };
    let model = train_model(&pairs, &cfg, &TrainConfig::default()).unwrap();
    let model = IntentModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
    let (preds, tracks, diag) = run_pipeline(&inputs(&test), &model, &cfg).unwrap();
    assert_eq!(preds.len(), tracks.len());
    assert_eq!(parse_tracks_str(&format_tracks(&tracks)).unwrap(), tracks);
    let gt = test.gt_boxes();
    let truth = SceneTruth {
        boxes: &gt,
        labels: &test.ground_truth.labels,
    };
    let r = evaluate_run("rf", &preds, &tracks, Some(&diag), &truth, false).unwrap();
    assert!(r.ap.unwrap() > 0.8, "{}", r.to_key_values());
    assert!(r.mota.unwrap().mota > 0.8);
}
