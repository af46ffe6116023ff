use super::*;
use crate::classifiers::densenet::DenseNetConfig;
use crate::ingest::{synth_scene, SynthConfig, SynthScene};
use crate::types::BBox;

fn scene(seed: u64, frames: u32) -> SynthScene {
    synth_scene(&SynthConfig {
        n_pedestrians: 4,
        frame_count: frames,
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

fn cfg(fusion: FusionMode) -> PipelineConfig {
    PipelineConfig {
        fusion,
        crop_size: 16,
        ..PipelineConfig::default()
    }
}

fn tiny_train(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        densenet: DenseNetConfig {
            growth: 2,
            pairs_per_block: 1,
            blocks: 2,
            bottleneck: 2,
            stem_kernel: [4, 4, 4],
            ..DenseNetConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn mode_parsing_and_flags() {
    assert_eq!("combined".parse::<FusionMode>().unwrap(), FusionMode::Combined);
    assert!("mixed".parse::<FusionMode>().is_err());
    assert!(FusionMode::Combined.overlays() && FusionMode::Combined.attaches_features());
    assert!(!FusionMode::Baseline.overlays() && !FusionMode::Baseline.attaches_features());
}

#[test]
fn late_fusion_needs_densenet() {
    let c = PipelineConfig {
        fusion: FusionMode::Late,
        classifier: ClassifierKind::Rf,
        window: 14,
        ..PipelineConfig::default()
    };
    assert!(matches!(c.validate(), Err(FusionError::InvalidConfig(_))));
    assert!(PipelineConfig { fusion: FusionMode::Baseline, ..c }.validate().is_ok());
}

#[test]
fn window_labels() {
    let l = IntentLabel::crossing(1, 40);
    assert!(!window_label(Some(&l), 23, 16));
    assert!(window_label(Some(&l), 24, 16));
    assert!(window_label(Some(&l), 60, 16));
    assert!(!window_label(Some(&IntentLabel::not_crossing(2)), 60, 16));
    assert!(!window_label(None, 60, 16));
}

#[test]
fn skeleton_association_prefers_most_keypoints() {
    let s = scene(3, 60);
    let f = 10;
    let gt: Vec<TrackedBox> = gt_tracks(&s.gt_boxes()).into_iter().filter(|t| t.frame == f).collect();
    let recs: Vec<&KeypointRecord> = s.keypoints.iter().filter(|r| r.frame == f).collect();
    let assigned = associate_skeletons(&gt, &recs);
    for (b, r) in gt.iter().zip(assigned) {
        assert_eq!(r.map(|r| r.pedestrian_id), Some(b.track_id));
    }
}

#[test]
fn early_overlay_changes_only_overlay_pixels() {
    let s = scene(5, 60);
    let tracks = gt_tracks(&s.gt_boxes());
    let (base, bd) = build_windows(&tracks, &s.keypoints, &s, &cfg(FusionMode::Baseline)).unwrap();
    let (early, ed) = build_windows(&tracks, &s.keypoints, &s, &cfg(FusionMode::Early)).unwrap();
    assert_eq!(base.len(), tracks.len());
    assert_eq!(early.len(), tracks.len());
    assert_eq!(bd.skeleton_misses, ed.skeleton_misses);
    let overlay = [crate::skeleton::LEFT_COLOR, crate::skeleton::RIGHT_COLOR, crate::skeleton::NECK_COLOR];
    let mut changed = 0;
    for (b, e) in base.iter().zip(&early) {
        let (fb, fe) = (b.frames().last().unwrap(), e.frames().last().unwrap());
        assert_eq!(fe.skeleton.is_some(), fb.skeleton.is_some());
        for (pb, pe) in fb.crop.pixels().zip(fe.crop.pixels()) {
            if pb != pe {
                changed += 1;
                assert!(overlay.contains(&pe));
            }
        }
        assert!(fb.features.is_none() && fe.features.is_none());
    }
    assert!(changed > 0);
}

#[test]
fn late_and_combined_blocks() {
    let s = scene(5, 60);
    let tracks = gt_tracks(&s.gt_boxes());
    let (base, _) = build_windows(&tracks, &s.keypoints, &s, &cfg(FusionMode::Baseline)).unwrap();
    let (early, _) = build_windows(&tracks, &s.keypoints, &s, &cfg(FusionMode::Early)).unwrap();
    let (late, _) = build_windows(&tracks, &s.keypoints, &s, &cfg(FusionMode::Late)).unwrap();
    let (comb, _) = build_windows(&tracks, &s.keypoints, &s, &cfg(FusionMode::Combined)).unwrap();
    for i in 0..late.len() {
        assert_eq!(flat_features(&late[i]).len(), 16 * 396);
        assert_eq!(flat_features(&late[i]), flat_features(&comb[i]));
        for (a, b) in late[i].frames().iter().zip(base[i].frames()) {
            assert_eq!(a.crop, b.crop);
            assert_eq!(a.features.is_some(), a.skeleton.is_some());
        }
        for (a, b) in comb[i].frames().iter().zip(early[i].frames()) {
            assert_eq!(a.crop, b.crop);
        }
    }
}

#[test]
fn missing_skeletons_pass_crops_through() {
    let s = scene(5, 60);
    let tracks = gt_tracks(&s.gt_boxes());
    let (base, _) = build_windows(&tracks, &[], &s, &cfg(FusionMode::Baseline)).unwrap();
    let (comb, d) = build_windows(&tracks, &[], &s, &cfg(FusionMode::Combined)).unwrap();
    assert_eq!(d.skeleton_misses, tracks.len());
    assert_eq!(d.skeletons_found, 0);
    for (a, b) in base.iter().zip(&comb) {
        assert_eq!(a.frames().last().unwrap().crop, b.frames().last().unwrap().crop);
        assert!(flat_features(b).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn track_assignment_follows_overlap() {
    let b = |x: f64| BBox::new(x, 0.0, 10.0, 20.0).unwrap();
    let gt: Vec<GtBox> = (0..4)
        .flat_map(|f| {
            [
                GtBox { frame: f, pedestrian_id: 1, bbox: b(0.0) },
                GtBox { frame: f, pedestrian_id: 2, bbox: b(50.0) },
            ]
        })
        .collect();
    let tracks: Vec<TrackedBox> = (0..4)
        .flat_map(|f| {
            [
                TrackedBox { frame: f, track_id: 9, bbox: b(51.0) },
                TrackedBox { frame: f, track_id: 4, bbox: b(1.0) },
            ]
        })
        .collect();
    let a = assign_tracks(&tracks, &gt);
    assert_eq!(a.get(&9), Some(&2));
    assert_eq!(a.get(&4), Some(&1));
}

#[test]
fn pipeline_end_to_end_cardinality_and_isolation() {
    let train = scene(11, 60);
    let test = scene(12, 60);
    let boxes = train.gt_boxes();
    let truth = SceneTruth {
        boxes: &boxes,
        labels: &train.ground_truth.labels,
    };
    let c = cfg(FusionMode::Early);
    let model = train_model(&[(inputs(&train), truth)], &c, &tiny_train(2)).unwrap();
    let (preds, tracks, diag) = run_pipeline(&inputs(&test), &model, &c).unwrap();
    assert_eq!(preds.len(), tracks.len());
    assert_eq!(diag.predictions, tracks.len());
    assert!(preds.windows(2).all(|w| (w[0].frame, w[0].track_id) < (w[1].frame, w[1].track_id)));
    let base_tracks = track_scene(&inputs(&test), &cfg(FusionMode::Baseline)).unwrap();
    assert_eq!(crate::ingest::format_tracks(&base_tracks), crate::ingest::format_tracks(&tracks));
    // a late-fusion pipeline refuses a model without the feature port
    assert!(matches!(run_pipeline(&inputs(&test), &model, &cfg(FusionMode::Late)), Err(FusionError::InvalidConfig(_))));
}

#[test]
fn four_mode_comparison_report() {
    let train = scene(21, 60);
    let test = scene(22, 60);
    let (b1, b2) = (train.gt_boxes(), test.gt_boxes());
    let tr = [(
        inputs(&train),
        SceneTruth {
            boxes: &b1,
            labels: &train.ground_truth.labels,
        },
    )];
    let te = [(
        inputs(&test),
        SceneTruth {
            boxes: &b2,
            labels: &test.ground_truth.labels,
        },
    )];
    let res = compare_modes(&tr, &te, &FusionMode::ALL, &cfg(FusionMode::Baseline), &tiny_train(1), false).unwrap();
    assert_eq!(res.len(), 4);
    let reports: Vec<MetricsReport> = res.iter().map(|r| r.report.clone()).collect();
    let table = comparison_table(&reports);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("baseline,") && rows[4].starts_with("combined,"));
    assert_eq!(m_table(&reports).lines().count(), 5);
    let n = res[0].diagnostics.predictions;
    assert!(res.iter().all(|r| r.diagnostics.predictions == n && r.report.mota == res[0].report.mota));
}

#[test]
fn forest_and_rnn_pipelines_run() {
    let train = scene(31, 60);
    let boxes = train.gt_boxes();
    let truth = SceneTruth {
        boxes: &boxes,
        labels: &train.ground_truth.labels,
    };
    let tc = TrainConfig {
        steps: 2,
        forest: crate::classifiers::ForestConfig {
            n_trees: 3,
            max_depth: 3,
            max_features: None,
        },
        ..TrainConfig::default()
    };
    for classifier in [ClassifierKind::Rf, ClassifierKind::Rnn] {
        let c = PipelineConfig {
            classifier,
            fusion: FusionMode::Baseline,
            window: 14,
            ..PipelineConfig::default()
        };
        let model = train_model(&[(inputs(&train), truth)], &c, &tc).unwrap();
        let (preds, tracks, _) = run_pipeline(&inputs(&train), &model, &c).unwrap();
        assert_eq!(preds.len(), tracks.len());
        let r = evaluate_run("x", &preds, &tracks, None, &truth, false).unwrap();
        assert!(r.mota.is_some());
    }
}
