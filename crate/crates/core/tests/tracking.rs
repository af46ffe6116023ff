use fussi_core::fixtures::occlusion_fixture;
use fussi_core::ingest::{synth_scene, BlankFrames, SynthConfig};
use fussi_core::metrics::{mota, MOTA_IOU};
use fussi_core::tracker::{run_tracker, TrackerConfig};

#[test]
fn noiseless_scenes_track_perfectly() {
    for seed in [1, 2, 3] {
        let cfg = SynthConfig {
            n_pedestrians: 10,
            frame_count: 300,
            seed,
            ..SynthConfig::default()
        };
        let scene = synth_scene(&cfg).unwrap();
        let last = Some(cfg.frame_count - 1);
        for tc in [TrackerConfig::sort(), TrackerConfig::deepsort_lite()] {
            let tracks = run_tracker(tc, &scene.detections, last, &scene).unwrap();
            let m = mota(&tracks, &scene.gt_boxes(), MOTA_IOU).unwrap();
            assert_eq!((m.mota, m.id_switches), (1.0, 0), "seed {seed} {:?}", tc.mode);
        }
    }
}

#[test]
fn occlusion_gap_separates_the_trackers() {
    let (dets, gt) = occlusion_fixture(40, 20..23);
    let run = |tc| {
        let tracks = run_tracker(tc, &dets, Some(39), &BlankFrames).unwrap();
        mota(&tracks, &gt, MOTA_IOU).unwrap()
    };
    let deep = run(TrackerConfig::deepsort_lite());
    assert_eq!(deep.id_switches, 0);
    let sort = run(TrackerConfig::sort());
    assert!(sort.id_switches >= 1);
}

#[test]
fn tracker_output_is_deterministic() {
    let cfg = SynthConfig {
        n_pedestrians: 8,
        frame_count: 120,
        noise_px: 3.0,
        detection_dropout: 0.1,
        seed: 5,
        ..SynthConfig::default()
    };
    let scene = synth_scene(&cfg).unwrap();
    let tc = TrackerConfig::deepsort_lite();
    let a = run_tracker(tc, &scene.detections, Some(119), &scene).unwrap();
    let b = run_tracker(tc, &scene.detections, Some(119), &scene).unwrap();
    assert_eq!(a, b);
    let m = mota(&a, &scene.gt_boxes(), MOTA_IOU).unwrap();
    assert!(m.mota > 0.5, "{m:?}");
}
