use proptest::prelude::*;

use super::*;
use crate::fixtures::{frame17_fixture, mota_switch_fixture};
use crate::types::BBox;

/// AP by listing every cutoff of the ranking, then for each distinct recall
/// level taking the best precision at that recall or beyond.
fn ap_oracle(scores: &[f64], gts: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let pos = gts.iter().filter(|&&g| g).count() as f64;
    let points: Vec<(f64, f64)> = (1..=order.len())
        .map(|k| {
            let tp = order[..k].iter().filter(|&&i| gts[i]).count() as f64;
            (tp / pos, tp / k as f64)
        })
        .collect();
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut prev = 0.0;
    let mut ap = 0.0;
    for l in levels {
        let best = points.iter().filter(|p| p.0 >= l).map(|p| p.1).fold(0.0, f64::max);
        ap += (l - prev) * best;
        prev = l;
    }
    ap
}

#[test]
fn prf_examples() {
    let p = prf_accuracy(&[true, false, true], &[true, false, true]).unwrap();
    assert_eq!((p.precision, p.recall, p.accuracy), (1.0, 1.0, 1.0));
    let p = prf_accuracy(&[true; 4], &[true, true, true, false]).unwrap();
    assert_eq!((p.precision, p.recall, p.accuracy), (0.75, 1.0, 0.75));
    let p = prf_accuracy(&[false, false], &[true, false]).unwrap();
    assert!(p.precision_degenerate);
    assert_eq!(p.precision, 1.0);
    assert_eq!(p.recall, 0.0);
    assert_eq!(
        prf_accuracy(&[true], &[]),
        Err(MetricsError::LengthMismatch { preds: 1, gts: 0 })
    );
}

#[test]
fn ap_examples() {
    let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
    assert_eq!(average_precision(&[0.5], &[false]), Err(MetricsError::NoPositives));
}

#[test]
fn ap_matches_oracle_exhaustively() {
    for n in 1..=12usize {
        let scores: Vec<f64> = (0..n).map(|i| 1.0 - i as f64 / n as f64).collect();
        for pattern in 1u32..(1 << n) {
            let gts: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
            let ap = average_precision(&scores, &gts).unwrap();
            assert!((ap - ap_oracle(&scores, &gts)).abs() < 1e-12, "n={n} pattern={pattern:b}");
        }
    }
}

#[test]
fn mota_switch_fixture_is_099() {
    let (tracks, gt) = mota_switch_fixture();
    let r = mota(&tracks, &gt, MOTA_IOU).unwrap();
    assert_eq!(r.gt_count, 100);
    assert_eq!(r.id_switches, 1);
    assert_eq!((r.false_negatives, r.false_positives), (0, 0));
    assert_eq!(r.mota, 0.99);
}

#[test]
fn mota_edges() {
    let (tracks, gt) = mota_switch_fixture();
    let perfect: Vec<TrackedBox> = gt
        .iter()
        .map(|g| TrackedBox {
            frame: g.frame,
            track_id: g.pedestrian_id,
            bbox: g.bbox,
        })
        .collect();
    assert_eq!(mota(&perfect, &gt, MOTA_IOU).unwrap().mota, 1.0);
    assert_eq!(mota(&[], &gt, MOTA_IOU).unwrap().mota, 0.0);
    let mut noisy = tracks.clone();
    noisy.push(TrackedBox {
        frame: 0,
        track_id: 99,
        bbox: BBox::new(900.0, 900.0, 10.0, 10.0).unwrap(),
    });
    assert!(mota(&noisy, &gt, MOTA_IOU).unwrap().mota < 0.99);
    assert_eq!(mota(&tracks, &[], MOTA_IOU), Err(MetricsError::EmptyGroundTruth));
}

#[test]
fn frame17_m_metrics() {
    let (preds, onset) = frame17_fixture();
    let decisions: Vec<(u32, bool)> = preds.iter().map(|p| (p.frame, p.label.is_crossing())).collect();
    let s = m_metrics(&decisions, onset, ANTICIPATION_HORIZON).unwrap();
    assert_eq!((s.m1, s.m2, s.m3), (0.0, 1.0, 0.4375));
    let always: Vec<(u32, bool)> = (0..30).map(|f| (f, true)).collect();
    let s = m_metrics(&always, 20, 16).unwrap();
    assert_eq!((s.m1, s.m2, s.m3), (1.0, 1.0, 1.0));
    let never: Vec<(u32, bool)> = (0..30).map(|f| (f, false)).collect();
    let s = m_metrics(&never, 20, 16).unwrap();
    assert_eq!((s.m1, s.m2, s.m3), (0.0, 0.0, 0.0));
    assert!(matches!(m_metrics(&never, 10, 16), Err(MetricsError::InsufficientHistory { .. })));
    let late: Vec<(u32, bool)> = (5..30).map(|f| (f, true)).collect();
    assert!(matches!(m_metrics(&late, 20, 16), Err(MetricsError::InsufficientHistory { .. })));
}

#[test]
fn aggregate_crossing_only_and_rejection() {
    let (preds, onset) = frame17_fixture();
    let a = PedestrianPredictions {
        pedestrian_id: 1,
        onset: Some(onset),
        preds: preds.iter().map(|p| (p.frame, p.label.is_crossing())).collect(),
    };
    let b = PedestrianPredictions {
        pedestrian_id: 2,
        onset: None,
        preds: (0..40).map(|f| (f, false)).collect(),
    };
    let short = PedestrianPredictions {
        pedestrian_id: 3,
        onset: Some(8),
        preds: (0..20).map(|f| (f, true)).collect(),
    };
    let peds = [a, b, short];
    let m = aggregate_m_metrics(&peds, 16, false).unwrap();
    assert_eq!((m.m1, m.m2, m.m3, m.pedestrians, m.excluded), (0.0, 100.0, 43.75, 1, 1));
    let m = aggregate_m_metrics(&peds, 16, true).unwrap();
    assert_eq!(m.pedestrians, 2);
    assert_eq!((m.m1, m.m2), (50.0, 100.0));
    assert!((m.m3 - 71.875).abs() < 1e-12);
}

#[test]
fn coverage_examples() {
    let all = vec![vec![true; 16]; 5];
    let c = skeleton_coverage(&all, 16).unwrap();
    assert_eq!((c.r1, c.r2, c.r3), (100.0, 100.0, 100.0));
    let none = vec![vec![false; 16]; 5];
    let c = skeleton_coverage(&none, 16).unwrap();
    assert_eq!((c.r1, c.r2, c.r3), (0.0, 0.0, 0.0));
    assert!(c.r3_degenerate);
    assert_eq!(skeleton_coverage(&[], 16), Err(MetricsError::EmptyTestSet));
    assert!(matches!(
        skeleton_coverage(&[vec![true; 3]], 16),
        Err(MetricsError::SequenceLength { .. })
    ));
}

#[test]
fn report_key_values() {
    let r = MetricsReport {
        label: "early".into(),
        frames: 4,
        positives: 2,
        ap: Some(0.5),
        pr_curve: vec![(0.5, 1.0), (1.0, 0.5)],
        ..MetricsReport::default()
    };
    let kv = parse_key_values(&r.to_key_values());
    assert_eq!(kv["label"], "early");
    assert_eq!(kv["ap"], "0.500000");
    assert_eq!(kv["mota"], "na");
    assert_eq!(r.pr_curve_csv(), "recall,precision\n0.5,1\n1,0.5\n");
}

proptest! {
    #[test]
    fn ap_invariant_to_monotone_transform(
        raw in prop::collection::vec((0.0..1.0f64, any::<bool>()), 1..30)
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let mut gts: Vec<bool> = raw.iter().map(|r| r.1).collect();
        gts[0] = true;
        let a = average_precision(&scores, &gts).unwrap();
        let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert!((a - average_precision(&t, &gts).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - ap_oracle(&scores, &gts)).abs() < 1e-12);
    }

    #[test]
    fn coverage_r2_le_r3(found in prop::collection::vec(prop::collection::vec(any::<bool>(), 16), 1..20)) {
        let c = skeleton_coverage(&found, 16).unwrap();
        prop_assert!(c.r2 <= c.r3 + 1e-12);
        if c.found_sequences > 0 {
            prop_assert_eq!(c.r1 == 100.0, (c.r2 - c.r3).abs() < 1e-12);
        }
    }

    #[test]
    fn mota_invariant_to_id_bijection(offset in 1u32..1000, extra in 0usize..5) {
        let (tracks, gt) = mota_switch_fixture();
        let base = mota(&tracks, &gt, MOTA_IOU).unwrap();
        let relabeled: Vec<TrackedBox> = tracks.iter().map(|t| TrackedBox { track_id: t.track_id * 3 + offset, ..*t }).collect();
        prop_assert_eq!(base, mota(&relabeled, &gt, MOTA_IOU).unwrap());
        let mut noisy = tracks.clone();
        for k in 0..extra {
            noisy.push(TrackedBox { frame: k as u32, track_id: 500 + k as u32, bbox: BBox::new(900.0, 10.0, 5.0, 5.0).unwrap() });
        }
        prop_assert!(mota(&noisy, &gt, MOTA_IOU).unwrap().mota <= base.mota);
    }

    #[test]
    fn m3_ignores_frames_outside_horizon(flips in prop::collection::vec(any::<bool>(), 60), onset in 16u32..40) {
        let base: Vec<(u32, bool)> = (0..60).map(|f| (f, flips[f as usize])).collect();
        let a = m_metrics(&base, onset, 16).unwrap();
        let changed: Vec<(u32, bool)> = base.iter().map(|&(f, c)| if f < onset - 16 || f >= onset { (f, !c) } else { (f, c) }).collect();
        let b = m_metrics(&changed, onset, 16).unwrap();
        prop_assert_eq!(a.m3, b.m3);
    }
}
